use alloc::boxed::Box;
use alloc::string::String;

/// Errors raised by model construction, simulation, sampling and summaries.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("matrix is not square ({rows} rows, row {row} has {cols} entries)")]
    NonSquare { rows: usize, row: usize, cols: usize },

    #[error("column {column} sums to {sum}, not 1")]
    NonStochastic { column: usize, sum: f64 },

    #[error("entry ({row}, {col}) is negative or not finite: {value}")]
    NegativeEntry { row: usize, col: usize, value: f64 },

    #[error("invalid probability vector: {0}")]
    InvalidProbabilityVector(String),

    #[error("invalid state space: {0}")]
    InvalidStateSpace(String),

    #[error("invalid site frame: {0}")]
    InvalidSiteFrame(String),

    #[error("invalid bandwidth: {0}")]
    InvalidBandwidth(String),

    #[error("bandwidth matrix is singular at working precision (determinant {determinant})")]
    SingularBandwidth { determinant: f64 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("state index {state} out of range for {states} states")]
    StateOutOfRange { state: usize, states: usize },

    #[error("observation set contains no records")]
    EmptyData,

    #[error("could not initialise a chain with finite likelihood: {0}")]
    InitFailed(String),

    #[error("record {record} at site {site}, time {time} has zero support under the current state")]
    ZeroSupport { site: usize, time: usize, record: usize },

    #[error("every candidate state has zero weight at site {site}, time {time}")]
    AllZeroWeights { site: usize, time: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("chain {chain} failed at iteration {iteration}: {source}")]
    Chain { chain: usize, iteration: usize, source: Box<Error> },

    #[error("zero within-chain variance in every chain")]
    DegenerateChains,

    #[error("not enough draws: {0}")]
    InsufficientDraws(String),

    #[error("site {site}, time {time} has {count} replicates; the naive estimator needs at most one")]
    ReplicatedData { site: usize, time: usize, count: usize },

    #[error("no consecutive observed pairs to count transitions from")]
    NoTransitions,

    #[error("power iteration did not settle on a unique stationary distribution")]
    NonConvergent,

    #[error("state {state} is absorbing and carries equilibrium mass")]
    AbsorbingState { state: usize },

    #[error("subdominant eigenvalue modulus is zero")]
    ZeroSubdominant,
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
