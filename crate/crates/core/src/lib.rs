//! Spatial multistate dynamic site occupancy model.
//!
//! Sites on a plane hold one of `S` ecological states that evolve as a
//! first-order Markov chain with a column-stochastic transition matrix.
//! Each survey of a site may instead record the state of a nearby point
//! (a resampling error); the misrecorded state is drawn from the
//! Gaussian-kernel-weighted composition of states around the site.
//!
//! The crate is `no_std` (it needs `alloc`). It provides the model types,
//! kernel smoothing, a generative simulator, a Metropolis-within-Gibbs
//! sampler, posterior summaries and community-dynamics metrics. IO, file
//! formats and parallel execution live in the `spocc` crate.
//!
//! States are 0-based indices inside the library.

#![no_std]
// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod dominance;
pub mod error;
pub mod kernel;
pub mod metrics;
pub mod model;
pub mod posterior;
pub mod random;
pub mod sampler;
pub mod simulate;

pub use error::{Error, Result};
pub use model::{
    BandwidthMatrix, DominanceField, InitialDistribution, ObservationSet, OccupancyPanel, Position, SiteFrame,
    StateSpace, TransitionMatrix,
};
