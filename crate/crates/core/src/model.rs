//! Domain types shared by the simulator, the sampler and the summaries.
//!
//! States are 0-based `usize` indices throughout the library. File formats
//! and user-facing labels use 1-based codes; conversion happens at the edges.
//! Panels and observation cells are laid out time-major: cell `(i, t)` lives
//! at `t * sites + i`.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Tolerance for column sums of transition matrices and sums of probability vectors.
pub const STOCHASTIC_TOLERANCE: f64 = 1e-12;

/// Smallest accepted kernel scale, in coordinate units.
pub const MIN_BANDWIDTH_SCALE: f64 = 1e-6;

/// The set of ecological states a site can occupy.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateSpace {
    labels: Vec<String>,
}

impl StateSpace {
    pub fn new(labels: Vec<String>) -> Result<Self> {
        if labels.len() < 2 {
            return Err(Error::InvalidStateSpace(format!("need at least 2 states, got {}", labels.len())));
        }
        for (a, label) in labels.iter().enumerate() {
            if labels[..a].contains(label) {
                return Err(Error::InvalidStateSpace(format!("duplicate label {label:?}")));
            }
        }
        Ok(Self { labels })
    }

    /// States labelled `"1"`, `"2"`, ... `"count"`.
    pub fn numbered(count: usize) -> Result<Self> {
        Self::new((1..=count).map(|s| s.to_string()).collect())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label(&self, state: usize) -> &str {
        &self.labels[state]
    }
}

/// A point in the plane, in abstract coordinate units.
pub type Position = [f64; 2];

/// Site coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct SiteFrame {
    coords: Vec<Position>,
    duplicates: bool,
}

impl SiteFrame {
    /// Duplicate coordinates are accepted; a warning is logged and
    /// [`SiteFrame::has_duplicates`] reports them.
    pub fn new(coords: Vec<Position>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::InvalidSiteFrame("no sites".into()));
        }
        if let Some(i) = coords.iter().position(|c| !c[0].is_finite() || !c[1].is_finite()) {
            return Err(Error::InvalidSiteFrame(format!("site {i} has a non-finite coordinate")));
        }
        let mut sorted: Vec<(u64, u64)> =
            coords.iter().map(|c| ((c[0] + 0.0).to_bits(), (c[1] + 0.0).to_bits())).collect();
        sorted.sort_unstable();
        let duplicates = sorted.windows(2).any(|w| w[0] == w[1]);
        if duplicates {
            log::warn!("site frame contains duplicate coordinates");
        }
        Ok(Self { coords, duplicates })
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn coords(&self) -> &[Position] {
        &self.coords
    }

    pub fn position(&self, site: usize) -> Position {
        self.coords[site]
    }

    pub fn has_duplicates(&self) -> bool {
        self.duplicates
    }
}

/// Column-stochastic transition matrix. Entry `(to, from)` is the
/// probability of moving from state `from` to state `to` in one period.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    states: usize,
    // row-major: data[to * states + from]
    data: Vec<f64>,
}

impl TransitionMatrix {
    /// Validates rows of a square matrix. Columns must already sum to one;
    /// nothing is renormalised.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        for (row, r) in rows.iter().enumerate() {
            if r.len() != n {
                return Err(Error::NonSquare { rows: n, row, cols: r.len() });
            }
        }
        Self::from_row_major(n, rows.iter().flatten().copied().collect())
    }

    pub fn from_row_major(states: usize, data: Vec<f64>) -> Result<Self> {
        if states == 0 || data.len() != states * states {
            return Err(Error::NonSquare { rows: states, row: 0, cols: data.len() / states.max(1) });
        }
        for (idx, &v) in data.iter().enumerate() {
            if !(v.is_finite() && (0.0..=1.0).contains(&v)) {
                return Err(Error::NegativeEntry { row: idx / states, col: idx % states, value: v });
            }
        }
        for column in 0..states {
            let sum: f64 = (0..states).map(|to| data[to * states + column]).sum();
            if (sum - 1.0).abs() > STOCHASTIC_TOLERANCE {
                return Err(Error::NonStochastic { column, sum });
            }
        }
        Ok(Self { states, data })
    }

    /// Builds a matrix from a printed table whose columns carry rounding
    /// error. Each column is divided by its sum, provided the sum is within
    /// `max_deviation` of one.
    pub fn from_rounded_rows(rows: &[Vec<f64>], max_deviation: f64) -> Result<Self> {
        let n = rows.len();
        for (row, r) in rows.iter().enumerate() {
            if r.len() != n {
                return Err(Error::NonSquare { rows: n, row, cols: r.len() });
            }
        }
        let mut data: Vec<f64> = rows.iter().flatten().copied().collect();
        for column in 0..n {
            let sum: f64 = (0..n).map(|to| data[to * n + column]).sum();
            if (sum - 1.0).abs() > max_deviation {
                return Err(Error::NonStochastic { column, sum });
            }
            for to in 0..n {
                data[to * n + column] /= sum;
            }
        }
        Self::from_row_major(n, data)
    }

    /// Builds a matrix from columns, renormalising each one. Used for
    /// sampler draws whose sums are off by a few ulps.
    pub(crate) fn from_columns_normalized(states: usize, columns: &[f64]) -> Self {
        let mut data = vec![0.0; states * states];
        for from in 0..states {
            let col = &columns[from * states..(from + 1) * states];
            let sum: f64 = col.iter().sum();
            for to in 0..states {
                data[to * states + from] = col[to] / sum;
            }
        }
        Self { states, data }
    }

    pub fn identity(states: usize) -> Self {
        let mut data = vec![0.0; states * states];
        for s in 0..states {
            data[s * states + s] = 1.0;
        }
        Self { states, data }
    }

    pub fn uniform(states: usize) -> Self {
        Self { states, data: vec![1.0 / states as f64; states * states] }
    }

    pub fn states(&self) -> usize {
        self.states
    }

    /// Probability of `from -> to`.
    pub fn get(&self, to: usize, from: usize) -> f64 {
        self.data[to * self.states + from]
    }

    pub fn column(&self, from: usize) -> Vec<f64> {
        (0..self.states).map(|to| self.get(to, from)).collect()
    }

    pub fn row_major(&self) -> &[f64] {
        &self.data
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.states).map(|r| r.to_vec()).collect()
    }

    /// `P v` for a length-S vector.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        self.data.chunks(self.states).map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum()).collect()
    }
}

/// Distribution of the state at the first survey.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialDistribution {
    probs: Vec<f64>,
}

impl InitialDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.len() < 2 {
            return Err(Error::InvalidProbabilityVector("need at least 2 entries".into()));
        }
        if let Some(v) = probs.iter().find(|v| !(v.is_finite() && (0.0..=1.0).contains(*v))) {
            return Err(Error::InvalidProbabilityVector(format!("entry {v} outside [0, 1]")));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > STOCHASTIC_TOLERANCE {
            return Err(Error::InvalidProbabilityVector(format!("sums to {sum}")));
        }
        Ok(Self { probs })
    }

    pub fn uniform(states: usize) -> Self {
        Self { probs: vec![1.0 / states as f64; states] }
    }

    pub(crate) fn from_normalized(mut probs: Vec<f64>) -> Self {
        let sum: f64 = probs.iter().sum();
        probs.iter_mut().for_each(|p| *p /= sum);
        Self { probs }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

/// Gaussian kernel bandwidth, parameterised by the two axis scales and
/// their correlation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandwidthMatrix {
    sigma1: f64,
    sigma2: f64,
    rho: f64,
}

impl BandwidthMatrix {
    pub fn new(sigma1: f64, sigma2: f64, rho: f64) -> Result<Self> {
        for (name, v) in [("sigma1", sigma1), ("sigma2", sigma2)] {
            if !v.is_finite() || v < MIN_BANDWIDTH_SCALE {
                return Err(Error::InvalidBandwidth(format!(
                    "{name} = {v} must be finite and at least {MIN_BANDWIDTH_SCALE}"
                )));
            }
        }
        if !(rho.is_finite() && rho > -1.0 && rho < 1.0) {
            return Err(Error::InvalidBandwidth(format!("rho = {rho} must lie in (-1, 1)")));
        }
        Ok(Self { sigma1, sigma2, rho })
    }

    pub fn isotropic(sigma: f64) -> Result<Self> {
        Self::new(sigma, sigma, 0.0)
    }

    pub fn sigma1(&self) -> f64 {
        self.sigma1
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// The covariance matrix `[[s1^2, r s1 s2], [r s1 s2, s2^2]]`.
    pub fn covariance(&self) -> [[f64; 2]; 2] {
        let off = self.rho * self.sigma1 * self.sigma2;
        [[self.sigma1 * self.sigma1, off], [off, self.sigma2 * self.sigma2]]
    }

    /// Inverse of the covariance matrix.
    pub fn precision(&self) -> Result<[[f64; 2]; 2]> {
        let one_minus = 1.0 - self.rho * self.rho;
        let s11 = self.sigma1 * self.sigma1;
        let s22 = self.sigma2 * self.sigma2;
        let determinant = s11 * s22 * one_minus;
        if !(one_minus > 4.0 * f64::EPSILON) || !(determinant > 0.0) || !determinant.is_finite() {
            return Err(Error::SingularBandwidth { determinant });
        }
        let off = -self.rho / (self.sigma1 * self.sigma2 * one_minus);
        Ok([[1.0 / (s11 * one_minus), off], [off, 1.0 / (s22 * one_minus)]])
    }
}

/// Latent states `z[i][t]`, stored time-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OccupancyPanel {
    sites: usize,
    horizon: usize,
    states: Vec<usize>,
}

impl OccupancyPanel {
    /// `states` is time-major: entry `t * sites + i`.
    pub fn new(sites: usize, horizon: usize, states: Vec<usize>, state_count: usize) -> Result<Self> {
        if sites == 0 || horizon == 0 {
            return Err(Error::ShapeMismatch("panel needs at least one site and one period".into()));
        }
        if states.len() != sites * horizon {
            return Err(Error::ShapeMismatch(format!(
                "panel has {} entries, expected {}",
                states.len(),
                sites * horizon
            )));
        }
        if let Some(&state) = states.iter().find(|&&s| s >= state_count) {
            return Err(Error::StateOutOfRange { state, states: state_count });
        }
        Ok(Self { sites, horizon, states })
    }

    /// Builds from site-major rows `z[i][t]`.
    pub fn from_site_rows(rows: &[Vec<usize>], state_count: usize) -> Result<Self> {
        let sites = rows.len();
        let horizon = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != horizon) {
            return Err(Error::ShapeMismatch("ragged panel rows".into()));
        }
        let mut states = vec![0; sites * horizon];
        for (i, row) in rows.iter().enumerate() {
            for (t, &s) in row.iter().enumerate() {
                states[t * sites + i] = s;
            }
        }
        Self::new(sites, horizon, states, state_count)
    }

    pub(crate) fn from_raw(sites: usize, horizon: usize, states: Vec<usize>) -> Self {
        Self { sites, horizon, states }
    }

    pub fn sites(&self) -> usize {
        self.sites
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn get(&self, site: usize, time: usize) -> usize {
        self.states[time * self.sites + site]
    }

    /// All site states at one time.
    pub fn at_time(&self, time: usize) -> &[usize] {
        &self.states[time * self.sites..(time + 1) * self.sites]
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.states
    }
}

/// Recorded states `y[i][t][n]` with ragged replicate counts `N(i, t)`.
///
/// Records are stored in (time, site, replicate) order, so the records of a
/// cell and the records of a time period are both contiguous.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObservationSet {
    sites: usize,
    horizon: usize,
    // offsets[t * sites + i] .. offsets[t * sites + i + 1]
    offsets: Vec<usize>,
    record_site: Vec<usize>,
    record_state: Vec<usize>,
    error_flags: Option<Vec<bool>>,
}

impl ObservationSet {
    /// Builds from nested `y[i][t][n]`; an empty innermost list is a missing survey.
    pub fn from_nested(y: &[Vec<Vec<usize>>], state_count: usize) -> Result<Self> {
        let sites = y.len();
        let horizon = y.first().map_or(0, Vec::len);
        if sites == 0 || horizon == 0 {
            return Err(Error::ShapeMismatch("need at least one site and one period".into()));
        }
        if y.iter().any(|r| r.len() != horizon) {
            return Err(Error::ShapeMismatch("sites have differing numbers of periods".into()));
        }
        let mut builder = ObservationBuilder::new(sites, horizon);
        for t in 0..horizon {
            for (i, site) in y.iter().enumerate() {
                for &state in &site[t] {
                    if state >= state_count {
                        return Err(Error::StateOutOfRange { state, states: state_count });
                    }
                    builder.push(i, t, state, None);
                }
            }
        }
        Ok(builder.finish())
    }

    /// Attaches simulation-truth error flags, one per record.
    pub fn with_error_flags(mut self, flags: Vec<bool>) -> Result<Self> {
        if flags.len() != self.len() {
            return Err(Error::ShapeMismatch(format!("{} flags for {} records", flags.len(), self.len())));
        }
        self.error_flags = Some(flags);
        Ok(self)
    }

    pub fn without_error_flags(mut self) -> Self {
        self.error_flags = None;
        self
    }

    pub fn sites(&self) -> usize {
        self.sites
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Total number of records.
    pub fn len(&self) -> usize {
        self.record_state.len()
    }

    pub fn is_empty(&self) -> bool {
        self.record_state.is_empty()
    }

    /// Record index range for cell `(site, time)`.
    pub fn cell_range(&self, site: usize, time: usize) -> core::ops::Range<usize> {
        let c = time * self.sites + site;
        self.offsets[c]..self.offsets[c + 1]
    }

    /// Record index range for all sites at `time`.
    pub fn time_range(&self, time: usize) -> core::ops::Range<usize> {
        self.offsets[time * self.sites]..self.offsets[(time + 1) * self.sites]
    }

    /// `N(site, time)`.
    pub fn count(&self, site: usize, time: usize) -> usize {
        self.cell_range(site, time).len()
    }

    pub fn replicates(&self, site: usize, time: usize) -> &[usize] {
        &self.record_state[self.cell_range(site, time)]
    }

    pub fn record_site(&self, record: usize) -> usize {
        self.record_site[record]
    }

    pub fn record_state(&self, record: usize) -> usize {
        self.record_state[record]
    }

    /// Time period of a record (binary search over the offsets).
    pub fn record_time(&self, record: usize) -> usize {
        let cell = self.offsets.partition_point(|&o| o <= record) - 1;
        cell / self.sites
    }

    pub fn states(&self) -> &[usize] {
        &self.record_state
    }

    pub fn error_flags(&self) -> Option<&[bool]> {
        self.error_flags.as_deref()
    }

    /// Largest state index present plus one.
    pub fn state_bound(&self) -> usize {
        self.record_state.iter().max().map_or(0, |m| m + 1)
    }

    /// Nested `y[i][t][n]` view.
    pub fn to_nested(&self) -> Vec<Vec<Vec<usize>>> {
        (0..self.sites).map(|i| (0..self.horizon).map(|t| self.replicates(i, t).to_vec()).collect()).collect()
    }
}

/// Incremental builder; records must be pushed in (time, site) order.
#[derive(Debug)]
pub(crate) struct ObservationBuilder {
    sites: usize,
    horizon: usize,
    offsets: Vec<usize>,
    record_site: Vec<usize>,
    record_state: Vec<usize>,
    flags: Vec<bool>,
    cursor: usize,
}

impl ObservationBuilder {
    pub(crate) fn new(sites: usize, horizon: usize) -> Self {
        Self {
            sites,
            horizon,
            offsets: vec![0],
            record_site: Vec::new(),
            record_state: Vec::new(),
            flags: Vec::new(),
            cursor: 0,
        }
    }

    fn advance_to(&mut self, cell: usize) {
        while self.cursor < cell {
            self.offsets.push(self.record_state.len());
            self.cursor += 1;
        }
    }

    pub(crate) fn push(&mut self, site: usize, time: usize, state: usize, flag: Option<bool>) {
        let cell = time * self.sites + site;
        debug_assert!(cell >= self.cursor, "records pushed out of order");
        self.advance_to(cell);
        self.record_site.push(site);
        self.record_state.push(state);
        if let Some(f) = flag {
            self.flags.push(f);
        }
    }

    pub(crate) fn finish(mut self) -> ObservationSet {
        self.advance_to(self.sites * self.horizon);
        let flags = (!self.flags.is_empty() && self.flags.len() == self.record_state.len()).then_some(self.flags);
        ObservationSet {
            sites: self.sites,
            horizon: self.horizon,
            offsets: self.offsets,
            record_site: self.record_site,
            record_state: self.record_state,
            error_flags: flags,
        }
    }
}

/// Local relative dominance `g[i][t][s]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DominanceField {
    sites: usize,
    horizon: usize,
    states: usize,
    values: Vec<f64>,
}

impl DominanceField {
    pub(crate) fn from_raw(sites: usize, horizon: usize, states: usize, values: Vec<f64>) -> Self {
        Self { sites, horizon, states, values }
    }

    pub fn get(&self, site: usize, time: usize, state: usize) -> f64 {
        self.values[(time * self.sites + site) * self.states + state]
    }

    /// Probability vector over states for one site and time.
    pub fn slice(&self, site: usize, time: usize) -> &[f64] {
        let start = (time * self.sites + site) * self.states;
        &self.values[start..start + self.states]
    }

    pub fn sites(&self) -> usize {
        self.sites
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn states(&self) -> usize {
        self.states
    }
}
