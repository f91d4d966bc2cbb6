use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, RngCore};

use super::config::{FitConfig, ModelKind};
use crate::error::{Error, Result};
use crate::kernel::{KernelGeometry, KernelMatrix};
use crate::model::{
    BandwidthMatrix, InitialDistribution, ObservationSet, OccupancyPanel, SiteFrame, StateSpace, TransitionMatrix,
};
use crate::random::{sample_beta, sample_dirichlet};

/// How a misrecorded state is distributed.
#[derive(Debug, Clone)]
pub(crate) enum Smoother {
    /// Local dominance: `g[i][t][s] = W[i][t][s] / D[i]`.
    Kernel {
        geometry: KernelGeometry,
        bandwidth: BandwidthMatrix,
        kernel: KernelMatrix,
        /// `W[(t * I + i) * S + s] = sum_j K[i][j] 1(z_jt = s)`
        weights: Vec<f64>,
    },
    /// Global dominance: `g[i][t][s] = counts[t][s] / I`.
    Global,
}

/// Complete state of one Markov chain, including the dominance caches.
#[derive(Debug, Clone)]
pub struct ChainState {
    pub(crate) sites: usize,
    pub(crate) horizon: usize,
    pub(crate) states: usize,
    /// Time-major latent states.
    pub(crate) z: Vec<usize>,
    /// Resampling-error flag per record.
    pub(crate) m: Vec<bool>,
    pub(crate) transitions: TransitionMatrix,
    pub(crate) initial: InitialDistribution,
    pub(crate) error_rate: f64,
    pub(crate) smoother: Smoother,
    /// `counts[t * S + s]`: sites holding `s` at `t`.
    pub(crate) counts: Vec<usize>,
    /// Indices of records flagged as errors, grouped by time.
    pub(crate) errors_by_time: Vec<Vec<usize>>,
    /// `error_counts[t * S + y]`: flagged records at `t` showing `y`.
    pub(crate) error_counts: Vec<usize>,
    pub(crate) log_transitions: Vec<f64>,
    pub(crate) log_initial: Vec<f64>,
}

impl ChainState {
    pub fn model(&self) -> ModelKind {
        match self.smoother {
            Smoother::Kernel { .. } => ModelKind::Spatial,
            Smoother::Global => ModelKind::NonSpatial,
        }
    }

    pub fn occupancy(&self) -> OccupancyPanel {
        OccupancyPanel::from_raw(self.sites, self.horizon, self.z.clone())
    }

    pub fn latent(&self, site: usize, time: usize) -> usize {
        self.z[time * self.sites + site]
    }

    pub fn error_flags(&self) -> &[bool] {
        &self.m
    }

    pub fn transitions(&self) -> &TransitionMatrix {
        &self.transitions
    }

    pub fn initial(&self) -> &InitialDistribution {
        &self.initial
    }

    pub fn error_rate(&self) -> f64 {
        self.error_rate
    }

    pub fn bandwidth(&self) -> Option<BandwidthMatrix> {
        match &self.smoother {
            Smoother::Kernel { bandwidth, .. } => Some(*bandwidth),
            Smoother::Global => None,
        }
    }

    /// Cached `W[i][t][s]` (spatial) or `counts[t][s]` (non-spatial).
    pub fn weighted_sum(&self, site: usize, time: usize, state: usize) -> f64 {
        match &self.smoother {
            Smoother::Kernel { weights, .. } => weights[(time * self.sites + site) * self.states + state],
            Smoother::Global => self.counts[time * self.states + state] as f64,
        }
    }

    /// Cached `D[i]`.
    pub fn row_sum(&self, site: usize) -> f64 {
        match &self.smoother {
            Smoother::Kernel { kernel, .. } => kernel.row_sum(site),
            Smoother::Global => self.sites as f64,
        }
    }

    /// Dominance of `state` around `site` at `time` under the current chain state.
    pub fn dominance(&self, site: usize, time: usize, state: usize) -> f64 {
        self.weighted_sum(site, time, state) / self.row_sum(site)
    }

    /// Replaces the latent states, flags every record that disagrees with
    /// its new cell state and rebuilds the caches.
    pub fn set_occupancy(&mut self, z: &OccupancyPanel, data: &ObservationSet) -> Result<()> {
        if z.sites() != self.sites || z.horizon() != self.horizon {
            return Err(Error::ShapeMismatch(format!(
                "panel is {} x {}, chain is {} x {}",
                z.sites(),
                z.horizon(),
                self.sites,
                self.horizon
            )));
        }
        if let Some(&bad) = z.as_slice().iter().find(|&&v| v >= self.states) {
            return Err(Error::StateOutOfRange { state: bad, states: self.states });
        }
        self.z.copy_from_slice(z.as_slice());
        for t in 0..self.horizon {
            for r in data.time_range(t) {
                self.m[r] = data.record_state(r) != self.z[t * self.sites + data.record_site(r)];
            }
        }
        self.recount();
        self.rebuild_weights();
        self.rebuild_error_index(data);
        Ok(())
    }

    pub(crate) fn refresh_log_tables(&mut self) {
        self.log_transitions = self.transitions.row_major().iter().map(|&p| libm::log(p)).collect();
        self.log_initial = self.initial.probs().iter().map(|&p| libm::log(p)).collect();
    }

    pub(crate) fn recount(&mut self) {
        self.counts.iter_mut().for_each(|c| *c = 0);
        for t in 0..self.horizon {
            for i in 0..self.sites {
                self.counts[t * self.states + self.z[t * self.sites + i]] += 1;
            }
        }
    }

    fn fresh_weights(&self, kernel: &KernelMatrix) -> Vec<f64> {
        let (n, s) = (self.sites, self.states);
        let mut weights = vec![0.0; n * self.horizon * s];
        for t in 0..self.horizon {
            let zt = &self.z[t * n..(t + 1) * n];
            for i in 0..n {
                let row = &mut weights[(t * n + i) * s..(t * n + i + 1) * s];
                for (&k, &state) in kernel.row(i).iter().zip(zt) {
                    row[state] += k;
                }
            }
        }
        weights
    }

    /// Recomputes the weighted state sums from scratch.
    pub(crate) fn rebuild_weights(&mut self) {
        if let Smoother::Kernel { kernel, .. } = &self.smoother {
            let fresh = self.fresh_weights(kernel);
            if let Smoother::Kernel { weights, .. } = &mut self.smoother {
                *weights = fresh;
            }
        }
    }

    /// Largest absolute difference between the incrementally maintained
    /// weighted sums and a full recomputation, together with the largest
    /// violation of `sum_s W[i][t][s] = D[i]`.
    pub fn audit_cache(&self) -> (f64, f64) {
        match &self.smoother {
            Smoother::Kernel { kernel, weights, .. } => {
                let fresh = self.fresh_weights(kernel);
                let drift = weights.iter().zip(&fresh).map(|(a, b)| libm::fabs(a - b)).fold(0.0, f64::max);
                let closure = weights
                    .chunks(self.states)
                    .enumerate()
                    .map(|(cell, w)| libm::fabs(w.iter().sum::<f64>() - kernel.row_sum(cell % self.sites)))
                    .fold(0.0, f64::max);
                (drift, closure)
            }
            Smoother::Global => {
                let mut fresh = vec![0usize; self.counts.len()];
                for t in 0..self.horizon {
                    for i in 0..self.sites {
                        fresh[t * self.states + self.z[t * self.sites + i]] += 1;
                    }
                }
                let drift = if fresh == self.counts { 0.0 } else { f64::INFINITY };
                (drift, 0.0)
            }
        }
    }

    pub(crate) fn rebuild_error_index(&mut self, data: &ObservationSet) {
        for list in &mut self.errors_by_time {
            list.clear();
        }
        self.error_counts.iter_mut().for_each(|c| *c = 0);
        for t in 0..self.horizon {
            for r in data.time_range(t) {
                if self.m[r] {
                    self.errors_by_time[t].push(r);
                    self.error_counts[t * self.states + data.record_state(r)] += 1;
                }
            }
        }
    }

    /// Log-likelihood of the flagged records: `sum log g[j][t][y]`.
    pub fn error_log_likelihood(&self, data: &ObservationSet) -> f64 {
        let mut total = 0.0;
        for (t, list) in self.errors_by_time.iter().enumerate() {
            for &r in list {
                total += libm::log(self.dominance(data.record_site(r), t, data.record_state(r)));
            }
        }
        total
    }

    /// Full log joint density of `(y, m, z)` given the parameters, up to
    /// prior terms. Finite exactly when the chain state is consistent.
    pub fn log_joint(&self, data: &ObservationSet) -> f64 {
        let e = self.error_rate;
        let mut total = 0.0;
        for i in 0..self.sites {
            total += self.log_initial[self.z[i]];
            for t in 1..self.horizon {
                let to = self.z[t * self.sites + i];
                let from = self.z[(t - 1) * self.sites + i];
                total += self.log_transitions[to * self.states + from];
            }
        }
        for t in 0..self.horizon {
            for r in data.time_range(t) {
                let i = data.record_site(r);
                let y = data.record_state(r);
                total += if self.m[r] {
                    libm::log(e) + libm::log(self.dominance(i, t, y))
                } else if y == self.z[t * self.sites + i] {
                    libm::log(1.0 - e)
                } else {
                    f64::NEG_INFINITY
                };
            }
        }
        total
    }
}

/// Most frequent state in `states`, lowest index on ties.
fn modal_state(states: &[usize], state_count: usize) -> Option<usize> {
    if states.is_empty() {
        return None;
    }
    let mut tally = vec![0usize; state_count];
    for &s in states {
        tally[s] += 1;
    }
    let best = *tally.iter().max()?;
    tally.iter().position(|&c| c == best)
}

/// Initial latent states: modal observed state per cell, unobserved cells
/// from the nearest observed period of the same site (earlier period on
/// ties), wholly unobserved sites from the overall modal state.
pub(crate) fn initial_latent(data: &ObservationSet, states: usize) -> Vec<usize> {
    let (n, horizon) = (data.sites(), data.horizon());
    let global = modal_state(data.states(), states).unwrap_or(0);
    let mut z = vec![0; n * horizon];
    for i in 0..n {
        let modal: Vec<Option<usize>> = (0..horizon).map(|t| modal_state(data.replicates(i, t), states)).collect();
        for t in 0..horizon {
            z[t * n + i] = modal[t]
                .or_else(|| {
                    (1..horizon).find_map(|d| {
                        let before = t.checked_sub(d).and_then(|u| modal[u]);
                        let after = (t + d < horizon).then(|| modal[t + d]).flatten();
                        before.or(after)
                    })
                })
                .unwrap_or(global);
        }
    }
    z
}

/// Makes every observed state present somewhere in the latent panel at the
/// time it was observed, so that every misrecorded state has positive
/// dominance. Returns false if no consistent assignment was found.
fn repair_support(z: &mut [usize], data: &ObservationSet, states: usize) -> bool {
    let n = data.sites();
    for t in 0..data.horizon() {
        for _ in 0..=(states * n) {
            let mut count = vec![0usize; states];
            for i in 0..n {
                count[z[t * n + i]] += 1;
            }
            let missing = data.time_range(t).map(|r| data.record_state(r)).find(|&y| count[y] == 0);
            let Some(y) = missing else { break };
            // candidate sites that recorded y, preferring those whose current
            // state would survive the change, then those with most y records
            let best = (0..n)
                .filter_map(|i| {
                    let votes = data.replicates(i, t).iter().filter(|&&v| v == y).count();
                    (votes > 0).then(|| (count[z[t * n + i]] >= 2, votes, core::cmp::Reverse(i)))
                })
                .max();
            match best {
                Some((_, _, core::cmp::Reverse(i))) => z[t * n + i] = y,
                None => return false,
            }
        }
        let mut count = vec![0usize; states];
        for i in 0..n {
            count[z[t * n + i]] += 1;
        }
        if data.time_range(t).any(|r| count[data.record_state(r)] == 0) {
            return false;
        }
    }
    true
}

fn draw_transitions<R: RngCore + ?Sized>(rng: &mut R, states: usize) -> TransitionMatrix {
    crate::simulate::random_transition_matrix(rng, states)
}

/// Builds the starting state of a chain.
///
/// Latent states start at the modal observed state (see
/// [`initial_latent`]); error flags mark every record that disagrees with
/// its cell's latent state. Unfixed parameters are drawn from their priors,
/// and the kernel bandwidth is redrawn until the flagged records have
/// positive likelihood.
pub fn init_chain<R: RngCore + ?Sized>(
    data: &ObservationSet,
    frame: &SiteFrame,
    states: &StateSpace,
    config: &FitConfig,
    rng: &mut R,
) -> Result<ChainState> {
    config.validate()?;
    let s = states.len();
    validate_data(data, frame, s)?;
    if data.is_empty() {
        return Err(Error::EmptyData);
    }
    let (n, horizon) = (data.sites(), data.horizon());

    let mut z = initial_latent(data, s);
    if !repair_support(&mut z, data, s) {
        return Err(Error::InitFailed("observed states cannot all be explained at some period".into()));
    }
    let m: Vec<bool> = (0..horizon)
        .flat_map(|t| data.time_range(t).map(move |r| (r, t)))
        .map(|(r, t)| data.record_state(r) != z[t * n + data.record_site(r)])
        .collect();

    let transitions = match &config.fixed.transitions {
        Some(p) if p.states() != s => {
            return Err(Error::ShapeMismatch(format!("fixed transition matrix is not {s} x {s}")))
        }
        Some(p) => p.clone(),
        None => draw_transitions(rng, s),
    };
    let initial = match &config.fixed.initial {
        Some(phi) if phi.len() != s => {
            return Err(Error::ShapeMismatch(format!("fixed initial distribution needs {s} entries")))
        }
        Some(phi) => phi.clone(),
        None => {
            let mut v = vec![0.0; s];
            sample_dirichlet(rng, &vec![1.0; s], &mut v);
            InitialDistribution::from_normalized(v)
        }
    };
    let error_rate = config.fixed.error_rate.unwrap_or_else(|| sample_beta(rng, 1.0, 1.0));

    let mut state = ChainState {
        sites: n,
        horizon,
        states: s,
        z,
        m,
        transitions,
        initial,
        error_rate,
        smoother: Smoother::Global,
        counts: vec![0; horizon * s],
        errors_by_time: vec![Vec::new(); horizon],
        error_counts: vec![0; horizon * s],
        log_transitions: Vec::new(),
        log_initial: Vec::new(),
    };
    state.recount();
    state.refresh_log_tables();
    state.rebuild_error_index(data);

    if config.model == ModelKind::Spatial {
        let geometry = KernelGeometry::new(frame);
        let mut candidates: Vec<BandwidthMatrix> = Vec::new();
        if let Some(bw) = config.fixed.bandwidth {
            candidates.push(bw);
        } else {
            let u = config.bandwidth_max;
            for _ in 0..200 {
                let s1 = rng.random::<f64>() * u;
                let s2 = rng.random::<f64>() * u;
                let rho = if config.fix_rho_zero { 0.0 } else { 2.0 * rng.random::<f64>() - 1.0 };
                if let Ok(bw) = BandwidthMatrix::new(s1, s2, rho) {
                    candidates.push(bw);
                }
            }
            candidates.push(BandwidthMatrix::isotropic(u / 2.0)?);
        }
        let mut chosen = false;
        for bw in candidates {
            let Ok(kernel) = geometry.kernel(&bw) else { continue };
            state.smoother =
                Smoother::Kernel { geometry: geometry.clone(), bandwidth: bw, kernel, weights: Vec::new() };
            state.rebuild_weights();
            if state.error_log_likelihood(data).is_finite() {
                chosen = true;
                break;
            }
        }
        if !chosen {
            return Err(Error::InitFailed("no bandwidth gives the flagged records positive likelihood".into()));
        }
    }

    if !state.log_joint(data).is_finite() {
        return Err(Error::InitFailed("initial state has zero likelihood".into()));
    }
    Ok(state)
}

pub(crate) fn validate_data(data: &ObservationSet, frame: &SiteFrame, states: usize) -> Result<()> {
    if data.sites() != frame.len() {
        return Err(Error::ShapeMismatch(format!(
            "observations cover {} sites, frame has {}",
            data.sites(),
            frame.len()
        )));
    }
    if data.state_bound() > states {
        return Err(Error::StateOutOfRange { state: data.state_bound() - 1, states });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::random::substream;
    use crate::simulate::make_grid;

    fn spatial() -> FitConfig {
        FitConfig { chains: 1, ..FitConfig::default() }
    }

    #[test]
    fn single_record_sets_state() {
        let data = ObservationSet::from_nested(&[vec![vec![0]]], 2).unwrap();
        let frame = make_grid(1, 1).unwrap();
        let st =
            init_chain(&data, &frame, &StateSpace::numbered(2).unwrap(), &spatial(), &mut substream(1, 0)).unwrap();
        assert_eq!(st.latent(0, 0), 0);
        assert_eq!(st.error_flags(), &[false]);
    }

    #[test]
    fn majority_and_consistency() {
        // 1-based (2, 2, 3) at one survey; a neighbour holds state 3
        let data = ObservationSet::from_nested(&[vec![vec![1, 1, 2]], vec![vec![2]]], 3).unwrap();
        let frame = make_grid(1, 2).unwrap();
        let st =
            init_chain(&data, &frame, &StateSpace::numbered(3).unwrap(), &spatial(), &mut substream(2, 0)).unwrap();
        assert_eq!(st.latent(0, 0), 1);
        assert_eq!(st.error_flags(), &[false, false, true, false]);
        assert!(st.log_joint(&data).is_finite());
    }

    #[test]
    fn unobserved_site_takes_global_mode() {
        // three sites, one period; site 2 never surveyed; site 3 ties 1/0 -> 0
        let data = ObservationSet::from_nested(&[vec![vec![1]], vec![vec![]], vec![vec![1, 0]]], 2).unwrap();
        assert_eq!(initial_latent(&data, 2), vec![1, 1, 0]);
        let frame = make_grid(1, 3).unwrap();
        let st =
            init_chain(&data, &frame, &StateSpace::numbered(2).unwrap(), &spatial(), &mut substream(3, 0)).unwrap();
        assert!(st.log_joint(&data).is_finite());
    }

    #[test]
    fn unobserved_period_takes_nearest_period() {
        let y = vec![vec![vec![0], vec![], vec![], vec![2], vec![]]];
        let data = ObservationSet::from_nested(&y, 3).unwrap();
        assert_eq!(initial_latent(&data, 3), vec![0, 0, 2, 2, 2]);
    }

    #[test]
    fn absent_state_is_repaired() {
        // site 0 sees (0, 0, 1); nobody else holds 1, so site 1 (which saw 1) must
        let data = ObservationSet::from_nested(&[vec![vec![0, 0, 1]], vec![vec![1, 0, 0]]], 2).unwrap();
        let frame = make_grid(1, 2).unwrap();
        let st =
            init_chain(&data, &frame, &StateSpace::numbered(2).unwrap(), &spatial(), &mut substream(4, 0)).unwrap();
        assert!(st.log_joint(&data).is_finite());
    }

    #[test]
    fn impossible_data_fails_cleanly() {
        let data = ObservationSet::from_nested(&[vec![vec![0, 1]]], 2).unwrap();
        let frame = make_grid(1, 1).unwrap();
        let err = init_chain(&data, &frame, &StateSpace::numbered(2).unwrap(), &spatial(), &mut substream(5, 0));
        assert!(matches!(err, Err(Error::InitFailed(_))));
    }

    #[test]
    fn empty_data() {
        let data = ObservationSet::from_nested(&[vec![vec![]]], 2).unwrap();
        let frame = make_grid(1, 1).unwrap();
        let err = init_chain(&data, &frame, &StateSpace::numbered(2).unwrap(), &spatial(), &mut substream(6, 0));
        assert_eq!(err.unwrap_err(), Error::EmptyData);
    }

    #[test]
    fn cache_is_coherent_after_init() {
        let frame = make_grid(4, 4).unwrap();
        let y: Vec<Vec<Vec<usize>>> = (0..16).map(|i| vec![vec![i % 3], vec![(i / 3) % 3]]).collect();
        let data = ObservationSet::from_nested(&y, 3).unwrap();
        let st =
            init_chain(&data, &frame, &StateSpace::numbered(3).unwrap(), &spatial(), &mut substream(7, 0)).unwrap();
        let (drift, closure) = st.audit_cache();
        assert!(drift <= 1e-12 && closure <= 1e-9);
        for t in 0..2 {
            for i in 0..16 {
                let g: f64 = (0..3).map(|s| st.dominance(i, t, s)).sum();
                assert!((g - 1.0).abs() < 1e-9);
            }
        }
    }
}
