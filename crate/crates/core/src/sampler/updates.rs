//! Single-block updates of the Metropolis-within-Gibbs sweep.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, RngCore};
use rand_distr::{Distribution, StandardNormal};

use super::state::{ChainState, Smoother};
use crate::error::{Error, Result};
use crate::model::{BandwidthMatrix, InitialDistribution, ObservationSet, TransitionMatrix};
use crate::random::{sample_beta, sample_dirichlet, sample_log_categorical};

/// Redraws every error flag from its full conditional.
///
/// A record that disagrees with its cell's latent state must be an error.
/// A record that agrees is an error with probability
/// `e g / (e g + 1 - e)`, where `g` is the dominance of the recorded state.
pub fn update_m<R: RngCore + ?Sized>(state: &mut ChainState, data: &ObservationSet, rng: &mut R) -> Result<()> {
    let e = state.error_rate;
    let n = state.sites;
    for t in 0..state.horizon {
        for r in data.time_range(t) {
            let i = data.record_site(r);
            let y = data.record_state(r);
            let g = state.dominance(i, t, y);
            state.m[r] = if y != state.z[t * n + i] {
                if !(g > 0.0) {
                    return Err(Error::ZeroSupport { site: i, time: t, record: r });
                }
                true
            } else {
                let num = e * g;
                let prob = num / (num + (1.0 - e));
                rng.random::<f64>() < prob
            };
        }
    }
    state.rebuild_error_index(data);
    Ok(())
}

/// Running product kept in log space only when it leaves a safe range.
#[derive(Clone, Copy)]
struct LogProduct {
    log: f64,
    prod: f64,
}

impl LogProduct {
    const ONE: Self = Self { log: 0.0, prod: 1.0 };

    #[inline]
    fn mul(&mut self, x: f64) {
        self.prod *= x;
        if !(1e-150..=1e150).contains(&self.prod) {
            self.log += libm::log(self.prod);
            self.prod = 1.0;
        }
    }

    fn value(self) -> f64 {
        self.log + libm::log(self.prod)
    }
}

/// Scratch buffers for the latent-state update, sized to the state count.
#[derive(Debug, Clone)]
pub struct SiteScratch {
    log_weights: Vec<f64>,
    probs: Vec<f64>,
    gains: Vec<f64>,
}

impl SiteScratch {
    pub fn new(states: usize) -> Self {
        Self { log_weights: vec![0.0; states], probs: vec![0.0; states], gains: vec![0.0; states] }
    }
}

/// Draws `z[site][time]` from its full conditional and commits the
/// incremental change to the dominance caches.
///
/// For each candidate state the weight combines the Markov prior from the
/// previous period, the transition into the next period, agreement with
/// every non-error record of the cell, and the dominance of every error
/// record at `time` across the quadrat re-evaluated with the candidate in
/// place. Only error records showing the current or the candidate state
/// change their dominance, which keeps each candidate `O(1)` per record.
pub fn update_z_site<R: RngCore + ?Sized>(
    state: &mut ChainState,
    data: &ObservationSet,
    site: usize,
    time: usize,
    scratch: &mut SiteScratch,
    rng: &mut R,
) -> Result<()> {
    let (n, s_count) = (state.sites, state.states);
    let cell = time * n + site;
    let old = state.z[cell];

    let lw = &mut scratch.log_weights[..s_count];
    for (s, w) in lw.iter_mut().enumerate() {
        *w = if time == 0 { state.log_initial[s] } else { state.log_transitions[s * s_count + state.z[cell - n]] };
        if time + 1 < state.horizon {
            *w += state.log_transitions[state.z[cell + n] * s_count + s];
        }
    }
    for r in data.cell_range(site, time) {
        if !state.m[r] {
            let y = data.record_state(r);
            for (s, w) in lw.iter_mut().enumerate() {
                if s != y {
                    *w = f64::NEG_INFINITY;
                }
            }
        }
    }

    // change in the error-record log likelihood when `old` is replaced by
    // each candidate: loss on records showing `old`, gain on records
    // showing the candidate
    let counts_t = &state.counts[time * s_count..(time + 1) * s_count];
    let gains = &mut scratch.gains[..s_count];
    let loss;
    match &state.smoother {
        Smoother::Global => {
            let ec = &state.error_counts[time * s_count..(time + 1) * s_count];
            loss = if ec[old] == 0 {
                0.0
            } else if counts_t[old] == 1 {
                f64::NEG_INFINITY
            } else {
                ec[old] as f64 * libm::log((counts_t[old] - 1) as f64 / counts_t[old] as f64)
            };
            for (y, g) in gains.iter_mut().enumerate() {
                *g = if ec[y] == 0 || y == old {
                    0.0
                } else {
                    ec[y] as f64 * libm::log((counts_t[y] + 1) as f64 / counts_t[y] as f64)
                };
            }
        }
        Smoother::Kernel { kernel, weights, .. } => {
            let k_row = kernel.row(site);
            let mut old_product = LogProduct::ONE;
            let mut old_dead = false;
            let mut products = [LogProduct::ONE; 16];
            let mut heap_products = Vec::new();
            let prods: &mut [LogProduct] = if s_count <= 16 {
                &mut products[..s_count]
            } else {
                heap_products.resize(s_count, LogProduct::ONE);
                &mut heap_products
            };
            let sole_holder = counts_t[old] == 1;
            for &r in &state.errors_by_time[time] {
                let j = data.record_site(r);
                let y = data.record_state(r);
                let w = weights[(time * n + j) * s_count + y];
                let k = k_row[j];
                if y == old {
                    let after = w - k;
                    if sole_holder || !(after > 0.0) {
                        old_dead = true;
                    } else {
                        old_product.mul(after / w);
                    }
                } else {
                    prods[y].mul((w + k) / w);
                }
            }
            loss = if old_dead { f64::NEG_INFINITY } else { old_product.value() };
            for (g, p) in gains.iter_mut().zip(prods.iter()) {
                *g = p.value();
            }
        }
    }
    for (s, w) in lw.iter_mut().enumerate() {
        if s != old && *w != f64::NEG_INFINITY {
            *w += loss + gains[s];
        }
    }

    let Some(new) = sample_log_categorical(rng, lw, &mut scratch.probs) else {
        return Err(Error::AllZeroWeights { site, time });
    };
    if new != old {
        commit_latent(state, site, time, old, new);
    }
    Ok(())
}

fn commit_latent(state: &mut ChainState, site: usize, time: usize, old: usize, new: usize) {
    let (n, s_count) = (state.sites, state.states);
    state.z[time * n + site] = new;
    state.counts[time * s_count + old] -= 1;
    state.counts[time * s_count + new] += 1;
    let emptied = state.counts[time * s_count + old] == 0;
    if let Smoother::Kernel { kernel, weights, .. } = &mut state.smoother {
        let block = &mut weights[time * n * s_count..(time + 1) * n * s_count];
        for (row, &k) in block.chunks_mut(s_count).zip(kernel.row(site)) {
            row[old] -= k;
            row[new] += k;
            if emptied {
                row[old] = 0.0;
            }
        }
    }
}

/// Systematic scan over all cells, sites fastest within each period.
pub fn update_z<R: RngCore + ?Sized>(
    state: &mut ChainState,
    data: &ObservationSet,
    scratch: &mut SiteScratch,
    rng: &mut R,
) -> Result<()> {
    for t in 0..state.horizon {
        for i in 0..state.sites {
            update_z_site(state, data, i, t, scratch, rng)?;
        }
    }
    Ok(())
}

/// One-step transition counts `n[to][from]` of the latent panel, row-major.
pub fn transition_counts(state: &ChainState) -> Vec<usize> {
    let (n, s) = (state.sites, state.states);
    let mut counts = vec![0; s * s];
    for t in 1..state.horizon {
        for i in 0..n {
            counts[state.z[t * n + i] * s + state.z[(t - 1) * n + i]] += 1;
        }
    }
    counts
}

/// Conjugate draw of each transition column from
/// `Dirichlet(1 + n[1][k], ..., 1 + n[S][k])`.
pub fn update_transitions<R: RngCore + ?Sized>(state: &mut ChainState, rng: &mut R) {
    let s = state.states;
    let counts = transition_counts(state);
    let mut columns = vec![0.0; s * s];
    let mut alpha = vec![0.0; s];
    for from in 0..s {
        for (to, a) in alpha.iter_mut().enumerate() {
            *a = 1.0 + counts[to * s + from] as f64;
        }
        sample_dirichlet(rng, &alpha, &mut columns[from * s..(from + 1) * s]);
    }
    state.transitions = TransitionMatrix::from_columns_normalized(s, &columns);
    state.refresh_log_tables();
}

/// Conjugate draw of the initial distribution from `Dirichlet(1 + c)`,
/// `c[s]` = sites in state `s` at the first period.
pub fn update_phi<R: RngCore + ?Sized>(state: &mut ChainState, rng: &mut R) {
    let s = state.states;
    let alpha: Vec<f64> = state.counts[..s].iter().map(|&c| 1.0 + c as f64).collect();
    let mut phi = vec![0.0; s];
    sample_dirichlet(rng, &alpha, &mut phi);
    state.initial = InitialDistribution::from_normalized(phi);
    state.refresh_log_tables();
}

/// Conjugate draw `e ~ Beta(1 + #errors, 1 + #non-errors)`.
pub fn update_e<R: RngCore + ?Sized>(state: &mut ChainState, rng: &mut R) {
    let errors = state.m.iter().filter(|&&m| m).count();
    let clean = state.m.len() - errors;
    state.error_rate = sample_beta(rng, 1.0 + errors as f64, 1.0 + clean as f64);
}

/// Random-walk Metropolis tuning for one kernel parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepTuner {
    pub step: f64,
    pub adapting: bool,
    batch_proposed: usize,
    batch_accepted: usize,
    batches: usize,
    pub burn_in_proposed: usize,
    pub burn_in_accepted: usize,
    pub proposed: usize,
    pub accepted: usize,
}

/// Target acceptance rate for the one-dimensional random walks.
pub const TARGET_ACCEPTANCE: f64 = 0.44;
const ADAPT_BATCH: usize = 50;

impl StepTuner {
    pub fn new(step: f64) -> Self {
        Self {
            step,
            adapting: false,
            batch_proposed: 0,
            batch_accepted: 0,
            batches: 0,
            burn_in_proposed: 0,
            burn_in_accepted: 0,
            proposed: 0,
            accepted: 0,
        }
    }

    fn record(&mut self, accepted: bool, burn_in: bool) {
        if burn_in {
            self.burn_in_proposed += 1;
            self.burn_in_accepted += accepted as usize;
        } else {
            self.proposed += 1;
            self.accepted += accepted as usize;
        }
        if self.adapting && burn_in {
            self.batch_proposed += 1;
            self.batch_accepted += accepted as usize;
            if self.batch_proposed == ADAPT_BATCH {
                self.batches += 1;
                let delta = f64::min(0.1, 1.0 / libm::sqrt(self.batches as f64));
                let rate = self.batch_accepted as f64 / ADAPT_BATCH as f64;
                let factor = if rate > TARGET_ACCEPTANCE { libm::exp(delta) } else { libm::exp(-delta) };
                self.step = (self.step * factor).clamp(1e-4, 10.0);
                self.batch_proposed = 0;
                self.batch_accepted = 0;
            }
        }
    }
}

/// Step tuners for sigma1, sigma2 and rho.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandwidthTuners {
    pub sigma1: StepTuner,
    pub sigma2: StepTuner,
    pub rho: StepTuner,
}

impl BandwidthTuners {
    pub fn new(adapt: bool) -> Self {
        let mut t = Self { sigma1: StepTuner::new(0.3), sigma2: StepTuner::new(0.3), rho: StepTuner::new(0.3) };
        t.sigma1.adapting = adapt;
        t.sigma2.adapting = adapt;
        t.rho.adapting = adapt;
        t
    }
}

/// Log-likelihood of the error records under an arbitrary bandwidth,
/// evaluated without touching the caches.
pub fn error_log_likelihood_at(state: &ChainState, data: &ObservationSet, bandwidth: &BandwidthMatrix) -> f64 {
    let Smoother::Kernel { geometry, .. } = &state.smoother else {
        return state.error_log_likelihood(data);
    };
    let Ok(table) = geometry.weights(bandwidth) else {
        return f64::NEG_INFINITY;
    };
    let n = state.sites;
    let mut row_sums: Vec<f64> = vec![f64::NAN; n];
    let mut total = LogProduct::ONE;
    for (t, list) in state.errors_by_time.iter().enumerate() {
        let zt = &state.z[t * n..(t + 1) * n];
        for &r in list {
            let j = data.record_site(r);
            let y = data.record_state(r);
            if row_sums[j].is_nan() {
                row_sums[j] = (0..n).map(|i| geometry.pair(&table, j, i)).sum();
            }
            let num: f64 = (0..n).filter(|&i| zt[i] == y).map(|i| geometry.pair(&table, j, i)).sum();
            if !(num > 0.0) {
                return f64::NEG_INFINITY;
            }
            total.mul(num / row_sums[j]);
        }
    }
    total.value()
}

fn install_bandwidth(state: &mut ChainState, bandwidth: BandwidthMatrix) {
    if let Smoother::Kernel { geometry, bandwidth: bw, kernel, .. } = &mut state.smoother {
        *kernel = geometry.kernel(&bandwidth).expect("accepted bandwidth is non-singular");
        *bw = bandwidth;
    }
    state.rebuild_weights();
}

#[derive(Clone, Copy)]
enum KernelParameter {
    Sigma1,
    Sigma2,
    Rho,
}

/// One Metropolis step for each of sigma1, sigma2 and (unless pinned) rho.
///
/// Scales move by a Gaussian random walk on the log scale, with the
/// Jacobian `sigma' / sigma` in the acceptance ratio; rho moves by a
/// uniform random walk reflected into (-1, 1). Proposals outside the prior
/// support are rejected. Returns the number of accepted moves.
pub fn update_bandwidth<R: RngCore + ?Sized>(
    state: &mut ChainState,
    data: &ObservationSet,
    tuners: &mut BandwidthTuners,
    upper: f64,
    fix_rho_zero: bool,
    burn_in: bool,
    rng: &mut R,
) -> usize {
    if !matches!(state.smoother, Smoother::Kernel { .. }) {
        return 0;
    }
    let mut current_ll = state.error_log_likelihood(data);
    let mut accepted = 0;
    let params: &[KernelParameter] = if fix_rho_zero {
        &[KernelParameter::Sigma1, KernelParameter::Sigma2]
    } else {
        &[KernelParameter::Sigma1, KernelParameter::Sigma2, KernelParameter::Rho]
    };
    for &param in params {
        let bw = state.bandwidth().expect("spatial state has a bandwidth");
        let tuner = match param {
            KernelParameter::Sigma1 => &mut tuners.sigma1,
            KernelParameter::Sigma2 => &mut tuners.sigma2,
            KernelParameter::Rho => &mut tuners.rho,
        };
        let (proposal, log_jacobian) = match param {
            KernelParameter::Sigma1 | KernelParameter::Sigma2 => {
                let z: f64 = StandardNormal.sample(rng);
                let shift = tuner.step * z;
                let (s1, s2) = match param {
                    KernelParameter::Sigma1 => (bw.sigma1() * libm::exp(shift), bw.sigma2()),
                    _ => (bw.sigma1(), bw.sigma2() * libm::exp(shift)),
                };
                let in_prior = s1 < upper && s2 < upper;
                (in_prior.then(|| BandwidthMatrix::new(s1, s2, bw.rho()).ok()).flatten(), shift)
            }
            KernelParameter::Rho => {
                let mut r = bw.rho() + tuner.step * (2.0 * rng.random::<f64>() - 1.0);
                while !(-1.0..=1.0).contains(&r) {
                    r = if r > 1.0 { 2.0 - r } else { -2.0 - r };
                }
                (BandwidthMatrix::new(bw.sigma1(), bw.sigma2(), r).ok(), 0.0)
            }
        };
        let mut accept = false;
        if let Some(candidate) = proposal {
            let proposed_ll = error_log_likelihood_at(state, data, &candidate);
            if proposed_ll.is_finite() {
                let log_ratio = proposed_ll - current_ll + log_jacobian;
                accept = log_ratio >= 0.0 || libm::log(rng.random::<f64>()) < log_ratio;
                if accept {
                    install_bandwidth(state, candidate);
                    current_ll = proposed_ll;
                    accepted += 1;
                }
            }
        }
        tuner.record(accept, burn_in);
    }
    accepted
}
