//! Point estimates, credible intervals and convergence diagnostics.
//!
//! Univariate parameters (error rate, kernel scales, correlation) are
//! summarised by their posterior mode, located on a Gaussian kernel density
//! estimate. Probability vectors (transition columns, initial distribution)
//! are summarised by their L2 geometric median, which lies in the convex
//! hull of the draws and therefore on the simplex.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::model::{BandwidthMatrix, InitialDistribution, TransitionMatrix};
use crate::sampler::{ModelKind, Parameter, PosteriorDraws};

/// Potential scale reduction factor flagged as unconverged above this value.
pub const RHAT_THRESHOLD: f64 = 1.1;

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn sample_variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() as f64 - 1.0)
}

/// Classic Gelman-Rubin potential scale reduction for one scalar:
/// `sqrt(((n - 1) / n * W + B / n) / W)`, with `W` the mean within-chain
/// variance and `B` the between-chain variance of chain means times `n`.
pub fn rhat(chains: &[Vec<f64>]) -> Result<f64> {
    if chains.len() < 2 {
        return Err(Error::InsufficientDraws("R-hat needs at least two chains".into()));
    }
    let n = chains[0].len();
    if n < 2 || chains.iter().any(|c| c.len() != n) {
        return Err(Error::InsufficientDraws("R-hat needs equal-length chains of at least two draws".into()));
    }
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let within = chains.iter().map(|c| sample_variance(c)).sum::<f64>() / chains.len() as f64;
    if !(within > 0.0) {
        return Err(Error::DegenerateChains);
    }
    let nf = n as f64;
    let between = nf * sample_variance(&means);
    Ok(libm::sqrt(((nf - 1.0) / nf * within + between / nf) / within))
}

/// R-hat after splitting each chain into halves (odd middle draw dropped).
pub fn split_rhat(chains: &[Vec<f64>]) -> Result<f64> {
    let mut halves = Vec::with_capacity(2 * chains.len());
    for c in chains {
        let h = c.len() / 2;
        halves.push(c[..h].to_vec());
        halves.push(c[c.len() - h..].to_vec());
    }
    rhat(&halves)
}

/// Multi-chain effective sample size from autocorrelations truncated at the
/// first negative pair sum.
pub fn effective_draws(chains: &[Vec<f64>]) -> f64 {
    let m = chains.len();
    let n = chains.iter().map(Vec::len).min().unwrap_or(0);
    if m == 0 || n < 4 {
        return (m * n) as f64;
    }
    let nf = n as f64;
    let means: Vec<f64> = chains.iter().map(|c| mean(&c[..n])).collect();
    let within = chains.iter().map(|c| sample_variance(&c[..n])).sum::<f64>() / m as f64;
    let between = if m > 1 { nf * sample_variance(&means) } else { 0.0 };
    let var_plus = (nf - 1.0) / nf * within + between / nf;
    if !(var_plus > 0.0) {
        return (m * n) as f64;
    }
    let autocov = |lag: usize| -> f64 {
        chains
            .iter()
            .zip(&means)
            .map(|(c, mu)| (0..n - lag).map(|k| (c[k] - mu) * (c[k + lag] - mu)).sum::<f64>() / nf)
            .sum::<f64>()
            / m as f64
    };
    let rho = |lag: usize| 1.0 - (within - autocov(lag)) / var_plus;
    let mut sum = 0.0;
    let mut lag = 1;
    while lag + 1 < n {
        let pair = rho(lag) + rho(lag + 1);
        if pair < 0.0 {
            break;
        }
        sum += pair;
        lag += 2;
    }
    let tau = -1.0 + 2.0 * (1.0 + sum);
    (m * n) as f64 / f64::max(tau, 1.0 / libm::log10((m * n) as f64).max(1.0))
}

fn sorted(draws: &[f64]) -> Vec<f64> {
    let mut v = draws.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    v
}

/// Linear-interpolation quantile of sorted data (`h = (n - 1) p`).
fn quantile_sorted(v: &[f64], p: f64) -> f64 {
    let h = (v.len() - 1) as f64 * p;
    let lo = libm::floor(h) as usize;
    let hi = (lo + 1).min(v.len() - 1);
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

/// Central credible interval with tail mass `(1 - level) / 2` on each side.
pub fn credible_interval(draws: &[f64], level: f64) -> Result<(f64, f64)> {
    if draws.is_empty() {
        return Err(Error::InsufficientDraws("no draws".into()));
    }
    if !(level > 0.0 && level <= 1.0) {
        return Err(Error::InvalidConfig(format!("credible level {level} outside (0, 1]")));
    }
    let v = sorted(draws);
    let tail = (1.0 - level) / 2.0;
    Ok((quantile_sorted(&v, tail), quantile_sorted(&v, 1.0 - tail)))
}

const MODE_GRID: usize = 512;

/// Posterior mode from a Gaussian kernel density estimate with Silverman's
/// bandwidth: grid search over the draw range, then golden-section refinement.
pub fn posterior_mode(draws: &[f64]) -> Result<f64> {
    if draws.len() < 2 {
        return Err(Error::InsufficientDraws("mode needs at least two draws".into()));
    }
    let v = sorted(draws);
    let (lo, hi) = (v[0], v[v.len() - 1]);
    if lo == hi {
        return Ok(lo);
    }
    let n = v.len() as f64;
    let sd = libm::sqrt(sample_variance(&v));
    let iqr = quantile_sorted(&v, 0.75) - quantile_sorted(&v, 0.25);
    let spread = if iqr > 0.0 { f64::min(sd, iqr / 1.34) } else { sd };
    let h = 0.9 * spread * libm::pow(n, -0.2);
    let density = |x: f64| -> f64 {
        // draws beyond 8 bandwidths contribute < 1e-14
        let from = v.partition_point(|&d| d < x - 8.0 * h);
        let to = v.partition_point(|&d| d <= x + 8.0 * h);
        v[from..to]
            .iter()
            .map(|&d| {
                let u = (x - d) / h;
                libm::exp(-0.5 * u * u)
            })
            .sum()
    };
    let step = (hi - lo) / (MODE_GRID - 1) as f64;
    let (mut best, mut best_density) = (0, f64::NEG_INFINITY);
    for k in 0..MODE_GRID {
        let d = density(lo + step * k as f64);
        if d > best_density {
            best = k;
            best_density = d;
        }
    }
    let mut a = lo + step * best.saturating_sub(1) as f64;
    let mut b = lo + step * (best + 1).min(MODE_GRID - 1) as f64;
    let ratio = (libm::sqrt(5.0) - 1.0) / 2.0;
    let mut c = b - ratio * (b - a);
    let mut d = a + ratio * (b - a);
    let (mut fc, mut fd) = (density(c), density(d));
    for _ in 0..100 {
        if b - a <= 1e-12 * (1.0 + libm::fabs(a)) {
            break;
        }
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - ratio * (b - a);
            fc = density(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + ratio * (b - a);
            fd = density(d);
        }
    }
    let refined = (a + b) / 2.0;
    let grid_point = lo + step * best as f64;
    Ok(if density(refined) >= best_density { refined } else { grid_point })
}

const WEISZFELD_TOLERANCE: f64 = 1e-10;
const WEISZFELD_MAX_ITER: usize = 10_000;

/// L2 geometric median of probability vectors by Weiszfeld iteration,
/// with the Vardi-Zhang correction when the iterate lands on a draw.
/// The result is clipped at zero and renormalised to sum to one.
pub fn spatial_median(draws: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = draws.first().ok_or_else(|| Error::InsufficientDraws("no draws".into()))?;
    let dim = first.len();
    if draws.iter().any(|d| d.len() != dim) {
        return Err(Error::ShapeMismatch("draws differ in length".into()));
    }
    let mut y: Vec<f64> = (0..dim).map(|k| draws.iter().map(|d| d[k]).sum::<f64>() / draws.len() as f64).collect();
    let mut next = vec![0.0; dim];
    let mut pull = vec![0.0; dim];
    for _ in 0..WEISZFELD_MAX_ITER {
        next.iter_mut().for_each(|v| *v = 0.0);
        pull.iter_mut().for_each(|v| *v = 0.0);
        let mut weight = 0.0;
        let mut coincident = 0usize;
        for d in draws {
            let dist = libm::sqrt(d.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>());
            if dist < 1e-15 {
                coincident += 1;
                continue;
            }
            let w = 1.0 / dist;
            weight += w;
            for k in 0..dim {
                next[k] += w * d[k];
                pull[k] += w * (d[k] - y[k]);
            }
        }
        if weight == 0.0 {
            break;
        }
        next.iter_mut().for_each(|v| *v /= weight);
        if coincident > 0 {
            // Vardi-Zhang: blend toward the coincident draw
            let r = libm::sqrt(pull.iter().map(|v| v * v).sum::<f64>());
            let eta = coincident as f64;
            if r <= eta {
                break;
            }
            let gamma = eta / r;
            for k in 0..dim {
                next[k] = (1.0 - gamma) * next[k] + gamma * y[k];
            }
        }
        let moved = libm::sqrt(next.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>());
        core::mem::swap(&mut y, &mut next);
        if moved < WEISZFELD_TOLERANCE {
            break;
        }
    }
    y.iter_mut().for_each(|v| *v = v.max(0.0));
    let sum: f64 = y.iter().sum();
    if sum > 0.0 {
        y.iter_mut().for_each(|v| *v /= sum);
    }
    Ok(y)
}

/// Summary of one scalar parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSummary {
    pub parameter: Parameter,
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
    /// `None` with a single chain or zero within-chain variance.
    pub rhat: Option<f64>,
    pub effective_draws: f64,
}

impl ParameterSummary {
    pub fn unconverged(&self) -> bool {
        self.rhat.is_some_and(|r| r > RHAT_THRESHOLD)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryReport {
    pub model: ModelKind,
    pub states: usize,
    pub chains: usize,
    pub draws: usize,
    pub level: f64,
    pub transitions: TransitionMatrix,
    pub initial: InitialDistribution,
    pub error_rate: f64,
    pub bandwidth: Option<BandwidthMatrix>,
    pub parameters: Vec<ParameterSummary>,
}

impl SummaryReport {
    pub fn get(&self, parameter: Parameter) -> Option<&ParameterSummary> {
        self.parameters.iter().find(|p| p.parameter == parameter)
    }

    /// Parameters whose R-hat exceeds [`RHAT_THRESHOLD`].
    pub fn unconverged(&self) -> Vec<&ParameterSummary> {
        self.parameters.iter().filter(|p| p.unconverged()).collect()
    }
}

/// Applies the point-estimate rules to every parameter: geometric median
/// for each transition column and for the initial distribution, posterior
/// mode for the error rate and kernel parameters.
pub fn summarize(draws: &PosteriorDraws, level: f64) -> Result<SummaryReport> {
    let s = draws.states;
    let total = draws.total_draws();
    if total == 0 {
        return Err(Error::InsufficientDraws("no retained draws".into()));
    }
    let mut columns = vec![0.0; s * s];
    for from in 0..s {
        let med = spatial_median(&draws.transition_columns(from))?;
        columns[from * s..(from + 1) * s].copy_from_slice(&med);
    }
    let transitions = TransitionMatrix::from_columns_normalized(s, &columns);
    let initial = InitialDistribution::from_normalized(spatial_median(&draws.initial_vectors())?);

    let mode_or_value = |p: Parameter| -> Result<f64> {
        let pooled = draws.pooled(p);
        if pooled.len() == 1 {
            Ok(pooled[0])
        } else {
            posterior_mode(&pooled)
        }
    };
    let error_rate = mode_or_value(Parameter::ErrorRate)?;
    let bandwidth = if draws.model == ModelKind::Spatial {
        let s1 = mode_or_value(Parameter::Sigma1)?;
        let s2 = mode_or_value(Parameter::Sigma2)?;
        let rho = mode_or_value(Parameter::Rho)?;
        Some(BandwidthMatrix::new(s1, s2, rho)?)
    } else {
        None
    };

    let mut parameters = Vec::new();
    for p in draws.parameters() {
        let per_chain = draws.chain_series(p);
        let pooled: Vec<f64> = per_chain.iter().flatten().copied().collect();
        let estimate = match p {
            Parameter::Transition { to, from } => transitions.get(to, from),
            Parameter::Initial(k) => initial.probs()[k],
            Parameter::ErrorRate => error_rate,
            Parameter::Sigma1 => bandwidth.map_or(f64::NAN, |b| b.sigma1()),
            Parameter::Sigma2 => bandwidth.map_or(f64::NAN, |b| b.sigma2()),
            Parameter::Rho => bandwidth.map_or(f64::NAN, |b| b.rho()),
        };
        let (lower, upper) = credible_interval(&pooled, level)?;
        let rhat = if per_chain.len() >= 2 { rhat(&per_chain).ok() } else { None };
        parameters.push(ParameterSummary {
            parameter: p,
            estimate,
            lower,
            upper,
            rhat,
            effective_draws: effective_draws(&per_chain),
        });
    }
    Ok(SummaryReport {
        model: draws.model,
        states: s,
        chains: draws.chains.len(),
        draws: total,
        level,
        transitions,
        initial,
        error_rate,
        bandwidth,
        parameters,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::random::substream;
    use crate::sampler::ChainDraws;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::{Beta, Distribution, Normal};

    fn normal_draws(seed: u64, n: usize, mu: f64, sd: f64) -> Vec<f64> {
        let mut rng = substream(seed, 0);
        let d = Normal::new(mu, sd).unwrap();
        (0..n).map(|_| d.sample(&mut rng)).collect()
    }

    // Direct transcription of the potential-scale-reduction formula.
    fn hand_rhat(chains: &[Vec<f64>]) -> f64 {
        let m = chains.len() as f64;
        let n = chains[0].len() as f64;
        let means: Vec<f64> = chains.iter().map(|c| c.iter().sum::<f64>() / n).collect();
        let grand = means.iter().sum::<f64>() / m;
        let b = n / (m - 1.0) * means.iter().map(|x| (x - grand).powi(2)).sum::<f64>();
        let w = chains
            .iter()
            .zip(&means)
            .map(|(c, mu)| c.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (n - 1.0))
            .sum::<f64>()
            / m;
        (((n - 1.0) / n * w + b / n) / w).sqrt()
    }

    #[test]
    fn rhat_of_constant_chains_is_degenerate() {
        let c = vec![vec![2.0; 10], vec![2.0; 10]];
        assert_eq!(rhat(&c), Err(Error::DegenerateChains));
        assert!(rhat(&[vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn rhat_same_distribution_near_one() {
        let c = vec![normal_draws(1, 10_000, 0.0, 1.0), normal_draws(2, 10_000, 0.0, 1.0)];
        let r = rhat(&c).unwrap();
        assert!((0.99..=1.01).contains(&r), "{r}");
        assert!((r - hand_rhat(&c)).abs() < 1e-12);
    }

    #[test]
    fn rhat_shifted_chains_far_from_one() {
        let c = vec![normal_draws(3, 10_000, 0.0, 1.0), normal_draws(4, 10_000, 5.0, 1.0)];
        let r = rhat(&c).unwrap();
        assert!(r > 1.2, "{r}");
        assert!((r - hand_rhat(&c)).abs() < 1e-12);
        assert!(split_rhat(&c).unwrap() > 1.2);
    }

    #[test]
    fn mode_of_constant_draws() {
        assert_eq!(posterior_mode(&[0.7; 20]).unwrap(), 0.7);
        assert!(posterior_mode(&[1.0]).is_err());
    }

    #[test]
    fn mode_of_beta_sample() {
        let mut rng = substream(5, 0);
        let b = Beta::new(31.0, 71.0).unwrap();
        let draws: Vec<f64> = (0..20_000).map(|_| b.sample(&mut rng)).collect();
        let m = posterior_mode(&draws).unwrap();
        assert!((m - 0.30).abs() < 0.02, "{m}");
    }

    #[test]
    fn mode_picks_the_higher_peak() {
        let mut rng = substream(6, 0);
        let a = Normal::new(0.0, 0.1).unwrap();
        let b = Normal::new(3.0, 0.1).unwrap();
        let draws: Vec<f64> = (0..20_000)
            .map(|_| if rng.random::<f64>() < 0.7 { a.sample(&mut rng) } else { b.sample(&mut rng) })
            .collect();
        let m = posterior_mode(&draws).unwrap();
        assert!(m.abs() < 0.05, "{m}");
    }

    #[test]
    fn interval_interpolates() {
        let draws: Vec<f64> = (1..=100).map(f64::from).collect();
        let (lo, hi) = credible_interval(&draws, 0.9).unwrap();
        assert!((lo - 5.95).abs() < 1e-12 && (hi - 95.05).abs() < 1e-12);
        assert_eq!(credible_interval(&[3.0; 5], 0.5).unwrap(), (3.0, 3.0));
        assert_eq!(credible_interval(&draws, 1.0).unwrap(), (1.0, 100.0));
        assert!(credible_interval(&draws, 0.0).is_err());
    }

    #[test]
    fn interval_of_uniform_sample() {
        let mut rng = substream(7, 0);
        let draws: Vec<f64> = (0..100_000).map(|_| rng.random::<f64>()).collect();
        let (lo, hi) = credible_interval(&draws, 0.95).unwrap();
        assert!((lo - 0.025).abs() < 0.005 && (hi - 0.975).abs() < 0.005);
    }

    #[test]
    fn median_of_identical_draws() {
        let v = vec![0.2, 0.5, 0.3];
        for m in [
            spatial_median(&[v.clone(), v.clone(), v.clone()]).unwrap(),
            spatial_median(core::slice::from_ref(&v)).unwrap(),
        ] {
            for (a, b) in m.iter().zip(&v) {
                assert!((a - b).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn median_of_permutation_symmetric_draws() {
        let base = [0.6, 0.3, 0.1];
        let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
        let draws: Vec<Vec<f64>> = perms.iter().map(|p| p.iter().map(|&k| base[k]).collect()).collect();
        let m = spatial_median(&draws).unwrap();
        for v in m {
            assert!((v - 1.0 / 3.0).abs() < 1e-8);
        }
    }

    #[test]
    fn median_of_triangle_is_fermat_point() {
        // three points on the simplex; compare with a fine grid search
        let draws = vec![vec![0.8, 0.1, 0.1], vec![0.1, 0.8, 0.1], vec![0.3, 0.2, 0.5]];
        let m = spatial_median(&draws).unwrap();
        let cost = |p: &[f64]| -> f64 {
            draws.iter().map(|d| d.iter().zip(p).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()).sum()
        };
        let steps = 2000;
        let mut best = (f64::INFINITY, vec![]);
        for a in 0..=steps {
            for b in 0..=(steps - a) {
                let p = [a as f64 / steps as f64, b as f64 / steps as f64, (steps - a - b) as f64 / steps as f64];
                let c = cost(&p);
                if c < best.0 {
                    best = (c, p.to_vec());
                }
            }
        }
        for (x, y) in m.iter().zip(&best.1) {
            assert!((x - y).abs() < 2e-3, "{m:?} vs {:?}", best.1);
        }
        assert!(cost(&m) <= best.0 + 1e-9);
    }

    #[test]
    fn single_chain_summary_has_no_rhat() {
        let s = 2;
        let mut chain = ChainDraws::default();
        let mut rng = substream(8, 0);
        for k in 0..50 {
            let a: f64 = 0.6 + 0.1 * rng.random::<f64>();
            let b: f64 = 0.3 + 0.1 * rng.random::<f64>();
            chain.iterations.push(k + 1);
            chain.transitions.extend([a, b, 1.0 - a, 1.0 - b]);
            chain.error_rate.push(0.2 + 0.05 * rng.random::<f64>());
            let phi: f64 = rng.random();
            chain.initial.extend([phi, 1.0 - phi]);
        }
        let draws = PosteriorDraws { model: ModelKind::NonSpatial, states: s, chains: vec![chain] };
        let report = summarize(&draws, 0.95).unwrap();
        assert!(report.parameters.iter().all(|p| p.rhat.is_none()));
        for from in 0..s {
            let sum: f64 = (0..s).map(|to| report.transitions.get(to, from)).sum();
            assert!((sum - 1.0).abs() < 1e-9);
        }
        assert!(report.bandwidth.is_none());
        let e = report.get(Parameter::ErrorRate).unwrap();
        assert!(e.lower <= e.estimate && e.estimate <= e.upper);
    }

    #[test]
    fn effective_draws_of_independent_sample() {
        let c = vec![normal_draws(9, 2000, 0.0, 1.0), normal_draws(10, 2000, 0.0, 1.0)];
        let ess = effective_draws(&c);
        assert!(ess > 3000.0 && ess < 5000.0, "{ess}");
    }

    proptest! {
        #[test]
        fn rhat_is_shift_invariant(seed in 0u64..500, shift in -100.0..100.0f64) {
            let c = vec![normal_draws(seed, 200, 0.0, 1.0), normal_draws(seed + 1, 200, 0.3, 1.0)];
            let shifted: Vec<Vec<f64>> = c.iter().map(|x| x.iter().map(|v| v + shift).collect()).collect();
            let a = rhat(&c).unwrap();
            let b = rhat(&shifted).unwrap();
            prop_assert!((a - b).abs() < 1e-9);
            prop_assert!(a >= 1.0 - 1e-6 || a > 0.98);
        }

        #[test]
        fn interval_is_ordered(draws in proptest::collection::vec(-1e3..1e3f64, 1..60), level in 0.01..1.0f64) {
            let (lo, hi) = credible_interval(&draws, level).unwrap();
            prop_assert!(lo <= hi);
        }

        #[test]
        fn median_stays_on_simplex(seed in 0u64..500, count in 1usize..30) {
            let mut rng = substream(seed, 0);
            let draws: Vec<Vec<f64>> = (0..count)
                .map(|_| {
                    let mut v = [0.0; 4];
                    crate::random::sample_dirichlet(&mut rng, &[0.5, 1.0, 2.0, 0.3], &mut v);
                    v.to_vec()
                })
                .collect();
            let m = spatial_median(&draws).unwrap();
            prop_assert!((m.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for k in 0..4 {
                let floor = draws.iter().map(|d| d[k]).fold(f64::INFINITY, f64::min);
                prop_assert!(m[k] >= floor - 1e-9);
            }
        }
    }
}
