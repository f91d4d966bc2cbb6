//! Naive transition estimator, equilibrium community properties and
//! estimator-quality statistics.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::{ObservationSet, TransitionMatrix};

/// Naive count-based estimate of a transition matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct NaiveEstimate {
    pub transitions: TransitionMatrix,
    /// Source states never observed in a consecutive pair; their columns
    /// are uniform placeholders and carry no information.
    pub unobserved_columns: Vec<usize>,
}

/// Counts one-step transitions between consecutive observed periods of the
/// same site and normalises each source column. A missing survey breaks the
/// pair: `(t - 1, t + 1)` is never counted.
pub fn naive_estimate(data: &ObservationSet, states: usize) -> Result<NaiveEstimate> {
    let (sites, horizon) = (data.sites(), data.horizon());
    for t in 0..horizon {
        for i in 0..sites {
            let count = data.count(i, t);
            if count > 1 {
                return Err(Error::ReplicatedData { site: i, time: t, count });
            }
        }
    }
    if data.state_bound() > states {
        return Err(Error::StateOutOfRange { state: data.state_bound() - 1, states });
    }
    let mut counts = vec![0u64; states * states];
    let mut total = 0u64;
    for t in 1..horizon {
        for i in 0..sites {
            let (Some(&from), Some(&to)) = (data.replicates(i, t - 1).first(), data.replicates(i, t).first()) else {
                continue;
            };
            counts[from * states + to] += 1;
            total += 1;
        }
    }
    if total == 0 {
        return Err(Error::NoTransitions);
    }
    let mut columns = vec![0.0; states * states];
    let mut unobserved_columns = Vec::new();
    for from in 0..states {
        let col = &counts[from * states..(from + 1) * states];
        let n: u64 = col.iter().sum();
        let out = &mut columns[from * states..(from + 1) * states];
        if n == 0 {
            out.iter_mut().for_each(|v| *v = 1.0 / states as f64);
            unobserved_columns.push(from);
        } else {
            for (o, &c) in out.iter_mut().zip(col) {
                *o = c as f64 / n as f64;
            }
        }
    }
    Ok(NaiveEstimate { transitions: TransitionMatrix::from_columns_normalized(states, &columns), unobserved_columns })
}

const POWER_TOLERANCE: f64 = 1e-12;
const POWER_MAX_ITER: usize = 1_000_000;
const STATIONARY_RESIDUAL: f64 = 1e-10;

fn power_iterate(p: &TransitionMatrix, mut w: Vec<f64>) -> Option<Vec<f64>> {
    for _ in 0..POWER_MAX_ITER {
        let mut next = p.apply(&w);
        let sum: f64 = next.iter().sum();
        next.iter_mut().for_each(|v| *v /= sum);
        let change = next.iter().zip(&w).map(|(a, b)| libm::fabs(a - b)).fold(0.0, f64::max);
        w = next;
        if change <= POWER_TOLERANCE {
            return Some(w);
        }
    }
    None
}

/// Equilibrium composition `w` with `Pw = w`, by power iteration from the
/// uniform vector and from every vertex of the simplex. Disagreement between
/// starts (reducible `P`) or failure to settle (periodic `P`) is an error.
pub fn stationary_distribution(p: &TransitionMatrix) -> Result<Vec<f64>> {
    let s = p.states();
    let mut starts = vec![vec![1.0 / s as f64; s]];
    starts.extend((0..s).map(|k| {
        let mut v = vec![0.0; s];
        v[k] = 1.0;
        v
    }));
    let mut reference: Option<Vec<f64>> = None;
    for start in starts {
        let w = power_iterate(p, start).ok_or(Error::NonConvergent)?;
        match &reference {
            None => reference = Some(w),
            Some(r) => {
                let gap = r.iter().zip(&w).map(|(a, b)| libm::fabs(a - b)).fold(0.0, f64::max);
                if gap > 1e-8 {
                    return Err(Error::NonConvergent);
                }
            }
        }
    }
    let mut w = reference.ok_or(Error::NonConvergent)?;
    w.iter_mut().for_each(|v| *v = v.max(0.0));
    let sum: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= sum);
    let residual = p.apply(&w).iter().zip(&w).map(|(a, b)| libm::fabs(a - b)).fold(0.0, f64::max);
    if residual > STATIONARY_RESIDUAL {
        return Err(Error::NonConvergent);
    }
    Ok(w)
}

/// `sum_s w_s / (1 - p_ss)`: expected residence time weighted by equilibrium mass.
pub fn mean_turnover_time(p: &TransitionMatrix) -> Result<f64> {
    let w = stationary_distribution(p)?;
    turnover_from(p, &w)
}

fn turnover_from(p: &TransitionMatrix, w: &[f64]) -> Result<f64> {
    let mut total = 0.0;
    for (s, &ws) in w.iter().enumerate() {
        if ws <= 0.0 {
            continue;
        }
        let stay = p.get(s, s);
        if stay >= 1.0 {
            return Err(Error::AbsorbingState { state: s });
        }
        total += ws / (1.0 - stay);
    }
    Ok(total)
}

/// Below this modulus the subdominant eigenvalue is treated as zero.
pub const ZERO_SUBDOMINANT: f64 = 1e-14;

/// Eigenvalue moduli of `P` in decreasing order.
pub fn eigenvalue_moduli(p: &TransitionMatrix) -> Vec<f64> {
    let s = p.states();
    let m = DMatrix::from_row_slice(s, s, p.row_major());
    let mut moduli: Vec<f64> = m.complex_eigenvalues().iter().map(|z| libm::hypot(z.re, z.im)).collect();
    moduli.sort_by(|a, b| b.total_cmp(a));
    moduli
}

/// `1 / |lambda_2|`, with `lambda_2` the eigenvalue of second-largest modulus.
pub fn damping_ratio(p: &TransitionMatrix) -> Result<f64> {
    let moduli = eigenvalue_moduli(p);
    let second = moduli.get(1).copied().unwrap_or(0.0);
    if second < ZERO_SUBDOMINANT {
        return Err(Error::ZeroSubdominant);
    }
    Ok(1.0 / second)
}

/// Equilibrium properties of a community transition matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CommunityMetrics {
    pub w: Vec<f64>,
    pub turnover: f64,
    /// `f64::INFINITY` when the subdominant eigenvalue vanishes.
    pub damping: f64,
}

impl CommunityMetrics {
    pub fn compute(p: &TransitionMatrix) -> Result<Self> {
        let w = stationary_distribution(p)?;
        let turnover = turnover_from(p, &w)?;
        let damping = match damping_ratio(p) {
            Ok(d) => d,
            Err(Error::ZeroSubdominant) => f64::INFINITY,
            Err(e) => return Err(e),
        };
        Ok(Self { w, turnover, damping })
    }
}

/// Mean squared error of a set of estimates and its decomposition.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EstimatorQuality {
    pub mse: f64,
    pub bias2: f64,
    /// Population variance (divisor `n`), so that `mse = bias2 + var`.
    pub var: f64,
}

pub fn estimator_quality(estimates: &[f64], truth: f64) -> EstimatorQuality {
    if estimates.is_empty() {
        return EstimatorQuality { mse: f64::NAN, bias2: f64::NAN, var: f64::NAN };
    }
    let n = estimates.len() as f64;
    let mean = estimates.iter().sum::<f64>() / n;
    let bias2 = (mean - truth) * (mean - truth);
    let var = estimates.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    EstimatorQuality { mse: bias2 + var, bias2, var }
}

/// Entrywise quality averaged over all `S^2` entries.
pub fn matrix_quality(estimates: &[TransitionMatrix], truth: &TransitionMatrix) -> Result<EstimatorQuality> {
    let masked: Vec<(&TransitionMatrix, &[usize])> = estimates.iter().map(|e| (e, &[][..])).collect();
    matrix_quality_masked(&masked, truth)
}

/// As [`matrix_quality`], but each estimate may exclude whole source
/// columns (e.g. naive columns with no observed transitions). An entry's
/// statistics use only the estimates that include it; entries no estimate
/// covers are left out of the average.
pub fn matrix_quality_masked(
    estimates: &[(&TransitionMatrix, &[usize])],
    truth: &TransitionMatrix,
) -> Result<EstimatorQuality> {
    let s = truth.states();
    if estimates.is_empty() {
        return Err(Error::InsufficientDraws("no estimates".into()));
    }
    if let Some((e, _)) = estimates.iter().find(|(e, _)| e.states() != s) {
        return Err(Error::ShapeMismatch(alloc::format!("{} states against {s}", e.states())));
    }
    let mut acc = EstimatorQuality::default();
    let mut entries = 0usize;
    let mut values = Vec::with_capacity(estimates.len());
    for to in 0..s {
        for from in 0..s {
            values.clear();
            values.extend(estimates.iter().filter(|(_, skip)| !skip.contains(&from)).map(|(e, _)| e.get(to, from)));
            if values.is_empty() {
                continue;
            }
            let q = estimator_quality(&values, truth.get(to, from));
            acc.mse += q.mse;
            acc.bias2 += q.bias2;
            acc.var += q.var;
            entries += 1;
        }
    }
    if entries == 0 {
        return Err(Error::InsufficientDraws("every column masked".into()));
    }
    let k = entries as f64;
    Ok(EstimatorQuality { mse: acc.mse / k, bias2: acc.bias2 / k, var: acc.var / k })
}
