use rayon::prelude::*;
use spocc_core::metrics::naive_estimate;
use spocc_core::posterior::{summarize, SummaryReport};
use spocc_core::sampler::{run_chain, FitConfig, PosteriorDraws};
use spocc_core::{ObservationSet, SiteFrame, StateSpace, TransitionMatrix};

use crate::config::ModelChoice;
use crate::error::Result;

/// Runs every chain on the rayon pool. Output is identical to
/// [`spocc_core::sampler::run_chains`]: chain `c` always uses the seed
/// derived from `(config.seed, c)` and chains are returned in index order.
pub fn run_chains_parallel(
    data: &ObservationSet,
    frame: &SiteFrame,
    states: &StateSpace,
    config: &FitConfig,
) -> spocc_core::Result<PosteriorDraws> {
    config.validate()?;
    let chains = (0..config.chains)
        .into_par_iter()
        .map(|c| run_chain(data, frame, states, config, c))
        .collect::<spocc_core::Result<Vec<_>>>()?;
    Ok(PosteriorDraws { model: config.model, states: states.len(), chains })
}

/// Result of fitting one model to one dataset.
#[derive(Debug, Clone)]
pub enum FitOutcome {
    Naive { transitions: TransitionMatrix, unobserved: Vec<usize> },
    Bayesian { draws: PosteriorDraws, summary: Box<SummaryReport> },
}

impl FitOutcome {
    pub fn transitions(&self) -> &TransitionMatrix {
        match self {
            Self::Naive { transitions, .. } => transitions,
            Self::Bayesian { summary, .. } => &summary.transitions,
        }
    }
}

/// Credible level of reported intervals.
pub const INTERVAL_LEVEL: f64 = 0.95;

/// Fits `model` to a dataset. `parallel` spreads chains over the pool.
pub fn fit_model(
    model: ModelChoice,
    data: &ObservationSet,
    frame: &SiteFrame,
    states: &StateSpace,
    config: &FitConfig,
    parallel: bool,
) -> Result<FitOutcome> {
    match model.sampler() {
        None => {
            let est = naive_estimate(data, states.len())?;
            Ok(FitOutcome::Naive { transitions: est.transitions, unobserved: est.unobserved_columns })
        }
        Some(kind) => {
            let config = FitConfig { model: kind, ..config.clone() };
            let draws = if parallel {
                run_chains_parallel(data, frame, states, &config)?
            } else {
                spocc_core::sampler::run_chains(data, frame, states, &config)?
            };
            let summary = summarize(&draws, INTERVAL_LEVEL)?;
            Ok(FitOutcome::Bayesian { draws, summary: Box::new(summary) })
        }
    }
}
