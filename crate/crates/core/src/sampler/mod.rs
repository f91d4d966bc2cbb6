//! Metropolis-within-Gibbs sampler for the spatial model and its
//! non-spatial special case.
//!
//! One sweep updates, in order: every error flag, every latent state
//! (systematic scan, sites fastest), the transition matrix, the initial
//! distribution, the error rate and, for the spatial model, the three
//! kernel parameters. All but the kernel parameters are drawn from their
//! exact full conditionals.
//!
//! The non-spatial model is the same sampler with the local dominance
//! replaced by the quadrat-wide frequency of the current latent states.

mod config;
mod draws;
mod state;
mod updates;

use alloc::boxed::Box;
use alloc::vec::Vec;

use rand::SeedableRng;

pub use config::{FitConfig, FixedParameters, ModelKind};
pub use draws::{AcceptanceStats, ChainDraws, Parameter, PosteriorDraws};
pub use state::{init_chain, ChainState};
pub use updates::{
    error_log_likelihood_at, transition_counts, update_bandwidth, update_e, update_m, update_phi, update_transitions,
    update_z, update_z_site, BandwidthTuners, SiteScratch, StepTuner, TARGET_ACCEPTANCE,
};

use crate::error::{Error, Result};
use crate::model::{ObservationSet, SiteFrame, StateSpace};
use crate::random::{derive_seed, SimRng};

/// Sweeps between full recomputations of the dominance caches.
pub const CACHE_AUDIT_INTERVAL: usize = 100;

/// Seed of chain `chain` under master seed `master`.
pub fn chain_seed(master: u64, chain: usize) -> u64 {
    derive_seed(master, &[0x63_6861_696e, chain as u64])
}

/// Sampler driving one chain: state, tuners and scratch space.
#[derive(Debug, Clone)]
pub struct Chain {
    pub state: ChainState,
    pub tuners: BandwidthTuners,
    scratch: SiteScratch,
    sweeps: usize,
}

impl Chain {
    pub fn new(state: ChainState, adapt: bool) -> Self {
        let scratch = SiteScratch::new(state.states);
        Self { state, tuners: BandwidthTuners::new(adapt), scratch, sweeps: 0 }
    }

    /// One full sweep. Parameters in `config.fixed` are left untouched.
    pub fn sweep<R: rand::RngCore + ?Sized>(
        &mut self,
        data: &ObservationSet,
        config: &FitConfig,
        burn_in: bool,
        rng: &mut R,
    ) -> Result<()> {
        let st = &mut self.state;
        update_m(st, data, rng)?;
        update_z(st, data, &mut self.scratch, rng)?;
        if config.fixed.transitions.is_none() {
            update_transitions(st, rng);
        }
        if config.fixed.initial.is_none() {
            update_phi(st, rng);
        }
        if config.fixed.error_rate.is_none() {
            update_e(st, rng);
        }
        if config.model == ModelKind::Spatial && config.fixed.bandwidth.is_none() {
            if !burn_in {
                self.tuners.sigma1.adapting = false;
                self.tuners.sigma2.adapting = false;
                self.tuners.rho.adapting = false;
            }
            update_bandwidth(st, data, &mut self.tuners, config.bandwidth_max, config.fix_rho_zero, burn_in, rng);
        }
        self.sweeps += 1;
        if self.sweeps.is_multiple_of(CACHE_AUDIT_INTERVAL) {
            #[cfg(debug_assertions)]
            {
                let (drift, closure) = st.audit_cache();
                debug_assert!(drift <= 1e-9 && closure <= 1e-9, "dominance cache drifted: {drift} {closure}");
            }
            st.rebuild_weights();
        }
        Ok(())
    }

    fn record(&self, draws: &mut ChainDraws, iteration: usize, keep_latent: bool) {
        let st = &self.state;
        draws.iterations.push(iteration);
        draws.transitions.extend_from_slice(st.transitions.row_major());
        draws.error_rate.push(st.error_rate);
        draws.initial.extend_from_slice(st.initial.probs());
        if let Some(bw) = st.bandwidth() {
            draws.sigma1.push(bw.sigma1());
            draws.sigma2.push(bw.sigma2());
            draws.rho.push(bw.rho());
        }
        if keep_latent {
            draws.latent.push(st.occupancy());
        }
    }
}

/// Runs chain `chain` of a fit: burn-in, then `iterations` sweeps keeping
/// every `thin`-th. Deterministic given the config seed and chain index.
pub fn run_chain(
    data: &ObservationSet,
    frame: &SiteFrame,
    states: &StateSpace,
    config: &FitConfig,
    chain: usize,
) -> Result<ChainDraws> {
    let seed = chain_seed(config.seed, chain);
    let mut rng = SimRng::seed_from_u64(seed);
    let wrap = |iteration: usize| move |e: Error| Error::Chain { chain, iteration, source: Box::new(e) };
    let state = init_chain(data, frame, states, config, &mut rng).map_err(wrap(0))?;
    let mut sampler = Chain::new(state, config.adapt);
    let mut draws = ChainDraws { chain, seed, ..ChainDraws::default() };

    for it in 1..=config.burn_in {
        sampler.sweep(data, config, true, &mut rng).map_err(wrap(it))?;
    }
    let mut retained = 0;
    for it in 1..=config.iterations {
        sampler.sweep(data, config, false, &mut rng).map_err(wrap(config.burn_in + it))?;
        if it % config.thin == 0 {
            let keep_latent = config.keep_latent.is_some_and(|k| retained % k == 0);
            sampler.record(&mut draws, it, keep_latent);
            retained += 1;
        }
    }
    if config.model == ModelKind::Spatial && config.fixed.bandwidth.is_none() {
        let stats = |t: &StepTuner| AcceptanceStats {
            burn_in_proposed: t.burn_in_proposed,
            burn_in_accepted: t.burn_in_accepted,
            proposed: t.proposed,
            accepted: t.accepted,
            final_step: t.step,
        };
        draws.acceptance.push((Parameter::Sigma1, stats(&sampler.tuners.sigma1)));
        draws.acceptance.push((Parameter::Sigma2, stats(&sampler.tuners.sigma2)));
        if !config.fix_rho_zero {
            draws.acceptance.push((Parameter::Rho, stats(&sampler.tuners.rho)));
        }
    }
    Ok(draws)
}

/// Runs every chain of a fit one after another. The `spocc` crate offers
/// a parallel equivalent with identical output.
pub fn run_chains(
    data: &ObservationSet,
    frame: &SiteFrame,
    states: &StateSpace,
    config: &FitConfig,
) -> Result<PosteriorDraws> {
    config.validate()?;
    let chains = (0..config.chains).map(|c| run_chain(data, frame, states, config, c)).collect::<Result<Vec<_>>>()?;
    Ok(PosteriorDraws { model: config.model, states: states.len(), chains })
}
