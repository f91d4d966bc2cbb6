//! Synthetic occupancy panels and observation sets drawn from the full
//! generative model.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, RngCore};

use crate::dominance::local_dominance;
use crate::error::{Error, Result};
use crate::kernel::kernel_matrix;
use crate::model::{
    BandwidthMatrix, InitialDistribution, ObservationBuilder, ObservationSet, OccupancyPanel, SiteFrame, StateSpace,
    TransitionMatrix,
};
use crate::random::{sample_categorical, sample_dirichlet, substream, SimRng};

/// Regular grid with integer coordinates `(1, 1) .. (cols, rows)`, x fastest.
pub fn make_grid(rows: usize, cols: usize) -> Result<SiteFrame> {
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidSiteFrame(format!("grid {rows} x {cols} is empty")));
    }
    let coords = (1..=rows).flat_map(|y| (1..=cols).map(move |x| [x as f64, y as f64])).collect();
    SiteFrame::new(coords)
}

/// Replicate surveys per site and period.
#[derive(Debug, Clone, PartialEq)]
pub enum ReplicateCounts {
    Constant(usize),
    /// Time-major table, entry `t * sites + i`. Zero marks a missing survey.
    Table(Vec<usize>),
}

impl ReplicateCounts {
    pub fn get(&self, site: usize, time: usize, sites: usize) -> usize {
        match self {
            Self::Constant(n) => *n,
            Self::Table(t) => t[time * sites + site],
        }
    }
}

/// Where the true transition matrix of each replicate comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum TransitionSource {
    Fixed(TransitionMatrix),
    /// Each replicate draws its own matrix with Dirichlet(1, ..., 1) columns.
    Dirichlet,
}

#[derive(Debug, Clone)]
pub struct SimulationScenario {
    pub frame: SiteFrame,
    pub states: StateSpace,
    pub horizon: usize,
    pub initial: InitialDistribution,
    pub transitions: TransitionSource,
    pub error_rate: f64,
    pub bandwidth: BandwidthMatrix,
    pub replicates: ReplicateCounts,
    pub seed: u64,
}

impl SimulationScenario {
    pub fn validate(&self) -> Result<()> {
        let s = self.states.len();
        if self.horizon == 0 {
            return Err(Error::InvalidConfig("horizon must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.error_rate) {
            return Err(Error::InvalidConfig(format!("error rate {} outside [0, 1]", self.error_rate)));
        }
        if self.initial.len() != s {
            return Err(Error::ShapeMismatch(format!(
                "initial distribution has {} entries for {s} states",
                self.initial.len()
            )));
        }
        if let TransitionSource::Fixed(p) = &self.transitions {
            if p.states() != s {
                return Err(Error::ShapeMismatch(format!("transition matrix is {0} x {0} for {s} states", p.states())));
            }
        }
        if let ReplicateCounts::Table(t) = &self.replicates {
            if t.len() != self.frame.len() * self.horizon {
                return Err(Error::ShapeMismatch("replicate table size".into()));
            }
        }
        Ok(())
    }
}

/// One simulated replicate together with its truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedDataset {
    pub replicate: usize,
    pub transitions: TransitionMatrix,
    pub occupancy: OccupancyPanel,
    /// Observations carrying the true error flags.
    pub observations: ObservationSet,
}

/// Transition matrix with independent Dirichlet(1, ..., 1) columns.
pub fn random_transition_matrix<R: RngCore + ?Sized>(rng: &mut R, states: usize) -> TransitionMatrix {
    let alpha = vec![1.0; states];
    let mut columns = vec![0.0; states * states];
    for col in columns.chunks_mut(states) {
        sample_dirichlet(rng, &alpha, col);
    }
    TransitionMatrix::from_columns_normalized(states, &columns)
}

/// Latent states: a categorical draw from the initial distribution, then
/// one Markov step per period, independently for each site.
pub fn simulate_occupancy<R: RngCore + ?Sized>(
    scenario: &SimulationScenario,
    transitions: &TransitionMatrix,
    rng: &mut R,
) -> OccupancyPanel {
    let sites = scenario.frame.len();
    let horizon = scenario.horizon;
    let columns: Vec<Vec<f64>> = (0..transitions.states()).map(|k| transitions.column(k)).collect();
    let mut z = vec![0; sites * horizon];
    for i in 0..sites {
        let mut prev = sample_categorical(rng, scenario.initial.probs());
        z[i] = prev;
        for t in 1..horizon {
            prev = sample_categorical(rng, &columns[prev]);
            z[t * sites + i] = prev;
        }
    }
    OccupancyPanel::from_raw(sites, horizon, z)
}

/// Observations given latent states: each record is a resampling error
/// with probability `e`, in which case its state is drawn from the local
/// dominance around the site; otherwise it records the site's true state.
pub fn simulate_observations<R: RngCore + ?Sized>(
    z: &OccupancyPanel,
    scenario: &SimulationScenario,
    rng: &mut R,
) -> Result<ObservationSet> {
    let sites = scenario.frame.len();
    let states = scenario.states.len();
    if z.sites() != sites || z.horizon() != scenario.horizon {
        return Err(Error::ShapeMismatch("panel does not match scenario".into()));
    }
    let kernel = kernel_matrix(&scenario.frame, &scenario.bandwidth)?;
    let e = scenario.error_rate;
    let mut builder = ObservationBuilder::new(sites, scenario.horizon);
    for t in 0..scenario.horizon {
        let g = local_dominance(z.at_time(t), &kernel, states)?;
        for i in 0..sites {
            for _ in 0..scenario.replicates.get(i, t, sites) {
                let error = rng.random::<f64>() < e;
                let y = if error { sample_categorical(rng, &g[i * states..(i + 1) * states]) } else { z.get(i, t) };
                builder.push(i, t, y, Some(error));
            }
        }
    }
    let mut obs = builder.finish();
    if obs.error_flags().is_none() {
        // no records at all: attach an empty flag vector
        obs = obs.with_error_flags(Vec::new())?;
    }
    Ok(obs)
}

fn simulate_with(scenario: &SimulationScenario, replicate: usize, rng: &mut SimRng) -> Result<SimulatedDataset> {
    let transitions = match &scenario.transitions {
        TransitionSource::Fixed(p) => p.clone(),
        TransitionSource::Dirichlet => random_transition_matrix(rng, scenario.states.len()),
    };
    let occupancy = simulate_occupancy(scenario, &transitions, rng);
    let observations = simulate_observations(&occupancy, scenario, rng)?;
    Ok(SimulatedDataset { replicate, transitions, occupancy, observations })
}

/// Replicate `replicate` of a scenario, drawn from its own substream of the
/// scenario seed.
pub fn simulate_dataset(scenario: &SimulationScenario, replicate: usize) -> Result<SimulatedDataset> {
    scenario.validate()?;
    let mut rng = substream(scenario.seed, replicate as u64);
    simulate_with(scenario, replicate, &mut rng)
}

/// `count` independent replicates. Replicate `r` depends only on the
/// scenario seed and `r`, so batches can be generated in any order.
pub fn run_scenario_batch(scenario: &SimulationScenario, count: usize) -> Result<Vec<SimulatedDataset>> {
    if count == 0 {
        return Err(Error::InvalidConfig("need at least one replicate".into()));
    }
    scenario.validate()?;
    (0..count).map(|r| simulate_dataset(scenario, r)).collect()
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)]
mod tests {
    use super::*;
    use crate::random::substream;

    fn two_state_p() -> TransitionMatrix {
        TransitionMatrix::from_rows(&[vec![0.9, 0.2], vec![0.1, 0.8]]).unwrap()
    }

    fn scenario(frame: SiteFrame, states: usize, horizon: usize, e: f64, n: usize) -> SimulationScenario {
        SimulationScenario {
            frame,
            states: StateSpace::numbered(states).unwrap(),
            horizon,
            initial: InitialDistribution::uniform(states),
            transitions: TransitionSource::Dirichlet,
            error_rate: e,
            bandwidth: BandwidthMatrix::isotropic(1.0).unwrap(),
            replicates: ReplicateCounts::Constant(n),
            seed: 42,
        }
    }

    #[test]
    fn grid_enumeration() {
        let g = make_grid(15, 15).unwrap();
        assert_eq!(g.len(), 225);
        assert_eq!(g.position(0), [1.0, 1.0]);
        assert_eq!(g.position(1), [2.0, 1.0]);
        assert_eq!(g.position(224), [15.0, 15.0]);
        assert_eq!(make_grid(1, 1).unwrap().coords(), &[[1.0, 1.0]]);
        let g = make_grid(2, 3).unwrap();
        assert_eq!(g.len(), 6);
        assert_eq!(g.position(5), [3.0, 2.0]);
        assert_eq!(g.position(3), [1.0, 2.0]);
        assert!(make_grid(0, 3).is_err());
    }

    #[test]
    fn identity_dynamics_freeze_states() {
        let mut sc = scenario(make_grid(5, 5).unwrap(), 3, 6, 0.0, 1);
        sc.transitions = TransitionSource::Fixed(TransitionMatrix::identity(3));
        let d = simulate_dataset(&sc, 0).unwrap();
        for i in 0..25 {
            for t in 1..6 {
                assert_eq!(d.occupancy.get(i, t), d.occupancy.get(i, 0));
            }
        }
    }

    #[test]
    fn degenerate_initial_distribution() {
        let mut sc = scenario(make_grid(5, 5).unwrap(), 3, 2, 0.0, 1);
        sc.initial = InitialDistribution::new(vec![1.0, 0.0, 0.0]).unwrap();
        let d = simulate_dataset(&sc, 0).unwrap();
        assert!(d.occupancy.at_time(0).iter().all(|&s| s == 0));
    }

    #[test]
    fn empirical_transitions_match() {
        let frame = SiteFrame::new((0..10_000).map(|i| [i as f64, 0.0]).collect()).unwrap();
        let mut sc = scenario(frame, 2, 2, 0.0, 1);
        sc.transitions = TransitionSource::Fixed(two_state_p());
        let mut rng = substream(9, 0);
        let z = simulate_occupancy(&sc, &two_state_p(), &mut rng);
        let mut counts = [[0usize; 2]; 2];
        for i in 0..10_000 {
            counts[z.get(i, 1)][z.get(i, 0)] += 1;
        }
        for from in 0..2 {
            let total = (counts[0][from] + counts[1][from]) as f64;
            for to in 0..2 {
                let freq = counts[to][from] as f64 / total;
                assert!((freq - two_state_p().get(to, from)).abs() < 0.02);
            }
        }
    }

    #[test]
    fn zero_error_copies_latent_state() {
        let sc = scenario(make_grid(6, 6).unwrap(), 4, 3, 0.0, 3);
        let d = simulate_dataset(&sc, 0).unwrap();
        assert!(d.observations.error_flags().unwrap().iter().all(|&m| !m));
        for t in 0..3 {
            for i in 0..36 {
                assert!(d.observations.replicates(i, t).iter().all(|&y| y == d.occupancy.get(i, t)));
            }
        }
    }

    #[test]
    fn full_error_on_uniform_panel() {
        let mut sc = scenario(make_grid(4, 4).unwrap(), 3, 2, 1.0, 2);
        sc.initial = InitialDistribution::new(vec![1.0, 0.0, 0.0]).unwrap();
        sc.transitions = TransitionSource::Fixed(TransitionMatrix::identity(3));
        let d = simulate_dataset(&sc, 0).unwrap();
        assert!(d.observations.error_flags().unwrap().iter().all(|&m| m));
        assert!(d.observations.states().iter().all(|&y| y == 0));
    }

    #[test]
    fn error_rate_concentrates() {
        let sc = scenario(make_grid(15, 15).unwrap(), 5, 5, 0.3, 3);
        let batch = run_scenario_batch(&sc, 10).unwrap();
        let flags: Vec<bool> =
            batch.iter().flat_map(|d| d.observations.error_flags().unwrap().iter().copied()).collect();
        assert_eq!(flags.len(), 33_750);
        let rate = flags.iter().filter(|&&m| m).count() as f64 / flags.len() as f64;
        assert!((rate - 0.3).abs() < 0.01, "{rate}");
    }

    #[test]
    fn records_are_consistent_with_truth() {
        let sc = scenario(make_grid(8, 8).unwrap(), 4, 4, 0.6, 2);
        let d = simulate_dataset(&sc, 3).unwrap();
        let obs = &d.observations;
        let flags = obs.error_flags().unwrap();
        let kernel = kernel_matrix(&sc.frame, &sc.bandwidth).unwrap();
        for t in 0..4 {
            let g = local_dominance(d.occupancy.at_time(t), &kernel, 4).unwrap();
            for r in obs.time_range(t) {
                let i = obs.record_site(r);
                let y = obs.record_state(r);
                if flags[r] {
                    assert!(g[i * 4 + y] > 0.0);
                } else {
                    assert_eq!(y, d.occupancy.get(i, t));
                }
            }
        }
    }

    #[test]
    fn missing_surveys_from_table() {
        let mut sc = scenario(make_grid(1, 2).unwrap(), 2, 2, 0.0, 1);
        sc.replicates = ReplicateCounts::Table(vec![1, 0, 2, 3]);
        let d = simulate_dataset(&sc, 0).unwrap();
        assert_eq!(d.observations.count(0, 0), 1);
        assert_eq!(d.observations.count(1, 0), 0);
        assert_eq!(d.observations.count(1, 1), 3);
    }

    #[test]
    fn batches_are_deterministic() {
        let sc = scenario(make_grid(5, 5).unwrap(), 3, 4, 0.3, 1);
        let a = run_scenario_batch(&sc, 3).unwrap();
        let b = run_scenario_batch(&sc, 3).unwrap();
        assert_eq!(a, b);
        assert_ne!(a[0].observations, a[1].observations);
        let single = run_scenario_batch(&sc, 1).unwrap();
        assert_eq!(single[0], simulate_dataset(&sc, 0).unwrap());
        assert_eq!(single[0], a[0]);
        assert!(run_scenario_batch(&sc, 0).is_err());
    }

    #[test]
    fn full_design_has_576_datasets() {
        let levels = [0.0, 0.15, 0.3, 0.45, 0.6, 0.75];
        let mut total = 0;
        for (k, e) in levels.iter().enumerate() {
            let mut sc = scenario(make_grid(15, 15).unwrap(), 5, 5, *e, 1);
            sc.seed = k as u64;
            total += run_scenario_batch(&sc, 96).unwrap().len();
        }
        assert_eq!(total, 576);
    }

    #[test]
    fn invalid_scenarios() {
        let mut sc = scenario(make_grid(2, 2).unwrap(), 3, 2, 1.5, 1);
        assert!(sc.validate().is_err());
        sc.error_rate = 0.1;
        sc.horizon = 0;
        assert!(sc.validate().is_err());
        sc.horizon = 2;
        sc.transitions = TransitionSource::Fixed(two_state_p());
        assert!(sc.validate().is_err());
    }
}
