//! TOML configuration files. Every key mirrors a field of the matching
//! in-memory config; missing keys take the defaults shown by
//! `spocc <command> --help`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use spocc_core::sampler::{FitConfig, ModelKind};
use spocc_core::simulate::{make_grid, ReplicateCounts, SimulationScenario, TransitionSource};
use spocc_core::{BandwidthMatrix, InitialDistribution, StateSpace, TransitionMatrix};

use crate::error::{CliError, Result};

/// Model choice on the command line and in study files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ModelChoice {
    Naive,
    Nonspatial,
    Spatial,
}

impl ModelChoice {
    pub fn name(self) -> &'static str {
        match self {
            Self::Naive => "naive",
            Self::Nonspatial => "nonspatial",
            Self::Spatial => "spatial",
        }
    }

    /// Sampler model, `None` for the naive estimator.
    pub fn sampler(self) -> Option<ModelKind> {
        match self {
            Self::Naive => None,
            Self::Nonspatial => Some(ModelKind::NonSpatial),
            Self::Spatial => Some(ModelKind::Spatial),
        }
    }
}

/// `[fit]` section: sampler schedule and priors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitSection {
    pub chains: usize,
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub bandwidth_max: f64,
    pub fix_rho_zero: bool,
    pub adapt: bool,
}

impl Default for FitSection {
    fn default() -> Self {
        let d = FitConfig::default();
        Self {
            chains: d.chains,
            iterations: d.iterations,
            burn_in: d.burn_in,
            thin: d.thin,
            bandwidth_max: d.bandwidth_max,
            fix_rho_zero: d.fix_rho_zero,
            adapt: d.adapt,
        }
    }
}

impl FitSection {
    pub fn to_config(&self, model: ModelKind, seed: u64) -> FitConfig {
        FitConfig {
            model,
            chains: self.chains,
            iterations: self.iterations,
            burn_in: self.burn_in,
            thin: self.thin,
            bandwidth_max: self.bandwidth_max,
            fix_rho_zero: self.fix_rho_zero,
            adapt: self.adapt,
            seed,
            ..FitConfig::default()
        }
    }
}

/// Fit file: `seed` plus a `[fit]` section.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitFile {
    pub seed: Option<u64>,
    pub fit: FitSection,
}

/// Simulation design shared by scenario and study files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DesignSection {
    pub rows: usize,
    pub cols: usize,
    pub states: usize,
    pub horizon: usize,
    pub replicates: usize,
    pub sigma1: f64,
    pub sigma2: f64,
    pub rho: f64,
    /// Row-major true transition matrix; drawn per dataset when absent.
    pub transitions: Option<Vec<Vec<f64>>>,
    /// Initial distribution; uniform when absent.
    pub initial: Option<Vec<f64>>,
}

impl Default for DesignSection {
    fn default() -> Self {
        Self {
            rows: 15,
            cols: 15,
            states: 5,
            horizon: 5,
            replicates: 1,
            sigma1: 1.0,
            sigma2: 1.0,
            rho: 0.0,
            transitions: None,
            initial: None,
        }
    }
}

impl DesignSection {
    pub fn scenario(&self, error_rate: f64, seed: u64) -> spocc_core::Result<SimulationScenario> {
        let transitions = match &self.transitions {
            Some(rows) => TransitionSource::Fixed(TransitionMatrix::from_rows(rows)?),
            None => TransitionSource::Dirichlet,
        };
        let initial = match &self.initial {
            Some(p) => InitialDistribution::new(p.clone())?,
            None => InitialDistribution::uniform(self.states),
        };
        let scenario = SimulationScenario {
            frame: make_grid(self.rows, self.cols)?,
            states: StateSpace::numbered(self.states)?,
            horizon: self.horizon,
            initial,
            transitions,
            error_rate,
            bandwidth: BandwidthMatrix::new(self.sigma1, self.sigma2, self.rho)?,
            replicates: ReplicateCounts::Constant(self.replicates),
            seed,
        };
        scenario.validate()?;
        Ok(scenario)
    }
}

/// Scenario file for `spocc simulate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioFile {
    pub seed: u64,
    pub error_rate: f64,
    pub datasets: usize,
    pub design: DesignSection,
}

impl Default for ScenarioFile {
    fn default() -> Self {
        Self { seed: 1, error_rate: 0.3, datasets: 1, design: DesignSection::default() }
    }
}

/// Study file for `spocc simstudy`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    pub seed: u64,
    pub error_levels: Vec<f64>,
    /// Replicate datasets per error level.
    pub datasets: usize,
    pub models: Vec<ModelChoice>,
    /// Kernel-scale estimates further than this from the truth are
    /// dropped from the kernel-scale quality statistics (and logged).
    pub sigma_exclusion: f64,
    /// Worker threads; 0 lets the pool decide.
    pub threads: usize,
    pub out: Option<PathBuf>,
    pub design: DesignSection,
    pub fit: FitSection,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            error_levels: vec![0.0, 0.15, 0.3, 0.45, 0.6, 0.75],
            datasets: 96,
            models: vec![ModelChoice::Naive, ModelChoice::Nonspatial, ModelChoice::Spatial],
            sigma_exclusion: 10.0,
            threads: 0,
            out: None,
            design: DesignSection::default(),
            fit: FitSection::default(),
        }
    }
}

impl StudyConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CliError::Invalid(m));
        if self.error_levels.is_empty() || self.datasets == 0 || self.models.is_empty() {
            return bad("study needs at least one error level, dataset and model".into());
        }
        if let Some(e) = self.error_levels.iter().find(|e| !(0.0..=1.0).contains(*e)) {
            return bad(format!("error level {e} outside [0, 1]"));
        }
        if self.design.rows == 0 || self.design.cols == 0 || self.design.states == 0 || self.design.horizon == 0 {
            return bad("grid, states and horizon must be at least 1".into());
        }
        if self.models.contains(&ModelChoice::Naive) && self.design.replicates > 1 {
            return bad("the naive estimator needs one replicate per survey".into());
        }
        if self.sigma_exclusion.is_nan() || self.sigma_exclusion <= 0.0 {
            return bad("sigma_exclusion must be positive".into());
        }
        Ok(())
    }
}

pub fn load_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    toml::from_str(&text).map_err(|e| CliError::Config { path: path.to_path_buf(), message: e.to_string() })
}
