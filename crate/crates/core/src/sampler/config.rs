use alloc::format;

use crate::error::{Error, Result};
use crate::model::{BandwidthMatrix, InitialDistribution, TransitionMatrix};

/// Observation model used when a record is a resampling error.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    /// Misrecorded states follow the kernel-weighted local composition.
    Spatial,
    /// Misrecorded states follow the quadrat-wide composition.
    NonSpatial,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Spatial => "spatial",
            Self::NonSpatial => "nonspatial",
        }
    }
}

/// Parameters held at given values instead of being sampled.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FixedParameters {
    pub transitions: Option<TransitionMatrix>,
    pub initial: Option<InitialDistribution>,
    pub error_rate: Option<f64>,
    pub bandwidth: Option<BandwidthMatrix>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub model: ModelKind,
    pub chains: usize,
    /// Sweeps after burn-in, before thinning.
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    /// Upper bound of the uniform prior on each kernel scale.
    pub bandwidth_max: f64,
    pub fix_rho_zero: bool,
    /// Tune Metropolis step sizes during burn-in.
    pub adapt: bool,
    pub seed: u64,
    /// Store the latent panel every `k` retained draws.
    pub keep_latent: Option<usize>,
    pub fixed: FixedParameters,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            model: ModelKind::Spatial,
            chains: 3,
            iterations: 3000,
            burn_in: 3000,
            thin: 3,
            bandwidth_max: 20.0,
            fix_rho_zero: false,
            adapt: true,
            seed: 1,
            keep_latent: None,
            fixed: FixedParameters::default(),
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.chains == 0 {
            return Err(Error::InvalidConfig("chains must be at least 1".into()));
        }
        if self.thin == 0 {
            return Err(Error::InvalidConfig("thin must be at least 1".into()));
        }
        if !(self.bandwidth_max.is_finite() && self.bandwidth_max > 0.0) {
            return Err(Error::InvalidConfig(format!("bandwidth upper bound {} must be positive", self.bandwidth_max)));
        }
        if let Some(e) = self.fixed.error_rate {
            if !(0.0..=1.0).contains(&e) {
                return Err(Error::InvalidConfig(format!("fixed error rate {e} outside [0, 1]")));
            }
        }
        if let Some(k) = self.keep_latent {
            if k == 0 {
                return Err(Error::InvalidConfig("latent snapshot interval must be at least 1".into()));
            }
        }
        if let (Some(bw), true) = (self.fixed.bandwidth, self.fix_rho_zero) {
            if bw.rho() != 0.0 {
                return Err(Error::InvalidConfig("fixed bandwidth has rho != 0 but rho is pinned to 0".into()));
            }
        }
        Ok(())
    }

    /// Retained draws per chain.
    pub fn retained(&self) -> usize {
        self.iterations / self.thin
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_retains_one_thousand() {
        let c = FitConfig::default();
        c.validate().unwrap();
        assert_eq!(c.retained(), 1000);
    }

    #[test]
    fn rejects_bad_values() {
        let mut c = FitConfig { thin: 0, ..FitConfig::default() };
        assert!(c.validate().is_err());
        c.thin = 1;
        c.chains = 0;
        assert!(c.validate().is_err());
        c.chains = 1;
        c.bandwidth_max = 0.0;
        assert!(c.validate().is_err());
    }
}
