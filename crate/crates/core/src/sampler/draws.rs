use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::config::ModelKind;
use crate::model::{OccupancyPanel, TransitionMatrix};

/// A scalar model parameter. Display names use 1-based state codes,
/// e.g. `p[2,1]` for the probability of moving from state 1 to state 2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Parameter {
    Transition { to: usize, from: usize },
    ErrorRate,
    Initial(usize),
    Sigma1,
    Sigma2,
    Rho,
}

impl Parameter {
    pub fn name(&self) -> String {
        match *self {
            Self::Transition { to, from } => format!("p[{},{}]", to + 1, from + 1),
            Self::ErrorRate => "e".into(),
            Self::Initial(s) => format!("phi[{}]", s + 1),
            Self::Sigma1 => "sigma1".into(),
            Self::Sigma2 => "sigma2".into(),
            Self::Rho => "rho".into(),
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "e" => return Some(Self::ErrorRate),
            "sigma1" => return Some(Self::Sigma1),
            "sigma2" => return Some(Self::Sigma2),
            "rho" => return Some(Self::Rho),
            _ => {}
        }
        let index = |s: &str| s.trim().parse::<usize>().ok().filter(|&v| v >= 1).map(|v| v - 1);
        if let Some(inner) = name.strip_prefix("p[").and_then(|r| r.strip_suffix(']')) {
            let (a, b) = inner.split_once(',')?;
            return Some(Self::Transition { to: index(a)?, from: index(b)? });
        }
        if let Some(inner) = name.strip_prefix("phi[").and_then(|r| r.strip_suffix(']')) {
            return Some(Self::Initial(index(inner)?));
        }
        None
    }

    /// Every parameter of a model with `states` states, in output order.
    pub fn all(model: ModelKind, states: usize) -> Vec<Self> {
        let mut out = Vec::new();
        for to in 0..states {
            for from in 0..states {
                out.push(Self::Transition { to, from });
            }
        }
        out.push(Self::ErrorRate);
        out.extend((0..states).map(Self::Initial));
        if model == ModelKind::Spatial {
            out.extend([Self::Sigma1, Self::Sigma2, Self::Rho]);
        }
        out
    }
}

/// Proposal counts for one Metropolis-updated parameter.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AcceptanceStats {
    pub burn_in_proposed: usize,
    pub burn_in_accepted: usize,
    pub proposed: usize,
    pub accepted: usize,
    /// Step size in force after burn-in.
    pub final_step: f64,
}

impl AcceptanceStats {
    pub fn rate(&self) -> Option<f64> {
        (self.proposed > 0).then(|| self.accepted as f64 / self.proposed as f64)
    }

    pub fn burn_in_rate(&self) -> Option<f64> {
        (self.burn_in_proposed > 0).then(|| self.burn_in_accepted as f64 / self.burn_in_proposed as f64)
    }
}

/// Retained draws of one chain.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ChainDraws {
    pub chain: usize,
    pub seed: u64,
    /// Post-burn-in sweep number (1-based) of each retained draw.
    pub iterations: Vec<usize>,
    /// Row-major `S x S` matrices, one per draw.
    pub transitions: Vec<f64>,
    pub error_rate: Vec<f64>,
    /// Length-S vectors, one per draw.
    pub initial: Vec<f64>,
    pub sigma1: Vec<f64>,
    pub sigma2: Vec<f64>,
    pub rho: Vec<f64>,
    pub latent: Vec<OccupancyPanel>,
    /// Acceptance statistics for sigma1, sigma2, rho (spatial model only).
    pub acceptance: Vec<(Parameter, AcceptanceStats)>,
}

impl ChainDraws {
    pub fn len(&self) -> usize {
        self.iterations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.iterations.is_empty()
    }

    pub fn series(&self, parameter: Parameter, states: usize) -> Vec<f64> {
        match parameter {
            Parameter::Transition { to, from } => {
                self.transitions.chunks(states * states).map(|m| m[to * states + from]).collect()
            }
            Parameter::ErrorRate => self.error_rate.clone(),
            Parameter::Initial(s) => self.initial.chunks(states).map(|v| v[s]).collect(),
            Parameter::Sigma1 => self.sigma1.clone(),
            Parameter::Sigma2 => self.sigma2.clone(),
            Parameter::Rho => self.rho.clone(),
        }
    }

    pub fn transition_matrix(&self, draw: usize, states: usize) -> TransitionMatrix {
        let m = &self.transitions[draw * states * states..(draw + 1) * states * states];
        let mut columns = Vec::with_capacity(states * states);
        for from in 0..states {
            columns.extend((0..states).map(|to| m[to * states + from]));
        }
        TransitionMatrix::from_columns_normalized(states, &columns)
    }
}

/// Draws from all chains of one fit.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorDraws {
    pub model: ModelKind,
    pub states: usize,
    pub chains: Vec<ChainDraws>,
}

impl PosteriorDraws {
    pub fn parameters(&self) -> Vec<Parameter> {
        Parameter::all(self.model, self.states)
    }

    pub fn chain_series(&self, parameter: Parameter) -> Vec<Vec<f64>> {
        self.chains.iter().map(|c| c.series(parameter, self.states)).collect()
    }

    pub fn pooled(&self, parameter: Parameter) -> Vec<f64> {
        self.chains.iter().flat_map(|c| c.series(parameter, self.states)).collect()
    }

    pub fn total_draws(&self) -> usize {
        self.chains.iter().map(ChainDraws::len).sum()
    }

    /// Column `from` of every retained transition matrix, pooled over chains.
    pub fn transition_columns(&self, from: usize) -> Vec<Vec<f64>> {
        let s = self.states;
        self.chains
            .iter()
            .flat_map(|c| c.transitions.chunks(s * s))
            .map(|m| (0..s).map(|to| m[to * s + from]).collect())
            .collect()
    }

    pub fn initial_vectors(&self) -> Vec<Vec<f64>> {
        self.chains.iter().flat_map(|c| c.initial.chunks(self.states).map(<[f64]>::to_vec)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for p in Parameter::all(ModelKind::Spatial, 3) {
            assert_eq!(Parameter::parse(&p.name()), Some(p));
        }
        assert_eq!(Parameter::Transition { to: 1, from: 0 }.name(), "p[2,1]");
        assert_eq!(Parameter::parse("p[0,1]"), None);
        assert_eq!(Parameter::parse("q"), None);
        assert_eq!(Parameter::all(ModelKind::NonSpatial, 2).len(), 4 + 1 + 2);
    }
}
