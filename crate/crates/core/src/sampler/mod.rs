//! Metropolis-within-Gibbs samplers on extended state spaces (MESA, nMESA),
//! the random-truncation pseudo-marginal sampler, and an exact-likelihood
//! random walk for finite state spaces.

mod chain;
mod pilot;
mod prior;
mod proposal;
mod reference;
mod store;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::likelihood::{Ghs17Config, LikelihoodConfig};

pub use chain::{run_chain, ChainState, IterationRecord, Sampler};
pub use pilot::{ghs17_sweep, pilot_tune, PilotConfig, SweepRow, Tuned};
pub use prior::Prior;
pub use proposal::{cholesky, factor_with_ridge, identity, propose_psi, sample_covariance, Matrix};
pub use reference::run_exact_rwm;
pub use store::{RunMetadata, SampleRow, SampleStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Mesa,
    Nmesa,
    Ghs17,
    /// Random walk on the exact likelihood (finite state spaces only).
    Exact,
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algorithm::Mesa => "mesa",
            Algorithm::Nmesa => "nmesa",
            Algorithm::Ghs17 => "ghs17",
            Algorithm::Exact => "exact",
        })
    }
}

impl FromStr for Algorithm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mesa" => Ok(Algorithm::Mesa),
            "nmesa" => Ok(Algorithm::Nmesa),
            "ghs17" => Ok(Algorithm::Ghs17),
            "exact" => Ok(Algorithm::Exact),
            other => Err(Error::config("sampler.algorithm", format!("unknown algorithm `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub algorithm: Algorithm,
    /// Random-walk scale.
    pub lambda: f64,
    /// Proposal covariance; identity when absent.
    pub sigma_hat: Option<Matrix>,
    pub iterations: usize,
    pub burn_in: usize,
    pub seed: u64,
    pub likelihood: LikelihoodConfig,
    pub ghs17: Ghs17Config,
    /// Starting log-rates; the prior mean when absent.
    pub init_psi: Option<Vec<f64>>,
    /// Recompute the cached log target from scratch this often (0 = never).
    pub recheck_every: usize,
    /// Stop evaluating a proposal once its partial likelihood bound already
    /// forces rejection. Never changes a decision.
    pub early_rejection: bool,
    /// Keep every `thin`-th post-burn-in iteration.
    pub thin: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Nmesa,
            lambda: 1.0,
            sigma_hat: None,
            iterations: 10_000,
            burn_in: 100,
            seed: 1,
            likelihood: LikelihoodConfig::default(),
            ghs17: Ghs17Config::default(),
            init_psi: None,
            recheck_every: 1000,
            early_rejection: true,
            thin: 1,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.iterations <= self.burn_in {
            return Err(Error::config("sampler.iterations", "must exceed burn_in"));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::config("sampler.lambda", "must be finite and >= 0"));
        }
        if self.thin == 0 {
            return Err(Error::config("sampler.thin", "must be >= 1"));
        }
        if let Some(s) = &self.sigma_hat {
            if s.len() != dim || s.iter().any(|r| r.len() != dim) {
                return Err(Error::config("sampler.sigma_hat", format!("must be {dim}x{dim}")));
            }
        }
        if let Some(p) = &self.init_psi {
            if p.len() != dim || p.iter().any(|v| !v.is_finite()) {
                return Err(Error::config("sampler.init_psi", format!("must be {dim} finite values")));
            }
        }
        if self.algorithm == Algorithm::Ghs17 {
            self.ghs17.validate()?;
        }
        self.likelihood.region.validate()?;
        self.likelihood.expm.validate()
    }
}
