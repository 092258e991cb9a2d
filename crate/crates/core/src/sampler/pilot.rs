//! Pilot runs that estimate the proposal covariance, and the fixed-parameter
//! sweep used to pick the truncation parameter of the random-truncation
//! sampler.

use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::proposal::{factor_with_ridge, sample_covariance, Matrix};
use super::{run_chain, Algorithm, Prior, SamplerConfig};
use crate::data::Dataset;
use crate::diagnostics::ess;
use crate::error::{Error, Result};
use crate::likelihood::{sample_truncation, ExpmStats, Ghs17Config, LikelihoodConfig, LikelihoodEngine};
use crate::network::ReactionNetwork;
use crate::ssa::seeded_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PilotConfig {
    /// Total pilot iterations, split evenly over the stages.
    pub iterations: usize,
    pub stages: usize,
    /// Random-walk scale during the pilot; `2.38 / sqrt(dim)` when absent.
    pub lambda: Option<f64>,
    /// First-stage proposal covariance is this multiple of the identity.
    pub sigma0_scale: f64,
    pub burn_in: usize,
}

impl Default for PilotConfig {
    fn default() -> Self {
        Self { iterations: 10_000, stages: 2, lambda: None, sigma0_scale: 1e-2, burn_in: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tuned {
    pub sigma_hat: Matrix,
    /// Lower-triangular factor of `sigma_hat`.
    pub chol: Matrix,
    /// Posterior mean estimate from the last stage.
    pub mean: Vec<f64>,
    /// Whether a ridge had to be added before factorising.
    pub ridged: bool,
    pub stage_alpha_psi: Vec<f64>,
    pub wall_seconds: f64,
    pub expm: ExpmStats,
}

/// Estimate the posterior covariance of the log-rates from staged nMESA
/// pilots, each stage proposing with the previous stage's estimate.
pub fn pilot_tune(
    net: &ReactionNetwork,
    data: &Dataset,
    prior: &Prior,
    base: &SamplerConfig,
    pilot: &PilotConfig,
) -> Result<Tuned> {
    let started = Instant::now();
    let dim = net.n_reactions();
    if pilot.stages == 0 {
        return Err(Error::config("pilot.stages", "must be >= 1"));
    }
    let per_stage = pilot.iterations / pilot.stages;
    if per_stage < pilot.burn_in + 10 * dim || pilot.iterations < 10 * dim {
        return Err(Error::config(
            "pilot.iterations",
            format!("need at least 10 x dim post-burn-in draws per stage (dim = {dim})"),
        ));
    }
    let lambda = pilot.lambda.unwrap_or(2.38 / (dim as f64).sqrt());
    let mut sigma: Matrix = (0..dim)
        .map(|i| (0..dim).map(|j| if i == j { pilot.sigma0_scale } else { 0.0 }).collect())
        .collect();
    let mut init = base.init_psi.clone();
    let mut alphas = Vec::new();
    let mut expm = ExpmStats::default();
    let mut last = None;
    for stage in 0..pilot.stages {
        let cfg = SamplerConfig {
            algorithm: Algorithm::Nmesa,
            lambda,
            sigma_hat: Some(sigma.clone()),
            iterations: per_stage,
            burn_in: pilot.burn_in,
            seed: base.seed.wrapping_add(stage as u64),
            init_psi: init.clone(),
            thin: 1,
            ..base.clone()
        };
        let store = run_chain(net, data, prior, &cfg)?;
        alphas.push(store.alpha_psi());
        expm.merge(&store.expm);
        let draws = store.psi_draws();
        let (mean, cov) = sample_covariance(&draws);
        init = draws.last().cloned();
        let (s, l, ridged) = factor_with_ridge(&cov)?;
        sigma = s.clone();
        last = Some((s, l, mean, ridged));
    }
    let (sigma_hat, chol, mean, ridged) = last.expect("at least one stage");
    Ok(Tuned {
        sigma_hat,
        chol,
        mean,
        ridged,
        stage_alpha_psi: alphas,
        wall_seconds: started.elapsed().as_secs_f64(),
        expm,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub a: f64,
    pub acceptance: f64,
    pub ess: f64,
    pub seconds: f64,
    pub ess_per_second: f64,
}

/// At fixed log-rates, run the truncation-index-only pseudo-marginal chain
/// for each `a` and report the ESS per second of its log-likelihood trace.
pub fn ghs17_sweep(
    net: &ReactionNetwork,
    data: &Dataset,
    psi: &[f64],
    grid: &[f64],
    iterations: usize,
    seed: u64,
    likelihood: &LikelihoodConfig,
) -> Result<Vec<SweepRow>> {
    let theta: Vec<f64> = psi.iter().map(|p| p.exp()).collect();
    let mut rows = Vec::with_capacity(grid.len());
    for (k, &a) in grid.iter().enumerate() {
        let g = Ghs17Config::new(a)?;
        let started = Instant::now();
        let mut engine = LikelihoodEngine::new(net, data, likelihood.clone())?;
        let mut rng = seeded_rng(seed, 1 + k as u64);
        let n = engine.n_intervals();
        let draw = |engine: &mut LikelihoodEngine, rng: &mut rand_chacha::ChaCha8Rng| -> Result<f64> {
            // fresh cache per draw, as when the parameter moves every iteration
            let rs: Vec<usize> = (0..n).map(|_| sample_truncation(&g, rng)).collect();
            let mut memo = engine.memo(theta.clone());
            engine.ghs17_log_estimate(&mut memo, &rs, &g)
        };
        let mut current = draw(&mut engine, &mut rng)?;
        let mut trace = Vec::with_capacity(iterations);
        let mut accepted = 0usize;
        for _ in 0..iterations {
            let cand = draw(&mut engine, &mut rng)?;
            let log_u = (1.0 - rng.random::<f64>()).ln();
            if log_u <= cand - current || current == f64::NEG_INFINITY {
                current = cand;
                accepted += 1;
            }
            trace.push(current);
        }
        let seconds = started.elapsed().as_secs_f64();
        let finite: Vec<f64> = trace.into_iter().filter(|v| v.is_finite()).collect();
        let e = if finite.len() >= 2 { ess(&finite).value } else { 0.0 };
        rows.push(SweepRow {
            a,
            acceptance: accepted as f64 / iterations.max(1) as f64,
            ess: e,
            seconds,
            ess_per_second: if seconds > 0.0 { e / seconds } else { f64::INFINITY },
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{RateLaw, Reaction};
    use crate::region::RegionConfig;
    use rand_distr::StandardNormal;
    use std::collections::BTreeMap;

    #[test]
    fn sample_covariance_converges() {
        let l = [[1.0, 0.0], [0.5, 0.8]];
        let mut rng = seeded_rng(3, 0);
        let draws: Vec<Vec<f64>> = (0..50_000)
            .map(|_| {
                let z: [f64; 2] = [rng.sample(StandardNormal), rng.sample(StandardNormal)];
                vec![1.0 + l[0][0] * z[0], -2.0 + l[1][0] * z[0] + l[1][1] * z[1]]
            })
            .collect();
        let (mean, cov) = sample_covariance(&draws);
        let want = [[1.0, 0.5], [0.5, 0.89]];
        assert!((mean[0] - 1.0).abs() < 0.02 && (mean[1] + 2.0).abs() < 0.02);
        for i in 0..2 {
            for j in 0..2 {
                assert!((cov[i][j] - want[i][j]).abs() < 0.03, "{:?}", cov);
            }
        }
    }

    fn toy() -> (ReactionNetwork, Dataset) {
        let net = ReactionNetwork {
            name: "imm-death".into(),
            species: vec!["X".into()],
            reactions: vec![
                Reaction { name: "in".into(), delta: vec![1], rate: RateLaw { reactants: vec![0], complements: vec![] } },
                Reaction { name: "out".into(), delta: vec![-1], rate: RateLaw { reactants: vec![1], complements: vec![] } },
            ],
            hard_lower: vec![0],
            hard_upper: vec![Some(8)],
            aux: BTreeMap::new(),
        };
        (net, Dataset::new(vec![3], vec![vec![5], vec![4], vec![2]], 1.0).unwrap())
    }

    #[test]
    fn constant_pilot_gives_ridge_only() {
        let (net, data) = toy();
        let base = SamplerConfig {
            likelihood: LikelihoodConfig { region: RegionConfig::new(0.0, 0), ..Default::default() },
            ..Default::default()
        };
        let pilot = PilotConfig { iterations: 400, stages: 1, lambda: Some(0.0), burn_in: 100, ..Default::default() };
        let tuned = pilot_tune(&net, &data, &Prior::standard(2), &base, &pilot).unwrap();
        assert!(tuned.ridged);
        assert_eq!(tuned.sigma_hat, vec![vec![1e-8, 0.0], vec![0.0, 1e-8]]);
    }

    #[test]
    fn pilot_estimate_is_positive_definite() {
        let (net, data) = toy();
        let base = SamplerConfig {
            likelihood: LikelihoodConfig { region: RegionConfig::new(0.0, 0), ..Default::default() },
            ..Default::default()
        };
        let pilot = PilotConfig { iterations: 2000, stages: 2, ..Default::default() };
        let tuned = pilot_tune(&net, &data, &Prior::standard(2), &base, &pilot).unwrap();
        assert_eq!(tuned.stage_alpha_psi.len(), 2);
        let l = &tuned.chol;
        for i in 0..2 {
            for j in 0..2 {
                let back: f64 = (0..2).map(|k| l[i][k] * l[j][k]).sum();
                assert!((back - tuned.sigma_hat[i][j]).abs() <= 1e-10 * tuned.sigma_hat[i][i].abs().max(1e-300));
            }
        }
        assert!(tuned.sigma_hat[0][0] > 0.01 && tuned.sigma_hat[0][0] < 2.0);
        let short = PilotConfig { iterations: 10, ..Default::default() };
        assert!(pilot_tune(&net, &data, &Prior::standard(2), &base, &short).is_err());
    }

    #[test]
    fn sweep_reports_each_a() {
        let (net, data) = toy();
        let lik = LikelihoodConfig { region: RegionConfig::new(0.0, 0), ..Default::default() };
        let rows = ghs17_sweep(&net, &data, &[0.5, -0.5], &[0.5, 0.8], 300, 1, &lik).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows.iter().all(|r| r.ess >= 1.0 && r.acceptance > 0.0));
    }
}
