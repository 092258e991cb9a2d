use std::time::Instant;

use rand::Rng;

use super::proposal::{factor_with_ridge, identity, propose_psi};
use super::{Algorithm, Prior, SampleRow, SampleStore, SamplerConfig};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::likelihood::exact_log_likelihood;
use crate::network::ReactionNetwork;
use crate::ssa::seeded_rng;

/// Random-walk Metropolis on the exact likelihood of a finite state space.
/// Serves as the reference the extended-space samplers must agree with.
pub fn run_exact_rwm(net: &ReactionNetwork, data: &Dataset, prior: &Prior, cfg: &SamplerConfig) -> Result<SampleStore> {
    let started = Instant::now();
    let dim = net.n_reactions();
    cfg.validate(dim)?;
    if prior.dim() != dim {
        return Err(Error::Dimension { what: "prior", got: prior.dim(), expected: dim });
    }
    if !net.is_bounded() {
        return Err(Error::Unbounded);
    }
    let chol = match &cfg.sigma_hat {
        Some(s) => factor_with_ridge(s)?.1,
        None => identity(dim),
    };
    let expm = &cfg.likelihood.expm;
    let log_lik = |psi: &[f64]| -> Result<f64> {
        let theta: Vec<f64> = psi.iter().map(|p| p.exp()).collect();
        if theta.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
            return Ok(f64::NEG_INFINITY);
        }
        exact_log_likelihood(net, &theta, data, expm)
    };
    let mut rng = seeded_rng(cfg.seed, 0);
    let mut psi = cfg.init_psi.clone().unwrap_or_else(|| prior.mean.clone());
    let mut target = prior.log_density(&psi) + log_lik(&psi)?;
    if !target.is_finite() {
        return Err(Error::Consistency("log target is not finite at the initial state".into()));
    }
    let names: Vec<String> = net.reactions.iter().map(|r| r.name.clone()).collect();
    let mut store = SampleStore::new(Algorithm::Exact, &names);
    for it in 1..=cfg.iterations {
        let proposal = propose_psi(&psi, cfg.lambda, &chol, &mut rng);
        let log_u = (1.0 - rng.random::<f64>()).ln();
        let lp = prior.log_density(&proposal);
        let mut accept = false;
        if lp.is_finite() {
            let ll = log_lik(&proposal).map_err(|e| Error::Chain { iteration: it, source: Box::new(e) })?;
            let cand = lp + ll;
            if log_u <= cand - target {
                psi = proposal;
                target = cand;
                accept = true;
            }
        }
        if it > cfg.burn_in && (it - cfg.burn_in - 1) % cfg.thin == 0 {
            store.rows.push(SampleRow {
                iteration: it,
                psi: psi.clone(),
                r: 0.0,
                log_target: target,
                accept_psi: accept,
                r_accepted: 0,
                r_proposed: 0,
            });
        }
    }
    store.wall_seconds = started.elapsed().as_secs_f64();
    Ok(store)
}
