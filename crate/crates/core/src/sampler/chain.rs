use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::proposal::{factor_with_ridge, identity, propose_psi, Matrix};
use super::{Algorithm, Prior, SampleRow, SampleStore, SamplerConfig};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::likelihood::{sample_truncation, LikelihoodEngine, Memo};
use crate::network::ReactionNetwork;
use crate::ssa::seeded_rng;

/// Margin keeping early rejection strictly conservative under rounding.
const EARLY_SLACK: f64 = 1e-9;
/// Relative tolerance when re-deriving the cached log target.
const RECHECK_TOL: f64 = 1e-9;
const GHS17_INIT_ATTEMPTS: usize = 1000;

/// Current point of the chain.
#[derive(Debug, Clone)]
pub struct ChainState {
    pub psi: Vec<f64>,
    /// One shared index (MESA) or one per interval.
    pub r: Vec<usize>,
    pub log_prior: f64,
    /// Log joint of data and region indices, or the log likelihood estimate.
    pub log_lik: f64,
    /// Per-interval log factors (nMESA only).
    pub factors: Vec<f64>,
    memo: Memo,
}

impl ChainState {
    pub fn log_target(&self) -> f64 {
        self.log_prior + self.log_lik
    }

    pub fn r_summary(&self) -> f64 {
        self.r.iter().sum::<usize>() as f64 / self.r.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub psi: Vec<f64>,
    pub r: f64,
    pub log_target: f64,
    pub accept_psi: bool,
    pub r_accepted: u32,
    pub r_proposed: u32,
}

impl IterationRecord {
    fn into_row(self, iteration: usize) -> SampleRow {
        SampleRow {
            iteration,
            psi: self.psi,
            r: self.r,
            log_target: self.log_target,
            accept_psi: self.accept_psi,
            r_accepted: self.r_accepted,
            r_proposed: self.r_proposed,
        }
    }
}

fn exp_all(psi: &[f64]) -> Option<Vec<f64>> {
    let theta: Vec<f64> = psi.iter().map(|p| p.exp()).collect();
    theta.iter().all(|t| t.is_finite() && *t > 0.0).then_some(theta)
}

/// One MESA, nMESA or random-truncation chain.
pub struct Sampler {
    cfg: SamplerConfig,
    prior: Prior,
    engine: LikelihoodEngine,
    chol: Matrix,
    rng: ChaCha8Rng,
    state: ChainState,
    iteration: usize,
    reactions: Vec<String>,
    started: Instant,
}

impl Sampler {
    pub fn new(net: &ReactionNetwork, data: &Dataset, prior: &Prior, cfg: &SamplerConfig) -> Result<Self> {
        let started = Instant::now();
        let dim = net.n_reactions();
        cfg.validate(dim)?;
        prior.validate()?;
        if prior.dim() != dim {
            return Err(Error::Dimension { what: "prior", got: prior.dim(), expected: dim });
        }
        if cfg.algorithm == Algorithm::Exact {
            return Err(Error::config("sampler.algorithm", "the exact sampler has its own driver"));
        }
        let chol = match &cfg.sigma_hat {
            Some(s) => factor_with_ridge(s)?.1,
            None => identity(dim),
        };
        let mut engine = LikelihoodEngine::new(net, data, cfg.likelihood.clone())?;
        let mut rng = seeded_rng(cfg.seed, 0);
        let psi = cfg.init_psi.clone().unwrap_or_else(|| prior.mean.clone());
        let theta = exp_all(&psi).ok_or_else(|| Error::config("sampler.init_psi", "rates overflow"))?;
        let mut memo = engine.memo(theta);
        let n = engine.n_intervals();
        let (r, log_lik, factors) = match cfg.algorithm {
            Algorithm::Mesa => {
                let mut r = 1;
                loop {
                    let j = engine.mesa_log_joint(&mut memo, r)?;
                    if j.is_finite() {
                        break (vec![r], j, Vec::new());
                    }
                    r += 1;
                }
            }
            Algorithm::Nmesa => {
                let mut rs = Vec::with_capacity(n);
                let mut factors = Vec::with_capacity(n);
                for i in 0..n {
                    let mut r = 1;
                    let f = loop {
                        let f = engine.nmesa_log_factor(&mut memo, i, r)?;
                        if f.is_finite() {
                            break f;
                        }
                        r += 1;
                    };
                    rs.push(r);
                    factors.push(f);
                }
                let total = factors.iter().fold(0.0, |a, f| a + f);
                (rs, total, factors)
            }
            Algorithm::Ghs17 => {
                let mut found = None;
                for _ in 0..GHS17_INIT_ATTEMPTS {
                    let rs: Vec<usize> = (0..n).map(|_| sample_truncation(&cfg.ghs17, &mut rng)).collect();
                    let est = engine.ghs17_log_estimate(&mut memo, &rs, &cfg.ghs17)?;
                    if est.is_finite() {
                        found = Some((rs, est, Vec::new()));
                        break;
                    }
                }
                found.ok_or_else(|| {
                    Error::Consistency("likelihood estimate is zero at the initial parameter".into())
                })?
            }
            Algorithm::Exact => unreachable!(),
        };
        let log_prior = prior.log_density(&psi);
        let state = ChainState { psi, r, log_prior, log_lik, factors, memo };
        if !state.log_target().is_finite() {
            return Err(Error::Consistency("log target is not finite at the initial state".into()));
        }
        Ok(Self {
            cfg: cfg.clone(),
            prior: prior.clone(),
            engine,
            chol,
            rng,
            state,
            iteration: 0,
            reactions: net.reactions.iter().map(|r| r.name.clone()).collect(),
            started,
        })
    }

    pub fn state(&self) -> &ChainState {
        &self.state
    }

    pub fn engine(&self) -> &LikelihoodEngine {
        &self.engine
    }

    pub fn engine_mut(&mut self) -> &mut LikelihoodEngine {
        &mut self.engine
    }

    fn early(&self) -> bool {
        self.cfg.early_rejection && self.engine.config().workers <= 1
    }

    /// One iteration: region indices first, then the parameter.
    pub fn step(&mut self) -> Result<IterationRecord> {
        self.iteration += 1;
        let (r_accepted, r_proposed) = match self.cfg.algorithm {
            Algorithm::Mesa => self.r_step_mesa()?,
            Algorithm::Nmesa => self.r_step_nmesa()?,
            _ => (0, 0),
        };
        let accept_psi = match self.cfg.algorithm {
            Algorithm::Ghs17 => self.ghs17_step()?,
            _ => self.psi_step()?,
        };
        if self.cfg.recheck_every > 0 && self.iteration % self.cfg.recheck_every == 0 {
            self.recheck()?;
        }
        Ok(IterationRecord {
            psi: self.state.psi.clone(),
            r: self.state.r_summary(),
            log_target: self.state.log_target(),
            accept_psi,
            r_accepted,
            r_proposed,
        })
    }

    fn uniform_log(&mut self) -> f64 {
        (1.0 - self.rng.random::<f64>()).ln()
    }

    fn r_step_mesa(&mut self) -> Result<(u32, u32)> {
        let down = self.rng.random::<f64>() < 0.5;
        let log_u = self.uniform_log();
        let r = self.state.r[0];
        if down && r == 1 {
            return Ok((0, 1));
        }
        let r_new = if down { r - 1 } else { r + 1 };
        let joint = self.engine.mesa_log_joint(&mut self.state.memo, r_new)?;
        if log_u <= joint - self.state.log_lik {
            self.state.r[0] = r_new;
            self.state.log_lik = joint;
            return Ok((1, 1));
        }
        Ok((0, 1))
    }

    fn r_step_nmesa(&mut self) -> Result<(u32, u32)> {
        let n = self.state.r.len();
        let mut accepted = 0;
        for i in 0..n {
            let down = self.rng.random::<f64>() < 0.5;
            let log_u = self.uniform_log();
            let r = self.state.r[i];
            if down && r == 1 {
                continue;
            }
            let r_new = if down { r - 1 } else { r + 1 };
            let f = self.engine.nmesa_log_factor(&mut self.state.memo, i, r_new)?;
            if log_u <= f - self.state.factors[i] {
                self.state.r[i] = r_new;
                self.state.factors[i] = f;
                accepted += 1;
            }
        }
        self.state.log_lik = self.state.factors.iter().fold(0.0, |a, f| a + f);
        Ok((accepted, n as u32))
    }

    fn psi_step(&mut self) -> Result<bool> {
        let proposal = propose_psi(&self.state.psi, self.cfg.lambda, &self.chol, &mut self.rng);
        let log_u = self.uniform_log();
        let lp = self.prior.log_density(&proposal);
        let theta = match exp_all(&proposal) {
            Some(t) if lp.is_finite() => t,
            _ => return Ok(false),
        };
        let target = self.state.log_target();
        let early = self.early();
        let rejects = |bound: f64| early && (lp + bound) - target < log_u - EARLY_SLACK;
        let mut memo = self.engine.memo(theta);
        let n = self.engine.n_intervals();
        let (log_lik, factors) = match self.cfg.algorithm {
            Algorithm::Mesa => {
                let r = self.state.r[0];
                if early {
                    let mut bound = 0.0;
                    for i in 0..n {
                        bound += self.engine.interval_prob(&mut memo, i, r)?.ln();
                        if rejects(bound) {
                            return Ok(false);
                        }
                    }
                }
                (self.engine.mesa_log_joint(&mut memo, r)?, Vec::new())
            }
            _ => {
                if !early {
                    let req: Vec<(usize, usize)> = (0..n)
                        .flat_map(|i| [(i, self.state.r[i]), (i, self.state.r[i] - 1)])
                        .collect();
                    self.engine.ensure(&mut memo, &req)?;
                }
                let mut sum = 0.0;
                let mut factors = Vec::with_capacity(n);
                for i in 0..n {
                    let r = self.state.r[i];
                    if early && rejects(sum + self.engine.interval_prob(&mut memo, i, r)?.ln()) {
                        return Ok(false);
                    }
                    let f = self.engine.nmesa_log_factor(&mut memo, i, r)?;
                    sum += f;
                    factors.push(f);
                    if rejects(sum) {
                        return Ok(false);
                    }
                }
                (sum, factors)
            }
        };
        if log_u <= (lp + log_lik) - target {
            self.state.psi = proposal;
            self.state.log_prior = lp;
            self.state.log_lik = log_lik;
            self.state.factors = factors;
            self.state.memo = memo;
            return Ok(true);
        }
        Ok(false)
    }

    fn ghs17_step(&mut self) -> Result<bool> {
        let proposal = propose_psi(&self.state.psi, self.cfg.lambda, &self.chol, &mut self.rng);
        let g = self.cfg.ghs17;
        let n = self.engine.n_intervals();
        let rs: Vec<usize> = (0..n).map(|_| sample_truncation(&g, &mut self.rng)).collect();
        let log_u = self.uniform_log();
        let lp = self.prior.log_density(&proposal);
        let theta = match exp_all(&proposal) {
            Some(t) if lp.is_finite() => t,
            _ => return Ok(false),
        };
        let target = self.state.log_target();
        let early = self.early();
        let rejects = |bound: f64| early && (lp + bound) - target < log_u - EARLY_SLACK;
        let mut memo = self.engine.memo(theta);
        if !early {
            let req: Vec<(usize, usize)> = rs.iter().enumerate().flat_map(|(i, &r)| (1..=r).map(move |j| (i, j))).collect();
            self.engine.ensure(&mut memo, &req)?;
        }
        // each interval's estimate is at most 1 / P(R >= r_i)
        let mut suffix = vec![0.0; n + 1];
        for i in (0..n).rev() {
            suffix[i] = suffix[i + 1] - g.log_tail(rs[i]);
        }
        let mut sum = 0.0;
        for i in 0..n {
            if rejects(sum + suffix[i]) {
                return Ok(false);
            }
            sum += self.engine.ghs17_log_factor(&mut memo, i, rs[i], &g)?;
        }
        if log_u <= (lp + sum) - target {
            self.state.psi = proposal;
            self.state.log_prior = lp;
            self.state.log_lik = sum;
            self.state.r = rs;
            return Ok(true);
        }
        Ok(false)
    }

    /// Recompute the log target from scratch and compare with the cache.
    pub fn recheck(&mut self) -> Result<()> {
        let theta = exp_all(&self.state.psi).ok_or_else(|| Error::Consistency("rates overflow".into()))?;
        let mut memo = self.engine.memo(theta);
        let fresh = match self.cfg.algorithm {
            Algorithm::Mesa => self.engine.mesa_log_joint(&mut memo, self.state.r[0])?,
            Algorithm::Nmesa => self.engine.nmesa_log_joint(&mut memo, &self.state.r)?,
            _ => self.engine.ghs17_log_estimate(&mut memo, &self.state.r, &self.cfg.ghs17)?,
        };
        let cached = self.state.log_lik;
        let lp = self.prior.log_density(&self.state.psi);
        if !(fresh + lp).is_finite()
            || (fresh - cached).abs() > RECHECK_TOL * (1.0 + cached.abs())
            || (lp - self.state.log_prior).abs() > RECHECK_TOL * (1.0 + lp.abs())
        {
            return Err(Error::Consistency(format!(
                "cached log target {cached} disagrees with recomputed {fresh}"
            )));
        }
        Ok(())
    }

    /// Run all configured iterations, storing the post-burn-in ones.
    pub fn run(mut self) -> Result<SampleStore> {
        let mut store = SampleStore::new(self.cfg.algorithm, &self.reactions);
        let (burn_in, thin) = (self.cfg.burn_in, self.cfg.thin);
        for it in 1..=self.cfg.iterations {
            let rec = self.step().map_err(|e| Error::Chain { iteration: it, source: Box::new(e) })?;
            if it > burn_in && (it - burn_in - 1) % thin == 0 {
                store.rows.push(rec.into_row(it));
            }
        }
        store.wall_seconds = self.started.elapsed().as_secs_f64();
        store.expm = self.engine.stats().clone();
        Ok(store)
    }
}

/// Build a sampler and run it to completion.
pub fn run_chain(net: &ReactionNetwork, data: &Dataset, prior: &Prior, cfg: &SamplerConfig) -> Result<SampleStore> {
    if cfg.algorithm == Algorithm::Exact {
        return super::run_exact_rwm(net, data, prior, cfg);
    }
    Sampler::new(net, data, prior, cfg)
        .map_err(|e| Error::Chain { iteration: 0, source: Box::new(e) })?
        .run()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::likelihood::LikelihoodConfig;
    use crate::network::{RateLaw, Reaction};
    use crate::region::RegionConfig;
    use std::collections::BTreeMap;

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

    fn cfg(algorithm: Algorithm) -> SamplerConfig {
        SamplerConfig {
            algorithm,
            lambda: 0.8,
            iterations: 400,
            burn_in: 100,
            seed: 9,
            likelihood: LikelihoodConfig { region: RegionConfig::new(0.0, 0), ..Default::default() },
            ghs17: crate::likelihood::Ghs17Config { a: 0.7 },
            recheck_every: 50,
            ..Default::default()
        }
    }

    #[test]
    fn deterministic_and_row_counts() {
        let (net, data) = toy();
        let prior = Prior::standard(2);
        for alg in [Algorithm::Mesa, Algorithm::Nmesa, Algorithm::Ghs17] {
            let a = run_chain(&net, &data, &prior, &cfg(alg)).unwrap();
            let b = run_chain(&net, &data, &prior, &cfg(alg)).unwrap();
            assert_eq!(a.rows, b.rows);
            assert_eq!(a.len(), 300);
            assert_eq!(a.rows[0].iteration, 101);
            let one = run_chain(&net, &data, &prior, &SamplerConfig { iterations: 101, ..cfg(alg) }).unwrap();
            assert_eq!(one.len(), 1);
        }
    }

    #[test]
    fn early_rejection_changes_nothing() {
        let (net, data) = toy();
        let prior = Prior::standard(2);
        for alg in [Algorithm::Mesa, Algorithm::Nmesa, Algorithm::Ghs17] {
            let a = run_chain(&net, &data, &prior, &cfg(alg)).unwrap();
            let b = run_chain(&net, &data, &prior, &SamplerConfig { early_rejection: false, ..cfg(alg) }).unwrap();
            assert_eq!(a.rows, b.rows);
            assert!(a.expm.calls <= b.expm.calls);
        }
    }

    #[test]
    fn zero_scale_always_accepts() {
        let (net, data) = toy();
        let prior = Prior::standard(2);
        for alg in [Algorithm::Mesa, Algorithm::Nmesa] {
            let s = run_chain(&net, &data, &prior, &SamplerConfig { lambda: 0.0, ..cfg(alg) }).unwrap();
            assert_eq!(s.alpha_psi(), 1.0);
            assert!(s.rows.iter().all(|r| r.psi == prior.mean));
        }
    }

    #[test]
    fn region_moves_stay_valid() {
        let (net, data) = toy();
        let s = run_chain(&net, &data, &Prior::standard(2), &cfg(Algorithm::Nmesa)).unwrap();
        assert!(s.rows.iter().all(|r| r.r >= 1.0 && r.r_proposed == 3));
        let a = s.alpha_r().unwrap();
        assert!(a > 0.0 && a < 1.0);
    }

    #[test]
    fn downward_move_from_one_is_rejected_without_evaluation() {
        let (net, data) = toy();
        // the first region already spans all nine states, so r stays at 1
        let mut c = cfg(Algorithm::Mesa);
        c.likelihood = LikelihoodConfig { region: RegionConfig::new(0.0, 9), memoize: false, ..Default::default() };
        let mut s = Sampler::new(&net, &data, &Prior::standard(2), &c).unwrap();
        let mut silent = 0;
        for _ in 0..200 {
            let calls = s.engine().stats().calls;
            assert_eq!(s.r_step_mesa().unwrap(), (0, 1));
            if s.engine().stats().calls == calls {
                silent += 1;
            }
        }
        assert_eq!(s.state().r, vec![1]);
        assert!(silent > 70 && silent < 130, "{silent}");
    }
}
