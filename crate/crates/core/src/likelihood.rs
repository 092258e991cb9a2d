//! Per-interval transition probabilities on nested regions and the joint
//! densities built from them.
//!
//! `p_i(r)` is the probability of moving from `x_{i-1}` to `x_i` in time `t`
//! without leaving region `r` of interval `i`; `p_i(0) = 0`. All extended
//! targets are differences of these quantities, formed in log space.

use std::collections::BTreeMap;
use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::expm::{expm_action, ExpmConfig, ExpmMethod, ExpmReport};
use crate::generator::build_generator;
use crate::network::{ReactionNetwork, State};
use crate::region::{expand, initial_region, Region, RegionConfig};

/// Relative gap below which two probabilities are treated as equal.
pub const CANCELLATION_GUARD: f64 = 1e-13;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LikelihoodConfig {
    pub region: RegionConfig,
    pub expm: ExpmConfig,
    /// Largest region index any evaluation may request.
    pub r_max: usize,
    /// Threads for per-interval evaluation; 1 means sequential.
    pub workers: usize,
    /// Cache probabilities at the current parameter (a pure optimisation).
    pub memoize: bool,
}

impl Default for LikelihoodConfig {
    fn default() -> Self {
        Self {
            region: RegionConfig::default(),
            expm: ExpmConfig::default(),
            r_max: 10_000,
            workers: 1,
            memoize: true,
        }
    }
}

/// Random-truncation distribution with `P(R >= j) = a^{j(j-1)/2}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ghs17Config {
    pub a: f64,
}

impl Ghs17Config {
    pub fn new(a: f64) -> Result<Self> {
        let cfg = Self { a };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a > 0.0 && self.a < 1.0) {
            return Err(Error::config("ghs17.a", "must lie in (0, 1)"));
        }
        Ok(())
    }

    /// `ln P(R >= j)`.
    pub fn log_tail(&self, j: usize) -> f64 {
        let j = j as f64;
        0.5 * j * (j - 1.0) * self.a.ln()
    }

    pub fn tail(&self, j: usize) -> f64 {
        self.log_tail(j).exp()
    }

    /// `P(R = r)`.
    pub fn pmf(&self, r: usize) -> f64 {
        if r == 0 {
            return 0.0;
        }
        self.tail(r) * (1.0 - self.a.powi(r as i32))
    }
}

impl Default for Ghs17Config {
    fn default() -> Self {
        Self { a: 0.98 }
    }
}

/// Draw `R`: start at 1 and advance from `r` with probability `a^r`.
pub fn sample_truncation<R: Rng + ?Sized>(cfg: &Ghs17Config, rng: &mut R) -> usize {
    let mut r = 1usize;
    let mut q = cfg.a;
    while rng.random::<f64>() < q {
        r += 1;
        q *= cfg.a;
    }
    r
}

/// Aggregate statistics over matrix-exponential calls.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExpmStats {
    pub calls: u64,
    pub uniformisation: u64,
    pub scale_square: u64,
    pub flops: f64,
    pub max_rho_t: f64,
    pub max_dim: usize,
    /// Calls with `rho t > 1e6`, and how many of those used uniformisation.
    pub large_rho_t: u64,
    pub large_rho_t_uniformisation: u64,
    /// Calls beyond the range of a 32-bit series counter.
    pub beyond_u32_counter: u64,
}

impl ExpmStats {
    pub fn record(&mut self, rep: &ExpmReport) {
        self.calls += 1;
        match rep.method {
            ExpmMethod::Uniformisation => self.uniformisation += 1,
            ExpmMethod::ScaleSquare => self.scale_square += 1,
        }
        self.flops += rep.flops;
        let rho_t = rep.rho_t();
        self.max_rho_t = self.max_rho_t.max(rho_t);
        self.max_dim = self.max_dim.max(rep.dim);
        if rho_t > 1e6 {
            self.large_rho_t += 1;
            if rep.method == ExpmMethod::Uniformisation {
                self.large_rho_t_uniformisation += 1;
            }
        }
        if rep.beyond_u32_counter() {
            self.beyond_u32_counter += 1;
        }
    }

    pub fn merge(&mut self, other: &ExpmStats) {
        self.calls += other.calls;
        self.uniformisation += other.uniformisation;
        self.scale_square += other.scale_square;
        self.flops += other.flops;
        self.max_rho_t = self.max_rho_t.max(other.max_rho_t);
        self.max_dim = self.max_dim.max(other.max_dim);
        self.large_rho_t += other.large_rho_t;
        self.large_rho_t_uniformisation += other.large_rho_t_uniformisation;
        self.beyond_u32_counter += other.beyond_u32_counter;
    }
}

/// Probabilities cached at one parameter value, keyed by region level.
#[derive(Debug, Clone)]
pub struct Memo {
    theta: Vec<f64>,
    table: Vec<BTreeMap<usize, f64>>,
}

impl Memo {
    pub fn new(theta: Vec<f64>, n_intervals: usize) -> Self {
        Self {
            theta,
            table: vec![BTreeMap::new(); n_intervals],
        }
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn cached(&self) -> usize {
        self.table.iter().map(BTreeMap::len).sum()
    }
}

#[derive(Debug, Clone)]
struct IntervalChain {
    start: State,
    end: State,
    regions: Vec<Region>,
    saturated: bool,
}

impl IntervalChain {
    /// Effective level for index `r >= 1`: levels past saturation share the
    /// last distinct region.
    fn level(&mut self, r: usize, cfg: &RegionConfig, net: &ReactionNetwork) -> usize {
        while self.regions.len() < r && !self.saturated {
            let last = self.regions.last().expect("region chain starts non-empty");
            let next = expand(last, cfg, net);
            if next.same_extent(last) {
                self.saturated = true;
            } else {
                self.regions.push(next);
            }
        }
        r.min(self.regions.len())
    }
}

#[derive(Serialize)]
struct LogEntry<'a> {
    interval: usize,
    r: usize,
    d_r: usize,
    rho: f64,
    rho_t: f64,
    method: ExpmMethod,
    m: u64,
    s: u32,
    prob: f64,
    lower: &'a [i64],
    upper: &'a [i64],
}

/// Evaluator for one dataset: owns the per-interval region chains, which do
/// not depend on the parameter, and fills [`Memo`]s, which do.
pub struct LikelihoodEngine {
    net: ReactionNetwork,
    cfg: LikelihoodConfig,
    dt: f64,
    chains: Vec<IntervalChain>,
    stats: ExpmStats,
    run_log: Option<Box<dyn Write + Send>>,
    pool: Option<rayon::ThreadPool>,
}

impl LikelihoodEngine {
    pub fn new(net: &ReactionNetwork, data: &Dataset, cfg: LikelihoodConfig) -> Result<Self> {
        net.validate()?;
        data.validate(net)?;
        cfg.region.validate()?;
        cfg.expm.validate()?;
        if cfg.r_max == 0 {
            return Err(Error::config("likelihood.r_max", "must be at least 1"));
        }
        let chains = data
            .intervals()
            .map(|(a, b)| IntervalChain {
                start: a.to_vec(),
                end: b.to_vec(),
                regions: vec![initial_region(a, b, &cfg.region, net)],
                saturated: false,
            })
            .collect();
        let pool = if cfg.workers > 1 {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(cfg.workers)
                    .build()
                    .map_err(|e| Error::config("workers", e.to_string()))?,
            )
        } else {
            None
        };
        Ok(Self {
            net: net.clone(),
            cfg,
            dt: data.dt,
            chains,
            stats: ExpmStats::default(),
            run_log: None,
            pool,
        })
    }

    /// Append one JSON line per matrix-exponential call to `w`.
    pub fn set_run_log(&mut self, w: Box<dyn Write + Send>) {
        self.run_log = Some(w);
    }

    pub fn n_intervals(&self) -> usize {
        self.chains.len()
    }

    pub fn config(&self) -> &LikelihoodConfig {
        &self.cfg
    }

    pub fn network(&self) -> &ReactionNetwork {
        &self.net
    }

    pub fn stats(&self) -> &ExpmStats {
        &self.stats
    }

    pub fn memo(&self, theta: Vec<f64>) -> Memo {
        Memo::new(theta, self.chains.len())
    }

    /// Region `r` of interval `i` (or the last distinct one past saturation).
    pub fn region(&mut self, i: usize, r: usize) -> Result<&Region> {
        self.check_index(r)?;
        let k = self.chains[i].level(r.max(1), &self.cfg.region, &self.net);
        Ok(&self.chains[i].regions[k - 1])
    }

    /// Index after which interval `i`'s regions stop growing, if reached.
    pub fn saturation_index(&self, i: usize) -> Option<usize> {
        let c = &self.chains[i];
        c.saturated.then_some(c.regions.len())
    }

    fn check_index(&self, r: usize) -> Result<()> {
        if r > self.cfg.r_max {
            return Err(Error::RegionCap {
                requested: r,
                cap: self.cfg.r_max,
            });
        }
        Ok(())
    }

    fn compute(&self, i: usize, k: usize, theta: &[f64]) -> Result<(f64, ExpmReport)> {
        interval_entry(&self.net, &self.cfg.expm, self.dt, &self.chains[i], k, theta)
    }

    /// Make sure `p_i(r)` is cached for every `(i, r)` in `requests`.
    pub fn ensure(&mut self, memo: &mut Memo, requests: &[(usize, usize)]) -> Result<()> {
        if !self.cfg.memoize {
            return Ok(());
        }
        let mut todo: Vec<(usize, usize)> = Vec::new();
        for &(i, r) in requests {
            if r == 0 {
                continue;
            }
            self.check_index(r)?;
            let k = self.chains[i].level(r, &self.cfg.region, &self.net);
            if !memo.table[i].contains_key(&k) && !todo.contains(&(i, k)) {
                todo.push((i, k));
            }
        }
        if todo.is_empty() {
            return Ok(());
        }
        let theta = memo.theta.clone();
        let results: Vec<Result<(f64, ExpmReport)>> = match &self.pool {
            Some(pool) if todo.len() > 1 => {
                let (net, expm, dt, chains) = (&self.net, &self.cfg.expm, self.dt, &self.chains);
                pool.install(|| {
                    todo.par_iter()
                        .map(|&(i, k)| interval_entry(net, expm, dt, &chains[i], k, &theta))
                        .collect()
                })
            }
            _ => todo.iter().map(|&(i, k)| self.compute(i, k, &theta)).collect(),
        };
        for (&(i, k), res) in todo.iter().zip(results) {
            let (p, rep) = res?;
            self.stats.record(&rep);
            if let Some(log) = self.run_log.as_mut() {
                let region = &self.chains[i].regions[k - 1];
                let entry = LogEntry {
                    interval: i,
                    r: k,
                    d_r: rep.dim - 1,
                    rho: rep.rho,
                    rho_t: rep.rho_t(),
                    method: rep.method,
                    m: rep.m,
                    s: rep.s,
                    prob: p,
                    lower: &region.lower,
                    upper: &region.upper,
                };
                serde_json::to_writer(&mut *log, &entry)?;
                log.write_all(b"\n")?;
            }
            memo.table[i].insert(k, p);
        }
        Ok(())
    }

    /// `p_i(r)`, computing it if necessary.
    pub fn interval_prob(&mut self, memo: &mut Memo, i: usize, r: usize) -> Result<f64> {
        if r == 0 {
            return Ok(0.0);
        }
        self.check_index(r)?;
        let k = self.chains[i].level(r, &self.cfg.region, &self.net);
        if self.cfg.memoize {
            if let Some(&p) = memo.table[i].get(&k) {
                return Ok(p);
            }
            self.ensure(memo, &[(i, r)])?;
            return Ok(memo.table[i][&k]);
        }
        let (p, rep) = self.compute(i, k, &memo.theta)?;
        self.stats.record(&rep);
        Ok(p)
    }

    /// `sum_i ln p_i(r)`.
    pub fn log_product(&mut self, memo: &mut Memo, r: usize) -> Result<f64> {
        if r == 0 {
            return Ok(f64::NEG_INFINITY);
        }
        let req: Vec<(usize, usize)> = (0..self.n_intervals()).map(|i| (i, r)).collect();
        self.ensure(memo, &req)?;
        let mut total = 0.0;
        for i in 0..self.n_intervals() {
            total += self.interval_prob(memo, i, r)?.ln();
        }
        Ok(total)
    }

    /// `ln(prod_i p_i(r) - prod_i p_i(r-1))`, the log joint of the data and
    /// a shared region index `r`.
    pub fn mesa_log_joint(&mut self, memo: &mut Memo, r: usize) -> Result<f64> {
        if r == 0 {
            return Ok(f64::NEG_INFINITY);
        }
        let mut req: Vec<(usize, usize)> = (0..self.n_intervals()).map(|i| (i, r)).collect();
        req.extend((0..self.n_intervals()).map(|i| (i, r - 1)));
        self.ensure(memo, &req)?;
        let a = self.log_product(memo, r)?;
        let b = self.log_product(memo, r - 1)?;
        let tol = self.n_intervals() as f64 * self.cfg.expm.epsilon;
        log_difference(a, b, tol)
    }

    pub fn mesa_joint(&mut self, memo: &mut Memo, r: usize) -> Result<f64> {
        Ok(self.mesa_log_joint(memo, r)?.exp())
    }

    /// `ln(p_i(r) - p_i(r-1))` for one interval.
    pub fn nmesa_log_factor(&mut self, memo: &mut Memo, i: usize, r: usize) -> Result<f64> {
        if r == 0 {
            return Ok(f64::NEG_INFINITY);
        }
        self.ensure(memo, &[(i, r), (i, r - 1)])?;
        let a = self.interval_prob(memo, i, r)?;
        let b = self.interval_prob(memo, i, r - 1)?;
        log_difference(a.ln(), b.ln(), 2.0 * self.cfg.expm.epsilon)
    }

    /// `sum_i ln(p_i(r_i) - p_i(r_i - 1))`.
    pub fn nmesa_log_joint(&mut self, memo: &mut Memo, rs: &[usize]) -> Result<f64> {
        self.check_len(rs)?;
        let mut req = Vec::with_capacity(2 * rs.len());
        for (i, &r) in rs.iter().enumerate() {
            req.push((i, r));
            req.push((i, r.saturating_sub(1)));
        }
        self.ensure(memo, &req)?;
        let mut total = 0.0;
        for (i, &r) in rs.iter().enumerate() {
            total += self.nmesa_log_factor(memo, i, r)?;
        }
        Ok(total)
    }

    pub fn nmesa_joint(&mut self, memo: &mut Memo, rs: &[usize]) -> Result<f64> {
        Ok(self.nmesa_log_joint(memo, rs)?.exp())
    }

    /// Log of interval `i`'s random-truncation estimate
    /// `sum_{j<=r} (p_i(j) - p_i(j-1)) / P(R >= j)`.
    pub fn ghs17_log_factor(&mut self, memo: &mut Memo, i: usize, r: usize, cfg: &Ghs17Config) -> Result<f64> {
        if r == 0 {
            return Err(Error::InvalidParameter("truncation index must be >= 1".into()));
        }
        let req: Vec<(usize, usize)> = (1..=r).map(|j| (i, j)).collect();
        self.ensure(memo, &req)?;
        let tol = 2.0 * self.cfg.expm.epsilon;
        let mut terms = Vec::with_capacity(r);
        let mut prev = 0.0;
        for j in 1..=r {
            let cur = self.interval_prob(memo, i, j)?;
            let diff = cur - prev;
            if diff < -tol {
                return Err(Error::Consistency(format!(
                    "p({j}) - p({}) = {diff} on interval {i}",
                    j - 1
                )));
            }
            if diff > 0.0 {
                terms.push(diff.ln() - cfg.log_tail(j));
            }
            prev = cur;
        }
        Ok(log_sum_exp(&terms))
    }

    pub fn ghs17_log_estimate(&mut self, memo: &mut Memo, rs: &[usize], cfg: &Ghs17Config) -> Result<f64> {
        self.check_len(rs)?;
        let mut req = Vec::new();
        for (i, &r) in rs.iter().enumerate() {
            req.extend((1..=r).map(|j| (i, j)));
        }
        self.ensure(memo, &req)?;
        let mut total = 0.0;
        for (i, &r) in rs.iter().enumerate() {
            total += self.ghs17_log_factor(memo, i, r, cfg)?;
        }
        Ok(total)
    }

    pub fn ghs17_estimate(&mut self, memo: &mut Memo, rs: &[usize], cfg: &Ghs17Config) -> Result<f64> {
        Ok(self.ghs17_log_estimate(memo, rs, cfg)?.exp())
    }

    fn check_len(&self, rs: &[usize]) -> Result<()> {
        if rs.len() != self.n_intervals() {
            return Err(Error::Dimension {
                what: "region index vector",
                got: rs.len(),
                expected: self.n_intervals(),
            });
        }
        Ok(())
    }
}

fn interval_entry(
    net: &ReactionNetwork,
    expm: &ExpmConfig,
    dt: f64,
    chain: &IntervalChain,
    k: usize,
    theta: &[f64],
) -> Result<(f64, ExpmReport)> {
    let region = &chain.regions[k - 1];
    let (q, en) = build_generator(net, theta, region)?;
    let (from, to) = match (en.index(&chain.start), en.index(&chain.end)) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(Error::Consistency("interval endpoints outside their region".into())),
    };
    let mut v = vec![0.0; q.dim()];
    v[from] = 1.0;
    let (u, rep) = expm_action(&q, dt, &v, expm)?;
    Ok((u[to].min(1.0), rep))
}

/// `ln(e^a - e^b)` for `e^a >= e^b` up to an absolute tolerance `tol`;
/// gaps below the cancellation guard count as zero.
pub fn log_difference(a: f64, b: f64, tol: f64) -> Result<f64> {
    if b == f64::NEG_INFINITY {
        return Ok(a);
    }
    if a.is_nan() || b.is_nan() {
        return Err(Error::Numerical("NaN probability".into()));
    }
    let ratio = (b - a).exp();
    if ratio >= 1.0 {
        let gap = b.exp() - a.exp();
        if gap > tol {
            return Err(Error::Consistency(format!(
                "probability decreased by {gap:e} as the region grew"
            )));
        }
        return Ok(f64::NEG_INFINITY);
    }
    let rel = 1.0 - ratio;
    if rel < CANCELLATION_GUARD {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(a + (-ratio).ln_1p())
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Log-likelihood on a finite state space: every interval on the full box
/// spanned by the hard bounds.
pub fn exact_log_likelihood(
    net: &ReactionNetwork,
    theta: &[f64],
    data: &Dataset,
    expm: &ExpmConfig,
) -> Result<f64> {
    if !net.is_bounded() {
        return Err(Error::Unbounded);
    }
    data.validate(net)?;
    let region = Region {
        lower: net.hard_lower.clone(),
        upper: net.hard_upper.iter().map(|u| u.expect("bounded")).collect(),
        index: 1,
    };
    let (q, en) = build_generator(net, theta, &region)?;
    let mut rows: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    let mut total = 0.0;
    for (a, b) in data.intervals() {
        let from = en.index(a).ok_or_else(|| Error::OutOfBounds { state: a.to_vec() })?;
        let to = en.index(b).ok_or_else(|| Error::OutOfBounds { state: b.to_vec() })?;
        if !rows.contains_key(&from) {
            let mut v = vec![0.0; q.dim()];
            v[from] = 1.0;
            rows.insert(from, expm_action(&q, data.dt, &v, expm)?.0);
        }
        total += rows[&from][to].min(1.0).ln();
    }
    Ok(total)
}

pub fn exact_likelihood(net: &ReactionNetwork, theta: &[f64], data: &Dataset, expm: &ExpmConfig) -> Result<f64> {
    Ok(exact_log_likelihood(net, theta, data, expm)?.exp())
}
