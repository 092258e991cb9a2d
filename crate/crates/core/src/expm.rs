//! Action of the matrix exponential of a rate matrix on a non-negative vector.
//!
//! Both methods work with the uniformised chain `P = I + Q / rho`, which is
//! stochastic, so every term of every series is non-negative and no
//! cancellation can occur:
//!
//! * uniformisation sums Poisson(`rho t`)-weighted terms `v^T P^i` with sparse
//!   vector-matrix products, costing `O(rho t nnz)`;
//! * scaling and squaring forms the dense `exp(rho t (P - I) / 2^s)` by the same
//!   series, squares it `s - 1` times and finishes with two vector-matrix
//!   products, costing `O(d^3 log(rho t))`.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::generator::SparseRateMatrix;

/// `rho t` above which a 32-bit term counter would have overflowed.
pub const U32_COUNTER_REGIME: f64 = 4.0e9;

/// Log relative weight above which weights are propagated by recursion.
const LINEAR_FLOOR: f64 = -600.0;
/// Relative weight below which the Poisson mass is treated as exhausted.
const WEIGHT_CUTOFF: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpmMethod {
    Uniformisation,
    ScaleSquare,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodChoice {
    #[default]
    Auto,
    Uniformisation,
    ScaleSquare,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExpmConfig {
    pub epsilon: f64,
    pub method: MethodChoice,
    /// Cap on the number of squarings.
    pub s_max: u32,
    /// Relative cost of one uniformisation multiply-add.
    pub cost_uniform: f64,
    /// Relative cost of one dense multiply-add.
    pub cost_dense: f64,
    /// Largest dense working set (bytes) scaling and squaring may allocate.
    pub dense_limit_bytes: usize,
}

impl Default for ExpmConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-10,
            method: MethodChoice::Auto,
            s_max: 64,
            cost_uniform: 1.0,
            cost_dense: 1.0,
            dense_limit_bytes: 2 << 30,
        }
    }
}

impl ExpmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::config("expm.epsilon", "must lie in (0, 1)"));
        }
        if !(self.cost_uniform > 0.0 && self.cost_dense > 0.0) {
            return Err(Error::config("expm.cost_*", "cost constants must be positive"));
        }
        Ok(())
    }

    fn dense_fits(&self, dim: usize) -> bool {
        dim.checked_mul(dim)
            .and_then(|n| n.checked_mul(3 * std::mem::size_of::<f64>()))
            .is_some_and(|bytes| bytes <= self.dense_limit_bytes)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpmReport {
    pub method: ExpmMethod,
    pub dim: usize,
    pub nnz: usize,
    pub rho: f64,
    pub t: f64,
    /// Series truncation point (of the scaled series for scaling and squaring).
    pub m: u64,
    pub s: u32,
    pub flops: f64,
}

impl ExpmReport {
    pub fn rho_t(&self) -> f64 {
        self.rho * self.t
    }

    /// Whether this call lies in the regime where a 32-bit counter overflows.
    pub fn beyond_u32_counter(&self) -> bool {
        self.rho_t() > U32_COUNTER_REGIME
    }
}

/// Smallest `m` with `P{Poisson(rho_t) >= m + 1} <= eps`.
pub fn poisson_truncation(rho_t: f64, eps: f64) -> u64 {
    if !(rho_t > 0.0) || !rho_t.is_finite() {
        return 0;
    }
    let mode = rho_t.floor() as u64;
    // weights relative to the mode: w_i = pmf(i) / pmf(mode)
    let mut total = 1.0;
    let mut w = 1.0;
    let mut i = mode;
    while i > 0 {
        w *= i as f64 / rho_t;
        if w < WEIGHT_CUTOFF {
            break;
        }
        total += w;
        i -= 1;
    }
    let mut w = 1.0;
    let mut hi = mode;
    loop {
        let next = w * rho_t / (hi + 1) as f64;
        if next < WEIGHT_CUTOFF {
            break;
        }
        w = next;
        hi += 1;
        total += w;
    }
    // walk down from the right edge: tail(m) = sum_{i > m} w_i
    let budget = eps * total;
    let mut tail = 0.0;
    let mut m = hi;
    let mut w_m = w;
    while m > 0 {
        if tail + w_m > budget {
            return m;
        }
        tail += w_m;
        w_m *= m as f64 / rho_t;
        m -= 1;
    }
    0
}

fn check_input(q: &SparseRateMatrix, t: f64, v: &[f64]) -> Result<()> {
    if v.len() != q.dim() {
        return Err(Error::Dimension {
            what: "vector",
            got: v.len(),
            expected: q.dim(),
        });
    }
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::Numerical(format!("time {t} must be finite and >= 0")));
    }
    if v.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
        return Err(Error::Numerical("input vector must be finite and non-negative".into()));
    }
    Ok(())
}

/// Clamp entries within `eps` below zero; reject anything worse.
fn finish(mut out: Vec<f64>, eps: f64) -> Result<Vec<f64>> {
    for x in &mut out {
        if !x.is_finite() {
            return Err(Error::Numerical("non-finite entry in result".into()));
        }
        if *x < 0.0 {
            if *x < -eps {
                return Err(Error::Numerical(format!("entry {x} below -epsilon")));
            }
            *x = 0.0;
        }
    }
    Ok(out)
}

/// `v^T exp(Q t)` by uniformisation.
///
/// Poisson weights are formed relative to the mode, in log space while they
/// are below `exp(-600)` and by the ratio recursion afterwards, and the sum is
/// normalised by the accumulated weight, so nothing over- or underflows.
pub fn expm_action_uniform(
    q: &SparseRateMatrix,
    t: f64,
    v: &[f64],
    eps: f64,
) -> Result<(Vec<f64>, ExpmReport)> {
    check_input(q, t, v)?;
    let rho = q.rho();
    let lambda = rho * t;
    let mut report = ExpmReport {
        method: ExpmMethod::Uniformisation,
        dim: q.dim(),
        nnz: q.nnz(),
        rho,
        t,
        m: 0,
        s: 0,
        flops: 0.0,
    };
    if lambda == 0.0 {
        return Ok((v.to_vec(), report));
    }
    let m = poisson_truncation(lambda, eps);
    report.m = m;
    report.flops = 2.0 * (m + 1) as f64 * q.nnz() as f64;

    let dim = q.dim();
    let p_diag: Vec<f64> = q.diag().iter().map(|d| 1.0 + d / rho).collect();
    let mut cur = v.to_vec();
    let mut next = vec![0.0; dim];
    let mut acc = vec![0.0; dim];
    let mode = lambda.floor();
    let ln_lambda = lambda.ln();
    let ln_gamma_mode = ln_gamma(mode + 1.0);
    let mut total = 0.0;
    let mut linear: Option<f64> = None;

    for i in 0..=m {
        let w = match linear {
            Some(w) => w,
            None => {
                let fi = i as f64;
                let lr = (fi - mode) * ln_lambda - (ln_gamma(fi + 1.0) - ln_gamma_mode);
                if lr > LINEAR_FLOOR {
                    linear = Some(lr.exp());
                }
                lr.exp()
            }
        };
        if w > 0.0 {
            total += w;
            for (a, c) in acc.iter_mut().zip(&cur) {
                *a += w * c;
            }
        } else if linear.is_some() {
            // past the mode and underflowed: the remaining mass is zero
            break;
        }
        if i == m {
            break;
        }
        if let Some(w) = linear.as_mut() {
            *w *= lambda / (i + 1) as f64;
        }
        next.iter_mut().zip(&cur).zip(&p_diag).for_each(|((n, c), d)| *n = c * d);
        for (row, &c) in cur.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            for (col, val) in q.row(row) {
                next[col] += c * val / rho;
            }
        }
        std::mem::swap(&mut cur, &mut next);
    }
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::Numerical(format!(
            "Poisson weights degenerate (rho t = {lambda})"
        )));
    }
    acc.iter_mut().for_each(|a| *a /= total);
    Ok((finish(acc, eps)?, report))
}

fn poisson_weights(lambda: f64, m: u64) -> Vec<f64> {
    let mut w = Vec::with_capacity(m as usize + 1);
    let mut cur = (-lambda).exp();
    for i in 0..=m {
        w.push(cur);
        cur *= lambda / (i + 1) as f64;
    }
    w
}

/// Number of squarings: target a scaled `rho t / 2^s` in `(4, 8]`.
pub fn squarings(rho_t: f64, s_max: u32) -> u32 {
    if rho_t <= 8.0 {
        return 0;
    }
    let s = rho_t.log2().ceil() as i64 - 3;
    s.clamp(0, s_max as i64) as u32
}

/// `v^T exp(Q t)` by scaling and squaring on the dense uniformised matrix.
pub fn expm_action_scale_square(
    q: &SparseRateMatrix,
    t: f64,
    v: &[f64],
    cfg: &ExpmConfig,
) -> Result<(Vec<f64>, ExpmReport)> {
    check_input(q, t, v)?;
    let dim = q.dim();
    if !cfg.dense_fits(dim) {
        return Err(Error::DenseTooLarge { dim });
    }
    let rho = q.rho();
    let lambda = rho * t;
    let mut report = ExpmReport {
        method: ExpmMethod::ScaleSquare,
        dim,
        nnz: q.nnz(),
        rho,
        t,
        m: 0,
        s: 0,
        flops: 0.0,
    };
    if lambda == 0.0 {
        return Ok((v.to_vec(), report));
    }
    let s = squarings(lambda, cfg.s_max);
    let scale = 2f64.powi(s as i32);
    let lambda_s = lambda / scale;
    let eps_s = (cfg.epsilon / scale).max(1e-300);
    let m = poisson_truncation(lambda_s, eps_s);
    report.m = m;
    report.s = s;
    let d3 = (dim as f64).powi(3);
    report.flops = 2.0 * d3 * (m + s as u64) as f64;

    let mut p = q.to_dense();
    p.mapv_inplace(|x| x / rho);
    p.diag_mut().mapv_inplace(|x| x + 1.0);

    // Horner: E = sum_i w_i P^i
    let w = poisson_weights(lambda_s, m);
    let total: f64 = w.iter().sum();
    let mut e: Array2<f64> = Array2::eye(dim) * w[m as usize];
    for &wi in w[..m as usize].iter().rev() {
        e = e.dot(&p);
        e.diag_mut().mapv_inplace(|x| x + wi);
    }
    e.mapv_inplace(|x| x / total);

    for _ in 1..s {
        e = e.dot(&e);
    }
    let mut u = Array1::from(v.to_vec()).dot(&e);
    if s >= 1 {
        u = u.dot(&e);
    }
    Ok((finish(u.to_vec(), cfg.epsilon)?, report))
}

/// Pick the cheaper method from the cost model
/// `c_u rho t nnz` versus `c_s d^3 log2(2 + rho t)`.
pub fn select_method(rho_t: f64, dim: usize, nnz: usize, cfg: &ExpmConfig) -> ExpmMethod {
    match cfg.method {
        MethodChoice::Uniformisation => ExpmMethod::Uniformisation,
        MethodChoice::ScaleSquare => ExpmMethod::ScaleSquare,
        MethodChoice::Auto => {
            if !cfg.dense_fits(dim) {
                return ExpmMethod::Uniformisation;
            }
            let uniform = cfg.cost_uniform * rho_t * nnz as f64;
            let dense = cfg.cost_dense * (dim as f64).powi(3) * (2.0 + rho_t).log2();
            if uniform <= dense {
                ExpmMethod::Uniformisation
            } else {
                ExpmMethod::ScaleSquare
            }
        }
    }
}

/// `v^T exp(Q t)` with the method chosen by [`select_method`].
pub fn expm_action(
    q: &SparseRateMatrix,
    t: f64,
    v: &[f64],
    cfg: &ExpmConfig,
) -> Result<(Vec<f64>, ExpmReport)> {
    match select_method(q.rho() * t, q.dim(), q.nnz(), cfg) {
        ExpmMethod::Uniformisation => expm_action_uniform(q, t, v, cfg.epsilon),
        ExpmMethod::ScaleSquare => expm_action_scale_square(q, t, v, cfg),
    }
}

/// Time both kernels on a small reference problem and return a config
/// whose cost constants reflect this machine.
pub fn calibrate(base: &ExpmConfig) -> ExpmConfig {
    use std::time::Instant;
    let n = 200;
    let rows: Vec<Vec<(usize, f64)>> = (0..n)
        .map(|i| {
            let mut r = Vec::new();
            if i + 1 < n {
                r.push((i + 1, 1.0));
            }
            if i > 0 {
                r.push((i - 1, 1.0));
            }
            r
        })
        .collect();
    let q = SparseRateMatrix::from_rows(rows);
    let mut v = vec![0.0; n];
    v[n / 2] = 1.0;
    let t_end = 500.0;

    let start = Instant::now();
    let _ = expm_action_uniform(&q, t_end, &v, base.epsilon);
    let uniform = start.elapsed().as_secs_f64() / (q.rho() * t_end * q.nnz() as f64);

    let start = Instant::now();
    let _ = expm_action_scale_square(&q, t_end, &v, base);
    let lambda = q.rho() * t_end;
    let dense = start.elapsed().as_secs_f64() / ((n as f64).powi(3) * (2.0 + lambda).log2());

    ExpmConfig {
        cost_uniform: 1.0,
        cost_dense: (dense / uniform).max(1e-6),
        ..base.clone()
    }
}
