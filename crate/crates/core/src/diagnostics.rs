//! Effective sample size and chain summaries.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::sampler::SampleStore;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ess {
    pub value: f64,
    /// Input had zero variance; `value` is then `N` by convention.
    pub degenerate: bool,
}

/// ESS by Geyer's initial monotone positive sequence estimator.
///
/// Autocovariances are the biased (divide-by-`N`) estimates and are only
/// computed for as many lags as the truncation rule needs.
pub fn ess(x: &[f64]) -> Ess {
    let n = x.len();
    let nf = n as f64;
    if n < 2 {
        return Ess { value: nf, degenerate: true };
    }
    let mean = x.iter().sum::<f64>() / nf;
    let centred: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let autocov = |k: usize| -> f64 {
        centred[..n - k]
            .iter()
            .zip(&centred[k..])
            .map(|(a, b)| a * b)
            .sum::<f64>()
            / nf
    };
    let g0 = autocov(0);
    let scale = x.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    if !(g0 > 1e-28 * scale * scale) {
        return Ess { value: nf, degenerate: true };
    }
    // Gamma_m = gamma_{2m} + gamma_{2m+1}, kept while positive and forced monotone
    let mut sum = 0.0;
    let mut prev = f64::INFINITY;
    let mut m = 0;
    while 2 * m + 1 < n {
        let pair = autocov(2 * m) + autocov(2 * m + 1);
        if pair <= 0.0 {
            break;
        }
        let pair = pair.min(prev);
        sum += pair;
        prev = pair;
        m += 1;
    }
    let tau = (2.0 * sum - g0) / g0;
    let value = if tau > 0.0 { (nf / tau).clamp(1.0, nf) } else { nf };
    Ess { value, degenerate: false }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantitySummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub ess: f64,
    pub ess_per_min: f64,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainSummary {
    pub algorithm: String,
    pub samples: usize,
    pub wall_seconds: f64,
    pub lambda: Option<f64>,
    pub gamma: Option<f64>,
    pub w_min: Option<u64>,
    pub alpha_psi: f64,
    /// Mean acceptance of the region moves; absent when there are none.
    pub alpha_r: Option<f64>,
    pub quantities: Vec<QuantitySummary>,
}

pub fn quantity(name: &str, x: &[f64], wall_seconds: f64) -> QuantitySummary {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let sd = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt();
    let e = ess(x);
    QuantitySummary {
        name: name.to_owned(),
        mean,
        sd,
        ess: e.value,
        ess_per_min: ess_per_minute(e.value, wall_seconds),
        degenerate: e.degenerate,
    }
}

pub fn ess_per_minute(ess: f64, wall_seconds: f64) -> f64 {
    if wall_seconds > 0.0 {
        ess * 60.0 / wall_seconds
    } else {
        f64::INFINITY
    }
}

/// ESS and ESS/min for every parameter, the region index and the log target.
pub fn summarize(store: &SampleStore, wall_seconds: f64) -> ChainSummary {
    let mut quantities: Vec<QuantitySummary> = store
        .param_names
        .iter()
        .enumerate()
        .map(|(j, name)| quantity(name, &store.psi_column(j), wall_seconds))
        .collect();
    quantities.push(quantity(store.r_label(), &store.r_column(), wall_seconds));
    quantities.push(quantity("log_target", &store.log_target_column(), wall_seconds));
    ChainSummary {
        algorithm: store.algorithm.to_string(),
        samples: store.rows.len(),
        wall_seconds,
        lambda: None,
        gamma: None,
        w_min: None,
        alpha_psi: store.alpha_psi(),
        alpha_r: store.alpha_r(),
        quantities,
    }
}

impl ChainSummary {
    pub fn quantity(&self, name: &str) -> Option<&QuantitySummary> {
        self.quantities.iter().find(|q| q.name == name)
    }

    /// Smallest ESS/min over the parameters.
    pub fn min_param_ess_per_min(&self) -> f64 {
        self.quantities
            .iter()
            .filter(|q| q.name.starts_with("psi_"))
            .map(|q| q.ess_per_min)
            .fold(f64::INFINITY, f64::min)
    }

    /// Aligned text table: settings, acceptance rates, then ESS/min.
    pub fn table(&self) -> String {
        let fmt_opt = |v: Option<f64>, p: usize| v.map_or("-".to_owned(), |v| format!("{v:.p$}"));
        let mut head = vec![
            "algorithm".to_owned(),
            "lambda".into(),
            "gamma".into(),
            "w_min".into(),
            "T(s)".into(),
            "alpha_psi%".into(),
            "alpha_r%".into(),
        ];
        let mut row = vec![
            self.algorithm.clone(),
            fmt_opt(self.lambda, 2),
            fmt_opt(self.gamma, 2),
            self.w_min.map_or("-".into(), |w| w.to_string()),
            format!("{:.1}", self.wall_seconds),
            format!("{:.1}", 100.0 * self.alpha_psi),
            fmt_opt(self.alpha_r.map(|a| 100.0 * a), 1),
        ];
        for q in &self.quantities {
            head.push(format!("ESS/min {}", q.name));
            row.push(format!("{:.1}", q.ess_per_min));
        }
        let widths: Vec<usize> = head.iter().zip(&row).map(|(h, r)| h.len().max(r.len())).collect();
        let mut out = String::new();
        for line in [&head, &row] {
            let cells: Vec<String> = line.iter().zip(&widths).map(|(c, w)| format!("{c:>w$}")).collect();
            let _ = writeln!(out, "{}", cells.join("  "));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn normals(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    fn ar1(n: usize, phi: f64, seed: u64) -> Vec<f64> {
        let z = normals(n, seed);
        let mut x = Vec::with_capacity(n);
        let mut cur = z[0] / (1.0 - phi * phi).sqrt();
        for e in z {
            cur = phi * cur + e;
            x.push(cur);
        }
        x
    }

    #[test]
    fn iid_draws() {
        let x = normals(10_000, 1);
        let e = ess(&x);
        assert!(!e.degenerate);
        assert!(e.value > 8_000.0 && e.value <= 10_000.0, "{}", e.value);
    }

    #[test]
    fn ar1_matches_integrated_autocorrelation() {
        let n = 100_000;
        let phi = 0.9;
        let want = n as f64 * (1.0 - phi) / (1.0 + phi);
        let got = ess(&ar1(n, phi, 2)).value;
        assert!((got / want - 1.0).abs() < 0.2, "{got} vs {want}");
    }

    #[test]
    fn constant_input_is_flagged() {
        let e = ess(&[3.5; 100]);
        assert!(e.degenerate);
        assert_eq!(e.value, 100.0);
    }

    #[test]
    fn affine_invariance_and_duplication() {
        let x = ar1(20_000, 0.5, 3);
        let y: Vec<f64> = x.iter().map(|v| 1e3 - 7.0 * v).collect();
        let (a, b) = (ess(&x).value, ess(&y).value);
        assert!((a / b - 1.0).abs() < 1e-9);
        let doubled: Vec<f64> = x.iter().flat_map(|v| [*v, *v, *v]).collect();
        let c = ess(&doubled).value;
        assert!((c / (a) - 1.0).abs() < 0.2, "{c} vs {a}");
    }

    #[test]
    fn per_minute_conversion() {
        assert_eq!(ess_per_minute(500.0, 30.0), 1000.0);
        let q = quantity("psi_a", &normals(1000, 4), 120.0);
        assert_eq!(q.ess_per_min, q.ess * 60.0 / 120.0);
    }
}
