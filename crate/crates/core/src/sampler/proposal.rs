//! Random-walk proposals and covariance factors.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub type Matrix = Vec<Vec<f64>>;

pub fn identity(dim: usize) -> Matrix {
    (0..dim).map(|i| (0..dim).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect()
}

/// Lower-triangular `L` with `L L^T = a`, or `None` if `a` is not positive
/// definite.
pub fn cholesky(a: &Matrix) -> Option<Matrix> {
    let n = a.len();
    if a.iter().any(|row| row.len() != n) {
        return None;
    }
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                let d = a[i][i] - s;
                if !(d > 0.0 && d.is_finite()) {
                    return None;
                }
                l[i][j] = d.sqrt();
            } else {
                l[i][j] = (a[i][j] - s) / l[j][j];
            }
        }
    }
    Some(l)
}

/// Factor `sigma`, adding `delta I` with `delta = 1e-8 trace / dim` (at least
/// 1e-8) if the plain factorisation fails. Returns the matrix actually
/// factored and its factor.
pub fn factor_with_ridge(sigma: &Matrix) -> Result<(Matrix, Matrix, bool)> {
    if let Some(l) = cholesky(sigma) {
        return Ok((sigma.clone(), l, false));
    }
    let n = sigma.len();
    let trace: f64 = (0..n).map(|i| sigma[i][i]).sum();
    let delta = if trace > 0.0 { 1e-8 * trace / n as f64 } else { 1e-8 };
    let mut ridged = sigma.clone();
    for (i, row) in ridged.iter_mut().enumerate() {
        row[i] += delta;
    }
    match cholesky(&ridged) {
        Some(l) => Ok((ridged, l, true)),
        None => Err(Error::Degenerate(format!(
            "covariance not positive definite even after adding {delta:e} I"
        ))),
    }
}

/// `psi + lambda L z` with `z` standard normal.
pub fn propose_psi<R: Rng + ?Sized>(psi: &[f64], lambda: f64, l: &Matrix, rng: &mut R) -> Vec<f64> {
    let z: Vec<f64> = (0..psi.len()).map(|_| rng.sample(StandardNormal)).collect();
    psi.iter()
        .enumerate()
        .map(|(i, p)| p + lambda * (0..=i).map(|k| l[i][k] * z[k]).sum::<f64>())
        .collect()
}

/// Sample mean and unbiased covariance of `draws`.
pub fn sample_covariance(draws: &[Vec<f64>]) -> (Vec<f64>, Matrix) {
    let n = draws.len();
    let dim = draws.first().map_or(0, Vec::len);
    let mut mean = vec![0.0; dim];
    for d in draws {
        for (m, v) in mean.iter_mut().zip(d) {
            *m += v / n as f64;
        }
    }
    let mut cov = vec![vec![0.0; dim]; dim];
    for d in draws {
        for i in 0..dim {
            for j in 0..=i {
                cov[i][j] += (d[i] - mean[i]) * (d[j] - mean[j]);
            }
        }
    }
    let denom = (n as f64 - 1.0).max(1.0);
    for i in 0..dim {
        for j in 0..=i {
            cov[i][j] /= denom;
            cov[j][i] = cov[i][j];
        }
    }
    (mean, cov)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ssa::seeded_rng;

    fn reconstruct(l: &Matrix) -> Matrix {
        let n = l.len();
        (0..n).map(|i| (0..n).map(|j| (0..n).map(|k| l[i][k] * l[j][k]).sum()).collect()).collect()
    }

    #[test]
    fn zero_scale_is_identity_map() {
        let mut rng = seeded_rng(1, 0);
        let psi = vec![0.1, -2.0];
        assert_eq!(propose_psi(&psi, 0.0, &identity(2), &mut rng), psi);
    }

    #[test]
    fn unit_proposals_have_unit_variance() {
        let mut rng = seeded_rng(2, 0);
        let draws: Vec<Vec<f64>> = (0..10_000).map(|_| propose_psi(&[0.0; 3], 1.0, &identity(3), &mut rng)).collect();
        let (_, cov) = sample_covariance(&draws);
        for (i, row) in cov.iter().enumerate() {
            assert!((row[i] - 1.0).abs() < 0.05, "{}", row[i]);
        }
    }

    #[test]
    fn general_factor_reproduces_covariance() {
        let sigma = vec![vec![2.0, 0.6, -0.3], vec![0.6, 1.0, 0.2], vec![-0.3, 0.2, 0.5]];
        let l = cholesky(&sigma).unwrap();
        let back = reconstruct(&l);
        for i in 0..3 {
            for j in 0..3 {
                assert!((back[i][j] - sigma[i][j]).abs() < 1e-10 * 2.0);
                if j > i {
                    assert_eq!(l[i][j], 0.0);
                }
            }
        }
        let mut rng = seeded_rng(3, 0);
        let lambda = 1.5;
        let n = 40_000;
        let draws: Vec<Vec<f64>> = (0..n).map(|_| propose_psi(&[0.0; 3], lambda, &l, &mut rng)).collect();
        let (_, cov) = sample_covariance(&draws);
        for i in 0..3 {
            for j in 0..3 {
                let want = lambda * lambda * sigma[i][j];
                // standard error of a sample covariance
                let se = lambda * lambda * ((sigma[i][j].powi(2) + sigma[i][i] * sigma[j][j]) / n as f64).sqrt();
                assert!((cov[i][j] - want).abs() < 4.0 * se, "({i},{j}) {} vs {want}", cov[i][j]);
            }
        }
    }

    #[test]
    fn ridge_fallbacks() {
        let (s, l, ridged) = factor_with_ridge(&vec![vec![0.0; 2]; 2]).unwrap();
        assert!(ridged);
        assert_eq!(s, vec![vec![1e-8, 0.0], vec![0.0, 1e-8]]);
        assert!((l[0][0] - 1e-4).abs() < 1e-16);
        let singular = vec![vec![1.0, 1.0], vec![1.0, 1.0]];
        let (s, _, ridged) = factor_with_ridge(&singular).unwrap();
        assert!(ridged && (s[0][0] - (1.0 + 1e-8)).abs() < 1e-15);
        let bad = vec![vec![-1.0, 0.0], vec![0.0, 1.0]];
        assert!(matches!(factor_with_ridge(&bad), Err(Error::Degenerate(_))));
    }
}
