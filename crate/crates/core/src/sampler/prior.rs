use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Independent normal priors on the log-rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prior {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl Prior {
    pub fn new(mean: Vec<f64>, sd: Vec<f64>) -> Result<Self> {
        let p = Self { mean, sd };
        p.validate()?;
        Ok(p)
    }

    pub fn standard(dim: usize) -> Self {
        Self { mean: vec![0.0; dim], sd: vec![1.0; dim] }
    }

    pub fn validate(&self) -> Result<()> {
        if self.mean.len() != self.sd.len() {
            return Err(Error::config("prior", "mean and sd differ in length"));
        }
        if self.sd.iter().any(|s| !(*s > 0.0 && s.is_finite())) || self.mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::config("prior.sd", "every sd must be finite and > 0"));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn log_density(&self, psi: &[f64]) -> f64 {
        psi.iter()
            .zip(self.mean.iter().zip(&self.sd))
            .map(|(x, (m, s))| {
                let z = (x - m) / s;
                -0.5 * z * z - s.ln() - LN_SQRT_2PI
            })
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{Continuous, Normal};

    #[test]
    fn matches_normal_density() {
        let p = Prior::new(vec![0.2f64.ln(), 0.0], vec![1.0, 0.1f64.sqrt()]).unwrap();
        let x = [-1.0, 0.3];
        let want = Normal::new(0.2f64.ln(), 1.0).unwrap().ln_pdf(x[0])
            + Normal::new(0.0, 0.1f64.sqrt()).unwrap().ln_pdf(x[1]);
        assert!((p.log_density(&x) - want).abs() < 1e-12);
        assert!(Prior::new(vec![0.0], vec![0.0]).is_err());
        assert!(Prior::new(vec![0.0], vec![]).is_err());
    }
}
