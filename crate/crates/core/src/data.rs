//! Exactly observed datasets and their CSV / JSON-sidecar files.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path as FsPath;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{ReactionNetwork, State};

/// Initial state plus exact observations at `dt, 2dt, ..., n dt`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub x0: State,
    pub observations: Vec<State>,
    pub dt: f64,
}

impl Dataset {
    pub fn new(x0: State, observations: Vec<State>, dt: f64) -> Result<Self> {
        let data = Self {
            x0,
            observations,
            dt,
        };
        data.check_shape()?;
        Ok(data)
    }

    fn check_shape(&self) -> Result<()> {
        if self.observations.is_empty() {
            return Err(Error::InvalidDataset("no observations".into()));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidDataset(format!("dt = {} must be positive", self.dt)));
        }
        let ns = self.x0.len();
        if self.observations.iter().any(|x| x.len() != ns) {
            return Err(Error::InvalidDataset("observations differ in dimension".into()));
        }
        Ok(())
    }

    /// Check dimensions and hard bounds against `net`.
    pub fn validate(&self, net: &ReactionNetwork) -> Result<()> {
        self.check_shape()?;
        if self.x0.len() != net.n_species() {
            return Err(Error::Dimension {
                what: "observation",
                got: self.x0.len(),
                expected: net.n_species(),
            });
        }
        for x in std::iter::once(&self.x0).chain(&self.observations) {
            if !net.in_bounds(x) {
                return Err(Error::OutOfBounds { state: x.clone() });
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.observations.len()
    }

    /// `(start, end)` pairs for each inter-observation interval.
    pub fn intervals(&self) -> impl Iterator<Item = (&[i64], &[i64])> {
        std::iter::once(&self.x0)
            .chain(&self.observations)
            .zip(&self.observations)
            .map(|(a, b)| (a.as_slice(), b.as_slice()))
    }

    /// Write `time,<species...>`, one row per observation with row 0 = x0.
    pub fn write_csv(&self, path: impl AsRef<FsPath>, species: &[String]) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["time".to_owned()];
        header.extend(species.iter().cloned());
        w.write_record(&header)?;
        for (i, x) in std::iter::once(&self.x0).chain(&self.observations).enumerate() {
            let mut row = vec![format_time(i as f64 * self.dt)];
            row.extend(x.iter().map(i64::to_string));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<FsPath>) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let mut times = Vec::new();
        let mut states = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let mut fields = rec.iter();
            let t: f64 = fields
                .next()
                .ok_or_else(|| Error::InvalidDataset("empty row".into()))?
                .trim()
                .parse()
                .map_err(|e| Error::InvalidDataset(format!("bad time: {e}")))?;
            let x = fields
                .map(|f| {
                    f.trim()
                        .parse::<i64>()
                        .map_err(|e| Error::InvalidDataset(format!("bad count `{f}`: {e}")))
                })
                .collect::<Result<State>>()?;
            times.push(t);
            states.push(x);
        }
        if states.len() < 2 {
            return Err(Error::InvalidDataset("need x0 and at least one observation".into()));
        }
        let dt = times[1] - times[0];
        for (i, t) in times.iter().enumerate() {
            let expect = times[0] + i as f64 * dt;
            if (t - expect).abs() > 1e-9 * expect.abs().max(1.0) {
                return Err(Error::InvalidDataset(format!(
                    "observation times must be equally spaced (row {i})"
                )));
            }
        }
        let mut states = states.into_iter();
        let x0 = states.next().unwrap_or_default();
        Dataset::new(x0, states.collect(), dt)
    }
}

fn format_time(t: f64) -> String {
    let s = format!("{t:.10}");
    let s = s.trim_end_matches('0');
    s.strip_suffix('.').map(|p| format!("{p}.0")).unwrap_or_else(|| s.to_owned())
}

/// Provenance written next to a simulated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSidecar {
    pub network: String,
    pub seed: u64,
    pub theta: Vec<f64>,
    pub x0: State,
    pub t_end: f64,
    pub dt: f64,
    pub n: usize,
}

impl DatasetSidecar {
    pub fn write(&self, path: impl AsRef<FsPath>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(&mut w, self)?;
        w.write_all(b"\n")?;
        Ok(())
    }

    pub fn read(path: impl AsRef<FsPath>) -> Result<Self> {
        Ok(serde_json::from_reader(File::open(path)?)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        let data = Dataset::new(vec![30, 40], vec![vec![31, 39], vec![29, 42]], 0.5).unwrap();
        data.write_csv(&p, &["pred".into(), "prey".into()]).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("time,pred,prey\n0.0,30,40\n0.5,31,39\n1.0,29,42"));
        assert_eq!(Dataset::read_csv(&p).unwrap(), data);
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(Dataset::new(vec![1], vec![], 1.0).is_err());
        assert!(Dataset::new(vec![1], vec![vec![1]], 0.0).is_err());
        assert!(Dataset::new(vec![1], vec![vec![1, 2]], 1.0).is_err());
        let lv = ReactionNetwork::lotka_volterra();
        let neg = Dataset::new(vec![1, 1], vec![vec![-1, 1]], 1.0).unwrap();
        assert!(neg.validate(&lv).is_err());
    }
}
