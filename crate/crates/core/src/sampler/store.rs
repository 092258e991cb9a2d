//! Chain output: one CSV row per stored iteration plus JSON run metadata.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Algorithm;
use crate::error::{Error, Result};
use crate::likelihood::ExpmStats;

#[derive(Debug, Clone, PartialEq)]
pub struct SampleRow {
    pub iteration: usize,
    pub psi: Vec<f64>,
    /// Region index (MESA) or mean region index across intervals.
    pub r: f64,
    pub log_target: f64,
    pub accept_psi: bool,
    pub r_accepted: u32,
    pub r_proposed: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleStore {
    pub algorithm: Algorithm,
    /// `psi_<reaction>` for every rate.
    pub param_names: Vec<String>,
    pub rows: Vec<SampleRow>,
    pub wall_seconds: f64,
    pub expm: ExpmStats,
}

impl SampleStore {
    pub fn new(algorithm: Algorithm, reactions: &[String]) -> Self {
        Self {
            algorithm,
            param_names: reactions.iter().map(|r| format!("psi_{r}")).collect(),
            rows: Vec::new(),
            wall_seconds: 0.0,
            expm: ExpmStats::default(),
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn psi_column(&self, j: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r.psi[j]).collect()
    }

    pub fn r_column(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.r).collect()
    }

    pub fn log_target_column(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.log_target).collect()
    }

    pub fn r_label(&self) -> &'static str {
        match self.algorithm {
            Algorithm::Mesa => "r",
            _ => "r_bar",
        }
    }

    pub fn alpha_psi(&self) -> f64 {
        if self.rows.is_empty() {
            return f64::NAN;
        }
        self.rows.iter().filter(|r| r.accept_psi).count() as f64 / self.rows.len() as f64
    }

    /// Accepted over proposed region moves; every interval gets the same
    /// number of proposals, so this is the mean of per-interval rates.
    pub fn alpha_r(&self) -> Option<f64> {
        let proposed: u64 = self.rows.iter().map(|r| r.r_proposed as u64).sum();
        let accepted: u64 = self.rows.iter().map(|r| r.r_accepted as u64).sum();
        (proposed > 0).then(|| accepted as f64 / proposed as f64)
    }

    pub fn psi_draws(&self) -> Vec<Vec<f64>> {
        self.rows.iter().map(|r| r.psi.clone()).collect()
    }

    pub fn header(&self) -> Vec<String> {
        let mut h = vec!["iteration".to_owned()];
        h.extend(self.param_names.iter().cloned());
        h.extend(
            [self.r_label(), "log_target", "accept_psi", "r_accepted", "r_proposed"]
                .iter()
                .map(|s| s.to_string()),
        );
        h
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
        w.write_record(self.header())?;
        for row in &self.rows {
            let mut rec = vec![row.iteration.to_string()];
            rec.extend(row.psi.iter().map(f64::to_string));
            rec.push(row.r.to_string());
            rec.push(row.log_target.to_string());
            rec.push(u8::from(row.accept_psi).to_string());
            rec.push(row.r_accepted.to_string());
            rec.push(row.r_proposed.to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Read a CSV written by [`SampleStore::write_csv`].
    pub fn read_csv(path: impl AsRef<Path>, algorithm: Algorithm) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
        if header.len() < 6 || header[0] != "iteration" {
            return Err(Error::InvalidDataset("not a sample file".into()));
        }
        let n_par = header.len() - 6;
        let bad = |what: &str| Error::InvalidDataset(format!("bad {what} in sample file"));
        let mut store = SampleStore {
            algorithm,
            param_names: header[1..=n_par].to_vec(),
            rows: Vec::new(),
            wall_seconds: 0.0,
            expm: ExpmStats::default(),
        };
        for rec in r.records() {
            let rec = rec?;
            let f = |k: usize| rec.get(k).ok_or_else(|| bad("row"));
            let num = |k: usize| -> Result<f64> { f(k)?.parse().map_err(|_| bad("number")) };
            store.rows.push(SampleRow {
                iteration: f(0)?.parse().map_err(|_| bad("iteration"))?,
                psi: (1..=n_par).map(num).collect::<Result<_>>()?,
                r: num(n_par + 1)?,
                log_target: num(n_par + 2)?,
                accept_psi: f(n_par + 3)? == "1",
                r_accepted: f(n_par + 4)?.parse().map_err(|_| bad("count"))?,
                r_proposed: f(n_par + 5)?.parse().map_err(|_| bad("count"))?,
            });
        }
        Ok(store)
    }
}

/// Everything needed to reproduce and interpret a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub algorithm: Algorithm,
    pub seed: u64,
    pub iterations: usize,
    pub burn_in: usize,
    pub stored: usize,
    pub wall_seconds: f64,
    pub alpha_psi: f64,
    pub alpha_r: Option<f64>,
    pub expm: ExpmStats,
    /// Echo of the full run configuration, dataset included.
    pub config: serde_json::Value,
}

impl RunMetadata {
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(&mut w, self)?;
        w.write_all(b"\n")?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_reader(File::open(path)?)?)
    }
}
