//! Run configuration files and the built-in experiment presets.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::likelihood::{Ghs17Config, LikelihoodConfig};
use crate::network::{BuiltinNetwork, ReactionNetwork, TranscriptionRate, DEFAULT_DNA_COPIES};
use crate::region::RegionConfig;
use crate::sampler::{Algorithm, PilotConfig, Prior, SamplerConfig};
use crate::ssa::{observe, simulate};

/// A built-in network by name (with options) or a full inline descriptor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NetworkSpec {
    Builtin {
        builtin: BuiltinNetwork,
        /// Total DNA copies (autoregulatory only).
        #[serde(default, skip_serializing_if = "Option::is_none")]
        dna_copies: Option<i64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        transcription: Option<TranscriptionRate>,
    },
    Inline(ReactionNetwork),
}

impl NetworkSpec {
    pub fn builtin(name: BuiltinNetwork) -> Self {
        NetworkSpec::Builtin { builtin: name, dna_copies: None, transcription: None }
    }

    pub fn build(&self) -> Result<ReactionNetwork> {
        let net = match self {
            NetworkSpec::Builtin { builtin: BuiltinNetwork::Autoregulatory, dna_copies, transcription } => {
                ReactionNetwork::autoregulatory(
                    dna_copies.unwrap_or(DEFAULT_DNA_COPIES),
                    transcription.unwrap_or_default(),
                )
            }
            NetworkSpec::Builtin { builtin, dna_copies, transcription } => {
                if dna_copies.is_some() || transcription.is_some() {
                    return Err(Error::config("network", format!("{builtin} takes no options")));
                }
                ReactionNetwork::builtin(*builtin)
            }
            NetworkSpec::Inline(net) => net.clone(),
        };
        net.validate()?;
        Ok(net)
    }
}

/// Ground-truth simulation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub theta: Vec<f64>,
    pub x0: Vec<i64>,
    pub t_end: f64,
    pub dt: f64,
    pub n: usize,
    pub seed: u64,
}

impl SimulationConfig {
    pub fn validate(&self, net: &ReactionNetwork) -> Result<()> {
        if self.theta.len() != net.n_reactions() {
            return Err(Error::config("simulation.theta", format!("need {} rates", net.n_reactions())));
        }
        if self.x0.len() != net.n_species() {
            return Err(Error::config("simulation.x0", format!("need {} counts", net.n_species())));
        }
        if !(self.dt > 0.0) || self.n == 0 {
            return Err(Error::config("simulation.dt", "need dt > 0 and n >= 1"));
        }
        if self.dt * self.n as f64 > self.t_end * (1.0 + 1e-12) {
            return Err(Error::config(
                "simulation.n",
                format!("n * dt = {} exceeds t_end = {}", self.dt * self.n as f64, self.t_end),
            ));
        }
        Ok(())
    }

    pub fn run(&self, net: &ReactionNetwork) -> Result<Dataset> {
        self.validate(net)?;
        let path = simulate(net, &self.theta, &self.x0, self.t_end, self.seed)?;
        observe(&path, self.dt, self.n)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// File-name stem shared by every artefact of a run.
    pub prefix: String,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("out"), prefix: "run".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TuneConfig {
    pub pilot: PilotConfig,
    /// Truncation parameters tried by the fixed-parameter sweep.
    pub ghs17_grid: Vec<f64>,
    pub sweep_iterations: usize,
}

impl Default for TuneConfig {
    fn default() -> Self {
        Self { pilot: PilotConfig::default(), ghs17_grid: vec![0.95, 0.98, 0.99], sweep_iterations: 1000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub network: NetworkSpec,
    /// Dataset CSV; takes precedence over `simulation` when both are set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulation: Option<SimulationConfig>,
    pub prior: Prior,
    #[serde(default)]
    pub sampler: SamplerConfig,
    #[serde(default)]
    pub tune: TuneConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_reader(File::open(path)?)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(&mut w, self)?;
        w.write_all(b"\n")?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let net = self.network.build()?;
        let dim = net.n_reactions();
        if self.prior.dim() != dim {
            return Err(Error::config("prior.mean", format!("need {dim} components")));
        }
        self.prior.validate()?;
        self.sampler.validate(dim)?;
        if let Some(sim) = &self.simulation {
            sim.validate(&net)?;
        }
        if let Some(p) = &self.data {
            if !p.exists() {
                return Err(Error::config("data", format!("{} does not exist", p.display())));
            }
        }
        if self.tune.ghs17_grid.iter().any(|a| !(*a > 0.0 && *a < 1.0)) {
            return Err(Error::config("tune.ghs17_grid", "every a must lie in (0, 1)"));
        }
        Ok(())
    }

    /// The dataset file if one is configured, otherwise a fresh simulation.
    pub fn dataset(&self, net: &ReactionNetwork) -> Result<Dataset> {
        match (&self.data, &self.simulation) {
            (Some(p), _) => {
                let d = Dataset::read_csv(p)?;
                d.validate(net)?;
                Ok(d)
            }
            (None, Some(sim)) => sim.run(net),
            (None, None) => Err(Error::config("data", "need a dataset path or a simulation block")),
        }
    }

    /// Settings for one of `lv20`, `lv40`, `lv10`, `sch50`, `ar50`.
    pub fn preset(name: &str) -> Result<Self> {
        let ln = f64::ln;
        let lv_prior = Prior::new(vec![ln(0.2), ln(0.2), ln(0.02)], vec![1.0; 3])?;
        let lv = |dt: f64, n: usize| SimulationConfig {
            theta: vec![0.3, 0.4, 0.01],
            x0: vec![30, 40],
            t_end: 20.0,
            dt,
            n,
            seed: 20,
        };
        let sampler = |lambda: f64, gamma: f64, w_min: u64| SamplerConfig {
            algorithm: Algorithm::Nmesa,
            lambda,
            likelihood: LikelihoodConfig { region: RegionConfig::new(gamma, w_min), ..Default::default() },
            ghs17: Ghs17Config { a: 0.98 },
            ..Default::default()
        };
        let (network, simulation, prior, sampler) = match name {
            "lv20" => (BuiltinNetwork::LotkaVolterra, lv(1.0, 20), lv_prior, sampler(1.4, 0.1, 10)),
            "lv40" => (BuiltinNetwork::LotkaVolterra, lv(0.5, 40), lv_prior, sampler(1.4, 0.1, 7)),
            "lv10" => (BuiltinNetwork::LotkaVolterra, lv(2.0, 10), lv_prior, sampler(1.4, 0.1, 20)),
            "sch50" => (
                BuiltinNetwork::Schlogel,
                SimulationConfig { theta: vec![3.0, 0.5, 0.5, 3.0], x0: vec![0], t_end: 200.0, dt: 4.0, n: 50, seed: 50 },
                Prior::new(vec![0.0; 4], vec![1.0; 4])?,
                sampler(0.9, 0.4, 20),
            ),
            "ar50" => {
                let mut sd = vec![1.0; 8];
                sd[4] = 0.1f64.sqrt();
                (
                    BuiltinNetwork::Autoregulatory,
                    SimulationConfig {
                        theta: vec![0.1, 0.7, 0.7, 0.2, 0.1, 0.9, 0.3, 0.1],
                        x0: vec![5, 5, 5, 1],
                        t_end: 25.0,
                        dt: 0.5,
                        n: 50,
                        seed: 25,
                    },
                    Prior::new(vec![ln(0.2); 8], sd)?,
                    sampler(1.0, 0.1, 2),
                )
            }
            other => return Err(Error::config("preset", format!("unknown preset `{other}`"))),
        };
        Ok(RunConfig {
            network: NetworkSpec::builtin(network),
            data: None,
            simulation: Some(simulation),
            prior,
            sampler,
            tune: TuneConfig::default(),
            output: OutputConfig { prefix: name.to_owned(), ..Default::default() },
        })
    }

    pub const PRESETS: [&'static str; 5] = ["lv20", "lv40", "lv10", "sch50", "ar50"];
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate_and_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        for name in RunConfig::PRESETS {
            let cfg = RunConfig::preset(name).unwrap();
            cfg.validate().unwrap();
            let p = dir.path().join(format!("{name}.json"));
            cfg.save(&p).unwrap();
            let back = RunConfig::load(&p).unwrap();
            assert_eq!(back, cfg);
            let text = serde_json::to_string(&back).unwrap();
            assert_eq!(serde_json::from_str::<RunConfig>(&text).unwrap(), back);
        }
        assert!(RunConfig::preset("lv30").is_err());
    }

    #[test]
    fn lv_presets_share_one_path() {
        let net = ReactionNetwork::lotka_volterra();
        let d20 = RunConfig::preset("lv20").unwrap().dataset(&net).unwrap();
        let d40 = RunConfig::preset("lv40").unwrap().dataset(&net).unwrap();
        let d10 = RunConfig::preset("lv10").unwrap().dataset(&net).unwrap();
        assert_eq!((d20.n(), d40.n(), d10.n()), (20, 40, 10));
        for i in 0..20 {
            assert_eq!(d20.observations[i], d40.observations[2 * i + 1]);
        }
        for i in 0..10 {
            assert_eq!(d10.observations[i], d20.observations[2 * i + 1]);
        }
    }

    #[test]
    fn inline_and_optioned_networks() {
        let spec: NetworkSpec = serde_json::from_str(r#"{"builtin":"autoregulatory","dna_copies":10}"#).unwrap();
        let net = spec.build().unwrap();
        assert_eq!(net.aux["G"], 10);
        assert_eq!(net.hard_upper[3], Some(10));
        let inline = NetworkSpec::Inline(ReactionNetwork::schlogel());
        let text = serde_json::to_string(&inline).unwrap();
        assert_eq!(serde_json::from_str::<NetworkSpec>(&text).unwrap(), inline);
        let bad: NetworkSpec = serde_json::from_str(r#"{"builtin":"schlogel","dna_copies":3}"#).unwrap();
        assert!(bad.build().is_err());
    }

    #[test]
    fn simulation_horizon_checked_up_front() {
        let mut cfg = RunConfig::preset("lv20").unwrap();
        cfg.simulation.as_mut().unwrap().n = 21;
        assert!(matches!(cfg.validate(), Err(Error::Config { field, .. }) if field == "simulation.n"));
    }
}
