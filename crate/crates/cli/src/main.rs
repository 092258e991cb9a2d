//! `mesa`: simulate datasets, tune proposals, run samplers, summarize chains.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use mesa_core::config::RunConfig;
use mesa_core::diagnostics::{summarize, ChainSummary};
use mesa_core::expm::MethodChoice;
use mesa_core::generator::build_generator;
use mesa_core::sampler::{ghs17_sweep, identity, pilot_tune, Matrix, Sampler};
use mesa_core::ssa::{observe, simulate};
use mesa_core::{Algorithm, Dataset, DatasetSidecar, Error, ReactionNetwork, RunMetadata, SampleStore};

const OUT_DIR_ENV: &str = "MESA_OUT_DIR";

#[derive(Parser)]
#[command(name = "mesa", version, about = "Exact Bayesian inference for discretely observed Markov jump processes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a dataset with the stochastic simulation algorithm.
    Simulate(SimulateArgs),
    /// Pilot-tune the proposal covariance; optionally sweep the GHS17 truncation parameter.
    Tune(TuneArgs),
    /// Run a sampler and write samples, metadata and a summary.
    Run(RunArgs),
    /// Summarize a samples CSV.
    Summarize(SummarizeArgs),
}

#[derive(Args)]
struct Source {
    /// JSON run configuration.
    #[arg(long, conflicts_with_all = ["preset", "meta"])]
    config: Option<PathBuf>,
    /// Built-in preset: lv20, lv40, lv10, sch50, ar50.
    #[arg(long, conflicts_with = "meta")]
    preset: Option<String>,
    /// Re-use the configuration and dataset echoed in a run's metadata JSON.
    #[arg(long)]
    meta: Option<PathBuf>,
}

#[derive(Args)]
struct Output {
    #[arg(long, env = OUT_DIR_ENV)]
    out_dir: Option<PathBuf>,
    /// File-name stem for every artefact.
    #[arg(long)]
    prefix: Option<String>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    source: Source,
    #[command(flatten)]
    output: Output,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    theta: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    x0: Option<Vec<i64>>,
    #[arg(long)]
    t_end: Option<f64>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    n: Option<usize>,
    /// Extra observation grids `DT:N` taken from the same simulated path.
    #[arg(long = "also", value_name = "DT:N")]
    also: Vec<String>,
}

#[derive(Args)]
struct SamplerOverrides {
    /// Dataset CSV (overrides the config's dataset or simulation block).
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    algorithm: Option<Algorithm>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    w_min: Option<u64>,
    /// Widen every species while any is narrower than w_min.
    #[arg(long)]
    joint_w_min: bool,
    /// GHS17 truncation parameter.
    #[arg(long)]
    a: Option<f64>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long)]
    thin: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    init_psi: Option<Vec<f64>>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long, value_parser = parse_method)]
    expm_method: Option<MethodChoice>,
    #[arg(long)]
    s_max: Option<u32>,
    #[arg(long)]
    r_max: Option<usize>,
    /// Threads for per-interval likelihood evaluation.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct TuneArgs {
    #[command(flatten)]
    source: Source,
    #[command(flatten)]
    output: Output,
    #[command(flatten)]
    sampler: SamplerOverrides,
    /// Total pilot iterations across all stages.
    #[arg(long)]
    pilot_iterations: Option<usize>,
    #[arg(long)]
    stages: Option<usize>,
    #[arg(long)]
    pilot_lambda: Option<f64>,
    /// Skip the pilot (only meaningful with --sweep).
    #[arg(long)]
    no_pilot: bool,
    /// Sweep the GHS17 truncation parameter at fixed log-rates.
    #[arg(long)]
    sweep: bool,
    #[arg(long, value_delimiter = ',')]
    grid: Option<Vec<f64>>,
    #[arg(long)]
    sweep_iterations: Option<usize>,
    /// Log-rates for the sweep; defaults to the pilot mean, else the prior mean.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    sweep_psi: Option<Vec<f64>>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    source: Source,
    #[command(flatten)]
    output: Output,
    #[command(flatten)]
    sampler: SamplerOverrides,
    /// Proposal covariance: output of `tune`, or a bare JSON matrix.
    #[arg(long, conflicts_with = "identity")]
    sigma: Option<PathBuf>,
    /// Propose with the identity covariance when none is configured.
    #[arg(long)]
    identity: bool,
    /// Append one JSON line per matrix-exponential call to this file.
    #[arg(long)]
    run_log: Option<PathBuf>,
    /// Write generator `R` of interval `I` at the initial rates as COO text.
    #[arg(long, value_name = "I:R")]
    dump_generator: Vec<String>,
}

#[derive(Args)]
struct SummarizeArgs {
    #[arg(long)]
    samples: PathBuf,
    /// Metadata JSON of the run (algorithm, timing, settings).
    #[arg(long)]
    meta: Option<PathBuf>,
    #[arg(long, required_unless_present = "meta")]
    algorithm: Option<Algorithm>,
    #[arg(long)]
    wall_seconds: Option<f64>,
    /// Print JSON instead of the text table.
    #[arg(long)]
    json: bool,
    /// Also write the JSON summary here.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_method(s: &str) -> std::result::Result<MethodChoice, String> {
    serde_json::from_value(Value::String(s.replace('-', "_"))).map_err(|_| {
        format!("unknown method `{s}` (auto, uniformisation, scale_square)")
    })
}

fn parse_pair(s: &str, what: &str) -> Result<(String, String)> {
    let (a, b) = s.split_once(':').with_context(|| format!("{what} must look like A:B, got `{s}`"))?;
    Ok((a.trim().to_owned(), b.trim().to_owned()))
}

/// Configuration plus a dataset embedded in it (when loaded from metadata).
struct Loaded {
    cfg: RunConfig,
    embedded: Option<Dataset>,
}

impl Source {
    fn load(&self) -> Result<Loaded> {
        if let Some(p) = &self.config {
            let cfg = RunConfig::load(p).with_context(|| format!("loading {}", p.display()))?;
            return Ok(Loaded { cfg, embedded: None });
        }
        if let Some(name) = &self.preset {
            return Ok(Loaded { cfg: RunConfig::preset(name)?, embedded: None });
        }
        if let Some(p) = &self.meta {
            let meta = RunMetadata::read(p).with_context(|| format!("loading {}", p.display()))?;
            let run = meta.config.get("run").cloned().ok_or_else(|| Error::config("config.run", "missing"))?;
            let cfg: RunConfig = serde_json::from_value(run)?;
            let embedded = match meta.config.get("dataset") {
                Some(d) if !d.is_null() => Some(serde_json::from_value(d.clone())?),
                _ => None,
            };
            return Ok(Loaded { cfg, embedded });
        }
        Err(Error::config("config", "give --config, --preset or --meta").into())
    }
}

impl Output {
    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(d) = &self.out_dir {
            cfg.output.dir = d.clone();
        }
        if let Some(p) = &self.prefix {
            cfg.output.prefix = p.clone();
        }
    }
}

impl SamplerOverrides {
    fn apply(&self, loaded: &mut Loaded) {
        let cfg = &mut loaded.cfg;
        if let Some(p) = &self.data {
            cfg.data = Some(p.clone());
            loaded.embedded = None;
        }
        let s = &mut cfg.sampler;
        let set = |dst: &mut f64, v: Option<f64>| {
            if let Some(v) = v {
                *dst = v;
            }
        };
        if let Some(a) = self.algorithm {
            s.algorithm = a;
        }
        set(&mut s.lambda, self.lambda);
        set(&mut s.likelihood.region.gamma, self.gamma);
        set(&mut s.ghs17.a, self.a);
        set(&mut s.likelihood.expm.epsilon, self.epsilon);
        if let Some(w) = self.w_min {
            s.likelihood.region.w_min = w;
        }
        if self.joint_w_min {
            s.likelihood.region.joint_w_min = true;
        }
        if let Some(v) = self.iterations {
            s.iterations = v;
        }
        if let Some(v) = self.burn_in {
            s.burn_in = v;
        }
        if let Some(v) = self.thin {
            s.thin = v;
        }
        if let Some(v) = self.seed {
            s.seed = v;
        }
        if let Some(v) = &self.init_psi {
            s.init_psi = Some(v.clone());
        }
        if let Some(v) = self.expm_method {
            s.likelihood.expm.method = v;
        }
        if let Some(v) = self.s_max {
            s.likelihood.expm.s_max = v;
        }
        if let Some(v) = self.r_max {
            s.likelihood.r_max = v;
        }
        if let Some(v) = self.workers {
            s.likelihood.workers = v;
        }
    }
}

impl Loaded {
    fn dataset(&self, net: &ReactionNetwork) -> Result<Dataset> {
        match &self.embedded {
            Some(d) => {
                d.validate(net)?;
                Ok(d.clone())
            }
            None => Ok(self.cfg.dataset(net)?),
        }
    }
}

fn artefact(cfg: &RunConfig, suffix: &str) -> Result<PathBuf> {
    fs::create_dir_all(&cfg.output.dir)
        .with_context(|| format!("creating output directory {}", cfg.output.dir.display()))?;
    Ok(cfg.output.dir.join(format!("{}_{suffix}", cfg.output.prefix)))
}

fn write_json(path: &Path, v: &Value) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, v)?;
    w.write_all(b"\n")?;
    Ok(())
}

fn cmd_simulate(args: SimulateArgs) -> Result<()> {
    let mut loaded = args.source.load()?;
    args.output.apply(&mut loaded.cfg);
    let cfg = &mut loaded.cfg;
    let net = cfg.network.build()?;
    let sim = cfg.simulation.as_mut().ok_or_else(|| Error::config("simulation", "no simulation block"))?;
    if let Some(v) = args.seed {
        sim.seed = v;
    }
    if let Some(v) = args.theta {
        sim.theta = v;
    }
    if let Some(v) = args.x0 {
        sim.x0 = v;
    }
    if let Some(v) = args.t_end {
        sim.t_end = v;
    }
    if let Some(v) = args.dt {
        sim.dt = v;
    }
    if let Some(v) = args.n {
        sim.n = v;
    }
    sim.validate(&net)?;
    let mut grids = vec![(sim.dt, sim.n, String::from("data"))];
    for g in &args.also {
        let (dt, n) = parse_pair(g, "--also")?;
        let dt: f64 = dt.parse().map_err(|_| Error::config("also", format!("bad dt in `{g}`")))?;
        let n: usize = n.parse().map_err(|_| Error::config("also", format!("bad n in `{g}`")))?;
        if !(dt > 0.0) || n == 0 || dt * n as f64 > sim.t_end * (1.0 + 1e-12) {
            return Err(Error::config("also", format!("grid `{g}` must satisfy dt > 0, n >= 1, n*dt <= t_end")).into());
        }
        grids.push((dt, n, format!("dt{dt}_n{n}_data")));
    }
    let sim = sim.clone();
    let path = simulate(&net, &sim.theta, &sim.x0, sim.t_end, sim.seed)?;
    for (dt, n, stem) in grids {
        let data = observe(&path, dt, n)?;
        let csv = artefact(cfg, &format!("{stem}.csv"))?;
        data.write_csv(&csv, &net.species)?;
        let side = DatasetSidecar {
            network: net.name.clone(),
            seed: sim.seed,
            theta: sim.theta.clone(),
            x0: sim.x0.clone(),
            t_end: sim.t_end,
            dt,
            n,
        };
        side.write(csv.with_extension("json"))?;
        println!("{}", csv.display());
    }
    Ok(())
}

fn read_sigma(path: &Path) -> Result<Matrix> {
    let v: Value = serde_json::from_reader(File::open(path).with_context(|| format!("opening {}", path.display()))?)?;
    let m = match v.get("sigma_hat") {
        Some(s) => s.clone(),
        None => v,
    };
    serde_json::from_value(m).map_err(|e| Error::config("sigma", e.to_string()).into())
}

fn cmd_tune(args: TuneArgs) -> Result<()> {
    let mut loaded = args.source.load()?;
    args.output.apply(&mut loaded.cfg);
    args.sampler.apply(&mut loaded);
    let cfg = &mut loaded.cfg;
    if let Some(v) = args.pilot_iterations {
        cfg.tune.pilot.iterations = v;
    }
    if let Some(v) = args.stages {
        cfg.tune.pilot.stages = v;
    }
    if args.pilot_lambda.is_some() {
        cfg.tune.pilot.lambda = args.pilot_lambda;
    }
    if let Some(g) = args.grid {
        cfg.tune.ghs17_grid = g;
    }
    if let Some(v) = args.sweep_iterations {
        cfg.tune.sweep_iterations = v;
    }
    cfg.validate()?;
    let cfg = loaded.cfg.clone();
    let net = cfg.network.build()?;
    let data = loaded.dataset(&net)?;

    let mut pilot_mean = None;
    if !args.no_pilot {
        let tuned = pilot_tune(&net, &data, &cfg.prior, &cfg.sampler, &cfg.tune.pilot)?;
        let path = artefact(&cfg, "sigma.json")?;
        write_json(
            &path,
            &json!({
                "sigma_hat": tuned.sigma_hat,
                "chol": tuned.chol,
                "mean": tuned.mean,
                "ridged": tuned.ridged,
                "stage_alpha_psi": tuned.stage_alpha_psi,
                "wall_seconds": tuned.wall_seconds,
                "expm": tuned.expm,
                "pilot": cfg.tune.pilot,
                "seed": cfg.sampler.seed,
            }),
        )?;
        println!("{}", path.display());
        let alphas: Vec<String> = tuned.stage_alpha_psi.iter().map(|a| format!("{:.1}%", 100.0 * a)).collect();
        println!("pilot alpha_psi per stage: {}", alphas.join(" "));
        pilot_mean = Some(tuned.mean);
    } else if !args.sweep {
        bail!(Error::config("no_pilot", "nothing to do without --sweep"));
    }

    if args.sweep {
        let psi = args.sweep_psi.or(pilot_mean).unwrap_or_else(|| cfg.prior.mean.clone());
        if psi.len() != net.n_reactions() {
            bail!(Error::config("sweep_psi", format!("need {} values", net.n_reactions())));
        }
        let rows = ghs17_sweep(
            &net,
            &data,
            &psi,
            &cfg.tune.ghs17_grid,
            cfg.tune.sweep_iterations,
            cfg.sampler.seed,
            &cfg.sampler.likelihood,
        )?;
        println!("{:>6}  {:>11}  {:>9}  {:>9}  {:>9}", "a", "acceptance%", "ESS", "T(s)", "ESS/s");
        for r in &rows {
            println!(
                "{:>6.3}  {:>11.1}  {:>9.1}  {:>9.2}  {:>9.1}",
                r.a,
                100.0 * r.acceptance,
                r.ess,
                r.seconds,
                r.ess_per_second
            );
        }
        let path = artefact(&cfg, "ghs17_sweep.json")?;
        write_json(&path, &json!({ "psi": psi, "iterations": cfg.tune.sweep_iterations, "rows": rows }))?;
        println!("{}", path.display());
    }
    Ok(())
}

fn with_settings(mut s: ChainSummary, cfg: &RunConfig) -> ChainSummary {
    s.lambda = Some(cfg.sampler.lambda);
    if matches!(cfg.sampler.algorithm, Algorithm::Mesa | Algorithm::Nmesa) {
        s.gamma = Some(cfg.sampler.likelihood.region.gamma);
        s.w_min = Some(cfg.sampler.likelihood.region.w_min);
    }
    s
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let mut loaded = args.source.load()?;
    args.output.apply(&mut loaded.cfg);
    args.sampler.apply(&mut loaded);
    if let Some(p) = &args.sigma {
        loaded.cfg.sampler.sigma_hat = Some(read_sigma(p)?);
    }
    let net = loaded.cfg.network.build()?;
    if loaded.cfg.sampler.sigma_hat.is_none() {
        if !args.identity {
            bail!(Error::config("sampler.sigma_hat", "no tuned covariance; pass --sigma or request --identity"));
        }
        // recorded explicitly so the metadata alone reproduces the run
        loaded.cfg.sampler.sigma_hat = Some(identity(net.n_reactions()));
    }
    loaded.cfg.validate()?;
    let cfg = loaded.cfg.clone();
    let data = loaded.dataset(&net)?;

    let store = if cfg.sampler.algorithm == Algorithm::Exact {
        if args.run_log.is_some() || !args.dump_generator.is_empty() {
            bail!(Error::config("algorithm", "--run-log and --dump-generator need a region-based sampler"));
        }
        mesa_core::run_chain(&net, &data, &cfg.prior, &cfg.sampler)?
    } else {
        let mut sampler = Sampler::new(&net, &data, &cfg.prior, &cfg.sampler)
            .map_err(|e| Error::Chain { iteration: 0, source: Box::new(e) })?;
        let psi = sampler.state().psi.clone();
        let theta: Vec<f64> = psi.iter().map(|p| p.exp()).collect();
        for spec in &args.dump_generator {
            let (i, r) = parse_pair(spec, "--dump-generator")?;
            let i: usize = i.parse().map_err(|_| Error::config("dump_generator", format!("bad interval in `{spec}`")))?;
            let r: usize = r.parse().map_err(|_| Error::config("dump_generator", format!("bad region in `{spec}`")))?;
            if i >= data.n() || r == 0 {
                bail!(Error::config("dump_generator", format!("need 0 <= I < {} and R >= 1", data.n())));
            }
            let region = sampler.engine_mut().region(i, r)?.clone();
            let (q, _) = build_generator(&net, &theta, &region)?;
            let path = artefact(&cfg, &format!("generator_i{i}_r{r}.coo"))?;
            let mut w = BufWriter::new(File::create(&path)?);
            q.write_coo(&mut w)?;
            w.flush()?;
            println!("{}", path.display());
        }
        if let Some(p) = &args.run_log {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            let f = File::create(p).with_context(|| format!("creating {}", p.display()))?;
            sampler.engine_mut().set_run_log(Box::new(BufWriter::new(f)));
        }
        sampler.run()?
    };

    let alg = cfg.sampler.algorithm;
    let samples = artefact(&cfg, &format!("{alg}_samples.csv"))?;
    store.write_csv(&samples)?;
    let meta = RunMetadata {
        algorithm: alg,
        seed: cfg.sampler.seed,
        iterations: cfg.sampler.iterations,
        burn_in: cfg.sampler.burn_in,
        stored: store.len(),
        wall_seconds: store.wall_seconds,
        alpha_psi: store.alpha_psi(),
        alpha_r: store.alpha_r(),
        expm: store.expm.clone(),
        config: json!({ "run": cfg, "dataset": data }),
    };
    let meta_path = artefact(&cfg, &format!("{alg}_meta.json"))?;
    meta.write(&meta_path)?;
    let summary = with_settings(summarize(&store, store.wall_seconds), &cfg);
    let sum_path = artefact(&cfg, &format!("{alg}_summary.json"))?;
    write_json(&sum_path, &serde_json::to_value(&summary)?)?;
    print!("{}", summary.table());
    for p in [&samples, &meta_path, &sum_path] {
        println!("{}", p.display());
    }
    Ok(())
}

fn cmd_summarize(args: SummarizeArgs) -> Result<()> {
    let meta = args.meta.as_deref().map(RunMetadata::read).transpose()?;
    let algorithm = args.algorithm.or(meta.as_ref().map(|m| m.algorithm)).expect("clap requires one");
    let store = SampleStore::read_csv(&args.samples, algorithm)?;
    if store.is_empty() {
        bail!(Error::InvalidDataset(format!("{} has no samples", args.samples.display())));
    }
    let wall = args.wall_seconds.or(meta.as_ref().map(|m| m.wall_seconds)).unwrap_or(0.0);
    let mut summary = summarize(&store, wall);
    if let Some(run) = meta.as_ref().and_then(|m| m.config.get("run")) {
        if let Ok(cfg) = serde_json::from_value::<RunConfig>(run.clone()) {
            summary = with_settings(summary, &cfg);
        }
    }
    let value = serde_json::to_value(&summary)?;
    if let Some(p) = &args.out {
        write_json(p, &value)?;
    }
    if args.json {
        println!("{}", serde_json::to_string_pretty(&value)?);
    } else {
        print!("{}", summary.table());
    }
    Ok(())
}

fn error_json(err: &anyhow::Error) -> Value {
    let core = err.chain().find_map(|e| e.downcast_ref::<Error>());
    let causes: Vec<String> = err.chain().skip(1).map(|e| e.to_string()).collect();
    let mut body = json!({
        "kind": core.map_or("error", Error::kind),
        "message": err.to_string(),
    });
    if let Some(f) = core.and_then(Error::field) {
        body["field"] = json!(f);
    }
    if let Some(Error::Chain { iteration, .. }) = core {
        body["iteration"] = json!(iteration);
    }
    if !causes.is_empty() {
        body["causes"] = json!(causes);
    }
    json!({ "error": body })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let body = json!({ "error": { "kind": "usage", "message": e.render().to_string().trim_end() } });
            eprintln!("{body}");
            return ExitCode::from(2);
        }
    };
    let result = match cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Tune(a) => cmd_tune(a),
        Command::Run(a) => cmd_run(a),
        Command::Summarize(a) => cmd_summarize(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_json(&e));
            ExitCode::FAILURE
        }
    }
}
