//! Subcommands of the `dig` binary: `sample`, `oracle`, `bench` and
//! `gen-data`.
//!
//! Every command writes `manifest.toml` into the output directory before any
//! result file. Exit codes: 0 on success, 1 for configuration errors (the
//! message names the offending key), 2 for numerical or I/O failures during
//! the run.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use dig_core::bench::{self, BenchConfig, Method};
use dig_core::denoise::MixtureConditional;
use dig_core::model::config::{toml_error, RunConfig};
use dig_core::model::MixtureModel;
use dig_core::oracle::{gaussian_posterior_exact, gmm_posterior_exact, relaxed_posterior_exact, GaussianPosterior};
use dig_core::sampler::{initial_components, moment_hints, posterior_mean, DigConfig, DigSampler};
use dig_core::Error;
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "dig", version, about = "Diffusion-within-Gibbs posterior sampling")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Global {
    /// Root seed; every random stream is derived from it.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Output directory (created if missing).
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run DiG chains on a model config.
    Sample {
        config: PathBuf,
        #[arg(long, default_value_t = 10)]
        chains: usize,
    },
    /// Write the exact posterior of an all-Gaussian or single-GMM model.
    Oracle {
        config: PathBuf,
        /// Also write the relaxed-model posteriors.
        #[arg(long)]
        relaxed: bool,
        /// Relaxation levels for `--relaxed`; defaults to the model's own.
        #[arg(long, value_delimiter = ',')]
        eta: Vec<f64>,
    },
    /// Run the heartbeat/motion separation benchmark.
    Bench {
        /// Benchmark settings (TOML); defaults apply when omitted.
        config: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "dig")]
        methods: Vec<String>,
    },
    /// Write synthetic benchmark instances with ready-to-run configs.
    GenData {
        config: Option<PathBuf>,
        /// Grid point index.
        #[arg(long, default_value_t = 0)]
        point: usize,
        #[arg(long, default_value_t = 1)]
        instances: usize,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Sample { .. } => "sample",
            Command::Oracle { .. } => "oracle",
            Command::Bench { .. } => "bench",
            Command::GenData { .. } => "gen-data",
        }
    }
}

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::Config { .. }
            | Error::Parameter { .. }
            | Error::Dimension(_)
            | Error::InvalidModel(_)
            | Error::NoOracle(_)
            | Error::NoiseAboveTerminal { .. }
            | Error::TimeOutOfRange { .. } => CliError::Config(msg),
            Error::Io(_) | Error::Numerical(_) | Error::NotSpd(_) | Error::Denoiser(_) | Error::EmptySamples => {
                CliError::Runtime(msg)
            }
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn io_err(path: &Path, e: impl fmt::Display) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

/// Provenance record written before any result.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: Option<String>,
    pub seed: u64,
    pub out: String,
    /// Seconds since the Unix epoch; `SOURCE_DATE_EPOCH` overrides the clock.
    pub timestamp: u64,
    pub version: String,
    pub options: BTreeMap<String, String>,
}

impl RunManifest {
    fn new(cmd: &Command, global: &Global) -> Self {
        let mut options = BTreeMap::new();
        let config = match cmd {
            Command::Sample { config, chains } => {
                options.insert("chains".into(), chains.to_string());
                Some(config)
            }
            Command::Oracle { config, relaxed, eta } => {
                options.insert("relaxed".into(), relaxed.to_string());
                if !eta.is_empty() {
                    options.insert("eta".into(), join(eta));
                }
                Some(config)
            }
            Command::Bench { config, methods } => {
                options.insert("methods".into(), methods.join(","));
                config.as_ref()
            }
            Command::GenData { config, point, instances } => {
                options.insert("point".into(), point.to_string());
                options.insert("instances".into(), instances.to_string());
                config.as_ref()
            }
        };
        options.insert("threads".into(), global.threads.to_string());
        Self {
            command: cmd.name().into(),
            config: config.map(|p| p.display().to_string()),
            seed: global.seed,
            out: global.out.display().to_string(),
            timestamp: timestamp(),
            version: env!("CARGO_PKG_VERSION").into(),
            options,
        }
    }
}

fn timestamp() -> u64 {
    std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|s| s.parse().ok())
        .unwrap_or_else(|| SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()))
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn write_toml<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = toml::to_string(value).map_err(|e| io_err(path, e))?;
    fs::write(path, text).map_err(|e| io_err(path, e))
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: &Cli) -> CliResult<()> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.global.threads)
        .build()
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    pool.install(|| match &cli.command {
        Command::Sample { config, chains } => cmd_sample(config, *chains, &cli.global, &cli.command),
        Command::Oracle { config, relaxed, eta } => cmd_oracle(config, *relaxed, eta, &cli.global, &cli.command),
        Command::Bench { config, methods } => cmd_bench(config.as_deref(), methods, &cli.global, &cli.command),
        Command::GenData { config, point, instances } => {
            cmd_gen_data(config.as_deref(), *point, *instances, &cli.global, &cli.command)
        }
    })
}

fn prepare_out(global: &Global, cmd: &Command) -> CliResult<()> {
    fs::create_dir_all(&global.out).map_err(|e| io_err(&global.out, e))?;
    write_toml(&global.out.join("manifest.toml"), &RunManifest::new(cmd, global))
}

fn load_run_config(path: &Path) -> CliResult<RunConfig> {
    if !path.is_file() {
        return Err(CliError::Config(format!("config file {} not found", path.display())));
    }
    RunConfig::from_path(path).map_err(|e| match e {
        Error::Io(io) => CliError::Config(format!("{}: {io}", path.display())),
        e => e.into(),
    })
}

/// Sampler configuration described by a run config.
pub fn dig_config(rc: &RunConfig, seed: u64) -> dig_core::Result<DigConfig> {
    let s = &rc.sampler;
    let mut cfg = DigConfig::new(&rc.model, s.sweeps)
        .with_solver(s.solver)
        .with_schedule(rc.schedule)
        .with_seed(seed)
        .with_eps(s.eps)
        .with_plateau(s.plateau);
    if let Some(m) = s.anneal_sigma_max {
        cfg = cfg.with_sigma_annealing(m)?;
    }
    for (k, e) in rc.eta_max.iter().enumerate() {
        if let Some(e) = e {
            cfg = cfg.with_eta_annealing(k, *e)?;
        }
    }
    Ok(cfg)
}

#[derive(Serialize)]
struct ComponentSummary {
    index: usize,
    dim: usize,
    mean: Vec<f64>,
    std: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    rse: Option<f64>,
}

#[derive(Serialize)]
struct SampleSummary {
    chains: usize,
    sweeps: usize,
    misfit_filter: bool,
    components: Vec<ComponentSummary>,
}

pub fn cmd_sample(config: &Path, chains: usize, global: &Global, cmd: &Command) -> CliResult<()> {
    let rc = load_run_config(config)?;
    if chains == 0 {
        return Err(CliError::Config("`chains` must be at least 1".into()));
    }
    let cfg = dig_config(&rc, global.seed)?;
    let model = &rc.model;
    let y = &rc.observation.y;
    let sampler = DigSampler::with_prior_denoisers(model, y, &cfg)?;
    let init = initial_components(model, y, &moment_hints(model, &rc.init_var))?;
    prepare_out(global, cmd)?;

    let states = sampler.run_chains(chains, &init)?;
    let samples: Vec<Vec<DVector<f64>>> = states.into_iter().map(|s| s.s).collect();
    write_samples(&global.out.join("samples.csv"), &samples)?;

    let mean = posterior_mean(model, y, &samples, rc.sampler.misfit_filter)?;
    let components = mean
        .iter()
        .enumerate()
        .map(|(k, m)| {
            let n = samples.len() as f64;
            let std = (0..m.len())
                .map(|i| {
                    let mu = samples.iter().map(|s| s[k][i]).sum::<f64>() / n;
                    let var = samples.iter().map(|s| (s[k][i] - mu).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
                    var.sqrt()
                })
                .collect();
            let rse = rc.truth.as_ref().map(|t| {
                let den = t[k].norm_squared();
                (m - &t[k]).norm_squared() / if den > 0.0 { den } else { 1.0 }
            });
            ComponentSummary {
                index: k,
                dim: m.len(),
                mean: m.iter().copied().collect(),
                std,
                rse,
            }
        })
        .collect();
    write_toml(
        &global.out.join("summary.toml"),
        &SampleSummary {
            chains,
            sweeps: cfg.sweeps,
            misfit_filter: rc.sampler.misfit_filter,
            components,
        },
    )
}

/// One record per (chain, component): `chain,component,v_0,…,v_{d−1}`.
fn write_samples(path: &Path, samples: &[Vec<DVector<f64>>]) -> CliResult<()> {
    let mut w = csv::WriterBuilder::new()
        .flexible(true)
        .from_path(path)
        .map_err(|e| io_err(path, e))?;
    for (c, s) in samples.iter().enumerate() {
        for (k, v) in s.iter().enumerate() {
            let mut rec = vec![c.to_string(), k.to_string()];
            rec.extend(v.iter().map(|x| x.to_string()));
            w.write_record(&rec).map_err(|e| io_err(path, e))?;
        }
    }
    w.flush().map_err(|e| io_err(path, e))
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

#[derive(Serialize)]
struct BlockSummary {
    index: usize,
    mean: Vec<f64>,
    cov: Vec<Vec<f64>>,
}

#[derive(Serialize)]
struct GaussianSummary {
    components: Vec<BlockSummary>,
    joint_cov: Vec<Vec<f64>>,
}

impl GaussianSummary {
    fn from_posterior(p: &GaussianPosterior, blocks: usize) -> Self {
        let components = (0..blocks)
            .map(|k| {
                let (o, d) = (p.offset(k), p.partition[k]);
                BlockSummary {
                    index: k,
                    mean: p.mean.rows(o, d).iter().copied().collect(),
                    cov: rows(&p.cov.view((o, o), (d, d)).into_owned()),
                }
            })
            .collect();
        let n: usize = p.partition[..blocks].iter().sum();
        Self {
            components,
            joint_cov: rows(&p.cov.view((0, 0), (n, n)).into_owned()),
        }
    }
}

#[derive(Serialize)]
struct RelaxedSummary {
    eta: f64,
    #[serde(flatten)]
    posterior: GaussianSummary,
}

#[derive(Serialize)]
struct MixtureBlock {
    weight: f64,
    mean: Vec<f64>,
    cov: Vec<Vec<f64>>,
}

#[derive(Serialize)]
struct OracleSummary {
    kind: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    posterior: Option<GaussianSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mixture_mean: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    mixture: Vec<MixtureBlock>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    relaxed: Vec<RelaxedSummary>,
}

fn mixture_summary(m: &MixtureConditional) -> Vec<MixtureBlock> {
    m.responsibilities
        .iter()
        .zip(&m.components)
        .map(|(w, c)| MixtureBlock {
            weight: *w,
            mean: c.mean.iter().copied().collect(),
            cov: rows(&c.cov),
        })
        .collect()
}

fn relaxed_family(model: &MixtureModel, y: &DVector<f64>, etas: &[f64]) -> CliResult<Vec<RelaxedSummary>> {
    let levels: Vec<Option<f64>> = if etas.is_empty() { vec![None] } else { etas.iter().map(|e| Some(*e)).collect() };
    levels
        .into_iter()
        .map(|eta| {
            let per: Vec<f64> = model
                .components
                .iter()
                .map(|c| if c.is_relaxed() { eta.unwrap_or(c.relax_eta) } else { 0.0 })
                .collect();
            let p = relaxed_posterior_exact(model, y, &per)?;
            Ok(RelaxedSummary {
                eta: eta.unwrap_or_else(|| per.iter().copied().fold(0.0, f64::max)),
                posterior: GaussianSummary::from_posterior(&p, model.num_components()),
            })
        })
        .collect()
}

pub fn cmd_oracle(config: &Path, relaxed: bool, etas: &[f64], global: &Global, cmd: &Command) -> CliResult<()> {
    let rc = load_run_config(config)?;
    let model = &rc.model;
    let y = &rc.observation.y;
    if let Some(e) = etas.iter().find(|e| !(**e > 0.0 && e.is_finite())) {
        return Err(CliError::Config(format!("`eta` values must be positive, got {e}")));
    }
    let summary = if model.all_gaussian() {
        let p = gaussian_posterior_exact(model, y)?;
        OracleSummary {
            kind: "gaussian",
            posterior: Some(GaussianSummary::from_posterior(&p, model.num_components())),
            mixture_mean: None,
            mixture: Vec::new(),
            relaxed: if relaxed { relaxed_family(model, y, etas)? } else { Vec::new() },
        }
    } else if model.num_components() == 1 {
        if relaxed {
            return Err(Error::NoOracle("relaxed posteriors need all-Gaussian priors".into()).into());
        }
        let m = gmm_posterior_exact(model, y)?;
        OracleSummary {
            kind: "gmm",
            posterior: None,
            mixture_mean: Some(m.mean().iter().copied().collect()),
            mixture: mixture_summary(&m),
            relaxed: Vec::new(),
        }
    } else {
        return Err(Error::NoOracle(format!(
            "{} components with a non-Gaussian prior have no closed-form posterior",
            model.num_components()
        ))
        .into());
    };
    prepare_out(global, cmd)?;
    write_toml(&global.out.join("oracle.toml"), &summary)
}

fn load_bench_config(path: Option<&Path>) -> CliResult<BenchConfig> {
    let cfg = match path {
        None => BenchConfig::default(),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            toml::from_str(&text).map_err(|e| CliError::from(toml_error(e)))?
        }
    };
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Serialize)]
struct BenchSummary {
    rows: Vec<bench::BenchRow>,
}

pub fn cmd_bench(config: Option<&Path>, methods: &[String], global: &Global, cmd: &Command) -> CliResult<()> {
    let cfg = load_bench_config(config)?;
    let methods = methods
        .iter()
        .map(|m| Method::from_str(m.trim()))
        .collect::<Result<Vec<_>, _>>()?;
    if methods.is_empty() {
        return Err(CliError::Config("`methods` is empty".into()));
    }
    prepare_out(global, cmd)?;
    let rows = bench::run_bench(&cfg, &methods, global.seed)?;
    let path = global.out.join("rse.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| io_err(&path, e))?;
    w.write_record(["sir_db", "snr_db", "method", "instances", "rse_s1", "rse_s2"])
        .map_err(|e| io_err(&path, e))?;
    for r in &rows {
        w.write_record([
            r.sir_db.to_string(),
            r.snr_db.to_string(),
            r.method.to_string(),
            r.instances.to_string(),
            r.rse_s1.to_string(),
            r.rse_s2.to_string(),
        ])
        .map_err(|e| io_err(&path, e))?;
    }
    w.flush().map_err(|e| io_err(&path, e))?;
    write_toml(&global.out.join("summary.toml"), &BenchSummary { rows })
}

/// Model config for one generated instance, mirroring the benchmark model.
fn instance_config(cfg: &BenchConfig, inst: &bench::Instance) -> CliResult<String> {
    let sigma_v = inst.mixture.sigma_v;
    let sched = bench::schedule_for(cfg.anneal_factor * sigma_v)?;
    let d = inst.mixture.y.len();
    let p2 = inst.mixture.s2.norm_squared() / d as f64;
    let fmt_vec = |v: &DVector<f64>| format!("[{}]", v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", "));
    let dig_core::schedule::NoiseKind::Exponential { alpha } = sched.kind else {
        unreachable!("benchmark schedules are exponential")
    };
    Ok(format!(
        "sigma_v = {sigma_v}\n\n\
         [schedule]\nkind = \"exponential\"\nalpha = {alpha}\nt_max = {t_max}\n\n\
         [sampler]\nsweeps = {sweeps}\nsteps = {steps}\ngrid = \"uniform-sigma\"\nanneal_sigma_max = {amax}\nmisfit_filter = {mf}\n\n\
         [[components]]\ndim = {d}\ninit_var = 1.0\nsensing = {{ kind = \"identity\" }}\nprior = {{ kind = \"fourier-l1\", lambda = {fl} }}\n\n\
         [[components]]\ndim = {d}\ninit_var = {p2}\nsensing = {{ kind = \"identity\" }}\nprior = {{ kind = \"smooth\", lambda = {sl} }}\n\n\
         [observation]\nfile = \"y.csv\"\n\n\
         [truth]\ncomponents = [{s1}, {s2}]\n",
        t_max = sched.t_max,
        sweeps = cfg.sweeps,
        steps = cfg.steps,
        amax = cfg.anneal_factor * sigma_v,
        mf = cfg.misfit_filter,
        fl = cfg.fourier_lambda,
        sl = cfg.smooth_lambda,
        s1 = fmt_vec(&inst.mixture.s1),
        s2 = fmt_vec(&inst.mixture.s2),
    ))
}

pub fn cmd_gen_data(
    config: Option<&Path>,
    point: usize,
    instances: usize,
    global: &Global,
    cmd: &Command,
) -> CliResult<()> {
    let cfg = load_bench_config(config)?;
    if point >= cfg.grid.len() {
        return Err(CliError::Config(format!(
            "`point` {point} is outside the grid of {} conditions",
            cfg.grid.len()
        )));
    }
    prepare_out(global, cmd)?;
    for i in 0..instances {
        let inst = bench::gen_instance(&cfg, point, i, global.seed)?;
        let dir = global.out.join(format!("instance_{i:03}"));
        fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        let path = dir.join("signals.csv");
        let mut w = csv::Writer::from_path(&path).map_err(|e| io_err(&path, e))?;
        w.write_record(["y", "s1", "s2", "noise"]).map_err(|e| io_err(&path, e))?;
        let m = &inst.mixture;
        for j in 0..m.y.len() {
            w.write_record([m.y[j], m.s1[j], m.s2[j], m.noise[j]].map(|x| x.to_string()))
                .map_err(|e| io_err(&path, e))?;
        }
        w.flush().map_err(|e| io_err(&path, e))?;
        let ypath = dir.join("y.csv");
        let ytext: String = m.y.iter().map(|x| format!("{x}\n")).collect();
        fs::write(&ypath, ytext).map_err(|e| io_err(&ypath, e))?;
        let cpath = dir.join("config.toml");
        fs::write(&cpath, instance_config(&cfg, &inst)?).map_err(|e| io_err(&cpath, e))?;
    }
    Ok(())
}
