//! Orchestration behind the `preb-sim` binary: runs experiments from a
//! config, persists timelines and reports, compares against the exact NESS.

pub mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, Context};
use serde::{Deserialize, Serialize};

use preb_core::chainmap::ChainBath;
use preb_core::negf::ness_observables;
use preb_core::preb::{
    certify_convergence, ness_detector, reconstruct_timeline, run_continuous, run_preb, Backend, ConvergenceReport,
    DenseBackend, FreeFermionBackend, TebdBackend, Timeline,
};
use preb_core::spectral::{decay_profile, memory_time};
use preb_core::system::Observables;
use preb_core::tebd::TruncationLog;

pub use config::{parse_config, BackendKind, ExperimentConfig, Mode};

/// Failure classes, mapped one-to-one onto exit codes.
#[derive(Debug)]
pub enum CliError {
    Config(anyhow::Error),
    Backend(anyhow::Error),
    Comparison(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Backend(_) => 2,
            CliError::Comparison(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(e) => write!(f, "configuration error: {e:#}"),
            CliError::Backend(e) => write!(f, "backend error: {e:#}"),
            CliError::Comparison(m) => write!(f, "comparison failed: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

pub type CliResult<T> = std::result::Result<T, CliError>;

fn config_err(e: impl Into<anyhow::Error>) -> CliError {
    CliError::Config(e.into())
}

fn backend_err(e: impl Into<anyhow::Error>) -> CliError {
    CliError::Backend(e.into())
}

pub enum AnyBackend {
    FreeFermion(FreeFermionBackend),
    Dense(DenseBackend),
    Tebd(TebdBackend),
}

macro_rules! with_backend {
    ($any:expr, $b:ident => $body:expr) => {
        match $any {
            AnyBackend::FreeFermion($b) => $body,
            AnyBackend::Dense($b) => $body,
            AnyBackend::Tebd($b) => $body,
        }
    };
}

pub fn make_backend(cfg: &ExperimentConfig) -> CliResult<AnyBackend> {
    let problem = cfg.problem().map_err(config_err)?;
    Ok(match cfg.run.backend {
        BackendKind::Freefermion => AnyBackend::FreeFermion(FreeFermionBackend { problem }),
        BackendKind::Dense => AnyBackend::Dense(DenseBackend { problem }),
        BackendKind::Tebd => AnyBackend::Tebd(TebdBackend { problem, dt: cfg.run.dt, truncation: cfg.truncation() }),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Meta {
    pub config: ExperimentConfig,
    pub version: String,
    pub command: String,
    pub bath_sites: [usize; 2],
    pub memory_time: Option<f64>,
    pub wall_time_s: f64,
    pub samples: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truncation: Option<TruncationLog>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Creates the output directory and refuses to clobber `files` unless forced.
fn prepare_output(dir: &Path, files: &[&str], force: bool) -> CliResult<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display())).map_err(backend_err)?;
    for f in files {
        let p = dir.join(f);
        if p.exists() && !force {
            return Err(config_err(anyhow!("{} exists; pass --force to overwrite", p.display())));
        }
    }
    Ok(())
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(backend_err)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display())).map_err(backend_err)
}

fn write_timeline(path: &Path, tl: &Timeline) -> CliResult<()> {
    let file = fs::File::create(path).with_context(|| format!("writing {}", path.display())).map_err(backend_err)?;
    tl.write_csv(std::io::BufWriter::new(file)).map_err(backend_err)
}

fn evolve<B: Backend>(b: &B, cfg: &ExperimentConfig) -> preb_core::error::Result<(Timeline, Option<TruncationLog>)> {
    match cfg.run.mode {
        Mode::Continuous => {
            let t_max = cfg.run.t_max.unwrap_or_default();
            let stride = cfg.output.stride.unwrap_or(t_max);
            let run = run_continuous(b, t_max, stride)?;
            let log = b.truncation_log(&run.state);
            Ok((run.timeline, log))
        }
        Mode::Preb if cfg.run.t1.len() == 1 => {
            let schedule = cfg.schedule(cfg.run.t1[0]).map_err(|e| preb_core::error::Error::Schedule(e.to_string()))?;
            let run = run_preb(b, &schedule)?;
            let log = b.truncation_log(&run.state);
            Ok((run.timeline, log))
        }
        Mode::Preb => {
            let tau = cfg.run.tau.unwrap_or_default();
            let tl = reconstruct_timeline(b, tau, &cfg.run.t1, cfg.run.n_steps.unwrap_or(0), cfg.run.dt, cfg.run.tolerance)?;
            Ok((tl, None))
        }
    }
}

/// Runs the configured experiment in memory.
pub fn simulate(cfg: &ExperimentConfig) -> CliResult<(Timeline, Option<TruncationLog>)> {
    let backend = make_backend(cfg)?;
    with_backend!(&backend, b => evolve(b, cfg)).map_err(backend_err)
}

/// Runs the configured experiment and writes `timeline.csv` and `meta.json`
/// to the output directory. A backend failure still writes `meta.json`.
pub fn run_experiment(cfg: &ExperimentConfig, command: &str, force: bool) -> CliResult<PathBuf> {
    let dir = cfg.output.directory.clone();
    prepare_output(&dir, &["timeline.csv", "meta.json"], force)?;
    let backend = make_backend(cfg)?;
    let problem = with_backend!(&backend, b => b.problem());
    let duration = cfg.cycle_duration().unwrap_or(0.0);
    let mut meta = Meta {
        config: cfg.clone(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        command: command.to_string(),
        bath_sites: problem.bath_sites_for(duration),
        memory_time: problem.memory_time(50.0),
        wall_time_s: 0.0,
        samples: 0,
        truncation: None,
        error: None,
    };
    let start = Instant::now();
    let result = with_backend!(&backend, b => evolve(b, cfg));
    meta.wall_time_s = start.elapsed().as_secs_f64();
    match result {
        Ok((timeline, log)) => {
            meta.samples = timeline.samples.len();
            meta.truncation = log;
            write_timeline(&dir.join("timeline.csv"), &timeline)?;
            write_json(&dir.join("meta.json"), &meta)?;
            Ok(dir)
        }
        Err(e) => {
            meta.error = Some(e.to_string());
            write_json(&dir.join("meta.json"), &meta)?;
            Err(backend_err(e))
        }
    }
}

/// Same as [`run_experiment`] in PReB mode over the given offsets.
pub fn reconstruct(cfg: &ExperimentConfig, t1s: Option<Vec<f64>>, force: bool) -> CliResult<PathBuf> {
    let mut cfg = cfg.clone();
    cfg.run.mode = Mode::Preb;
    if let Some(t1s) = t1s {
        cfg.run.t1 = t1s;
    }
    cfg.validate().map_err(config_err)?;
    run_experiment(&cfg, "reconstruct", force)
}

/// τ-doubling convergence check; writes `convergence.json`. Non-convergence
/// is a verdict, not an error.
pub fn certify(
    cfg: &ExperimentConfig,
    tau0: f64,
    tolerance: Option<f64>,
    max_doublings: usize,
    horizon: Option<f64>,
    force: bool,
) -> CliResult<ConvergenceReport> {
    if !(tau0 > 0.0) {
        return Err(config_err(anyhow!("--tau0: must be positive, got {tau0}")));
    }
    let tol = tolerance.unwrap_or(cfg.run.tolerance);
    let horizon = horizon
        .or(cfg.run.t_max)
        .or_else(|| Some(cfg.run.tau? * cfg.run.n_steps? as f64))
        .ok_or_else(|| config_err(anyhow!("run.t_max: a horizon is required (or pass --horizon)")))?;
    let dir = cfg.output.directory.clone();
    prepare_output(&dir, &["convergence.json"], force)?;
    let backend = make_backend(cfg)?;
    let report = certify_with(&backend, tau0, tol, max_doublings, horizon, cfg.run.dt)?;
    write_json(&dir.join("convergence.json"), &report)?;
    Ok(report)
}

pub fn certify_with(
    backend: &AnyBackend,
    tau0: f64,
    tolerance: f64,
    max_doublings: usize,
    horizon: f64,
    dt: f64,
) -> CliResult<ConvergenceReport> {
    with_backend!(backend, b => certify_convergence(b, tau0, tolerance, max_doublings, horizon, dt)).map_err(backend_err)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NessFile {
    pub observables: Observables,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<ExperimentConfig>,
}

/// Exact steady state of the quadratic system.
pub fn ness(cfg: &ExperimentConfig) -> CliResult<NessFile> {
    if cfg.system.interaction != 0.0 {
        return Err(config_err(anyhow!("system.interaction: the exact NESS needs V = 0")));
    }
    let spec = cfg.system_spec().map_err(config_err)?;
    let [b1, b2] = cfg.bath_specs().map_err(config_err)?;
    let observables = ness_observables(&spec.single_particle(), &b1.density, &b2.density, &b1.thermal, &b2.thermal)
        .map_err(backend_err)?;
    Ok(NessFile { observables, config: Some(cfg.clone()) })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Comparison {
    pub tail: f64,
    pub tail_average: Observables,
    pub reference: Observables,
    pub max_deviation: f64,
    pub tolerance: f64,
    pub current_spread: f64,
    pub steady_from: Option<f64>,
    pub pass: bool,
}

/// Tail-averaged observables of a timeline against a NESS file.
pub fn compare(ness_path: &Path, timeline_path: &Path, tail: f64, tolerance: f64, window: Option<f64>) -> CliResult<Comparison> {
    let ness: NessFile = serde_json::from_str(
        &fs::read_to_string(ness_path).with_context(|| format!("reading {}", ness_path.display())).map_err(config_err)?,
    )
    .with_context(|| format!("parsing {}", ness_path.display()))
    .map_err(config_err)?;
    let file = fs::File::open(timeline_path)
        .with_context(|| format!("reading {}", timeline_path.display()))
        .map_err(config_err)?;
    let tl = Timeline::read_csv(file).map_err(config_err)?;
    let avg = tl.tail_average(tail).ok_or_else(|| config_err(anyhow!("{} has no samples", timeline_path.display())))?;
    if avg.occupations.len() != ness.observables.occupations.len() {
        return Err(config_err(anyhow!(
            "site count mismatch: timeline has {}, NESS has {}",
            avg.occupations.len(),
            ness.observables.occupations.len()
        )));
    }
    let max_deviation = avg.max_deviation(&ness.observables);
    let cmp = Comparison {
        tail,
        current_spread: avg.current_spread(),
        steady_from: ness_detector(&tl.samples, window.unwrap_or(tail), tolerance),
        tail_average: avg,
        reference: ness.observables,
        max_deviation,
        tolerance,
        pass: max_deviation <= tolerance,
    };
    Ok(cmp)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChainDump {
    pub baths: Vec<ChainBath>,
}

pub fn chainmap(cfg: &ExperimentConfig, sites: Option<usize>) -> CliResult<ChainDump> {
    let mut problem = cfg.problem().map_err(config_err)?;
    if sites.is_some() {
        problem = problem.with_bath_sites(sites);
    }
    let (a, b) = problem.baths_for(cfg.cycle_duration().unwrap_or(0.0)).map_err(backend_err)?;
    Ok(ChainDump { baths: vec![a, b] })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MemoryDump {
    pub threshold: f64,
    pub baths: Vec<BathMemory>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BathMemory {
    pub memory_time: Option<f64>,
    /// `(t, |a(t)|/max|a|, |b(t)|/max|b|)`.
    pub profile: Vec<(f64, f64, f64)>,
}

pub fn memory(cfg: &ExperimentConfig, t_max: f64) -> CliResult<MemoryDump> {
    let baths = cfg
        .bath_specs()
        .map_err(config_err)?
        .iter()
        .map(|b| {
            Ok(BathMemory {
                memory_time: memory_time(&b.density, &b.thermal, cfg.run.threshold, t_max).ok(),
                profile: decay_profile(&b.density, &b.thermal, t_max)?,
            })
        })
        .collect::<preb_core::error::Result<Vec<_>>>()
        .map_err(backend_err)?;
    Ok(MemoryDump { threshold: cfg.run.threshold, baths })
}
