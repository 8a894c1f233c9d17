//! Experiment configuration: TOML in, validated and defaulted.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};

use preb_core::chainmap::required_bath_size;
use preb_core::preb::{BathSpec, PrebSchedule, Problem};
use preb_core::spectral::{SpectralDensity, SpectralKind, ThermalParams};
use preb_core::system::{Pattern, SystemSpec};
use preb_core::tebd::{Scheme, Truncation};

/// Largest system plus bath mode count the dense backend accepts.
pub const DENSE_MODE_LIMIT: usize = 12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: SystemConfig,
    pub baths: Vec<BathConfig>,
    pub run: RunConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    #[serde(alias = "L_S")]
    pub sites: usize,
    #[serde(default, alias = "V")]
    pub interaction: f64,
    #[serde(default, alias = "h")]
    pub field: f64,
    #[serde(default)]
    pub pattern: Pattern,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BathConfig {
    pub spectral: SpectralKind,
    pub beta: f64,
    pub mu: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Continuous,
    #[default]
    Preb,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Freefermion,
    Tebd,
    Dense,
}

impl BackendKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BackendKind::Freefermion => "freefermion",
            BackendKind::Tebd => "tebd",
            BackendKind::Dense => "dense",
        }
    }
}

fn default_t1() -> Vec<f64> {
    vec![0.0]
}
fn default_dt() -> f64 {
    0.1
}
fn default_chi() -> usize {
    128
}
fn default_cutoff() -> f64 {
    1e-10
}
fn default_threshold() -> f64 {
    preb_core::preb::MEMORY_THRESHOLD
}
fn default_tolerance() -> f64 {
    1e-2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub backend: BackendKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_steps: Option<usize>,
    #[serde(default = "default_t1")]
    pub t1: Vec<f64>,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_chi")]
    pub chi: usize,
    #[serde(default = "default_cutoff")]
    pub svd_cutoff: f64,
    #[serde(default)]
    pub scheme: Scheme,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_max: Option<f64>,
    /// Fixed chain length per bath; sized from the light cone otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bath_sites: Option<usize>,
    /// Memory-time threshold.
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    /// Convergence and timeline-consistency tolerance.
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_directory")]
    pub directory: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stride: Option<f64>,
}

fn default_directory() -> PathBuf {
    PathBuf::from("output")
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { directory: default_directory(), stride: None }
    }
}

fn is_multiple(x: f64, dt: f64) -> bool {
    let r = x / dt;
    (r - r.round()).abs() < 1e-6
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let de = toml::Deserializer::parse(text).map_err(|e| anyhow!("{e}"))?;
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            anyhow!("{path}: {}", e.into_inner().message().trim())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn system_spec(&self) -> Result<SystemSpec> {
        SystemSpec::new(self.system.sites, self.system.interaction, self.system.field).context("system")
    }

    pub fn bath_specs(&self) -> Result<[BathSpec; 2]> {
        if self.baths.len() != 2 {
            bail!("baths: expected exactly 2 baths, got {}", self.baths.len());
        }
        let spec = |i: usize| -> Result<BathSpec> {
            let b = &self.baths[i];
            let density =
                SpectralDensity::from_kind(b.spectral.clone()).with_context(|| format!("baths[{i}].spectral"))?;
            let thermal = ThermalParams::fermi(b.beta, b.mu).with_context(|| format!("baths[{i}].beta"))?;
            thermal.check_against(&density).with_context(|| format!("baths[{i}]"))?;
            Ok(BathSpec { density, thermal })
        };
        Ok([spec(0)?, spec(1)?])
    }

    pub fn problem(&self) -> Result<Problem> {
        Ok(Problem::new(self.system_spec()?, self.system.pattern.clone(), self.bath_specs()?)?
            .with_bath_sites(self.run.bath_sites))
    }

    pub fn truncation(&self) -> Truncation {
        Truncation { chi_max: self.run.chi, cutoff: self.run.svd_cutoff, scheme: self.run.scheme }
    }

    /// Length of one uninterrupted evolution: τ for PReB, t_max otherwise.
    pub fn cycle_duration(&self) -> Option<f64> {
        match self.run.mode {
            Mode::Preb => self.run.tau,
            Mode::Continuous => self.run.t_max,
        }
    }

    pub fn schedule(&self, t1: f64) -> Result<PrebSchedule> {
        let tau = self.run.tau.ok_or_else(|| anyhow!("run.tau: required"))?;
        let n_steps = self.run.n_steps.ok_or_else(|| anyhow!("run.n_steps: required"))?;
        Ok(PrebSchedule { tau, n_steps, t1, dt: self.run.dt, record_stride: self.output.stride })
    }

    pub fn validate(&self) -> Result<()> {
        let r = &self.run;
        if self.system.sites < 2 {
            bail!("system.sites: need at least 2 sites, got {}", self.system.sites);
        }
        if !self.system.interaction.is_finite() {
            bail!("system.interaction: must be finite");
        }
        if !self.system.field.is_finite() {
            bail!("system.field: must be finite");
        }
        self.system.pattern.occupations(self.system.sites).context("system.pattern")?;
        let baths = self.bath_specs()?;
        if !(r.dt > 0.0 && r.dt.is_finite()) {
            bail!("run.dt: must be positive, got {}", r.dt);
        }
        if r.chi < 1 {
            bail!("run.chi: must be at least 1");
        }
        if !(r.svd_cutoff >= 0.0) {
            bail!("run.svd_cutoff: must be non-negative, got {}", r.svd_cutoff);
        }
        if !(r.threshold > 0.0 && r.threshold < 1.0) {
            bail!("run.threshold: must lie in (0, 1), got {}", r.threshold);
        }
        if !(r.tolerance > 0.0) {
            bail!("run.tolerance: must be positive, got {}", r.tolerance);
        }
        if let Some(s) = self.output.stride {
            if !(s > 0.0 && s.is_finite()) {
                bail!("output.stride: must be positive, got {s}");
            }
        }
        match r.mode {
            Mode::Preb => {
                let tau = r.tau.ok_or_else(|| anyhow!("run.tau: required in preb mode"))?;
                if !(tau > 0.0 && tau.is_finite()) {
                    bail!("run.tau: must be positive, got {tau}");
                }
                if r.n_steps.is_none() {
                    bail!("run.n_steps: required in preb mode");
                }
                if r.t1.is_empty() {
                    bail!("run.t1: at least one offset required");
                }
                for (i, &t1) in r.t1.iter().enumerate() {
                    if !(t1 >= 0.0 && t1 < tau) {
                        bail!("run.t1[{i}]: offset {t1} outside [0, τ = {tau})");
                    }
                }
            }
            Mode::Continuous => {
                let t = r.t_max.ok_or_else(|| anyhow!("run.t_max: required in continuous mode"))?;
                if !(t > 0.0 && t.is_finite()) {
                    bail!("run.t_max: must be positive, got {t}");
                }
                if self.output.stride.is_none() {
                    bail!("output.stride: required in continuous mode");
                }
            }
        }
        match r.backend {
            BackendKind::Freefermion if self.system.interaction != 0.0 => {
                bail!("run.backend: interacting system requires tebd or dense (system.interaction = {})", self.system.interaction)
            }
            BackendKind::Dense => {
                let duration = self.cycle_duration().unwrap_or(0.0);
                let lb: usize = baths
                    .iter()
                    .map(|b| r.bath_sites.unwrap_or_else(|| required_bath_size(duration, b.density.asymptotic_hopping())))
                    .sum();
                if self.system.sites + lb > DENSE_MODE_LIMIT {
                    bail!(
                        "run.backend: dense backend requires L_S + 2 L_B ≤ {DENSE_MODE_LIMIT}, got {} system and {lb} bath modes",
                        self.system.sites
                    );
                }
            }
            BackendKind::Tebd => {
                if let Some(tau) = r.tau.filter(|_| r.mode == Mode::Preb) {
                    if !is_multiple(tau, r.dt) {
                        bail!("run.tau: {tau} is not a multiple of run.dt = {}", r.dt);
                    }
                    for (i, &t1) in r.t1.iter().enumerate() {
                        if !is_multiple(t1, r.dt) {
                            bail!("run.t1[{i}]: {t1} is not a multiple of run.dt = {}", r.dt);
                        }
                    }
                }
                if let Some(t) = r.t_max.filter(|_| r.mode == Mode::Continuous) {
                    if !is_multiple(t, r.dt) {
                        bail!("run.t_max: {t} is not a multiple of run.dt = {}", r.dt);
                    }
                }
                if let Some(s) = self.output.stride {
                    if !is_multiple(s, r.dt) {
                        bail!("output.stride: {s} is not a multiple of run.dt = {}", r.dt);
                    }
                }
            }
            _ => {}
        }
        Ok(())
    }
}

pub fn parse_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    ExperimentConfig::from_toml(&text).with_context(|| format!("in {}", path.display()))
}
