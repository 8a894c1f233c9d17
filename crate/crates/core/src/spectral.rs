//! Bath spectral densities, thermal occupations, Hilbert transforms and the
//! bath correlation functions that set the memory time.

use std::f64::consts::PI;
use std::path::Path;

use num_complex::Complex64 as c64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::{angle_nodes, oscillatory_panels, GaussLegendre};

/// Tail fraction below which the Gaussian cutoff of an Ohmic density is
/// truncated.
pub const OHMIC_TAIL_FRACTION: f64 = 1e-12;

/// Scan spacing used by [`memory_time`].
pub const MEMORY_SCAN_STEP: f64 = 0.01;

/// Panels (of 64 nodes each) for non-oscillatory integrals over the support.
const BASE_PANELS: usize = 8;

/// |β(ω−μ)| beyond which occupations saturate.
const OVERFLOW_EXPONENT: f64 = 700.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SpectralKind {
    /// `Γ·sqrt(1 − (ω/2g)²)` on `[−2g, 2g]`.
    Semicircle { coupling: f64, bath_hopping: f64 },
    /// `γ_b·ω·exp(−(ω/ω_c)²)` for `ω > 0`.
    OhmicGaussian { coupling: f64, cutoff: f64 },
    /// Linear interpolation between `(omega[i], values[i])`.
    Tabulated { omega: Vec<f64>, values: Vec<f64> },
}

/// A bath spectral density 𝔍(ω) with finite support.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralDensity {
    kind: SpectralKind,
    support: (f64, f64),
}

impl SpectralDensity {
    pub fn semicircle(coupling: f64, bath_hopping: f64) -> Result<Self> {
        if !(coupling >= 0.0 && coupling.is_finite()) {
            return Err(Error::InvalidDensity(format!("semicircle coupling {coupling} must be >= 0")));
        }
        if !(bath_hopping > 0.0 && bath_hopping.is_finite()) {
            return Err(Error::InvalidDensity(format!("semicircle bath hopping {bath_hopping} must be > 0")));
        }
        Ok(Self {
            kind: SpectralKind::Semicircle { coupling, bath_hopping },
            support: (-2.0 * bath_hopping, 2.0 * bath_hopping),
        })
    }

    pub fn ohmic_gaussian(coupling: f64, cutoff: f64) -> Result<Self> {
        if !(coupling >= 0.0 && coupling.is_finite()) {
            return Err(Error::InvalidDensity(format!("ohmic coupling {coupling} must be >= 0")));
        }
        if !(cutoff > 0.0 && cutoff.is_finite()) {
            return Err(Error::InvalidDensity(format!("ohmic cutoff {cutoff} must be > 0")));
        }
        // ∫_W^∞ ω e^{-(ω/c)²} dω / ∫_0^∞ (…) = e^{-(W/c)²}
        let width = cutoff * (-OHMIC_TAIL_FRACTION.ln()).sqrt();
        Ok(Self {
            kind: SpectralKind::OhmicGaussian { coupling, cutoff },
            support: (0.0, width),
        })
    }

    pub fn tabulated(omega: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if omega.len() != values.len() {
            return Err(Error::InvalidDensity(format!(
                "{} frequencies but {} values",
                omega.len(),
                values.len()
            )));
        }
        if omega.len() < 2 {
            return Err(Error::InvalidDensity("tabulated density needs at least two points".into()));
        }
        if let Some(w) = omega.windows(2).find(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidDensity(format!(
                "frequencies must be strictly increasing ({} then {})",
                w[0], w[1]
            )));
        }
        if let Some((w, v)) = omega
            .iter()
            .zip(&values)
            .find(|(w, v)| !(w.is_finite() && v.is_finite() && **v >= 0.0))
        {
            return Err(Error::InvalidDensity(format!("invalid point ({w}, {v})")));
        }
        let support = (omega[0], omega[omega.len() - 1]);
        Ok(Self {
            kind: SpectralKind::Tabulated { omega, values },
            support,
        })
    }

    /// Two-column `ω, 𝔍` CSV; a non-numeric first row is treated as a header.
    pub fn from_csv(path: impl AsRef<Path>) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_path(path)?;
        let mut omega = Vec::new();
        let mut values = Vec::new();
        for (row, record) in reader.records().enumerate() {
            let record = record?;
            if record.len() < 2 {
                return Err(Error::InvalidDensity(format!("row {row}: expected two columns")));
            }
            match (record[0].parse::<f64>(), record[1].parse::<f64>()) {
                (Ok(w), Ok(v)) => {
                    omega.push(w);
                    values.push(v);
                }
                _ if row == 0 => continue,
                _ => return Err(Error::InvalidDensity(format!("row {row}: not numeric"))),
            }
        }
        Self::tabulated(omega, values)
    }

    pub fn from_kind(kind: SpectralKind) -> Result<Self> {
        match kind {
            SpectralKind::Semicircle { coupling, bath_hopping } => Self::semicircle(coupling, bath_hopping),
            SpectralKind::OhmicGaussian { coupling, cutoff } => Self::ohmic_gaussian(coupling, cutoff),
            SpectralKind::Tabulated { omega, values } => Self::tabulated(omega, values),
        }
    }

    pub fn kind(&self) -> &SpectralKind {
        &self.kind
    }

    pub fn support(&self) -> (f64, f64) {
        self.support
    }

    pub fn width(&self) -> f64 {
        self.support.1 - self.support.0
    }

    /// Hopping the chain coefficients approach deep in the chain (a quarter of
    /// the bandwidth); `g_B` itself for the semicircle.
    pub fn asymptotic_hopping(&self) -> f64 {
        match self.kind {
            SpectralKind::Semicircle { bath_hopping, .. } => bath_hopping,
            _ => 0.25 * self.width(),
        }
    }

    pub fn evaluate(&self, omega: f64) -> f64 {
        let (lo, hi) = self.support;
        if !(omega >= lo && omega <= hi) {
            return 0.0;
        }
        match &self.kind {
            SpectralKind::Semicircle { coupling, bath_hopping } => {
                let x = omega / (2.0 * bath_hopping);
                coupling * (1.0 - x * x).max(0.0).sqrt()
            }
            SpectralKind::OhmicGaussian { coupling, cutoff } => {
                if omega <= 0.0 {
                    0.0
                } else {
                    coupling * omega * (-(omega / cutoff).powi(2)).exp()
                }
            }
            SpectralKind::Tabulated { omega: grid, values } => {
                let k = grid.partition_point(|&w| w <= omega);
                if k == 0 {
                    return values[0];
                }
                if k >= grid.len() {
                    return values[grid.len() - 1];
                }
                let (w0, w1) = (grid[k - 1], grid[k]);
                let s = (omega - w0) / (w1 - w0);
                values[k - 1] * (1.0 - s) + values[k] * s
            }
        }
    }

    /// Quadrature nodes `(ω, weight)` over the support, split at `breaks`.
    pub fn nodes(&self, panels: usize, breaks: &[f64]) -> Vec<(f64, f64)> {
        let (lo, hi) = self.support;
        match &self.kind {
            SpectralKind::Tabulated { omega, .. } => {
                let mut all: Vec<f64> = omega[1..omega.len() - 1].to_vec();
                all.extend_from_slice(breaks);
                all.sort_by(|a, b| a.partial_cmp(b).unwrap());
                all.dedup();
                angle_nodes(lo, hi, panels, &all)
            }
            _ => angle_nodes(lo, hi, panels, breaks),
        }
    }

    /// `∫ f(ω) 𝔍(ω) dω` over the support.
    pub fn integrate_weighted<F: FnMut(f64) -> f64>(&self, mut f: F) -> f64 {
        self.nodes(BASE_PANELS, &[])
            .into_iter()
            .map(|(w, q)| q * self.evaluate(w) * f(w))
            .sum()
    }

    /// `(1/2π) ∫ 𝔍 dω`, the squared system–chain coupling γ².
    pub fn coupling_squared(&self) -> f64 {
        self.integrate_weighted(|_| 1.0) / (2.0 * PI)
    }

    /// `(1/π) P∫ 𝔍(ω′)/(ω − ω′) dω′`.
    ///
    /// The singular part is subtracted, `[𝔍(ω′) − 𝔍(ω)]/(ω − ω′)` is integrated
    /// numerically, and `𝔍(ω)·ln|(ω − a)/(ω − b)|` is added back.
    pub fn hilbert_transform(&self, omega: f64) -> f64 {
        hilbert_transform_with(|w| self.evaluate(w), self.support, omega, |br| self.nodes(BASE_PANELS, br))
    }
}

/// Subtract-and-add principal value of `(1/π) P∫ f(ω′)/(ω − ω′) dω′` over
/// `support`, where `nodes` supplies a quadrature rule split at the given
/// break points.
pub(crate) fn hilbert_transform_with<F, N>(f: F, support: (f64, f64), omega: f64, nodes: N) -> f64
where
    F: Fn(f64) -> f64,
    N: FnOnce(&[f64]) -> Vec<(f64, f64)>,
{
    let (lo, hi) = support;
    let inside = omega > lo && omega < hi;
    let f0 = if inside { f(omega) } else { 0.0 };
    let breaks: &[f64] = if inside { &[omega] } else { &[] };
    let scale = (hi - lo).max(1.0);
    let mut sum = 0.0;
    for (w, q) in nodes(breaks) {
        let d = omega - w;
        if d.abs() <= 1e-14 * scale {
            continue;
        }
        sum += q * (f(w) - f0) / d;
    }
    if inside && f0 != 0.0 {
        sum += f0 * ((omega - lo) / (hi - omega)).ln();
    }
    sum / PI
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Statistics {
    Fermi,
    Bose,
}

/// Inverse temperature, chemical potential and particle statistics of a bath.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThermalParams {
    pub beta: f64,
    pub mu: f64,
    pub statistics: Statistics,
}

impl ThermalParams {
    pub fn new(beta: f64, mu: f64, statistics: Statistics) -> Result<Self> {
        if !(beta >= 0.0) || !mu.is_finite() {
            return Err(Error::Domain(format!("need beta >= 0 and finite mu (beta={beta}, mu={mu})")));
        }
        Ok(Self { beta, mu, statistics })
    }

    pub fn fermi(beta: f64, mu: f64) -> Result<Self> {
        Self::new(beta, mu, Statistics::Fermi)
    }

    pub fn bose(beta: f64, mu: f64) -> Result<Self> {
        Self::new(beta, mu, Statistics::Bose)
    }

    /// `[exp(β(ω−μ)) ± 1]⁻¹`.
    pub fn occupation(&self, omega: f64) -> Result<f64> {
        let x = self.beta * (omega - self.mu);
        match self.statistics {
            Statistics::Fermi => Ok(if x > OVERFLOW_EXPONENT {
                0.0
            } else if x < -OVERFLOW_EXPONENT {
                1.0
            } else {
                1.0 / (x.exp() + 1.0)
            }),
            Statistics::Bose => {
                if !(omega > self.mu) || x <= 0.0 {
                    return Err(Error::Domain(format!(
                        "Bose occupation needs ω > μ and β > 0 (ω={omega}, μ={}, β={})",
                        self.mu, self.beta
                    )));
                }
                Ok(if x > OVERFLOW_EXPONENT { 0.0 } else { 1.0 / x.exp_m1() })
            }
        }
    }

    /// Bose baths need μ below the support, or at its lower edge when 𝔍
    /// vanishes there so that 𝔍·𝔫 stays finite.
    pub fn check_against(&self, density: &SpectralDensity) -> Result<()> {
        if self.statistics == Statistics::Fermi {
            return Ok(());
        }
        let lo = density.support().0;
        if self.beta <= 0.0 {
            return Err(Error::Domain("Bose bath needs beta > 0".into()));
        }
        if self.mu < lo || (self.mu == lo && density.evaluate(lo) == 0.0) {
            Ok(())
        } else {
            Err(Error::Domain(format!(
                "Bose chemical potential {} not below the support minimum {lo}",
                self.mu
            )))
        }
    }
}

/// `a(t)` and `b(t)` at one time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BathCorrelation {
    pub t: f64,
    pub a: c64,
    pub b: c64,
}

/// `a(t) = ∫ dω/2π 𝔍 e^{iωt}` and `b(t) = ∫ dω/2π 𝔍 𝔫 e^{iωt}`.
pub fn bath_correlations(density: &SpectralDensity, thermal: &ThermalParams, t: f64) -> Result<BathCorrelation> {
    thermal.check_against(density)?;
    let panels = oscillatory_panels(t, density.width()).max(BASE_PANELS);
    let mut a = c64::new(0.0, 0.0);
    let mut b = c64::new(0.0, 0.0);
    for (w, q) in density.nodes(panels, &[]) {
        let j = density.evaluate(w);
        if j == 0.0 {
            continue;
        }
        let n = thermal.occupation(w)?;
        let phase = c64::new((w * t).cos(), (w * t).sin());
        a += phase * (q * j);
        b += phase * (q * j * n);
    }
    let norm = 1.0 / (2.0 * PI);
    if t == 0.0 {
        a.im = 0.0;
        b.im = 0.0;
    }
    Ok(BathCorrelation { t, a: a * norm, b: b * norm })
}

/// Smallest `t` on a 0.01 grid after which both `|a|/max|a|` and `|b|/max|b|`
/// stay below `threshold` up to `t_max`.
pub fn memory_time(density: &SpectralDensity, thermal: &ThermalParams, threshold: f64, t_max: f64) -> Result<f64> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Domain(format!("threshold {threshold} not in (0, 1)")));
    }
    if !(t_max > 0.0) {
        return Err(Error::Domain(format!("t_max {t_max} must be positive")));
    }
    let profile = decay_profile(density, thermal, t_max)?;
    let mut first_ok = None;
    for (k, &(t, ra, rb)) in profile.iter().enumerate().rev() {
        if ra < threshold && rb < threshold {
            first_ok = Some((k, t));
        } else {
            break;
        }
    }
    match first_ok {
        Some((_, t)) => Ok(t),
        None => Err(Error::MemoryExceedsHorizon { threshold, t_max, profile }),
    }
}

/// `(t, |a(t)|/max|a|, |b(t)|/max|b|)` on the memory-time scan grid.
pub fn decay_profile(density: &SpectralDensity, thermal: &ThermalParams, t_max: f64) -> Result<Vec<(f64, f64, f64)>> {
    let steps = (t_max / MEMORY_SCAN_STEP + 1e-9).floor() as usize;
    let mut raw = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        let t = k as f64 * MEMORY_SCAN_STEP;
        let c = bath_correlations(density, thermal, t)?;
        raw.push((t, c.a.norm(), c.b.norm()));
    }
    let max_a = raw.iter().map(|r| r.1).fold(0.0, f64::max);
    let max_b = raw.iter().map(|r| r.2).fold(0.0, f64::max);
    let ratio = |x: f64, m: f64| if m > 0.0 { x / m } else { 0.0 };
    Ok(raw.into_iter().map(|(t, a, b)| (t, ratio(a, max_a), ratio(b, max_b))).collect())
}

/// `A·∫_{τ_M}^{t_max} (|a(t)| + 2|b(t)|) dt`.
pub fn refresh_error_bound(
    density: &SpectralDensity,
    thermal: &ThermalParams,
    memory: f64,
    prefactor: f64,
    t_max: f64,
) -> Result<f64> {
    thermal.check_against(density)?;
    if prefactor == 0.0 || !(t_max > memory) {
        return Ok(0.0);
    }
    // |a| has kinks at its zeros; four panels per unit oscillation period.
    let span = t_max - memory;
    let periods = span * density.width() / (2.0 * PI);
    let panels = ((periods * 4.0).ceil() as usize).max(4);
    let rule = GaussLegendre::new(16);
    let h = span / panels as f64;
    let mut total = 0.0;
    for k in 0..panels {
        let lo = memory + h * k as f64;
        for (t, w) in rule.mapped(lo, lo + h) {
            let c = bath_correlations(density, thermal, t)?;
            total += w * (c.a.norm() + 2.0 * c.b.norm());
        }
    }
    Ok(prefactor * total)
}
