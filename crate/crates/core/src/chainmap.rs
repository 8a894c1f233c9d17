//! Star-to-chain mapping of a spectral density onto a finite tight-binding
//! chain, and the chain's single-particle eigenbasis.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::eigh_real;
use crate::spectral::{SpectralDensity, ThermalParams};

/// Discretized star modes per chain site.
pub const MODES_PER_SITE: usize = 16;

/// Single-particle eigenbasis of a finite chain: `Φᵀ H Φ = diag(E)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StarBasis {
    /// Ascending eigenvalues `E_α`.
    pub energies: Vec<f64>,
    /// `phi[p][α]`, chain site `p`, eigenmode `α`.
    pub phi: Vec<Vec<f64>>,
}

impl StarBasis {
    /// Coupling of eigenmode `α` to the first chain site, `Φ_{1α}`.
    pub fn first_site_row(&self) -> &[f64] {
        &self.phi[0]
    }
}

/// A bath mapped onto a chain `γ, {ε_p}, {g_p}` with its thermal state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainBath {
    pub gamma: f64,
    pub eps: Vec<f64>,
    pub hop: Vec<f64>,
    pub thermal: ThermalParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eigs: Option<StarBasis>,
}

impl ChainBath {
    /// A zero-length bath (no modes, no coupling).
    pub fn detached(thermal: ThermalParams) -> Self {
        Self {
            gamma: 0.0,
            eps: Vec::new(),
            hop: Vec::new(),
            thermal,
            eigs: Some(StarBasis { energies: Vec::new(), phi: Vec::new() }),
        }
    }

    pub fn len(&self) -> usize {
        self.eps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eps.is_empty()
    }

    /// The eigenbasis, computing it if absent.
    pub fn star(&self) -> Result<StarBasis> {
        match &self.eigs {
            Some(e) => Ok(e.clone()),
            None => Ok(star_basis(self.clone())?.eigs.unwrap()),
        }
    }

    /// `γ·Φ_{1α}` for every eigenmode.
    pub fn mode_couplings(&self) -> Result<Vec<f64>> {
        let star = self.star()?;
        if star.energies.is_empty() {
            return Ok(Vec::new());
        }
        Ok(star.first_site_row().iter().map(|p| self.gamma * p).collect())
    }

    /// Tridiagonal chain Hamiltonian as a dense matrix.
    pub fn chain_matrix(&self) -> Mat<f64> {
        let n = self.len();
        let mut h = Mat::zeros(n, n);
        for (p, &e) in self.eps.iter().enumerate() {
            h[(p, p)] = e;
        }
        for (p, &g) in self.hop.iter().enumerate() {
            h[(p, p + 1)] = g;
            h[(p + 1, p)] = g;
        }
        h
    }

    /// Thermal occupations of the eigenmodes.
    pub fn occupations(&self) -> Result<Vec<f64>> {
        self.star()?
            .energies
            .iter()
            .map(|&e| self.thermal.occupation(e))
            .collect()
    }
}

/// Chain coefficients from a direct discretization of `density` followed by
/// Lanczos tridiagonalization with full reorthogonalization.
pub fn chain_coefficients(density: &SpectralDensity, sites: usize, thermal: ThermalParams) -> Result<ChainBath> {
    chain_coefficients_with_resolution(density, sites, thermal, MODES_PER_SITE)
}

pub fn chain_coefficients_with_resolution(
    density: &SpectralDensity,
    sites: usize,
    thermal: ThermalParams,
    modes_per_site: usize,
) -> Result<ChainBath> {
    if sites == 0 {
        return Err(Error::InvalidDensity("chain length must be at least 1".into()));
    }
    let wanted = modes_per_site.max(1) * sites;
    let panels = wanted.div_ceil(crate::quadrature::PANEL_NODES);
    let mut freqs = Vec::new();
    let mut weights = Vec::new();
    for (w, q) in density.nodes(panels, &[]) {
        let j = density.evaluate(w);
        if q < 0.0 || j < 0.0 {
            return Err(Error::InvalidDensity(format!("negative discretization weight at ω={w}")));
        }
        let kappa_sq = j * q / (2.0 * PI);
        if kappa_sq > 0.0 {
            freqs.push(w);
            weights.push(kappa_sq.sqrt());
        }
    }
    if sites > freqs.len() {
        return Err(Error::ChainTooLong { requested: sites, available: freqs.len() });
    }
    let (gamma, eps, hop) = lanczos_diagonal(&freqs, &weights, sites);
    Ok(ChainBath { gamma, eps, hop, thermal, eigs: None })
}

/// Tridiagonalizes `diag(freqs)` from the start vector `coupling`, returning
/// `(‖coupling‖, diagonal, off-diagonal)` of the first `steps` Lanczos steps.
fn lanczos_diagonal(freqs: &[f64], coupling: &[f64], steps: usize) -> (f64, Vec<f64>, Vec<f64>) {
    let n = freqs.len();
    let norm = coupling.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(steps);
    let mut v: Vec<f64> = coupling.iter().map(|x| x / norm).collect();
    let mut eps = Vec::with_capacity(steps);
    let mut hop = Vec::with_capacity(steps.saturating_sub(1));
    for p in 0..steps {
        let mut w: Vec<f64> = (0..n).map(|i| freqs[i] * v[i]).collect();
        let a = dot(&v, &w);
        eps.push(a);
        basis.push(v);
        if p + 1 == steps {
            break;
        }
        let cur = basis.last().unwrap();
        for i in 0..n {
            w[i] -= a * cur[i];
        }
        if let Some(prev) = basis.len().checked_sub(2).map(|k| &basis[k]) {
            let b = *hop.last().unwrap();
            for i in 0..n {
                w[i] -= b * prev[i];
            }
        }
        // two passes of classical Gram–Schmidt against every previous vector
        for _ in 0..2 {
            for q in &basis {
                let c = dot(q, &w);
                for i in 0..n {
                    w[i] -= c * q[i];
                }
            }
        }
        let b = dot(&w, &w).sqrt();
        hop.push(b);
        v = w.into_iter().map(|x| x / b).collect();
    }
    (norm, eps, hop)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Fills the eigenbasis: ascending energies, each eigenvector's first
/// nonzero entry positive.
pub fn star_basis(mut bath: ChainBath) -> Result<ChainBath> {
    let n = bath.len();
    if n == 0 {
        bath.eigs = Some(StarBasis { energies: Vec::new(), phi: Vec::new() });
        return Ok(bath);
    }
    let (energies, vecs) = eigh_real(&bath.chain_matrix())?;
    let mut phi = vec![vec![0.0; n]; n];
    for a in 0..n {
        let sign = (0..n)
            .map(|p| vecs[(p, a)])
            .find(|x| x.abs() > 1e-12)
            .map_or(1.0, |x| x.signum());
        for p in 0..n {
            phi[p][a] = sign * vecs[(p, a)];
        }
    }
    bath.eigs = Some(StarBasis { energies, phi });
    Ok(bath)
}

/// Chain length needed to simulate up to time `t`: `⌈(t + 1)·g_B⌉`.
pub fn required_bath_size(t: f64, bath_hopping: f64) -> usize {
    let raw = (t.max(0.0) + 1.0) * bath_hopping;
    ((raw - 1e-9).ceil() as usize).max(1)
}

/// On-disk cache of mapped chains keyed by density, thermal state and length.
#[derive(Debug, Clone)]
pub struct ChainCache {
    dir: PathBuf,
}

#[derive(Serialize, Deserialize)]
struct CacheEntry {
    key: String,
    bath: ChainBath,
}

impl ChainCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn key(density: &SpectralDensity, sites: usize, thermal: &ThermalParams) -> String {
        format!(
            "{}|L={sites}|{}",
            serde_json::to_string(density.kind()).unwrap_or_default(),
            serde_json::to_string(thermal).unwrap_or_default()
        )
    }

    fn path_for(&self, key: &str) -> PathBuf {
        // FNV-1a, stable across builds
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in key.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        self.dir.join(format!("chain-{h:016x}.json"))
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Loads a cached chain (with eigenbasis) or maps and stores it.
    pub fn load_or_compute(&self, density: &SpectralDensity, sites: usize, thermal: ThermalParams) -> Result<ChainBath> {
        let key = Self::key(density, sites, &thermal);
        let path = self.path_for(&key);
        if let Ok(text) = fs::read_to_string(&path) {
            if let Ok(entry) = serde_json::from_str::<CacheEntry>(&text) {
                if entry.key == key && entry.bath.eigs.is_some() {
                    return Ok(entry.bath);
                }
            }
        }
        let bath = star_basis(chain_coefficients(density, sites, thermal)?)?;
        fs::create_dir_all(&self.dir)?;
        fs::write(&path, serde_json::to_string(&CacheEntry { key, bath: bath.clone() })?)?;
        Ok(bath)
    }
}

/// Maps, diagonalizes and returns a bath in one call.
pub fn mapped_bath(density: &SpectralDensity, sites: usize, thermal: ThermalParams) -> Result<ChainBath> {
    star_basis(chain_coefficients(density, sites, thermal)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::angle_nodes;

    fn fermi() -> ThermalParams {
        ThermalParams::fermi(0.1, 1.5).unwrap()
    }

    #[test]
    fn semicircle_maps_to_uniform_chain() {
        let sc = SpectralDensity::semicircle(1.0, 2.0).unwrap();
        let c = chain_coefficients(&sc, 26, fermi()).unwrap();
        assert!((c.gamma - 1.0).abs() < 1e-8);
        assert!(c.eps.iter().all(|e| e.abs() < 1e-8), "{:?}", c.eps);
        assert!(c.hop.iter().all(|g| (g - 2.0).abs() < 1e-6), "{:?}", c.hop);
        assert_eq!(c.hop.len(), 25);

        let sc2 = SpectralDensity::semicircle(2.0, 2.0).unwrap();
        let c2 = chain_coefficients(&sc2, 14, fermi()).unwrap();
        assert!((c2.gamma - 2f64.sqrt()).abs() < 1e-8);
        assert!(c2.eps.iter().all(|e| e.abs() < 1e-8));
        assert!(c2.hop.iter().all(|g| (g - 2.0).abs() < 1e-6));
    }

    #[test]
    fn gamma_matches_spectral_integral() {
        let oh = SpectralDensity::ohmic_gaussian(0.1, 50.0).unwrap();
        let c = chain_coefficients(&oh, 6, fermi()).unwrap();
        let g2 = oh.coupling_squared();
        assert!((c.gamma * c.gamma - g2).abs() < 1e-6 * g2);
        // closed form γ_b ω_c² / (4π)
        assert!((g2 - 0.1 * 2500.0 / (4.0 * PI)).abs() < 1e-9 * g2);
    }

    #[test]
    fn resolution_doubling_is_invariant() {
        let oh = SpectralDensity::ohmic_gaussian(0.1, 50.0).unwrap();
        let a = chain_coefficients_with_resolution(&oh, 12, fermi(), 16).unwrap();
        let b = chain_coefficients_with_resolution(&oh, 12, fermi(), 32).unwrap();
        for (x, y) in a.eps.iter().zip(&b.eps).chain(a.hop.iter().zip(&b.hop)) {
            assert!((x - y).abs() < 1e-6 * y.abs().max(1.0), "{x} vs {y}");
        }
    }

    #[test]
    fn chain_too_long_is_an_error() {
        let t = SpectralDensity::tabulated(vec![0.0, 1.0, 10.0], vec![1.0, 0.0, 0.0]).unwrap();
        assert!(matches!(
            chain_coefficients_with_resolution(&t, 100, fermi(), 1),
            Err(Error::ChainTooLong { .. })
        ));
    }

    #[test]
    fn star_basis_small_cases() {
        let one = ChainBath { gamma: 1.0, eps: vec![0.0], hop: vec![], thermal: fermi(), eigs: None };
        let s = star_basis(one).unwrap().eigs.unwrap();
        assert_eq!(s.energies, vec![0.0]);
        assert_eq!(s.phi, vec![vec![1.0]]);

        let g = 0.7;
        let two = ChainBath { gamma: 1.0, eps: vec![0.0, 0.0], hop: vec![g], thermal: fermi(), eigs: None };
        let s = star_basis(two).unwrap().eigs.unwrap();
        assert!((s.energies[0] + g).abs() < 1e-14 && (s.energies[1] - g).abs() < 1e-14);
        let r = 0.5f64.sqrt();
        // E = -g: (1, -1)/√2 ; E = +g: (1, 1)/√2
        assert!((s.phi[0][0] - r).abs() < 1e-14 && (s.phi[1][0] + r).abs() < 1e-14);
        assert!((s.phi[0][1] - r).abs() < 1e-14 && (s.phi[1][1] - r).abs() < 1e-14);
    }

    #[test]
    fn uniform_chain_spectrum_closed_form() {
        let sc = SpectralDensity::semicircle(1.0, 2.0).unwrap();
        let b = mapped_bath(&sc, 14, fermi()).unwrap();
        let s = b.eigs.as_ref().unwrap();
        let mut expected: Vec<f64> = (1..=14).map(|a| 4.0 * (a as f64 * PI / 15.0).cos()).collect();
        expected.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (e, x) in s.energies.iter().zip(&expected) {
            assert!((e - x).abs() < 1e-6, "{e} vs {x}");
        }
        // Φᵀ H Φ = diag(E), Φ orthonormal
        let h = b.chain_matrix();
        let n = 14;
        let mut off = 0.0;
        let mut orth = 0.0f64;
        for a in 0..n {
            for c in 0..n {
                let mut v = 0.0;
                let mut o = 0.0;
                for p in 0..n {
                    o += s.phi[p][a] * s.phi[p][c];
                    for q in 0..n {
                        v += s.phi[p][a] * h[(p, q)] * s.phi[q][c];
                    }
                }
                let target = if a == c { s.energies[a] } else { 0.0 };
                off += (v - target).powi(2);
                orth = orth.max((o - if a == c { 1.0 } else { 0.0 }).abs());
            }
        }
        assert!(off.sqrt() < 1e-10);
        assert!(orth < 1e-12);
        for a in 0..n {
            let first = (0..n).map(|p| s.phi[p][a]).find(|x| x.abs() > 1e-12).unwrap();
            assert!(first > 0.0);
        }
    }

    #[test]
    fn required_sizes() {
        assert_eq!(required_bath_size(6.0, 2.0), 14);
        assert_eq!(required_bath_size(12.0, 2.0), 26);
        assert_eq!(required_bath_size(50.0, 2.0), 102);
        assert_eq!(required_bath_size(40.0, 2.0), 82);
        assert_eq!(required_bath_size(0.2, 2.0), 3);
    }

    #[test]
    fn cache_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ChainCache::new(dir.path());
        let sc = SpectralDensity::semicircle(1.0, 2.0).unwrap();
        let a = cache.load_or_compute(&sc, 5, fermi()).unwrap();
        let b = cache.load_or_compute(&sc, 5, fermi()).unwrap();
        assert_eq!(a, b);
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
        let text = serde_json::to_string(&a).unwrap();
        for field in ["gamma", "eps", "hop", "energies", "phi"] {
            assert!(text.contains(field));
        }
    }

    /// The literal reduced-density recursion with repeated Hilbert
    /// transforms, tabulated on a fixed angle grid.
    fn recursion_oracle(density: &SpectralDensity, sites: usize) -> (f64, Vec<f64>, Vec<f64>) {
        let (lo, hi) = density.support();
        let nodes = angle_nodes(lo, hi, 48, &[]);
        let xs: Vec<f64> = nodes.iter().map(|n| n.0).collect();
        let ws: Vec<f64> = nodes.iter().map(|n| n.1).collect();
        let n = xs.len();
        let mut j: Vec<f64> = xs.iter().map(|&x| density.evaluate(x)).collect();
        let integral = |f: &[f64], m: usize| -> f64 {
            (0..n).map(|i| ws[i] * f[i] * xs[i].powi(m as i32)).sum::<f64>() / (2.0 * PI)
        };
        let mut gamma = 0.0;
        let mut eps = Vec::new();
        let mut hop = Vec::new();
        for p in 0..sites {
            let g2 = integral(&j, 0);
            if p == 0 {
                gamma = g2.sqrt();
            } else {
                hop.push(g2.sqrt());
            }
            eps.push(integral(&j, 1) / g2);
            if p + 1 == sites {
                break;
            }
            // Hilbert transform at every node (subtract-and-add, with the
            // removable diagonal term from a finite-difference slope)
            let mut h = vec![0.0; n];
            for i in 0..n {
                let mut s = 0.0;
                for k in 0..n {
                    if k != i {
                        s += ws[k] * (j[k] - j[i]) / (xs[i] - xs[k]);
                    }
                }
                let slope = if i == 0 {
                    (j[1] - j[0]) / (xs[1] - xs[0])
                } else if i == n - 1 {
                    (j[n - 1] - j[n - 2]) / (xs[n - 1] - xs[n - 2])
                } else {
                    (j[i + 1] - j[i - 1]) / (xs[i + 1] - xs[i - 1])
                };
                s -= ws[i] * slope;
                s += j[i] * ((xs[i] - lo) / (hi - xs[i])).ln();
                h[i] = s / PI;
            }
            j = (0..n).map(|i| 4.0 * g2 * j[i] / (h[i] * h[i] + j[i] * j[i])).collect();
        }
        (gamma, eps, hop)
    }

    #[test]
    fn recursion_oracle_reproduces_semicircle() {
        let sc = SpectralDensity::semicircle(1.0, 2.0).unwrap();
        let (g, e, h) = recursion_oracle(&sc, 4);
        assert!((g - 1.0).abs() < 1e-8);
        assert!(e.iter().all(|x| x.abs() < 1e-6));
        assert!(h.iter().all(|x| (x - 2.0).abs() < 1e-4), "{h:?}");
    }

    #[test]
    fn lanczos_matches_recursion_for_ohmic() {
        let oh = SpectralDensity::ohmic_gaussian(0.1, 50.0).unwrap();
        let c = chain_coefficients(&oh, 10, fermi()).unwrap();
        let (g, e, h) = recursion_oracle(&oh, 10);
        assert!((c.gamma - g).abs() < 1e-4 * g);
        for (x, y) in c.eps.iter().zip(&e) {
            assert!((x - y).abs() < 1e-4 * y.abs(), "eps {x} vs {y}");
        }
        for (x, y) in c.hop.iter().zip(&h) {
            assert!((x - y).abs() < 1e-4 * y.abs(), "hop {x} vs {y}");
        }
    }
}
