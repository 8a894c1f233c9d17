//! Exact steady state of the non-interacting chain between two infinite baths.

use std::f64::consts::PI;

use faer::linalg::solvers::Solve;
use faer::Mat;
use num_complex::Complex64 as c64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::quadrature::angle_nodes;
use crate::spectral::{SpectralDensity, SpectralKind, ThermalParams};
use crate::system::Observables;

/// Accepted estimate of the frequency-integration error.
pub const NEGF_TOLERANCE: f64 = 1e-8;
/// Refinement stops once successive estimates differ by less than this.
pub const REFINE_TARGET: f64 = 1e-9;
const START_PANELS: usize = 4;
const MAX_LEVELS: usize = 8;

/// `(𝔍(ω), 𝔍^H(ω))`, closed form for the semicircle.
pub fn density_parts(density: &SpectralDensity, omega: f64) -> (f64, f64) {
    match density.kind() {
        SpectralKind::Semicircle { coupling, bath_hopping } => {
            let edge = 2.0 * bath_hopping;
            let scale = coupling / edge;
            if omega.abs() <= edge {
                (density.evaluate(omega), scale * omega)
            } else {
                (0.0, scale * (omega - omega.signum() * (omega * omega - edge * edge).sqrt()))
            }
        }
        _ => (density.evaluate(omega), density.hilbert_transform(omega)),
    }
}

/// Retarded self-energy `Σ(ω) = (𝔍^H(ω) − i𝔍(ω))/2`.
pub fn self_energy(density: &SpectralDensity, omega: f64) -> c64 {
    let (j, jh) = density_parts(density, omega);
    c64::new(0.5 * jh, -0.5 * j)
}

/// `G(ω) = [ωI − H_S − Σ₁ − Σ₂]⁻¹` with `Σ₁` on the first and `Σ₂` on the last
/// site.
pub fn retarded_green(h_s: &Mat<f64>, d1: &SpectralDensity, d2: &SpectralDensity, omega: f64) -> Result<Mat<c64>> {
    let n = h_s.nrows();
    let m = resolvent_matrix(h_s, self_energy(d1, omega), self_energy(d2, omega), c64::new(omega, 0.0));
    let lu = m.partial_piv_lu();
    let g = lu.solve(Mat::<c64>::identity(n, n));
    check_finite(&g, omega)?;
    Ok(g)
}

fn resolvent_matrix(h_s: &Mat<f64>, s1: c64, s2: c64, z: c64) -> Mat<c64> {
    let n = h_s.nrows();
    let mut m = Mat::from_fn(n, n, |i, j| c64::new(-h_s[(i, j)], 0.0));
    for i in 0..n {
        m[(i, i)] += z;
    }
    m[(0, 0)] -= s1;
    m[(n - 1, n - 1)] -= s2;
    m
}

fn check_finite(g: &Mat<c64>, omega: f64) -> Result<()> {
    for j in 0..g.ncols() {
        for i in 0..g.nrows() {
            if !g[(i, j)].re.is_finite() || !g[(i, j)].im.is_finite() {
                return Err(Error::SingularGreen(omega));
            }
        }
    }
    Ok(())
}

/// The two columns `G e₁` and `G e_L` of the retarded Green's function.
fn boundary_columns(h_s: &Mat<f64>, d1: &SpectralDensity, d2: &SpectralDensity, omega: f64) -> Result<Mat<c64>> {
    let n = h_s.nrows();
    let m = resolvent_matrix(h_s, self_energy(d1, omega), self_energy(d2, omega), c64::new(omega, 0.0));
    let mut rhs = Mat::<c64>::zeros(n, 2);
    rhs[(0, 0)] = c64::new(1.0, 0.0);
    rhs[(n - 1, 1)] = c64::new(1.0, 0.0);
    let g = m.partial_piv_lu().solve(rhs);
    check_finite(&g, omega)?;
    Ok(g)
}

/// Steady-state system block `⟨c†_p c_q⟩ = ∫ dω/2π Σ_ℓ G*_{p s_ℓ} G_{q s_ℓ} 𝔍_ℓ 𝔫_ℓ`,
/// integrated over the union of both bands with successive panel doubling.
pub fn ness_correlations(
    h_s: &Mat<f64>,
    d1: &SpectralDensity,
    d2: &SpectralDensity,
    tp1: &ThermalParams,
    tp2: &ThermalParams,
) -> Result<Mat<c64>> {
    tp1.check_against(d1)?;
    tp2.check_against(d2)?;
    let (a1, b1) = d1.support();
    let (a2, b2) = d2.support();
    let lo = a1.min(a2);
    let hi = b1.max(b2);
    let breaks: Vec<f64> = [a1, b1, a2, b2].into_iter().filter(|&x| x > lo && x < hi).collect();

    let mut trace = Vec::new();
    let mut prev: Option<Mat<c64>> = None;
    let mut panels = START_PANELS;
    for _ in 0..MAX_LEVELS {
        let nodes = angle_nodes(lo, hi, panels, &breaks);
        let c = integrate_nodes(h_s, d1, d2, tp1, tp2, &nodes)?;
        if let Some(p) = &prev {
            let err = crate::linalg::max_abs_diff(&c, p);
            trace.push((panels as f64, nodes.len() as f64, err));
            if err < REFINE_TARGET {
                let mut c = c;
                crate::linalg::hermitize(&mut c);
                return Ok(c);
            }
        }
        prev = Some(c);
        panels *= 2;
    }
    let estimate = trace.last().map_or(f64::INFINITY, |t| t.2);
    if estimate <= NEGF_TOLERANCE {
        let mut c = prev.unwrap();
        crate::linalg::hermitize(&mut c);
        return Ok(c);
    }
    Err(Error::QuadratureNonConvergence { estimate, trace })
}

fn integrate_nodes(
    h_s: &Mat<f64>,
    d1: &SpectralDensity,
    d2: &SpectralDensity,
    tp1: &ThermalParams,
    tp2: &ThermalParams,
    nodes: &[(f64, f64)],
) -> Result<Mat<c64>> {
    let n = h_s.nrows();
    let parts: Result<Vec<Mat<c64>>> = nodes
        .par_chunks(64)
        .map(|chunk| {
            let mut acc = Mat::<c64>::zeros(n, n);
            for &(w, q) in chunk {
                let (j1, _) = density_parts(d1, w);
                let (j2, _) = density_parts(d2, w);
                let f1 = if j1 > 0.0 { j1 * tp1.occupation(w)? } else { 0.0 };
                let f2 = if j2 > 0.0 { j2 * tp2.occupation(w)? } else { 0.0 };
                if f1 == 0.0 && f2 == 0.0 {
                    continue;
                }
                let g = boundary_columns(h_s, d1, d2, w)?;
                let scale = q / (2.0 * PI);
                for p in 0..n {
                    for r in 0..n {
                        let v = g[(p, 0)].conj() * g[(r, 0)] * f1 + g[(p, 1)].conj() * g[(r, 1)] * f2;
                        acc[(p, r)] += v * scale;
                    }
                }
            }
            Ok(acc)
        })
        .collect();
    let mut total = Mat::<c64>::zeros(n, n);
    for p in parts? {
        total += p;
    }
    Ok(total)
}

/// NESS occupations and currents.
pub fn ness_observables(
    h_s: &Mat<f64>,
    d1: &SpectralDensity,
    d2: &SpectralDensity,
    tp1: &ThermalParams,
    tp2: &ThermalParams,
) -> Result<Observables> {
    Ok(Observables::from_correlations(&ness_correlations(h_s, d1, d2, tp1, tp2)?))
}
