//! Two-site superoperator gates on vectorized density matrices.
//!
//! A local physical index is `p = 2i + j` for `ρ_{ij}`; `UρU†` becomes
//! `G[(p_l p_r),(p'_l p'_r)] = A[(i_l i_r),(i'_l i'_r)] · conj A[(j_l j_r),(j'_l j'_r)]`.
//! Two-mode matrices use the index `2 n_left + n_right`.

use faer::Mat;
use num_complex::Complex64 as c64;
use serde::{Deserialize, Serialize};

use crate::chainmap::ChainBath;
use crate::error::{Error, Result};
use crate::linalg::eigh_real;
use crate::system::SystemSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GateKind {
    System(usize),
    BathFwd(u8, usize),
    BathBwd(u8, usize),
    Swap,
    Identity,
}

pub type Two = [[c64; 4]; 4];

#[derive(Debug, Clone)]
pub struct Gate {
    pub kind: GateKind,
    pub two_mode: Two,
    /// Nonzero entries `(row, col, value)` of the 16×16 superoperator.
    pub entries: Vec<(u8, u8, c64)>,
}

impl Gate {
    pub fn new(kind: GateKind, two_mode: Two) -> Self {
        let mut entries = Vec::new();
        for r in 0..16 {
            for c in 0..16 {
                let v = super_entry(&two_mode, r, c);
                if v.norm() > 0.0 {
                    entries.push((r as u8, c as u8, v));
                }
            }
        }
        Self { kind, two_mode, entries }
    }

    pub fn superoperator(&self) -> [[c64; 16]; 16] {
        let mut g = [[c64::new(0.0, 0.0); 16]; 16];
        for &(r, c, v) in &self.entries {
            g[r as usize][c as usize] = v;
        }
        g
    }
}

/// Row `(p_l, p_r)` and column `(p'_l, p'_r)` of `A ⊗ conj A` regrouped per site.
fn super_entry(a: &Two, row: usize, col: usize) -> c64 {
    let (pl, pr) = (row / 4, row % 4);
    let (ql, qr) = (col / 4, col % 4);
    let (il, jl, ir, jr) = (pl / 2, pl % 2, pr / 2, pr % 2);
    let (kl, ll, kr, lr) = (ql / 2, ql % 2, qr / 2, qr % 2);
    a[2 * il + ir][2 * kl + kr] * a[2 * jl + jr][2 * ll + lr].conj()
}

pub fn identity() -> Two {
    let mut a = [[c64::new(0.0, 0.0); 4]; 4];
    for (i, row) in a.iter_mut().enumerate() {
        row[i] = c64::new(1.0, 0.0);
    }
    a
}

/// Fermionic swap: `|01⟩ ↔ |10⟩`, `|11⟩ → −|11⟩`.
pub fn swap() -> Two {
    let z = c64::new(0.0, 0.0);
    let o = c64::new(1.0, 0.0);
    [[o, z, z, z], [z, z, o, z], [z, o, z, z], [z, z, z, -o]]
}

pub fn mul(a: &Two, b: &Two) -> Two {
    let mut out = [[c64::new(0.0, 0.0); 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            out[i][j] = (0..4).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

/// `exp(−i H t)` of a real symmetric two-mode Hamiltonian.
pub fn expm(h: &[[f64; 4]; 4], t: f64) -> Result<Two> {
    let m = Mat::from_fn(4, 4, |i, j| h[i][j]);
    let (e, v) = eigh_real(&m)?;
    let mut out = [[c64::new(0.0, 0.0); 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            out[i][j] = (0..4).map(|k| v[(i, k)] * v[(j, k)] * c64::from_polar(1.0, -e[k] * t)).sum();
        }
    }
    Ok(out)
}

/// `Σ_ℓ c†_ℓ c_{ℓ+1} + h.c. + V n n` on bond `m`, with the staggered field
/// shared between the two bonds of interior sites.
pub fn system_bond_hamiltonian(sys: &SystemSpec, m: usize) -> [[f64; 4]; 4] {
    let mut h = [[0.0; 4]; 4];
    h[1][2] = 1.0;
    h[2][1] = 1.0;
    h[3][3] += sys.interaction;
    let share = |l: usize| if l == 0 || l + 1 == sys.sites { 1.0 } else { 0.5 };
    let (fl, fr) = (share(m) * sys.onsite(m), share(m + 1) * sys.onsite(m + 1));
    for s in [2, 3] {
        h[s][s] += fl;
    }
    for s in [1, 3] {
        h[s][s] += fr;
    }
    h
}

/// `E n_b + g (c†_s b + b† c_s)` with the system mode on the left.
pub fn bath_mode_hamiltonian(energy: f64, coupling: f64) -> [[f64; 4]; 4] {
    let mut h = [[0.0; 4]; 4];
    h[1][1] = energy;
    h[3][3] = energy;
    h[1][2] = coupling;
    h[2][1] = coupling;
    h
}

/// Every gate of one Trotter step; each exponentiated for `dt/2`.
#[derive(Debug, Clone)]
pub struct GateSet {
    pub dt: f64,
    pub system: Vec<Gate>,
    pub bath_fwd: [Vec<Gate>; 2],
    pub bath_bwd: [Vec<Gate>; 2],
    pub swap: Gate,
}

pub fn build_gates(sys: &SystemSpec, bath1: &ChainBath, bath2: &ChainBath, dt: f64) -> Result<GateSet> {
    if !(dt > 0.0) {
        return Err(Error::Schedule(format!("Trotter step must be positive, got {dt}")));
    }
    let half = 0.5 * dt;
    let s = swap();
    let system = (0..sys.sites - 1)
        .map(|m| Ok(Gate::new(GateKind::System(m), expm(&system_bond_hamiltonian(sys, m), half)?)))
        .collect::<Result<Vec<_>>>()?;
    let mut fwd: [Vec<Gate>; 2] = [Vec::new(), Vec::new()];
    let mut bwd: [Vec<Gate>; 2] = [Vec::new(), Vec::new()];
    for (l, bath) in [bath1, bath2].into_iter().enumerate() {
        let star = bath.star()?;
        for (a, &e) in star.energies.iter().enumerate() {
            let u = expm(&bath_mode_hamiltonian(e, bath.gamma * star.phi[0][a]), half)?;
            fwd[l].push(Gate::new(GateKind::BathFwd(l as u8 + 1, a), mul(&s, &u)));
            bwd[l].push(Gate::new(GateKind::BathBwd(l as u8 + 1, a), mul(&u, &s)));
        }
    }
    Ok(GateSet { dt, system, bath_fwd: fwd, bath_bwd: bwd, swap: Gate::new(GateKind::Swap, s) })
}

#[cfg(test)]
mod tests {
    use super::*;

    const VEC_ID: [f64; 4] = [1.0, 0.0, 0.0, 1.0];

    fn trace_preserved(g: &Gate) -> f64 {
        // Σ_out id(out) G[out, in] = id(in)
        let sup = g.superoperator();
        let mut worst: f64 = 0.0;
        for c in 0..16 {
            let lhs: c64 = (0..16).map(|r| sup[r][c] * VEC_ID[r / 4] * VEC_ID[r % 4]).sum();
            worst = worst.max((lhs - VEC_ID[c / 4] * VEC_ID[c % 4]).norm());
        }
        worst
    }

    #[test]
    fn swap_is_an_involution() {
        let s = swap();
        let ss = mul(&s, &s);
        for (i, row) in ss.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                assert_eq!(*v, c64::new(if i == j { 1.0 } else { 0.0 }, 0.0));
            }
        }
    }

    #[test]
    fn gates_preserve_trace() {
        let sys = SystemSpec::new(4, 1.0, 0.7).unwrap();
        for m in 0..3 {
            let g = Gate::new(GateKind::System(m), expm(&system_bond_hamiltonian(&sys, m), 0.05).unwrap());
            assert!(trace_preserved(&g) < 1e-12);
        }
        let u = expm(&bath_mode_hamiltonian(1.3, 0.4), 0.05).unwrap();
        assert!(trace_preserved(&Gate::new(GateKind::BathFwd(1, 0), mul(&swap(), &u))) < 1e-12);
        assert!(trace_preserved(&Gate::new(GateKind::Swap, swap())) < 1e-12);
    }

    #[test]
    fn composite_is_swap_times_evolution() {
        let u = expm(&bath_mode_hamiltonian(-0.8, 0.6), 0.05).unwrap();
        let comp = Gate::new(GateKind::BathFwd(1, 0), mul(&swap(), &u)).superoperator();
        let s = Gate::new(GateKind::Swap, swap()).superoperator();
        let e = Gate::new(GateKind::Identity, u).superoperator();
        for r in 0..16 {
            for c in 0..16 {
                let v: c64 = (0..16).map(|k| s[r][k] * e[k][c]).sum();
                assert!((v - comp[r][c]).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn small_step_is_near_identity() {
        let sys = SystemSpec::new(2, 1.0, 1.0).unwrap();
        let dt = 1e-4;
        let u = expm(&system_bond_hamiltonian(&sys, 0), dt).unwrap();
        let id = identity();
        let d: f64 = (0..4).flat_map(|i| (0..4).map(move |j| (i, j))).map(|(i, j)| (u[i][j] - id[i][j]).norm()).fold(0.0, f64::max);
        assert!(d < 3.0 * dt && d > 0.1 * dt);
    }

    #[test]
    fn hopping_rabi_oscillation() {
        let sys = SystemSpec::new(2, 0.0, 0.0).unwrap();
        let g = Gate::new(GateKind::System(0), expm(&system_bond_hamiltonian(&sys, 0), 0.05).unwrap());
        let sup = g.superoperator();
        // vec |10⟩⟨10|: left p = 3, right p = 0
        let input = 3 * 4;
        let out_10 = sup[3 * 4][input];
        let out_01 = sup[3][input];
        assert!((out_10.re - 0.05f64.cos().powi(2)).abs() < 1e-14);
        assert!((out_01.re - 0.05f64.sin().powi(2)).abs() < 1e-14);
    }
}
