//! Dense many-body evolution of the full set-up for tiny instances.
//!
//! Jordan–Wigner convention shared with the MPS backend: mode 0 is the
//! leftmost factor (most significant bit), `c_k = Z_0 ⋯ Z_{k−1} σ⁻_k` with
//! `σ⁻ = |0⟩⟨1|` and `Z = (−1)^n`.

use faer::Mat;
use num_complex::Complex64 as c64;

use crate::chainmap::ChainBath;
use crate::error::{Error, Result};
use crate::freefermion::{assemble_quadratic, Layout};
use crate::linalg::{eigh_real, hermitize};
use crate::system::{Observables, Pattern, SystemSpec};

pub const MAX_MODES: usize = 12;

fn bit(modes: usize, k: usize) -> usize {
    1 << (modes - 1 - k)
}

/// Parity of the occupied modes with index below `k`.
fn string_sign(state: usize, modes: usize, k: usize) -> f64 {
    let higher = state >> (modes - k);
    if higher.count_ones() % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// `c†_p c_q |state⟩ = sign |out⟩`, or `None` if it vanishes.
pub fn hop(state: usize, modes: usize, p: usize, q: usize) -> Option<(usize, f64)> {
    let bq = bit(modes, q);
    if state & bq == 0 {
        return None;
    }
    let s1 = state ^ bq;
    let sq = string_sign(state, modes, q);
    let bp = bit(modes, p);
    if s1 & bp != 0 {
        return None;
    }
    let sp = string_sign(s1, modes, p);
    Some((s1 | bp, sp * sq))
}

/// Many-body Hamiltonian with its number-sector eigendecomposition.
#[derive(Debug, Clone)]
pub struct ManyBodyHamiltonian {
    pub modes: usize,
    pub layout: Layout,
    pub matrix: Mat<f64>,
    energies: Vec<f64>,
    vectors: Mat<f64>,
}

/// `Σ h_pq c†_p c_q + V Σ n_ℓ n_{ℓ+1}` over `[bath 1, system, bath 2]`.
pub fn build_many_body_hamiltonian(sys: &SystemSpec, bath1: &ChainBath, bath2: &ChainBath) -> Result<ManyBodyHamiltonian> {
    let quad = assemble_quadratic(sys, bath1, bath2)?;
    let layout = quad.layout;
    let m = layout.dim();
    if m > MAX_MODES {
        return Err(Error::TooManyModes(m));
    }
    let dim = 1usize << m;
    let h = &quad.matrix;
    let mut out = Mat::<f64>::zeros(dim, dim);
    let s0 = layout.system_offset();
    for s in 0..dim {
        for p in 0..m {
            for q in 0..m {
                if h[(p, q)] == 0.0 {
                    continue;
                }
                if let Some((t, sign)) = hop(s, m, p, q) {
                    out[(t, s)] += sign * h[(p, q)];
                }
            }
        }
        for l in 0..sys.sites - 1 {
            let (a, b) = (bit(m, s0 + l), bit(m, s0 + l + 1));
            if s & a != 0 && s & b != 0 {
                out[(s, s)] += sys.interaction;
            }
        }
    }
    let (energies, vectors) = sector_eigen(&out, m)?;
    Ok(ManyBodyHamiltonian { modes: m, layout, matrix: out, energies, vectors })
}

/// Eigendecomposition block by block in particle number.
fn sector_eigen(h: &Mat<f64>, modes: usize) -> Result<(Vec<f64>, Mat<f64>)> {
    let dim = h.nrows();
    let mut energies = vec![0.0; dim];
    let mut vectors = Mat::<f64>::zeros(dim, dim);
    let mut col = 0;
    for n in 0..=modes {
        let states: Vec<usize> = (0..dim).filter(|s| s.count_ones() as usize == n).collect();
        let block = Mat::from_fn(states.len(), states.len(), |i, j| h[(states[i], states[j])]);
        let (vals, vecs) = eigh_real(&block)?;
        for (k, v) in vals.iter().enumerate() {
            energies[col + k] = *v;
            for (i, &s) in states.iter().enumerate() {
                vectors[(s, col + k)] = vecs[(i, k)];
            }
        }
        col += states.len();
    }
    Ok((energies, vectors))
}

impl ManyBodyHamiltonian {
    pub fn spectrum(&self) -> Vec<f64> {
        let mut e = self.energies.clone();
        e.sort_by(|a, b| a.partial_cmp(b).unwrap());
        e
    }

    /// `e^{−iHt}`.
    pub fn propagator(&self, t: f64) -> Mat<c64> {
        let dim = self.matrix.nrows();
        let v = &self.vectors;
        let ph: Vec<c64> = self.energies.iter().map(|&e| c64::from_polar(1.0, -e * t)).collect();
        let left = Mat::from_fn(dim, dim, |i, k| v[(i, k)] * ph[k]);
        let vt = Mat::from_fn(dim, dim, |k, j| c64::new(v[(j, k)], 0.0));
        left * vt
    }
}

/// Full density matrix over `2^M` JW basis states.
#[derive(Debug, Clone)]
pub struct DenseState {
    pub rho: Mat<c64>,
    pub modes: usize,
}

impl DenseState {
    pub fn trace(&self) -> c64 {
        (0..self.rho.nrows()).map(|i| self.rho[(i, i)]).sum()
    }

    /// `Tr(ρ c†_p c_q)`.
    pub fn correlation(&self, p: usize, q: usize) -> c64 {
        let mut acc = c64::new(0.0, 0.0);
        for s in 0..self.rho.nrows() {
            if let Some((t, sign)) = hop(s, self.modes, p, q) {
                acc += self.rho[(s, t)] * sign;
            }
        }
        acc
    }

    /// `⟨c†_p c_q⟩` over the modes `offset..offset+n`.
    pub fn correlation_block(&self, offset: usize, n: usize) -> Mat<c64> {
        Mat::from_fn(n, n, |i, j| self.correlation(offset + i, offset + j))
    }
}

/// Product density matrix over contiguous factors, left to right.
pub fn kron(a: &Mat<c64>, b: &Mat<c64>) -> Mat<c64> {
    let (ra, ca) = (a.nrows(), a.ncols());
    let (rb, cb) = (b.nrows(), b.ncols());
    Mat::from_fn(ra * rb, ca * cb, |i, j| a[(i / rb, j / cb)] * b[(i % rb, j % cb)])
}

fn diag_state(occ: &[f64]) -> Mat<c64> {
    let mut rho = Mat::from_fn(1, 1, |_, _| c64::new(1.0, 0.0));
    for &n in occ {
        let site = Mat::from_fn(2, 2, |i, j| match (i, j) {
            (0, 0) => c64::new(1.0 - n, 0.0),
            (1, 1) => c64::new(n, 0.0),
            _ => c64::new(0.0, 0.0),
        });
        rho = kron(&rho, &site);
    }
    rho
}

/// Thermal product state of a bath's eigenmodes in ascending energy order.
pub fn bath_state(bath: &ChainBath) -> Result<Mat<c64>> {
    Ok(diag_state(&bath.occupations()?))
}

/// `ρ_B1 ⊗ ρ_S ⊗ ρ_B2`.
pub fn product_state(system: &Mat<c64>, bath1: &ChainBath, bath2: &ChainBath) -> Result<DenseState> {
    let rho = kron(&kron(&bath_state(bath1)?, system), &bath_state(bath2)?);
    let modes = rho.nrows().trailing_zeros() as usize;
    if modes > MAX_MODES {
        return Err(Error::TooManyModes(modes));
    }
    Ok(DenseState { rho, modes })
}

/// System density matrix of a product occupation pattern.
pub fn pattern_state(sys: &SystemSpec, pattern: &Pattern) -> Result<Mat<c64>> {
    Ok(diag_state(&pattern.occupations(sys.sites)?))
}

/// `e^{−iHt} ρ e^{iHt}`.
pub fn dense_evolve(state: &DenseState, h: &ManyBodyHamiltonian, t: f64) -> Result<DenseState> {
    if state.modes != h.modes {
        return Err(Error::Dimension("state and hamiltonian mode counts differ".into()));
    }
    let u = h.propagator(t);
    let mut rho = &u * &state.rho * u.adjoint();
    hermitize(&mut rho);
    Ok(DenseState { rho, modes: state.modes })
}

/// Reduced density matrix of the contiguous modes `keep`.
pub fn partial_trace(state: &DenseState, keep: &[usize]) -> Result<Mat<c64>> {
    if keep.is_empty() {
        return Err(Error::Unsupported("partial trace needs at least one kept mode".into()));
    }
    if keep.windows(2).any(|w| w[1] != w[0] + 1) || *keep.last().unwrap() >= state.modes {
        return Err(Error::Unsupported("partial trace keeps only a contiguous mode range".into()));
    }
    let left = keep[0];
    let right = state.modes - keep.last().unwrap() - 1;
    let (dl, dk, dr) = (1usize << left, 1usize << keep.len(), 1usize << right);
    let mut out = Mat::<c64>::zeros(dk, dk);
    for i in 0..dk {
        for j in 0..dk {
            let mut acc = c64::new(0.0, 0.0);
            for a in 0..dl {
                for b in 0..dr {
                    acc += state.rho[((a * dk + i) * dr + b, (a * dk + j) * dr + b)];
                }
            }
            out[(i, j)] = acc;
        }
    }
    Ok(out)
}

/// System observables of a dense state.
pub fn system_observables(state: &DenseState, layout: &Layout) -> Observables {
    Observables::from_correlations(&state.correlation_block(layout.system_offset(), layout.system))
}
