//! Gaussian dynamics of the non-interacting set-up through the correlation
//! matrix `C_pq = ⟨c†_p c_q⟩`.
//!
//! Layout: `[bath-1 eigenmodes (ascending E), system sites, bath-2 eigenmodes
//! (ascending E)]`.

use std::sync::OnceLock;

use faer::Mat;
use num_complex::Complex64 as c64;

use crate::chainmap::ChainBath;
use crate::error::{Error, Result};
use crate::linalg::{eigh_real, hermitize};
use crate::system::{Observables, Pattern, SystemSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub bath1: usize,
    pub system: usize,
    pub bath2: usize,
}

impl Layout {
    pub fn dim(&self) -> usize {
        self.bath1 + self.system + self.bath2
    }

    pub fn system_offset(&self) -> usize {
        self.bath1
    }

    pub fn bath2_offset(&self) -> usize {
        self.bath1 + self.system
    }
}

/// Real symmetric single-particle Hamiltonian over a [`Layout`], with a lazily
/// computed eigendecomposition shared by every evolution.
#[derive(Debug)]
pub struct SingleParticleHamiltonian {
    pub matrix: Mat<f64>,
    pub layout: Layout,
    eig: OnceLock<(Vec<f64>, Mat<c64>)>,
}

impl Clone for SingleParticleHamiltonian {
    fn clone(&self) -> Self {
        Self { matrix: self.matrix.clone(), layout: self.layout, eig: self.eig.clone() }
    }
}

impl SingleParticleHamiltonian {
    pub fn new(matrix: Mat<f64>, layout: Layout) -> Result<Self> {
        if matrix.nrows() != layout.dim() || matrix.ncols() != layout.dim() {
            return Err(Error::Dimension("hamiltonian does not match layout".into()));
        }
        Ok(Self { matrix, layout, eig: OnceLock::new() })
    }

    fn eigen(&self) -> Result<&(Vec<f64>, Mat<c64>)> {
        if let Some(e) = self.eig.get() {
            return Ok(e);
        }
        let (vals, vecs) = eigh_real(&self.matrix)?;
        let vecs = Mat::from_fn(vecs.nrows(), vecs.ncols(), |i, j| c64::new(vecs[(i, j)], 0.0));
        Ok(self.eig.get_or_init(|| (vals, vecs)))
    }
}

/// Builds `diag(E¹) ⊕ H_S ⊕ diag(E²)` with couplings `γ_ℓ Φ_{1α}` from the
/// boundary system sites to the bath eigenmodes.
pub fn assemble_hamiltonian(sys: &SystemSpec, bath1: &ChainBath, bath2: &ChainBath) -> Result<SingleParticleHamiltonian> {
    if !sys.is_free() {
        return Err(Error::InteractingSystem(sys.interaction));
    }
    assemble_quadratic(sys, bath1, bath2)
}

/// The quadratic part of the full Hamiltonian; the `V` term is ignored.
pub fn assemble_quadratic(sys: &SystemSpec, bath1: &ChainBath, bath2: &ChainBath) -> Result<SingleParticleHamiltonian> {
    let star1 = bath1.star()?;
    let star2 = bath2.star()?;
    let layout = Layout { bath1: star1.energies.len(), system: sys.sites, bath2: star2.energies.len() };
    let mut h = Mat::zeros(layout.dim(), layout.dim());
    let s0 = layout.system_offset();
    let last = s0 + sys.sites - 1;
    let hs = sys.single_particle();
    for i in 0..sys.sites {
        for j in 0..sys.sites {
            h[(s0 + i, s0 + j)] = hs[(i, j)];
        }
    }
    for (a, &e) in star1.energies.iter().enumerate() {
        h[(a, a)] = e;
        let v = bath1.gamma * star1.phi[0][a];
        h[(a, s0)] = v;
        h[(s0, a)] = v;
    }
    let b0 = layout.bath2_offset();
    for (a, &e) in star2.energies.iter().enumerate() {
        h[(b0 + a, b0 + a)] = e;
        let v = bath2.gamma * star2.phi[0][a];
        h[(b0 + a, last)] = v;
        h[(last, b0 + a)] = v;
    }
    SingleParticleHamiltonian::new(h, layout)
}

/// Diagonal occupations `𝔫(E_α)` of a bath in its eigenbasis.
pub fn thermal_correlation_block(bath: &ChainBath) -> Result<Vec<f64>> {
    bath.occupations()
}

#[derive(Debug, Clone)]
pub struct CorrelationMatrix {
    pub c: Mat<c64>,
    pub layout: Layout,
}

impl CorrelationMatrix {
    /// Product state: the given system block with thermal baths.
    pub fn product(system: &Mat<c64>, bath1: &ChainBath, bath2: &ChainBath) -> Result<Self> {
        let n1 = thermal_correlation_block(bath1)?;
        let n2 = thermal_correlation_block(bath2)?;
        let layout = Layout { bath1: n1.len(), system: system.nrows(), bath2: n2.len() };
        let mut c = Mat::zeros(layout.dim(), layout.dim());
        for (a, &n) in n1.iter().enumerate() {
            c[(a, a)] = c64::new(n, 0.0);
        }
        let s0 = layout.system_offset();
        for i in 0..layout.system {
            for j in 0..layout.system {
                c[(s0 + i, s0 + j)] = system[(i, j)];
            }
        }
        let b0 = layout.bath2_offset();
        for (a, &n) in n2.iter().enumerate() {
            c[(b0 + a, b0 + a)] = c64::new(n, 0.0);
        }
        Ok(Self { c, layout })
    }

    pub fn initial(sys: &SystemSpec, pattern: &Pattern, bath1: &ChainBath, bath2: &ChainBath) -> Result<Self> {
        Self::product(&pattern_block(sys.sites, pattern)?, bath1, bath2)
    }

    pub fn system_block(&self) -> Mat<c64> {
        let s0 = self.layout.system_offset();
        let n = self.layout.system;
        Mat::from_fn(n, n, |i, j| self.c[(s0 + i, s0 + j)])
    }

    pub fn observables(&self) -> Observables {
        Observables::from_correlations(&self.system_block())
    }
}

/// Diagonal system block of a product occupation pattern.
pub fn pattern_block(sites: usize, pattern: &Pattern) -> Result<Mat<c64>> {
    let occ = pattern.occupations(sites)?;
    Ok(Mat::from_fn(sites, sites, |i, j| if i == j { c64::new(occ[i], 0.0) } else { c64::new(0.0, 0.0) }))
}

/// `e^{iHt} C e^{−iHt}`, re-symmetrized.
pub fn evolve(c: &CorrelationMatrix, h: &SingleParticleHamiltonian, t: f64) -> Result<CorrelationMatrix> {
    if c.layout != h.layout {
        return Err(Error::Dimension("correlation matrix and hamiltonian layouts differ".into()));
    }
    Ok(Trajectory::new(h, c)?.at(t))
}

/// A correlation matrix held in the eigenframe of `H`, from which `C(t)` (or
/// only its system block) is read off for any `t`.
pub struct Trajectory<'a> {
    h: &'a SingleParticleHamiltonian,
    energies: &'a [f64],
    vecs: &'a Mat<c64>,
    rotated: Mat<c64>,
}

impl<'a> Trajectory<'a> {
    pub fn new(h: &'a SingleParticleHamiltonian, c: &CorrelationMatrix) -> Result<Self> {
        let (energies, vecs) = h.eigen()?;
        let rotated = vecs.transpose() * &c.c * vecs;
        Ok(Self { h, energies, vecs, rotated })
    }

    fn phased(&self, t: f64) -> Mat<c64> {
        let ph: Vec<c64> = self.energies.iter().map(|&e| c64::from_polar(1.0, e * t)).collect();
        Mat::from_fn(self.rotated.nrows(), self.rotated.ncols(), |a, b| {
            ph[a] * self.rotated[(a, b)] * ph[b].conj()
        })
    }

    pub fn at(&self, t: f64) -> CorrelationMatrix {
        let mut c = self.vecs * self.phased(t) * self.vecs.transpose();
        hermitize(&mut c);
        CorrelationMatrix { c, layout: self.h.layout }
    }

    pub fn system_block_at(&self, t: f64) -> Mat<c64> {
        let l = self.h.layout;
        let rows = self.vecs.subrows(l.system_offset(), l.system);
        let mut c = rows * self.phased(t) * rows.transpose();
        hermitize(&mut c);
        c
    }
}

/// Keeps the system block, discards every correlation with the baths and
/// resets both baths to their thermal state.
pub fn preb_refresh(c: &CorrelationMatrix, bath1: &ChainBath, bath2: &ChainBath) -> Result<CorrelationMatrix> {
    let out = CorrelationMatrix::product(&c.system_block(), bath1, bath2)?;
    if out.layout != c.layout {
        return Err(Error::Dimension("refresh baths do not match the layout".into()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chainmap::mapped_bath;
    use crate::linalg::eigvalsh_complex;
    use crate::spectral::{SpectralDensity, ThermalParams};

    fn biased_baths(sites: usize) -> (ChainBath, ChainBath) {
        let d1 = SpectralDensity::semicircle(1.0, 2.0).unwrap();
        let d2 = SpectralDensity::semicircle(2.0, 2.0).unwrap();
        (
            mapped_bath(&d1, sites, ThermalParams::fermi(0.1, 1.5).unwrap()).unwrap(),
            mapped_bath(&d2, sites, ThermalParams::fermi(0.2, -1.5).unwrap()).unwrap(),
        )
    }

    fn detached() -> ChainBath {
        ChainBath::detached(ThermalParams::fermi(1.0, 0.0).unwrap())
    }

    #[test]
    fn isolated_dimer() {
        let sys = SystemSpec::new(2, 0.0, 0.0).unwrap();
        let h = assemble_hamiltonian(&sys, &detached(), &detached()).unwrap();
        assert_eq!(h.matrix[(0, 1)], 1.0);
        assert_eq!(h.matrix[(0, 0)], 0.0);
        let c0 = CorrelationMatrix::initial(&sys, &Pattern::Alternating, &detached(), &detached()).unwrap();
        assert!(crate::linalg::max_abs_diff(&evolve(&c0, &h, 0.0).unwrap().c, &c0.c) < 1e-14);
        for t in [0.3, 1.0, 2.7] {
            let c = evolve(&c0, &h, t).unwrap();
            assert!((c.c[(0, 0)].re - t.cos().powi(2)).abs() < 1e-13);
        }
    }

    #[test]
    fn interacting_rejected() {
        let sys = SystemSpec::new(2, 1.0, 0.0).unwrap();
        let e = assemble_hamiltonian(&sys, &detached(), &detached()).unwrap_err();
        assert!(e.to_string().contains("interacting system requires tebd or dense"));
    }

    #[test]
    fn biased_structure() {
        let (b1, b2) = biased_baths(14);
        let sys = SystemSpec::new(16, 0.0, 0.0).unwrap();
        let h = assemble_hamiltonian(&sys, &b1, &b2).unwrap();
        assert_eq!(h.layout.dim(), 44);
        let mut couplings = 0;
        for i in 0..44 {
            for j in 0..44 {
                let is_bath = |k: usize| k < 14 || k >= 30;
                if is_bath(i) && !is_bath(j) && h.matrix[(i, j)] != 0.0 {
                    couplings += 1;
                }
            }
        }
        assert_eq!(couplings, 28);
    }

    #[test]
    fn thermal_blocks() {
        let sc = SpectralDensity::semicircle(1.0, 2.0).unwrap();
        let hot = mapped_bath(&sc, 6, ThermalParams::fermi(0.0, 0.0).unwrap()).unwrap();
        assert!(thermal_correlation_block(&hot).unwrap().iter().all(|&n| n == 0.5));
        let cold = mapped_bath(&sc, 7, ThermalParams::fermi(1e6, 0.0).unwrap()).unwrap();
        let e = cold.eigs.as_ref().unwrap().energies.clone();
        for (n, e) in thermal_correlation_block(&cold).unwrap().iter().zip(&e) {
            if e.abs() > 1e-9 {
                assert_eq!(*n, if *e < 0.0 { 1.0 } else { 0.0 });
            }
        }
        let (b1, _) = biased_baths(14);
        let tp = b1.thermal;
        let top = 4.0 * (std::f64::consts::PI / 15.0).cos();
        let n = thermal_correlation_block(&b1).unwrap();
        let e = &b1.eigs.as_ref().unwrap().energies;
        assert!((e[13] - top).abs() < 1e-6);
        assert!((n[13] - tp.occupation(e[13]).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn refresh_is_idempotent_and_positive() {
        let (b1, b2) = biased_baths(14);
        let sys = SystemSpec::new(16, 0.0, 0.0).unwrap();
        let h = assemble_hamiltonian(&sys, &b1, &b2).unwrap();
        let c0 = CorrelationMatrix::initial(&sys, &Pattern::Alternating, &b1, &b2).unwrap();
        assert!(crate::linalg::max_abs_diff(&preb_refresh(&c0, &b1, &b2).unwrap().c, &c0.c) < 1e-15);
        let c = evolve(&c0, &h, 6.0).unwrap();
        let r1 = preb_refresh(&c, &b1, &b2).unwrap();
        let r2 = preb_refresh(&r1, &b1, &b2).unwrap();
        assert_eq!(r1.c, r2.c);
        for ev in eigvalsh_complex(&r1.system_block()).unwrap() {
            assert!((-1e-10..=1.0 + 1e-10).contains(&ev));
        }
        // unitary conjugation keeps the spectrum and the trace
        let before = eigvalsh_complex(&c0.c).unwrap();
        let after = eigvalsh_complex(&c.c).unwrap();
        for (a, b) in before.iter().zip(&after) {
            assert!((a - b).abs() < 1e-10);
        }
        let tr = |m: &Mat<c64>| (0..m.nrows()).map(|i| m[(i, i)].re).sum::<f64>();
        assert!((tr(&c0.c) - tr(&c.c)).abs() < 1e-10);
        // the cheap system-block path agrees with the full conjugation
        let traj = Trajectory::new(&h, &c0).unwrap();
        assert!(crate::linalg::max_abs_diff(&traj.system_block_at(6.0), &c.system_block()) < 1e-12);
    }

    #[test]
    fn real_state_carries_no_current() {
        let (b1, b2) = biased_baths(4);
        let sys = SystemSpec::new(4, 0.0, 0.0).unwrap();
        let c0 = CorrelationMatrix::initial(&sys, &Pattern::Alternating, &b1, &b2).unwrap();
        let o = c0.observables();
        assert_eq!(o.occupations, vec![1.0, 0.0, 1.0, 0.0]);
        assert!(o.currents.iter().all(|&i| i == 0.0));
    }
}
