//! TEBD on the vectorized density matrix in the mixed basis: bath eigenmodes
//! and system sites on one line, `[bath 1 (ascending E), system, bath 2
//! (ascending E)]`, with fermionic swap gates routing the first and last
//! system sites past their bath modes.

pub mod checkpoint;
pub mod gates;

use faer::Mat;
use num_complex::Complex64 as c64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chainmap::ChainBath;
use crate::error::{Error, Result};
use crate::freefermion::Layout;
use crate::system::{Observables, Pattern, SystemSpec};
pub use gates::{build_gates, Gate, GateKind, GateSet};

const ZERO: c64 = c64 { re: 0.0, im: 0.0 };
const ONE: c64 = c64 { re: 1.0, im: 0.0 };

/// Weights `w[2i+j] = O_{ji}` so that `Tr(Oρ) = Σ_p w[p] vec(ρ)[p]`.
pub const W_IDENTITY: [c64; 4] = [ONE, ZERO, ZERO, ONE];
pub const W_NUMBER: [c64; 4] = [ZERO, ZERO, ZERO, ONE];
pub const W_RAISE: [c64; 4] = [ZERO, ONE, ZERO, ZERO];
pub const W_LOWER: [c64; 4] = [ZERO, ZERO, ONE, ZERO];
pub const W_PARITY: [c64; 4] = [ONE, ZERO, ZERO, c64 { re: -1.0, im: 0.0 }];

/// Charge `i − j` of the local index `p = 2i + j`; every tensor entry obeys
/// `q_right = q_left + CHARGE[p]`.
pub const CHARGE: [i32; 4] = [0, -1, 1, 0];

/// Singular values below this fraction of the largest are always dropped.
pub const SV_FLOOR: f64 = 1e-14;
/// Discarded weight above which a capped bond is logged as a warning.
pub const WARN_WEIGHT: f64 = 1e-6;

/// How a two-site block is split back into two tensors.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    /// Plain SVD: optimal in the Hilbert–Schmidt norm of `|ρ⟩`.
    Svd,
    /// Keeps the trace and every expectation value on the two sites adjacent
    /// to the cut exactly; only the remainder is SVD-truncated.
    #[default]
    Dmt,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Truncation {
    pub chi_max: usize,
    pub cutoff: f64,
    #[serde(default)]
    pub scheme: Scheme,
}

impl Truncation {
    pub fn new(chi_max: usize, cutoff: f64) -> Self {
        Self { chi_max, cutoff, scheme: Scheme::default() }
    }
}

impl Default for Truncation {
    fn default() -> Self {
        Self::new(128, 1e-10)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TruncationLog {
    pub splits: u64,
    pub total_discarded: f64,
    pub max_discarded: f64,
    pub max_bond: usize,
    pub warnings: Vec<String>,
}

impl TruncationLog {
    pub fn merge(&mut self, other: &TruncationLog) {
        self.splits += other.splits;
        self.total_discarded += other.total_discarded;
        self.max_discarded = self.max_discarded.max(other.max_discarded);
        self.max_bond = self.max_bond.max(other.max_bond);
        self.warnings.extend(other.warnings.iter().cloned());
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Canon {
    Left,
    Right,
    Center,
}

/// Rank-3 tensor `(left bond, 4, right bond)`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dl: usize,
    pub dr: usize,
    pub data: Vec<c64>,
}

impl Tensor {
    pub fn product(v: [c64; 4]) -> Self {
        Self { dl: 1, dr: 1, data: v.to_vec() }
    }

    fn left_matrix(&self) -> Mat<c64> {
        Mat::from_fn(self.dl * 4, self.dr, |r, b| self.data[r * self.dr + b])
    }

    fn right_matrix(&self) -> Mat<c64> {
        Mat::from_fn(self.dl, 4 * self.dr, |a, c| self.data[a * 4 * self.dr + c])
    }

    fn from_left_matrix(m: &Mat<c64>) -> Self {
        let dl = m.nrows() / 4;
        let dr = m.ncols();
        let mut data = Vec::with_capacity(m.nrows() * dr);
        for r in 0..m.nrows() {
            for b in 0..dr {
                data.push(m[(r, b)]);
            }
        }
        Self { dl, dr, data }
    }

    fn from_right_matrix(m: &Mat<c64>) -> Self {
        let dl = m.nrows();
        let dr = m.ncols() / 4;
        let mut data = Vec::with_capacity(dl * m.ncols());
        for a in 0..dl {
            for c in 0..m.ncols() {
                data.push(m[(a, c)]);
            }
        }
        Self { dl, dr, data }
    }

    fn norm(&self) -> f64 {
        self.data.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
    }

    fn scale(&mut self, s: f64) {
        for x in &mut self.data {
            *x *= s;
        }
    }

    /// Matrix `Σ_p w[p] T[:, p, :]`.
    fn contract_physical(&self, w: &[c64; 4]) -> Vec<c64> {
        let mut out = vec![ZERO; self.dl * self.dr];
        for a in 0..self.dl {
            for (p, wp) in w.iter().enumerate() {
                if *wp == ZERO {
                    continue;
                }
                let base = (a * 4 + p) * self.dr;
                for b in 0..self.dr {
                    out[a * self.dr + b] += *wp * self.data[base + b];
                }
            }
        }
        out
    }
}

/// Orthonormal factorization of a matrix whose row and column charges must
/// agree: `m = Q R`, one block per charge sector.
fn blocked_qr(m: &Mat<c64>, row_q: &[i32], col_q: &[i32]) -> (Mat<c64>, Mat<c64>, Vec<i32>) {
    let mut sectors: Vec<i32> = col_q.to_vec();
    sectors.sort_unstable();
    sectors.dedup();
    let mut blocks = Vec::new();
    for q in sectors {
        let rows: Vec<usize> = (0..row_q.len()).filter(|&r| row_q[r] == q).collect();
        let cols: Vec<usize> = (0..col_q.len()).filter(|&c| col_q[c] == q).collect();
        if rows.is_empty() {
            continue;
        }
        let sub = Mat::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])]);
        let qr = sub.qr();
        blocks.push((q, rows, cols, qr.compute_thin_Q(), qr.thin_R().to_owned()));
    }
    let k: usize = blocks.iter().map(|b| b.3.ncols()).sum();
    let mut qm = Mat::<c64>::zeros(m.nrows(), k.max(1));
    let mut rm = Mat::<c64>::zeros(k.max(1), m.ncols());
    let mut charges = Vec::with_capacity(k.max(1));
    for (q, rows, cols, bq, br) in blocks {
        let off = charges.len();
        for i in 0..bq.ncols() {
            for (x, &r) in rows.iter().enumerate() {
                qm[(r, off + i)] = bq[(x, i)];
            }
            for (y, &c) in cols.iter().enumerate() {
                rm[(off + i, c)] = br[(i, y)];
            }
            charges.push(q);
        }
    }
    if charges.is_empty() {
        charges.push(0);
    }
    (qm, rm, charges)
}

fn norm(v: &[c64]) -> f64 {
    v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

/// Unitary whose first columns are the (orthonormalized) `vectors`.
fn completed_basis(n: usize, vectors: &[Vec<c64>]) -> Mat<c64> {
    let m = Mat::from_fn(n, vectors.len() + n, |i, j| {
        if j < vectors.len() {
            vectors[j][i]
        } else if i == j - vectors.len() {
            ONE
        } else {
            ZERO
        }
    });
    m.qr().compute_thin_Q()
}

/// One charge sector of a DMT split, in rotated coordinates
/// `M' = U† M V = [[A, B], [C, D]]` with `D = X S Y†`.
struct DmtBlock {
    q: i32,
    rows: Vec<usize>,
    cols: Vec<usize>,
    u: Mat<c64>,
    v: Mat<c64>,
    m: Mat<c64>,
    nl: usize,
    nr: usize,
    x: Mat<c64>,
    sv: Vec<f64>,
    yh: Mat<c64>,
}

impl DmtBlock {
    fn new(q: i32, rows: Vec<usize>, cols: Vec<usize>, sub: &Mat<c64>, pu: &[Vec<c64>], pv: &[Vec<c64>]) -> Result<Self> {
        let (nrow, ncol) = (rows.len(), cols.len());
        let u = completed_basis(nrow, pu);
        let v = completed_basis(ncol, pv);
        let m = u.adjoint() * sub * &v;
        let (nl, nr) = (pu.len().min(nrow), pv.len().min(ncol));
        let d = m.subrows(nl, nrow - nl).subcols(nr, ncol - nr).to_owned();
        let (x, sv, yh) = if d.nrows() == 0 || d.ncols() == 0 {
            (Mat::zeros(d.nrows(), 0), Vec::new(), Mat::zeros(0, d.ncols()))
        } else {
            let svd = d.thin_svd().map_err(|e| Error::LinAlg(format!("DMT SVD: {e:?}")))?;
            let s = svd.S().column_vector();
            let sv = (0..s.nrows()).map(|i| s[i].re).collect();
            (svd.U().to_owned(), sv, svd.V().adjoint().to_owned())
        };
        Ok(Self { q, rows, cols, u, v, m, nl, nr, x, sv, yh })
    }

    /// `(left, right)` with `left · right` the truncated block, the left
    /// factor an isometry if `rightward` and the right one otherwise.
    fn factor(&self, kept: &[usize], rightward: bool) -> (Mat<c64>, Mat<c64>) {
        let (nl, nr) = (self.nl, self.nr);
        let (nrow, ncol) = (self.rows.len(), self.cols.len());
        let w = nl + nr + kept.len();
        // rotated factors: L = [[I, 0, 0], [0, C, X]], R = [[A, B], [I, 0], [0, S Y†]]
        let mut l = Mat::<c64>::zeros(nrow, w);
        let mut r = Mat::<c64>::zeros(w, ncol);
        for i in 0..nl {
            l[(i, i)] = ONE;
            for c in 0..ncol {
                r[(i, c)] = self.m[(i, c)];
            }
        }
        for j in 0..nr {
            for i in nl..nrow {
                l[(i, nl + j)] = self.m[(i, j)];
            }
            r[(nl + j, j)] = ONE;
        }
        for (t, &a) in kept.iter().enumerate() {
            for i in nl..nrow {
                l[(i, nl + nr + t)] = self.x[(i - nl, a)];
            }
            for c in nr..ncol {
                r[(nl + nr + t, c)] = self.yh[(a, c - nr)] * self.sv[a];
            }
        }
        let l = &self.u * l;
        let r = r * self.v.adjoint();
        if rightward {
            let qr = l.qr();
            (qr.compute_thin_Q(), qr.thin_R().to_owned() * r)
        } else {
            let qr = r.adjoint().to_owned().qr();
            (l * qr.thin_R().adjoint(), qr.compute_thin_Q().adjoint().to_owned())
        }
    }
}

/// Vectorized density matrix as an MPS with a single orthogonality centre.
///
/// Represents `exp(log_scale) · |tensors⟩`; `order[position]` is the layout
/// mode stored at that position and `bonds[k]` the charges of the bond left
/// of position `k`.
#[derive(Debug, Clone)]
pub struct VectorizedMps {
    pub tensors: Vec<Tensor>,
    pub bonds: Vec<Vec<i32>>,
    pub order: Vec<usize>,
    pub center: usize,
    pub log_scale: f64,
    pub layout: Layout,
    pub truncation: Truncation,
    pub log: TruncationLog,
}

fn occupation_vector(n: f64) -> [c64; 4] {
    [c64::new(1.0 - n, 0.0), ZERO, ZERO, c64::new(n, 0.0)]
}

/// Product state: thermal bath modes, the system in a product occupation
/// pattern; fully left-canonicalized.
pub fn initial_state(
    sys: &SystemSpec,
    pattern: &Pattern,
    bath1: &ChainBath,
    bath2: &ChainBath,
    truncation: Truncation,
) -> Result<VectorizedMps> {
    let occ = pattern.occupations(sys.sites)?;
    let system: Vec<Tensor> = occ.iter().map(|&n| Tensor::product(occupation_vector(n))).collect();
    let sys_mps = VectorizedMps::from_product(system, 0.0, Layout { bath1: 0, system: sys.sites, bath2: 0 }, truncation);
    attach_baths(&sys_mps, bath1, bath2)
}

/// `ρ_B1 ⊗ ρ_S ⊗ ρ_B2` from a system-only MPS and fresh thermal baths.
pub fn attach_baths(system: &VectorizedMps, bath1: &ChainBath, bath2: &ChainBath) -> Result<VectorizedMps> {
    if system.layout.bath1 != 0 || system.layout.bath2 != 0 {
        return Err(Error::Dimension("attach_baths expects a system-only MPS".into()));
    }
    let n1 = bath1.occupations()?;
    let n2 = bath2.occupations()?;
    let mut tensors: Vec<Tensor> = n1.iter().map(|&n| Tensor::product(occupation_vector(n))).collect();
    tensors.extend(system.tensors.iter().cloned());
    tensors.extend(n2.iter().map(|&n| Tensor::product(occupation_vector(n))));
    let layout = Layout { bath1: n1.len(), system: system.layout.system, bath2: n2.len() };
    let mut bonds = vec![vec![0]; n1.len()];
    bonds.extend(system.bonds.iter().cloned());
    bonds.extend(vec![vec![0]; n2.len()]);
    let mut mps = VectorizedMps::from_tensors(tensors, bonds, system.log_scale, layout, system.truncation)?;
    mps.log = system.log.clone();
    Ok(mps)
}

impl VectorizedMps {
    /// Product of single-site tensors, all of charge zero.
    pub fn from_product(tensors: Vec<Tensor>, log_scale: f64, layout: Layout, truncation: Truncation) -> Self {
        let bonds = vec![vec![0]; tensors.len() + 1];
        Self::from_tensors(tensors, bonds, log_scale, layout, truncation).expect("product state is consistent")
    }

    /// Wraps tensors in the original ordering and left-canonicalizes them.
    pub fn from_tensors(
        tensors: Vec<Tensor>,
        bonds: Vec<Vec<i32>>,
        log_scale: f64,
        layout: Layout,
        truncation: Truncation,
    ) -> Result<Self> {
        let n = tensors.len();
        if bonds.len() != n + 1
            || tensors.iter().enumerate().any(|(k, t)| bonds[k].len() != t.dl || bonds[k + 1].len() != t.dr)
        {
            return Err(Error::Dimension("bond charges do not match the tensors".into()));
        }
        let mut mps = Self {
            tensors,
            bonds,
            order: (0..n).collect(),
            center: 0,
            log_scale,
            layout,
            truncation,
            log: TruncationLog::default(),
        };
        mps.left_canonicalize();
        Ok(mps)
    }

    fn row_charges(&self, k: usize) -> Vec<i32> {
        self.bonds[k].iter().flat_map(|&q| CHARGE.iter().map(move |c| q + c)).collect()
    }

    fn col_charges(&self, k: usize) -> Vec<i32> {
        CHARGE.iter().flat_map(|c| self.bonds[k + 1].iter().map(move |&q| q - c)).collect()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn bond_dims(&self) -> Vec<usize> {
        self.tensors.iter().skip(1).map(|t| t.dl).collect()
    }

    pub fn canon(&self, pos: usize) -> Canon {
        use std::cmp::Ordering::*;
        match pos.cmp(&self.center) {
            Less => Canon::Left,
            Greater => Canon::Right,
            Equal => Canon::Center,
        }
    }

    pub fn is_original_order(&self) -> bool {
        self.order.iter().enumerate().all(|(i, &m)| i == m)
    }

    pub fn position_of(&self, mode: usize) -> usize {
        self.order.iter().position(|&m| m == mode).expect("mode present")
    }

    fn absorb_center_norm(&mut self) {
        let c = self.center;
        let nrm = self.tensors[c].norm();
        if nrm > 0.0 {
            self.tensors[c].scale(1.0 / nrm);
            self.log_scale += nrm.ln();
        }
    }

    /// QR sweep from the left end; valid from any starting form.
    pub fn left_canonicalize(&mut self) {
        self.center = 0;
        for k in 0..self.len().saturating_sub(1) {
            self.step_right(k);
        }
        self.center = self.len().saturating_sub(1);
        self.absorb_center_norm();
    }

    fn step_right(&mut self, k: usize) {
        let m = self.tensors[k].left_matrix();
        let (q, r, charges) = blocked_qr(&m, &self.row_charges(k), &self.bonds[k + 1]);
        self.tensors[k] = Tensor::from_left_matrix(&q);
        let next = r * self.tensors[k + 1].right_matrix();
        self.tensors[k + 1] = Tensor::from_right_matrix(&next);
        self.bonds[k + 1] = charges;
        self.center = k + 1;
        self.absorb_center_norm();
    }

    fn step_left(&mut self, k: usize) {
        let m = self.tensors[k].right_matrix().adjoint().to_owned();
        let (q, r, charges) = blocked_qr(&m, &self.col_charges(k), &self.bonds[k]);
        self.tensors[k] = Tensor::from_right_matrix(&q.adjoint().to_owned());
        let prev = self.tensors[k - 1].left_matrix() * r.adjoint();
        self.tensors[k - 1] = Tensor::from_left_matrix(&prev);
        self.bonds[k] = charges;
        self.center = k - 1;
        self.absorb_center_norm();
    }

    pub fn move_center(&mut self, target: usize) {
        while self.center < target {
            self.step_right(self.center);
        }
        while self.center > target {
            self.step_left(self.center);
        }
    }

    /// Applies `gate` to positions `(k, k+1)` and splits with truncation,
    /// leaving the centre on the right site if `rightward`.
    pub fn apply_gate(&mut self, k: usize, gate: &Gate, rightward: bool) -> Result<()> {
        if self.center != k && self.center != k + 1 {
            self.move_center(k);
        }
        let (dl, dr) = (self.tensors[k].dl, self.tensors[k + 1].dr);
        let theta = self.tensors[k].left_matrix() * self.tensors[k + 1].right_matrix();
        let mut out = Mat::<c64>::zeros(dl * 4, 4 * dr);
        for &(row, col, v) in &gate.entries {
            let (pl, pr) = ((row / 4) as usize, (row % 4) as usize);
            let (ql, qr) = ((col / 4) as usize, (col % 4) as usize);
            for b in 0..dr {
                let (oc, ic) = (pr * dr + b, qr * dr + b);
                for a in 0..dl {
                    let x = theta[(a * 4 + ql, ic)];
                    if x != ZERO {
                        out[(a * 4 + pl, oc)] += v * x;
                    }
                }
            }
        }
        match self.truncation.scheme {
            Scheme::Svd => self.split_svd(k, &out, rightward)?,
            Scheme::Dmt => self.split_dmt(k, &out, rightward)?,
        }
        self.log.max_bond = self.log.max_bond.max(self.bonds[k + 1].len());
        self.center = if rightward { k + 1 } else { k };
        self.absorb_center_norm();
        if matches!(gate.kind, GateKind::Swap | GateKind::BathFwd(..) | GateKind::BathBwd(..)) {
            self.order.swap(k, k + 1);
        }
        Ok(())
    }

    fn split_svd(&mut self, k: usize, out: &Mat<c64>, rightward: bool) -> Result<()> {
        let (dl, dr) = (self.tensors[k].dl, self.tensors[k + 1].dr);
        let row_q = self.row_charges(k);
        let col_q = self.col_charges(k + 1);
        let mut sectors: Vec<i32> = row_q.clone();
        sectors.sort_unstable();
        sectors.dedup();
        let blocks = sectors
            .into_par_iter()
            .filter_map(|q| {
                let rows: Vec<usize> = (0..row_q.len()).filter(|&r| row_q[r] == q).collect();
                let cols: Vec<usize> = (0..col_q.len()).filter(|&c| col_q[c] == q).collect();
                if cols.is_empty() {
                    return None;
                }
                let sub = Mat::from_fn(rows.len(), cols.len(), |i, j| out[(rows[i], cols[j])]);
                Some(
                    sub.thin_svd()
                        .map(|svd| (q, rows, cols, svd))
                        .map_err(|e| Error::LinAlg(format!("two-site SVD: {e:?}"))),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        // (singular value, block, index within block), largest first
        let mut triplets: Vec<(f64, usize, usize)> = Vec::new();
        for (bi, (_, _, _, svd)) in blocks.iter().enumerate() {
            let sv = svd.S().column_vector();
            triplets.extend((0..sv.nrows()).map(|i| (sv[i].re, bi, i)));
        }
        triplets.sort_by(|a, b| b.0.total_cmp(&a.0));
        let s: Vec<f64> = triplets.iter().map(|t| t.0).collect();
        let total: f64 = s.iter().map(|x| x * x).sum();
        let keep = self.keep_count(&s, k, self.truncation.chi_max, total).max(1).min(s.len().max(1));
        let mut left = Mat::<c64>::zeros(dl * 4, keep.max(1));
        let mut right = Mat::<c64>::zeros(keep.max(1), 4 * dr);
        let mut charges = Vec::with_capacity(keep.max(1));
        for (i, &(sv, bi, j)) in triplets.iter().take(keep).enumerate() {
            let (q, rows, cols, svd) = &blocks[bi];
            let (u, v) = (svd.U(), svd.V());
            let (sl, sr) = if rightward { (1.0, sv) } else { (sv, 1.0) };
            for (x, &r) in rows.iter().enumerate() {
                left[(r, i)] = u[(x, j)] * sl;
            }
            for (y, &c) in cols.iter().enumerate() {
                right[(i, c)] = v[(y, j)].conj() * sr;
            }
            charges.push(*q);
        }
        if charges.is_empty() {
            charges.push(0);
        }
        self.bonds[k + 1] = charges;
        self.tensors[k] = Tensor::from_left_matrix(&left);
        self.tensors[k + 1] = Tensor::from_right_matrix(&right);
        Ok(())
    }

    /// Contraction of positions `..k` with the identity: a vector on bond `k`.
    fn left_identity_env(&self, k: usize) -> Vec<c64> {
        let mut env = vec![ONE];
        for t in &self.tensors[..k] {
            let m = t.contract_physical(&W_IDENTITY);
            env = (0..t.dr).map(|b| (0..t.dl).map(|a| env[a] * m[a * t.dr + b]).sum()).collect();
        }
        env
    }

    /// Contraction of positions `k..` with the identity: a vector on bond `k`.
    fn right_identity_env(&self, k: usize) -> Vec<c64> {
        let mut env = vec![ONE];
        for t in self.tensors[k..].iter().rev() {
            let m = t.contract_physical(&W_IDENTITY);
            env = (0..t.dl).map(|a| (0..t.dr).map(|b| m[a * t.dr + b] * env[b]).sum()).collect();
        }
        env
    }

    /// Split preserving `Tr(ρ O_k O_{k+1})` for every pair of local operators.
    ///
    /// Rows and columns of the block are rotated so that the first few span
    /// the identity environments times a local basis element; those rows and
    /// columns are kept verbatim and only the complementary block is
    /// truncated.
    fn split_dmt(&mut self, k: usize, out: &Mat<c64>, rightward: bool) -> Result<()> {
        let (dl, dr) = (self.tensors[k].dl, self.tensors[k + 1].dr);
        let el = self.left_identity_env(k);
        let er = self.right_identity_env(k + 2);
        let row_q = self.row_charges(k);
        let col_q = self.col_charges(k + 1);
        let (bl, br) = (&self.bonds[k], &self.bonds[k + 2]);
        let mut sectors: Vec<i32> = row_q.clone();
        sectors.sort_unstable();
        sectors.dedup();
        let blocks = sectors
            .into_par_iter()
            .filter_map(|q| {
                let rows: Vec<usize> = (0..row_q.len()).filter(|&r| row_q[r] == q).collect();
                let cols: Vec<usize> = (0..col_q.len()).filter(|&c| col_q[c] == q).collect();
                if cols.is_empty() {
                    return None;
                }
                let pu: Vec<Vec<c64>> = (0..4)
                    .map(|p| rows.iter().map(|&r| if r % 4 == p && bl[r / 4] == 0 { el[r / 4] } else { ZERO }).collect())
                    .filter(|v: &Vec<c64>| norm(v) > 0.0)
                    .collect();
                let pv: Vec<Vec<c64>> = (0..4)
                    .map(|p| cols.iter().map(|&c| if c / dr == p && br[c % dr] == 0 { er[c % dr] } else { ZERO }).collect())
                    .filter(|v: &Vec<c64>| norm(v) > 0.0)
                    .collect();
                let sub = Mat::from_fn(rows.len(), cols.len(), |i, j| out[(rows[i], cols[j])]);
                Some(DmtBlock::new(q, rows, cols, &sub, &pu, &pv))
            })
            .collect::<Result<Vec<_>>>()?;
        let total: f64 = out.squared_norm_l2();
        let preserved: usize = blocks.iter().map(|b| b.nl + b.nr).sum();
        let mut triplets: Vec<(f64, usize, usize)> = Vec::new();
        for (bi, b) in blocks.iter().enumerate() {
            triplets.extend(b.sv.iter().enumerate().map(|(i, &x)| (x, bi, i)));
        }
        triplets.sort_by(|a, b| b.0.total_cmp(&a.0));
        let s: Vec<f64> = triplets.iter().map(|t| t.0).collect();
        let cap = self.truncation.chi_max.saturating_sub(preserved);
        let keep = self.keep_count(&s, k, cap, total);
        let mut kept: Vec<Vec<usize>> = vec![Vec::new(); blocks.len()];
        for &(_, bi, i) in &triplets[..keep] {
            kept[bi].push(i);
        }
        let parts = blocks
            .par_iter()
            .zip(kept.par_iter())
            .map(|(b, kept)| b.factor(kept, rightward))
            .collect::<Vec<_>>();
        let width: usize = parts.iter().map(|(l, _)| l.ncols()).sum();
        let mut left = Mat::<c64>::zeros(dl * 4, width.max(1));
        let mut right = Mat::<c64>::zeros(width.max(1), 4 * dr);
        let mut charges = Vec::with_capacity(width.max(1));
        for (b, (l, r)) in blocks.iter().zip(&parts) {
            let off = charges.len();
            for i in 0..l.ncols() {
                for (x, &row) in b.rows.iter().enumerate() {
                    left[(row, off + i)] = l[(x, i)];
                }
                for (y, &col) in b.cols.iter().enumerate() {
                    right[(off + i, col)] = r[(i, y)];
                }
                charges.push(b.q);
            }
        }
        if charges.is_empty() {
            charges.push(0);
        }
        self.bonds[k + 1] = charges;
        self.tensors[k] = Tensor::from_left_matrix(&left);
        self.tensors[k + 1] = Tensor::from_right_matrix(&right);
        Ok(())
    }

    /// Number of leading values of the descending `s` to keep: drops the
    /// longest tail whose weight relative to `total` is below the cutoff,
    /// values under the floor, and anything beyond `cap`.
    fn keep_count(&mut self, s: &[f64], k: usize, cap: usize, total: f64) -> usize {
        if total <= 0.0 || s.is_empty() {
            return 0;
        }
        let floor = SV_FLOOR * s[0];
        let mut keep = s.iter().take_while(|&&x| x > floor).count();
        let mut tail = s[keep..].iter().map(|x| x * x).sum::<f64>() / total;
        while keep > 0 {
            let next = tail + s[keep - 1] * s[keep - 1] / total;
            if next >= self.truncation.cutoff {
                break;
            }
            tail = next;
            keep -= 1;
        }
        keep = keep.min(cap);
        let discarded: f64 = s[keep..].iter().map(|x| x * x).sum::<f64>() / total;
        self.log.splits += 1;
        self.log.total_discarded += discarded;
        self.log.max_discarded = self.log.max_discarded.max(discarded);
        if keep == cap && discarded > WARN_WEIGHT && self.log.warnings.len() < 100 {
            self.log.warnings.push(format!("bond {k} capped at χ={keep} discarding weight {discarded:.2e}"));
        }
        keep
    }

    /// `Σ_p Π_pos w_pos[p_pos] T…`, scaled; `weights` overrides the identity at
    /// the listed positions.
    pub fn contract(&self, weights: &[(usize, [c64; 4])]) -> c64 {
        let mut env = vec![ONE];
        for (pos, t) in self.tensors.iter().enumerate() {
            let w = weights.iter().find(|(p, _)| *p == pos).map_or(W_IDENTITY, |x| x.1);
            let m = t.contract_physical(&w);
            let mut next = vec![ZERO; t.dr];
            for (a, e) in env.iter().enumerate() {
                if *e == ZERO {
                    continue;
                }
                for b in 0..t.dr {
                    next[b] += *e * m[a * t.dr + b];
                }
            }
            env = next;
        }
        env[0] * self.log_scale.exp()
    }

    pub fn trace(&self) -> c64 {
        self.contract(&[])
    }

    /// `Tr(Oρ)/Tr ρ`; the imaginary residue must be below `1e-8`.
    pub fn expectation(&self, weights: &[(usize, [c64; 4])]) -> Result<f64> {
        let v = self.contract(weights) / self.trace();
        if v.im.abs() > 1e-8 {
            return Err(Error::LinAlg(format!("non-real expectation value {v}")));
        }
        Ok(v.re)
    }

    /// `⟨c†_p c_q⟩/Tr ρ` for layout modes `p`, `q` in the current ordering.
    pub fn correlation(&self, p: usize, q: usize) -> c64 {
        let (x, y) = (self.position_of(p), self.position_of(q));
        let w = if p == q {
            vec![(x, W_NUMBER)]
        } else {
            let mut w = vec![(x, W_RAISE), (y, W_LOWER)];
            for z in x.min(y) + 1..x.max(y) {
                w.push((z, W_PARITY));
            }
            w
        };
        self.contract(&w) / self.trace()
    }

    /// Occupations and bond currents of the system sites.
    pub fn observables(&self) -> Observables {
        let n = self.layout.system;
        let s0 = self.layout.system_offset();
        let mut c = Mat::<c64>::zeros(n, n);
        for l in 0..n {
            c[(l, l)] = c64::new(self.correlation(s0 + l, s0 + l).re, 0.0);
            if l + 1 < n {
                c[(l, l + 1)] = self.correlation(s0 + l, s0 + l + 1);
                c[(l + 1, l)] = self.correlation(s0 + l + 1, s0 + l);
            }
        }
        Observables::from_correlations(&c)
    }

    /// Contracts every bath site with the vectorized identity; the result is
    /// a left-canonical system-only MPS.
    pub fn trace_out_baths(&self) -> Result<VectorizedMps> {
        if !self.is_original_order() {
            return Err(Error::Schedule("trace-out requires the original mode ordering".into()));
        }
        let Layout { bath1, system, .. } = self.layout;
        let mut left = vec![ONE];
        for t in &self.tensors[..bath1] {
            let m = t.contract_physical(&W_IDENTITY);
            left = (0..t.dr).map(|b| (0..t.dl).map(|a| left[a] * m[a * t.dr + b]).sum()).collect();
        }
        let mut right = vec![ONE];
        for t in self.tensors[bath1 + system..].iter().rev() {
            let m = t.contract_physical(&W_IDENTITY);
            right = (0..t.dl).map(|a| (0..t.dr).map(|b| m[a * t.dr + b] * right[b]).sum()).collect();
        }
        let mut sys: Vec<Tensor> = self.tensors[bath1..bath1 + system].to_vec();
        let first = &sys[0];
        let mut t0 = Tensor { dl: 1, dr: first.dr, data: vec![ZERO; 4 * first.dr] };
        for p in 0..4 {
            for b in 0..first.dr {
                t0.data[p * first.dr + b] = (0..first.dl).map(|a| left[a] * first.data[(a * 4 + p) * first.dr + b]).sum();
            }
        }
        sys[0] = t0;
        let last = sys.last().unwrap().clone();
        let mut tl = Tensor { dl: last.dl, dr: 1, data: vec![ZERO; last.dl * 4] };
        for a in 0..last.dl {
            for p in 0..4 {
                tl.data[a * 4 + p] = (0..last.dr).map(|b| last.data[(a * 4 + p) * last.dr + b] * right[b]).sum();
            }
        }
        *sys.last_mut().unwrap() = tl;
        let mut bonds = vec![vec![0]];
        bonds.extend(self.bonds[bath1 + 1..bath1 + system].iter().cloned());
        bonds.push(vec![0]);
        let mut out =
            VectorizedMps::from_tensors(sys, bonds, self.log_scale, Layout { bath1: 0, system, bath2: 0 }, self.truncation)?;
        out.log = self.log.clone();
        Ok(out)
    }

    /// Dense `ρ` of a small MPS in the JW basis (mode 0 most significant).
    pub fn to_dense(&self) -> Result<Mat<c64>> {
        let n = self.len();
        if n > 8 {
            return Err(Error::TooManyModes(n));
        }
        // amplitudes over p_0 … p_{n−1}, most significant first
        let mut amps: Vec<Vec<c64>> = vec![vec![ONE]];
        for t in &self.tensors {
            let mut next = Vec::with_capacity(amps.len() * 4);
            for env in &amps {
                for p in 0..4 {
                    let v: Vec<c64> = (0..t.dr)
                        .map(|b| (0..t.dl).map(|a| env[a] * t.data[(a * 4 + p) * t.dr + b]).sum())
                        .collect();
                    next.push(v);
                }
            }
            amps = next;
        }
        let dim = 1usize << n;
        let scale = self.log_scale.exp();
        let mut rho = Mat::<c64>::zeros(dim, dim);
        for (idx, a) in amps.iter().enumerate() {
            let (mut i, mut j) = (0usize, 0usize);
            for k in 0..n {
                let p = (idx >> (2 * (n - 1 - k))) & 3;
                i = (i << 1) | (p >> 1);
                j = (j << 1) | (p & 1);
            }
            rho[(i, j)] = a[0] * scale;
        }
        Ok(rho)
    }
}

/// Moves the centre to the first system site and routes that site to the
/// left end with plain swaps.
pub fn initial_step(mps: &mut VectorizedMps, gates: &GateSet) -> Result<()> {
    let s0 = mps.layout.system_offset();
    mps.move_center(mps.position_of(s0));
    for k in (0..mps.position_of(s0)).rev() {
        mps.apply_gate(k, &gates.swap, false)?;
    }
    Ok(())
}

/// `(∏ U^{2B}_f)(∏ U_m)(∏ U^{1B}_f)`, each for `dt/2`.
pub fn half_sweep_forward(mps: &mut VectorizedMps, gates: &GateSet) -> Result<()> {
    let s0 = mps.layout.system_offset();
    if mps.position_of(s0) != 0 || mps.center != 0 {
        return Err(Error::Schedule("forward sweep needs the first system site at the left end".into()));
    }
    for (k, g) in gates.bath_fwd[0].iter().enumerate() {
        mps.apply_gate(k, g, true)?;
    }
    let base = mps.layout.bath1;
    for (m, g) in gates.system.iter().enumerate() {
        mps.apply_gate(base + m, g, true)?;
    }
    let start = base + mps.layout.system - 1;
    for (a, g) in gates.bath_fwd[1].iter().enumerate() {
        mps.apply_gate(start + a, g, true)?;
    }
    Ok(())
}

/// `(∏ U^{1B}_b)(∏ U_m)(∏ U^{2B}_b)`, the mirror of the forward sweep.
pub fn half_sweep_backward(mps: &mut VectorizedMps, gates: &GateSet) -> Result<()> {
    let last_mode = mps.layout.bath2_offset() - 1;
    let end = mps.len() - 1;
    if mps.position_of(last_mode) != end || mps.center != end {
        return Err(Error::Schedule("backward sweep needs the last system site at the right end".into()));
    }
    let start = mps.layout.bath1 + mps.layout.system - 1;
    for (a, g) in gates.bath_bwd[1].iter().enumerate().rev() {
        mps.apply_gate(start + a, g, false)?;
    }
    let base = mps.layout.bath1;
    for (m, g) in gates.system.iter().enumerate().rev() {
        mps.apply_gate(base + m, g, false)?;
    }
    for (k, g) in gates.bath_bwd[0].iter().enumerate().rev() {
        mps.apply_gate(k, g, false)?;
    }
    Ok(())
}

/// Returns the first system site to its place and left-canonicalizes.
pub fn final_step(mps: &mut VectorizedMps, gates: &GateSet) -> Result<()> {
    let s0 = mps.layout.system_offset();
    let mut k = mps.position_of(s0);
    if mps.center != k {
        mps.move_center(k);
    }
    while k < s0 {
        mps.apply_gate(k, &gates.swap, true)?;
        k += 1;
    }
    if !mps.is_original_order() {
        return Err(Error::Schedule("final step did not restore the mode ordering".into()));
    }
    let end = mps.len() - 1;
    mps.move_center(end);
    Ok(())
}

/// Evolves for `steps` Trotter steps, calling `record(step, mps)` after every
/// step that is a multiple of `stride` (and after the last).
pub fn evolve<F>(mps: &mut VectorizedMps, gates: &GateSet, steps: usize, stride: usize, mut record: F) -> Result<()>
where
    F: FnMut(usize, &VectorizedMps) -> Result<()>,
{
    initial_step(mps, gates)?;
    for step in 1..=steps {
        half_sweep_forward(mps, gates)?;
        half_sweep_backward(mps, gates)?;
        if step % stride.max(1) == 0 || step == steps {
            record(step, mps)?;
        }
    }
    final_step(mps, gates)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chainmap::mapped_bath;
    use crate::freefermion::{assemble_hamiltonian, CorrelationMatrix, Trajectory};
    use crate::spectral::{SpectralDensity, ThermalParams};

    fn baths(n: usize) -> (ChainBath, ChainBath) {
        let d1 = SpectralDensity::semicircle(1.0, 2.0).unwrap();
        let d2 = SpectralDensity::semicircle(2.0, 2.0).unwrap();
        (
            mapped_bath(&d1, n, ThermalParams::fermi(0.1, 1.5).unwrap()).unwrap(),
            mapped_bath(&d2, n, ThermalParams::fermi(0.2, -1.5).unwrap()).unwrap(),
        )
    }

    fn is_left_isometry(t: &Tensor) -> f64 {
        let m = t.left_matrix();
        let g = m.adjoint() * &m;
        crate::linalg::max_abs_diff(&g, &Mat::identity(t.dr, t.dr))
    }

    fn is_right_isometry(t: &Tensor) -> f64 {
        let m = t.right_matrix();
        let g = &m * m.adjoint();
        crate::linalg::max_abs_diff(&g, &Mat::identity(t.dl, t.dl))
    }

    #[test]
    fn initial_product_state() {
        let (b1, b2) = baths(3);
        let sys = SystemSpec::new(4, 0.0, 0.0).unwrap();
        let mps = initial_state(&sys, &Pattern::Alternating, &b1, &b2, Truncation::default()).unwrap();
        assert!((mps.trace() - 1.0).norm() < 1e-14);
        let o = mps.observables();
        for (a, b) in o.occupations.iter().zip([1.0, 0.0, 1.0, 0.0]) {
            assert!((a - b).abs() < 1e-14);
        }
        assert!(o.currents.iter().all(|c| c.abs() < 1e-15));
        let hot = mapped_bath(&SpectralDensity::semicircle(1.0, 2.0).unwrap(), 2, ThermalParams::fermi(0.0, 0.0).unwrap()).unwrap();
        let m2 = initial_state(&sys, &Pattern::Alternating, &hot, &hot, Truncation::default()).unwrap();
        assert!((m2.correlation(0, 0).re - 0.5).abs() < 1e-14);
    }

    #[test]
    fn swap_network_round_trip() {
        let (mut b1, mut b2) = baths(3);
        b1.gamma = 0.0;
        b2.gamma = 0.0;
        let sys = SystemSpec::new(3, 0.0, 0.0).unwrap();
        let mut gates = build_gates(&sys, &b1, &b2, 0.1).unwrap();
        // no Hamiltonian anywhere: every gate is a pure (composite) swap
        let id = gates::identity();
        for g in gates.system.iter_mut() {
            *g = Gate::new(g.kind, id);
        }
        for l in 0..2 {
            for g in gates.bath_fwd[l].iter_mut().chain(gates.bath_bwd[l].iter_mut()) {
                *g = Gate::new(g.kind, gates::swap());
            }
        }
        let mps0 = initial_state(&sys, &Pattern::Custom(vec![1, 1, 0]), &b1, &b2, Truncation::default()).unwrap();
        let mut mps = mps0.clone();
        evolve(&mut mps, &gates, 3, 1, |_, m| {
            let o = m.observables();
            assert!((o.occupations[0] - 1.0).abs() < 1e-10 && o.occupations[2].abs() < 1e-10);
            Ok(())
        })
        .unwrap();
        assert!(mps.is_original_order());
        let a = mps.observables();
        let b = mps0.observables();
        assert!(a.max_deviation(&b) < 1e-10);
        for m in 0..mps.len() {
            assert!((mps.correlation(m, m) - mps0.correlation(m, m)).norm() < 1e-10);
        }
    }

    #[test]
    fn canonical_flags_hold() {
        let (b1, b2) = baths(2);
        let sys = SystemSpec::new(3, 1.0, 0.5).unwrap();
        let gates = build_gates(&sys, &b1, &b2, 0.1).unwrap();
        let mut mps = initial_state(&sys, &Pattern::Alternating, &b1, &b2, Truncation::new(32, 1e-12)).unwrap();
        evolve(&mut mps, &gates, 5, 5, |_, _| Ok(())).unwrap();
        for pos in 0..mps.len() {
            match mps.canon(pos) {
                Canon::Left => assert!(is_left_isometry(&mps.tensors[pos]) < 1e-10),
                Canon::Right => assert!(is_right_isometry(&mps.tensors[pos]) < 1e-10),
                Canon::Center => {}
            }
        }
        initial_step(&mut mps, &gates).unwrap();
        for pos in 1..mps.len() {
            assert!(is_right_isometry(&mps.tensors[pos]) < 1e-10);
        }
    }

    #[test]
    fn trace_kept_per_sweep() {
        let (b1, b2) = baths(3);
        let sys = SystemSpec::new(3, 1.0, 1.0).unwrap();
        let gates = build_gates(&sys, &b1, &b2, 0.1).unwrap();
        let mut mps = initial_state(&sys, &Pattern::Alternating, &b1, &b2, Truncation::new(256, 0.0)).unwrap();
        initial_step(&mut mps, &gates).unwrap();
        for _ in 0..10 {
            half_sweep_forward(&mut mps, &gates).unwrap();
            assert!((mps.trace() - 1.0).norm() < 1e-10);
            half_sweep_backward(&mut mps, &gates).unwrap();
            assert!((mps.trace() - 1.0).norm() < 1e-10);
        }
    }

    #[test]
    fn free_case_tracks_gaussian_dynamics() {
        let (b1, b2) = baths(3);
        let sys = SystemSpec::new(3, 0.0, 0.6).unwrap();
        let gates = build_gates(&sys, &b1, &b2, 0.05).unwrap();
        let mut mps = initial_state(&sys, &Pattern::Alternating, &b1, &b2, Truncation::new(64, 1e-12)).unwrap();
        let h = assemble_hamiltonian(&sys, &b1, &b2).unwrap();
        let c0 = CorrelationMatrix::initial(&sys, &Pattern::Alternating, &b1, &b2).unwrap();
        let traj = Trajectory::new(&h, &c0).unwrap();
        let mut worst: f64 = 0.0;
        evolve(&mut mps, &gates, 40, 10, |step, m| {
            let exact = Observables::from_correlations(&traj.system_block_at(step as f64 * 0.05));
            worst = worst.max(m.observables().max_deviation(&exact));
            Ok(())
        })
        .unwrap();
        assert!(worst < 2e-3, "worst deviation {worst}");
    }

    #[test]
    fn dmt_keeps_trace_and_local_values() {
        let (b1, b2) = baths(3);
        let sys = SystemSpec::new(4, 1.0, 0.3).unwrap();
        let gates = build_gates(&sys, &b1, &b2, 0.1).unwrap();
        let mut mps = initial_state(&sys, &Pattern::Alternating, &b1, &b2, Truncation::new(64, 1e-14)).unwrap();
        evolve(&mut mps, &gates, 10, 10, |_, _| Ok(())).unwrap();
        let k = mps.layout.system_offset() + 1;
        let local = |m: &VectorizedMps| -> Vec<c64> {
            let (p, q) = (m.order[k], m.order[k + 1]);
            vec![m.correlation(p, p), m.correlation(q, q), m.correlation(p, q), m.contract(&[(k, W_NUMBER), (k + 1, W_NUMBER)])]
        };
        let before = local(&mps);
        let tr0 = mps.trace();
        let mut dmt = mps.clone();
        dmt.truncation = Truncation { chi_max: 12, cutoff: 0.0, scheme: Scheme::Dmt };
        dmt.apply_gate(k, &Gate::new(GateKind::Identity, gates::identity()), true).unwrap();
        assert!(dmt.bonds[k + 1].len() <= 12 && mps.bonds[k + 1].len() > 12, "{}", mps.bonds[k + 1].len());
        assert!((dmt.trace() - tr0).norm() < 1e-12);
        for (a, b) in local(&dmt).iter().zip(&before) {
            assert!((a - b).norm() < 1e-12, "{a} vs {b}");
        }
        let mut svd = mps.clone();
        svd.truncation = Truncation { chi_max: 12, cutoff: 0.0, scheme: Scheme::Svd };
        svd.apply_gate(k, &Gate::new(GateKind::Identity, gates::identity()), true).unwrap();
        assert!((svd.trace() - tr0).norm() > 1e-6);
    }

    #[test]
    fn charges_are_respected() {
        let (b1, b2) = baths(3);
        let sys = SystemSpec::new(3, 1.0, 0.0).unwrap();
        let gates = build_gates(&sys, &b1, &b2, 0.1).unwrap();
        let mut mps = initial_state(&sys, &Pattern::Alternating, &b1, &b2, Truncation::new(16, 1e-12)).unwrap();
        evolve(&mut mps, &gates, 5, 5, |_, _| Ok(())).unwrap();
        for (k, t) in mps.tensors.iter().enumerate() {
            for a in 0..t.dl {
                for p in 0..4 {
                    for b in 0..t.dr {
                        if mps.bonds[k + 1][b] != mps.bonds[k][a] + CHARGE[p] {
                            assert_eq!(t.data[(a * 4 + p) * t.dr + b], ZERO);
                        }
                    }
                }
            }
        }
        assert_eq!(mps.bonds[0], vec![0]);
        assert_eq!(mps.bonds[mps.len()], vec![0]);
    }

    #[test]
    fn trace_out_of_product_state() {
        let (b1, b2) = baths(2);
        let sys = SystemSpec::new(2, 0.0, 0.0).unwrap();
        let mps = initial_state(&sys, &Pattern::Custom(vec![0, 1]), &b1, &b2, Truncation::default()).unwrap();
        let s = mps.trace_out_baths().unwrap();
        assert!((s.trace() - mps.trace()).norm() < 1e-12);
        let rho = s.to_dense().unwrap();
        // |01⟩⟨01| is basis index 1
        for i in 0..4 {
            for j in 0..4 {
                let target = if i == 1 && j == 1 { 1.0 } else { 0.0 };
                assert!((rho[(i, j)] - target).norm() < 1e-12);
            }
        }
    }
}
