//! Binary checkpoints of a [`VectorizedMps`].
//!
//! Layout (little endian): magic `PREBMPS\0`, `u32` version, layout
//! `(bath1, system, bath2)` as `u64`, `chi_max: u64`, `cutoff: f64`, scheme `u8` (0 SVD, 1 DMT),
//! `center: u64`, `log_scale: f64`, site count `u64`, the ordering as `u64`s,
//! then per tensor `dl: u64`, `dr: u64` and `dl·4·dr` pairs `(re, im)`, then
//! the right-bond charges of every tensor as `i32`s.

use std::io::{Read, Write};

use num_complex::Complex64 as c64;

use super::{Scheme, Tensor, Truncation, TruncationLog, VectorizedMps};
use crate::error::{Error, Result};
use crate::freefermion::Layout;

pub const MAGIC: &[u8; 8] = b"PREBMPS\0";
pub const VERSION: u32 = 1;

fn put_u64(w: &mut impl Write, v: usize) -> Result<()> {
    w.write_all(&(v as u64).to_le_bytes())?;
    Ok(())
}

fn put_f64(w: &mut impl Write, v: f64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn get_u64(r: &mut impl Read) -> Result<usize> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    usize::try_from(u64::from_le_bytes(b)).map_err(|_| Error::Checkpoint("size overflow".into()))
}

fn get_f64(r: &mut impl Read) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

pub fn write_checkpoint(mps: &VectorizedMps, w: &mut impl Write) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    for v in [mps.layout.bath1, mps.layout.system, mps.layout.bath2, mps.truncation.chi_max] {
        put_u64(w, v)?;
    }
    put_f64(w, mps.truncation.cutoff)?;
    w.write_all(&[match mps.truncation.scheme {
        Scheme::Svd => 0u8,
        Scheme::Dmt => 1,
    }])?;
    put_u64(w, mps.center)?;
    put_f64(w, mps.log_scale)?;
    put_u64(w, mps.len())?;
    for &m in &mps.order {
        put_u64(w, m)?;
    }
    for t in &mps.tensors {
        put_u64(w, t.dl)?;
        put_u64(w, t.dr)?;
        for x in &t.data {
            put_f64(w, x.re)?;
            put_f64(w, x.im)?;
        }
    }
    for b in &mps.bonds[1..] {
        for &q in b {
            w.write_all(&q.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_checkpoint(r: &mut impl Read) -> Result<VectorizedMps> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("not an MPS checkpoint".into()));
    }
    let mut v = [0u8; 4];
    r.read_exact(&mut v)?;
    let version = u32::from_le_bytes(v);
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
    }
    let layout = Layout { bath1: get_u64(r)?, system: get_u64(r)?, bath2: get_u64(r)? };
    let chi_max = get_u64(r)?;
    let cutoff = get_f64(r)?;
    let mut sb = [0u8; 1];
    r.read_exact(&mut sb)?;
    let scheme = match sb[0] {
        0 => Scheme::Svd,
        1 => Scheme::Dmt,
        x => return Err(Error::Checkpoint(format!("unknown truncation scheme {x}"))),
    };
    let center = get_u64(r)?;
    let log_scale = get_f64(r)?;
    let n = get_u64(r)?;
    if n != layout.dim() {
        return Err(Error::Checkpoint("site count does not match layout".into()));
    }
    let order = (0..n).map(|_| get_u64(r)).collect::<Result<Vec<_>>>()?;
    let mut tensors = Vec::with_capacity(n);
    for _ in 0..n {
        let (dl, dr) = (get_u64(r)?, get_u64(r)?);
        if dl.saturating_mul(dr) > 1 << 28 {
            return Err(Error::Checkpoint("implausible bond dimension".into()));
        }
        let data = (0..dl * 4 * dr)
            .map(|_| Ok(c64::new(get_f64(r)?, get_f64(r)?)))
            .collect::<Result<Vec<_>>>()?;
        tensors.push(Tensor { dl, dr, data });
    }
    for w in tensors.windows(2) {
        if w[0].dr != w[1].dl {
            return Err(Error::Checkpoint("inconsistent bond dimensions".into()));
        }
    }
    let mut bonds = vec![vec![0i32; tensors.first().map_or(1, |t| t.dl)]];
    for t in &tensors {
        let mut b = Vec::with_capacity(t.dr);
        for _ in 0..t.dr {
            let mut x = [0u8; 4];
            r.read_exact(&mut x)?;
            b.push(i32::from_le_bytes(x));
        }
        bonds.push(b);
    }
    for (t, w) in tensors.iter().zip(bonds.windows(2)) {
        for a in 0..t.dl {
            for p in 0..4 {
                for b in 0..t.dr {
                    if w[1][b] != w[0][a] + super::CHARGE[p] && t.data[(a * 4 + p) * t.dr + b] != c64::new(0.0, 0.0) {
                        return Err(Error::Checkpoint("tensor violates its bond charges".into()));
                    }
                }
            }
        }
    }
    if center >= n.max(1) {
        return Err(Error::Checkpoint("centre out of range".into()));
    }
    Ok(VectorizedMps {
        tensors,
        bonds,
        order,
        center,
        log_scale,
        layout,
        truncation: Truncation { chi_max, cutoff, scheme },
        log: TruncationLog::default(),
    })
}
