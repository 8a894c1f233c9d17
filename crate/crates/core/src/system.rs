//! The interacting chain between the two baths and its observables.

use faer::Mat;
use num_complex::Complex64 as c64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `H_S = Σ (c†_ℓ c_{ℓ+1} + h.c. + V n_ℓ n_{ℓ+1}) + h Σ_{ℓ odd} n_ℓ`, hopping 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemSpec {
    pub sites: usize,
    pub interaction: f64,
    pub field: f64,
}

impl SystemSpec {
    pub fn new(sites: usize, interaction: f64, field: f64) -> Result<Self> {
        if sites < 2 {
            return Err(Error::Dimension(format!("system needs at least 2 sites, got {sites}")));
        }
        if !interaction.is_finite() || !field.is_finite() {
            return Err(Error::Dimension("non-finite system parameter".into()));
        }
        Ok(Self { sites, interaction, field })
    }

    /// Staggered field on site `l` (0-based): sites 1, 3, 5, … in 1-based
    /// counting.
    pub fn onsite(&self, l: usize) -> f64 {
        if l % 2 == 0 {
            self.field
        } else {
            0.0
        }
    }

    /// Single-particle part `H_{ℓm}` (the `V` term is dropped).
    pub fn single_particle(&self) -> Mat<f64> {
        let n = self.sites;
        Mat::from_fn(n, n, |i, j| {
            if i == j {
                self.onsite(i)
            } else if i.abs_diff(j) == 1 {
                1.0
            } else {
                0.0
            }
        })
    }

    pub fn is_free(&self) -> bool {
        self.interaction == 0.0
    }
}

/// Initial product occupation of the system sites.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Pattern {
    /// 1, 0, 1, 0, … from the first site.
    #[default]
    Alternating,
    /// 0, 1, 0, 1, … from the first site.
    AlternatingShifted,
    Empty,
    Full,
    /// Explicit 0/1 per site.
    Custom(Vec<u8>),
}

impl Pattern {
    pub fn occupations(&self, sites: usize) -> Result<Vec<f64>> {
        let occ: Vec<f64> = match self {
            Pattern::Alternating => (0..sites).map(|l| ((l + 1) % 2) as f64).collect(),
            Pattern::AlternatingShifted => (0..sites).map(|l| (l % 2) as f64).collect(),
            Pattern::Empty => vec![0.0; sites],
            Pattern::Full => vec![1.0; sites],
            Pattern::Custom(v) => {
                if v.len() != sites || v.iter().any(|&x| x > 1) {
                    return Err(Error::Dimension(format!(
                        "pattern must list {sites} occupations of 0 or 1"
                    )));
                }
                v.iter().map(|&x| x as f64).collect()
            }
        };
        Ok(occ)
    }
}

/// Site occupations `n_ℓ` and bond currents `I_ℓ = 2i⟨c†_{ℓ+1}c_ℓ − c†_ℓc_{ℓ+1}⟩`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observables {
    pub occupations: Vec<f64>,
    pub currents: Vec<f64>,
}

impl Observables {
    /// From the system block `C_pq = ⟨c†_p c_q⟩`.
    pub fn from_correlations(c: &Mat<c64>) -> Self {
        let n = c.nrows();
        let occupations = (0..n).map(|l| c[(l, l)].re).collect();
        let currents = (0..n.saturating_sub(1))
            .map(|l| {
                let v = c64::new(0.0, 2.0) * (c[(l + 1, l)] - c[(l, l + 1)]);
                v.re
            })
            .collect();
        Self { occupations, currents }
    }

    /// All tracked values, occupations first.
    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.occupations.iter().chain(&self.currents).copied()
    }

    pub fn max_deviation(&self, other: &Self) -> f64 {
        self.values()
            .zip(other.values())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Spread `max I − min I` of the bond currents.
    pub fn current_spread(&self) -> f64 {
        let max = self.currents.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = self.currents.iter().copied().fold(f64::INFINITY, f64::min);
        if self.currents.is_empty() {
            0.0
        } else {
            max - min
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn field_sits_on_odd_sites() {
        let s = SystemSpec::new(2, 0.0, 5.0).unwrap();
        let h = s.single_particle();
        assert_eq!((h[(0, 0)], h[(1, 1)], h[(0, 1)], h[(1, 0)]), (5.0, 0.0, 1.0, 1.0));
    }

    #[test]
    fn patterns() {
        assert_eq!(Pattern::Alternating.occupations(4).unwrap(), vec![1.0, 0.0, 1.0, 0.0]);
        assert_eq!(Pattern::AlternatingShifted.occupations(3).unwrap(), vec![0.0, 1.0, 0.0]);
        assert!(Pattern::Custom(vec![1, 0]).occupations(3).is_err());
    }

    #[test]
    fn current_from_correlations() {
        // ⟨c†_1 c_0⟩ = i/4, ⟨c†_0 c_1⟩ = −i/4  ⇒  I = 2i(i/4 + i/4) = −1
        let mut c = Mat::<c64>::zeros(2, 2);
        c[(1, 0)] = c64::new(0.0, 0.25);
        c[(0, 1)] = c64::new(0.0, -0.25);
        let o = Observables::from_correlations(&c);
        assert!((o.currents[0] + 1.0).abs() < 1e-15);
    }
}
