//! Transitive/cyclic decomposition of a finite preference game.
//!
//! With the uniform distribution over the `n` responses, the potential of
//! response `i` is its mean score against the population,
//! `f[i] = (1/n) sum_j M[i][j]`. The transitive part is
//! `T[i][j] = f[i] - f[j]` and the cyclic part `C = M - T` has zero row sums.
//! Both parts are orthogonal under the Frobenius inner product and the split
//! is unique once `f` is fixed to mean zero.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, PrefError, Result};
use crate::preference::{upper_len, PreferenceScoreMatrix};

#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    potential: Vec<f64>,
    transitive: PreferenceScoreMatrix,
    cyclic: PreferenceScoreMatrix,
}

impl Decomposition {
    /// Mean-zero potential `f`.
    pub fn potential(&self) -> &[f64] {
        &self.potential
    }

    pub fn transitive(&self) -> &PreferenceScoreMatrix {
        &self.transitive
    }

    pub fn cyclic(&self) -> &PreferenceScoreMatrix {
        &self.cyclic
    }

    /// `T + C`.
    pub fn reconstruct(&self) -> PreferenceScoreMatrix {
        self.transitive.add(&self.cyclic).expect("components share a shape")
    }

    /// Reassembles a decomposition from a potential and a cyclic part.
    pub fn from_parts(potential: Vec<f64>, cyclic: PreferenceScoreMatrix) -> Result<Self> {
        check_len(cyclic.n(), potential.len())?;
        let transitive = transitive_from_potential(&potential)?;
        Ok(Self { potential, transitive, cyclic })
    }

    /// Largest absolute row sum of the cyclic part.
    pub fn max_cyclic_row_sum(&self) -> f64 {
        (0..self.cyclic.n())
            .map(|i| self.cyclic.row(i).iter().sum::<f64>().abs())
            .fold(0.0, f64::max)
    }
}

/// `T[i][j] = f[i] - f[j]`.
pub fn transitive_from_potential(potential: &[f64]) -> Result<PreferenceScoreMatrix> {
    PreferenceScoreMatrix::from_fn(potential.len(), |i, j| potential[i] - potential[j])
}

pub fn decompose(m: &PreferenceScoreMatrix) -> Decomposition {
    let n = m.n();
    let mut potential: Vec<f64> = (0..n)
        .map(|i| m.row(i).iter().sum::<f64>() / n as f64)
        .collect();
    // The row means already sum to zero up to rounding; remove the residue.
    if n > 0 {
        let mean = potential.iter().sum::<f64>() / n as f64;
        potential.iter_mut().for_each(|f| *f -= mean);
    }
    let transitive = transitive_from_potential(&potential).expect("finite potential");
    let cyclic = m.sub(&transitive).expect("same shape");
    Decomposition { potential, transitive, cyclic }
}

/// Share of the game's energy carried by the transitive part,
/// `|T|^2 / (|T|^2 + |C|^2)` in the Frobenius norm.
pub fn transitivity_fraction(m: &PreferenceScoreMatrix) -> Result<f64> {
    if m.max_abs() == 0.0 {
        return Err(PrefError::domain("transitivity fraction of the zero game is undefined"));
    }
    let d = decompose(m);
    let t = d.transitive.frobenius_sq();
    let c = d.cyclic.frobenius_sq();
    Ok(t / (t + c))
}

#[derive(Serialize, Deserialize)]
struct DecompositionJson {
    f: Vec<f64>,
    cyclic_upper: Vec<f64>,
}

impl Serialize for Decomposition {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        DecompositionJson { f: self.potential.clone(), cyclic_upper: self.cyclic.upper() }
            .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Decomposition {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let raw = DecompositionJson::deserialize(deserializer)?;
        let n = raw.f.len();
        if raw.cyclic_upper.len() != upper_len(n) {
            return Err(serde::de::Error::custom(format!(
                "cyclic_upper has {} entries, expected {} for n = {n}",
                raw.cyclic_upper.len(),
                upper_len(n)
            )));
        }
        let cyclic = PreferenceScoreMatrix::from_upper(n, &raw.cyclic_upper).map_err(serde::de::Error::custom)?;
        Decomposition::from_parts(raw.f, cyclic).map_err(serde::de::Error::custom)
    }
}
