//! Latent vectors and conditioning labels.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A flat latent vector `z_t`.
///
/// Constructed values are always finite. Arithmetic helpers do not re-check
/// finiteness; the samplers and inversion engines call [`LatentState::check_finite`]
/// at every step boundary instead.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct LatentState(Vec<f64>);

impl LatentState {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::DimensionMismatch {
                expected: 1,
                actual: 0,
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                t: 0,
                context: "latent construction",
            });
        }
        Ok(Self(values))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn filled(dim: usize, value: f64) -> Self {
        Self(vec![value; dim])
    }

    pub(crate) fn from_raw(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub(crate) fn check_finite(&self, t: usize, context: &'static str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite { t, context })
        }
    }

    pub(crate) fn expect_dim(&self, dim: usize) -> Result<()> {
        if self.dim() == dim {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected: dim,
                actual: self.dim(),
            })
        }
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    /// `a * self + b * other`.
    pub fn lincomb(&self, a: f64, other: &Self, b: f64) -> Self {
        Self(
            self.0
                .iter()
                .zip(&other.0)
                .map(|(x, y)| a * x + b * y)
                .collect(),
        )
    }

    pub fn scale(&self, a: f64) -> Self {
        Self(self.0.iter().map(|x| a * x).collect())
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.lincomb(1.0, other, -1.0)
    }

    pub fn add(&self, other: &Self) -> Self {
        self.lincomb(1.0, other, 1.0)
    }

    /// Mean squared difference, normalized by the dimension.
    pub fn mse(&self, other: &Self) -> f64 {
        let sum: f64 = self
            .0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        sum / self.dim() as f64
    }
}

impl fmt::Debug for LatentState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(&self.0).finish()
    }
}

impl TryFrom<Vec<f64>> for LatentState {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}

impl From<LatentState> for Vec<f64> {
    fn from(z: LatentState) -> Self {
        z.0
    }
}

impl std::ops::Index<usize> for LatentState {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Conditioning label `c`. `Condition::NULL` selects the unconditional model.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Condition(Option<u32>);

impl Condition {
    pub const NULL: Condition = Condition(None);

    pub const fn label(id: u32) -> Self {
        Condition(Some(id))
    }

    pub fn id(self) -> Option<u32> {
        self.0
    }

    pub fn is_null(self) -> bool {
        self.0.is_none()
    }
}

impl fmt::Debug for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            Some(id) => write!(f, "c{id}"),
            None => f.write_str("null"),
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}
