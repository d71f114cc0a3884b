//! Time-independent affine predictor `eps = A z + b`.
//!
//! The fixed-point equation of an inversion step becomes the linear system
//! `(I - c2 A) z = c1 z_prev + c2 b`, which makes this model an exact oracle
//! for the iterative solvers.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latent::{Condition, LatentState};
use crate::schedule::{NoiseSchedule, StepCoefficients};

use super::EpsilonPredictor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LinearSpec", into = "LinearSpec")]
pub struct LinearModel {
    matrix: DMatrix<f64>,
    offset: DVector<f64>,
    /// Largest singular value of `A`.
    spectral_norm: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LinearSpec {
    /// Row-major rows of `A`.
    matrix: Vec<Vec<f64>>,
    offset: Vec<f64>,
}

impl TryFrom<LinearSpec> for LinearModel {
    type Error = Error;

    fn try_from(spec: LinearSpec) -> Result<Self> {
        let d = spec.offset.len();
        if spec.matrix.len() != d || spec.matrix.iter().any(|r| r.len() != d) {
            return Err(Error::InvalidModel(format!("matrix must be {d}x{d}")));
        }
        let matrix = DMatrix::from_fn(d, d, |i, j| spec.matrix[i][j]);
        LinearModel::new(matrix, spec.offset)
    }
}

impl From<LinearModel> for LinearSpec {
    fn from(m: LinearModel) -> Self {
        let d = m.offset.len();
        LinearSpec {
            matrix: (0..d).map(|i| (0..d).map(|j| m.matrix[(i, j)]).collect()).collect(),
            offset: m.offset.iter().copied().collect(),
        }
    }
}

impl LinearModel {
    pub fn new(matrix: DMatrix<f64>, offset: Vec<f64>) -> Result<Self> {
        let d = offset.len();
        if d == 0 || matrix.nrows() != d || matrix.ncols() != d {
            return Err(Error::InvalidModel(format!(
                "matrix {}x{} does not match offset length {d}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        if matrix.iter().chain(&offset).any(|x| !x.is_finite()) {
            return Err(Error::InvalidModel("non-finite linear model entry".into()));
        }
        let spectral_norm = matrix
            .clone()
            .singular_values()
            .iter()
            .cloned()
            .fold(0.0, f64::max);
        Ok(Self {
            matrix,
            offset: DVector::from_vec(offset),
            spectral_norm,
        })
    }

    /// `A = a I`.
    pub fn scalar(dim: usize, a: f64, offset: Vec<f64>) -> Result<Self> {
        Self::new(DMatrix::identity(dim, dim) * a, offset)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn offset(&self) -> &DVector<f64> {
        &self.offset
    }

    pub fn spectral_norm(&self) -> f64 {
        self.spectral_norm
    }

    /// `1 - |c2| * ||A||_2`; positive means the fixed-point map is a contraction.
    pub fn contraction_margin(&self, c2: f64) -> f64 {
        1.0 - c2.abs() * self.spectral_norm
    }

    /// Contraction margin of every step `t = 1..=T`.
    pub fn step_margins(&self, schedule: &NoiseSchedule) -> Vec<f64> {
        (1..=schedule.steps())
            .map(|t| {
                let c = schedule.coefficients(t).expect("t within range");
                self.contraction_margin(c.c2)
            })
            .collect()
    }

    /// Solves `(I - c2 A) z = c1 z_prev + c2 b` directly.
    pub fn fixed_point(
        &self,
        z_prev: &LatentState,
        coeffs: &StepCoefficients,
        t: usize,
    ) -> Result<LatentState> {
        let d = self.offset.len();
        z_prev.expect_dim(d)?;
        let system = DMatrix::identity(d, d) - &self.matrix * coeffs.c2;
        let rhs = DVector::from_column_slice(z_prev.as_slice()) * coeffs.c1 + &self.offset * coeffs.c2;
        let lu = system.lu();
        // LU happily factors near-singular systems, so test the pivots.
        let pivot_floor = 1e-12 * (1.0 + coeffs.c2.abs() * self.spectral_norm);
        if lu.u().diagonal().iter().any(|p| p.abs() < pivot_floor) {
            return Err(Error::Singular { t });
        }
        let solution = lu.solve(&rhs).ok_or(Error::Singular { t })?;
        Ok(LatentState::from_raw(solution.iter().copied().collect()))
    }
}

impl EpsilonPredictor for LinearModel {
    fn dim(&self) -> usize {
        self.offset.len()
    }

    fn kind(&self) -> &'static str {
        "linear"
    }

    fn predict(
        &self,
        z: &LatentState,
        _t: usize,
        _c: Condition,
        _schedule: &NoiseSchedule,
    ) -> Result<LatentState> {
        z.expect_dim(self.dim())?;
        let out = &self.matrix * DVector::from_column_slice(z.as_slice()) + &self.offset;
        Ok(LatentState::from_raw(out.iter().copied().collect()))
    }

    fn vjp(
        &self,
        z: &LatentState,
        _t: usize,
        _c: Condition,
        _schedule: &NoiseSchedule,
        v: &LatentState,
    ) -> Result<LatentState> {
        z.expect_dim(self.dim())?;
        v.expect_dim(self.dim())?;
        let out = self.matrix.tr_mul(&DVector::from_column_slice(v.as_slice()));
        Ok(LatentState::from_raw(out.iter().copied().collect()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::build_linear_schedule;

    #[test]
    fn diagonal_vjp_is_elementwise() {
        let m = LinearModel::new(DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, -3.0, 0.5])), vec![0.0; 3]).unwrap();
        let s = build_linear_schedule(1000, 1e-4, 2e-2, 10).unwrap();
        let z = LatentState::zeros(3);
        let v = LatentState::new(vec![1.0, 2.0, 4.0]).unwrap();
        let out = m.vjp(&z, 3, Condition::NULL, &s, &v).unwrap();
        assert_eq!(out.as_slice(), &[2.0, -6.0, 2.0]);
    }

    #[test]
    fn zero_matrix_predicts_offset() {
        let m = LinearModel::scalar(2, 0.0, vec![0.3, -0.7]).unwrap();
        let s = build_linear_schedule(1000, 1e-4, 2e-2, 10).unwrap();
        let z = LatentState::new(vec![9.0, 1.0]).unwrap();
        assert_eq!(m.predict(&z, 5, Condition::NULL, &s).unwrap().as_slice(), &[0.3, -0.7]);
    }

    #[test]
    fn scalar_fixed_point_closed_form() {
        let s = build_linear_schedule(1000, 1e-4, 2e-2, 10).unwrap();
        let (a, b) = (1.7, [0.2, -0.4]);
        let m = LinearModel::scalar(2, a, b.to_vec()).unwrap();
        let z_prev = LatentState::new(vec![0.5, 1.5]).unwrap();
        for t in 1..=10 {
            let c = s.coefficients(t).unwrap();
            let z = m.fixed_point(&z_prev, &c, t).unwrap();
            for i in 0..2 {
                let expected = (c.c1 * z_prev[i] + c.c2 * b[i]) / (1.0 - c.c2 * a);
                assert!((z[i] - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn singular_system_flagged() {
        let s = build_linear_schedule(1000, 1e-4, 2e-2, 10).unwrap();
        let c = s.coefficients(4).unwrap();
        let m = LinearModel::scalar(2, 1.0 / c.c2, vec![0.0, 0.0]).unwrap();
        assert!(matches!(
            m.fixed_point(&LatentState::zeros(2), &c, 4),
            Err(Error::Singular { t: 4 })
        ));
        assert!(m.contraction_margin(c.c2).abs() < 1e-12);
    }
}
