//! Epsilon predictors `eps(z, t, c)` with a vector-Jacobian product contract.
//!
//! Every predictor is frozen: `predict` and `vjp` take `&self` and never
//! change parameters, so one instance can be shared across threads.

mod gaussian_mixture;
mod guidance;
mod linear;
mod mlp;

pub use gaussian_mixture::{GaussianMixture, MixtureComponent};
pub use guidance::{cfg_combine, guided_predict, guided_vjp};
pub use linear::LinearModel;
pub use mlp::{train_mlp, MlpArchitecture, MlpDenoiser, TrainingConfig, TrainingRecord};

use crate::error::Result;
use crate::latent::{Condition, LatentState};
use crate::schedule::NoiseSchedule;

pub trait EpsilonPredictor: Send + Sync {
    /// Latent dimension `d`.
    fn dim(&self) -> usize;

    /// Short identifier written into reports.
    fn kind(&self) -> &'static str;

    fn predict(
        &self,
        z: &LatentState,
        t: usize,
        c: Condition,
        schedule: &NoiseSchedule,
    ) -> Result<LatentState>;

    /// `(d eps / d z)^T v`.
    fn vjp(
        &self,
        z: &LatentState,
        t: usize,
        c: Condition,
        schedule: &NoiseSchedule,
        v: &LatentState,
    ) -> Result<LatentState>;

    fn as_gaussian_mixture(&self) -> Option<&GaussianMixture> {
        None
    }
}

/// The predictor `eps = 0` for every input.
#[derive(Debug, Clone, Copy)]
pub struct ZeroPredictor {
    dim: usize,
}

impl ZeroPredictor {
    pub fn new(dim: usize) -> Self {
        Self { dim }
    }
}

impl EpsilonPredictor for ZeroPredictor {
    fn dim(&self) -> usize {
        self.dim
    }

    fn kind(&self) -> &'static str {
        "zero"
    }

    fn predict(
        &self,
        z: &LatentState,
        _t: usize,
        _c: Condition,
        _schedule: &NoiseSchedule,
    ) -> Result<LatentState> {
        z.expect_dim(self.dim)?;
        Ok(LatentState::zeros(self.dim))
    }

    fn vjp(
        &self,
        z: &LatentState,
        _t: usize,
        _c: Condition,
        _schedule: &NoiseSchedule,
        v: &LatentState,
    ) -> Result<LatentState> {
        z.expect_dim(self.dim)?;
        v.expect_dim(self.dim)?;
        Ok(LatentState::zeros(self.dim))
    }
}
