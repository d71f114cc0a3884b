//! Noise schedules and the per-step DDIM coefficients.
//!
//! A schedule stores the cumulative signal retention `alpha_bar[t]` for the
//! inference indices `t = 0..=T`, where `t = 0` is the clean-data end. Every
//! sampler and inversion step is an affine map whose coefficients come from
//! two neighbouring entries of this table.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::latent::LatentState;

/// Parameters of the linear-beta family, as stored in experiment configs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleParams {
    #[serde(default = "default_train_steps")]
    pub num_train_steps: usize,
    #[serde(default = "default_beta_start")]
    pub beta_start: f64,
    #[serde(default = "default_beta_end")]
    pub beta_end: f64,
    #[serde(default = "default_inference_steps")]
    pub inference_steps: usize,
}

fn default_train_steps() -> usize {
    1000
}
fn default_beta_start() -> f64 {
    1e-4
}
fn default_beta_end() -> f64 {
    2e-2
}
fn default_inference_steps() -> usize {
    50
}

impl Default for ScheduleParams {
    fn default() -> Self {
        Self {
            num_train_steps: default_train_steps(),
            beta_start: default_beta_start(),
            beta_end: default_beta_end(),
            inference_steps: default_inference_steps(),
        }
    }
}

impl ScheduleParams {
    pub fn build(&self) -> Result<NoiseSchedule> {
        build_linear_schedule(
            self.num_train_steps,
            self.beta_start,
            self.beta_end,
            self.inference_steps,
        )
    }
}

/// Cumulative signal-retention table over inference steps.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    alpha_bar: Vec<f64>,
    /// Normalized diffusion time in `[0, 1]` for each index; fed to learned predictors.
    time: Vec<f64>,
    hash: String,
}

/// Builds a linear-beta schedule subsampled to `inference_steps` indices.
///
/// Betas are spaced linearly over `num_train_steps + 1` training indices
/// `0..=N`, so that the clean-data index `t = 0` carries the first cumulative
/// product `1 - beta_0` and `t = T` carries the last one. Inference index `t`
/// maps to training index `round(t * N / T)`.
pub fn build_linear_schedule(
    num_train_steps: usize,
    beta_start: f64,
    beta_end: f64,
    inference_steps: usize,
) -> Result<NoiseSchedule> {
    if num_train_steps == 0 || inference_steps == 0 {
        return Err(Error::InvalidSchedule(
            "step counts must be positive".into(),
        ));
    }
    if inference_steps > num_train_steps {
        return Err(Error::InvalidSchedule(format!(
            "inference steps {inference_steps} exceed training steps {num_train_steps}"
        )));
    }
    for (name, beta) in [("beta_start", beta_start), ("beta_end", beta_end)] {
        if !(beta > 0.0 && beta < 1.0) {
            return Err(Error::InvalidSchedule(format!(
                "{name} = {beta} outside (0, 1)"
            )));
        }
    }
    if beta_start >= beta_end {
        return Err(Error::InvalidSchedule(format!(
            "beta_start {beta_start} must be below beta_end {beta_end}"
        )));
    }

    let n = num_train_steps;
    let mut cumulative = Vec::with_capacity(n + 1);
    let mut product = 1.0;
    for i in 0..=n {
        let beta = beta_start + (beta_end - beta_start) * i as f64 / n as f64;
        product *= 1.0 - beta;
        cumulative.push(product);
    }

    let t_max = inference_steps;
    let index = |t: usize| (2 * t * n + t_max) / (2 * t_max);
    let alpha_bar: Vec<f64> = (0..=t_max).map(|t| cumulative[index(t)]).collect();
    let time = (0..=t_max).map(|t| index(t) as f64 / n as f64).collect();
    let schedule = NoiseSchedule::assemble(alpha_bar, time);
    debug_assert!(schedule.alpha_bar.windows(2).all(|w| w[1] < w[0]));
    Ok(schedule)
}

impl NoiseSchedule {
    /// Builds a schedule from an explicit table.
    ///
    /// Entries must lie in `(0, 1]` and be non-increasing. Equal neighbours are
    /// accepted here so identity steps can be constructed in tests; the
    /// linear builder always produces a strictly decreasing table.
    pub fn from_alpha_bar(alpha_bar: Vec<f64>) -> Result<Self> {
        if alpha_bar.len() < 2 {
            return Err(Error::InvalidSchedule(
                "need at least two entries".into(),
            ));
        }
        if let Some(a) = alpha_bar.iter().find(|a| !(**a > 0.0 && **a <= 1.0)) {
            return Err(Error::InvalidSchedule(format!(
                "alpha_bar entry {a} outside (0, 1]"
            )));
        }
        if alpha_bar.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::InvalidSchedule(
                "alpha_bar must be non-increasing".into(),
            ));
        }
        let steps = alpha_bar.len() - 1;
        let time = (0..=steps).map(|t| t as f64 / steps as f64).collect();
        Ok(Self::assemble(alpha_bar, time))
    }

    fn assemble(alpha_bar: Vec<f64>, time: Vec<f64>) -> Self {
        let mut hasher = Sha256::new();
        hasher.update((alpha_bar.len() as u64).to_le_bytes());
        for a in alpha_bar.iter().chain(&time) {
            hasher.update(a.to_le_bytes());
        }
        let digest = hasher.finalize();
        let hash = digest[..8].iter().map(|b| format!("{b:02x}")).collect();
        Self {
            alpha_bar,
            time,
            hash,
        }
    }

    /// Number of inference steps `T`.
    pub fn steps(&self) -> usize {
        self.alpha_bar.len() - 1
    }

    pub fn alpha_bar(&self) -> &[f64] {
        &self.alpha_bar
    }

    pub fn alpha_bar_at(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    /// Normalized diffusion time of index `t`.
    pub fn time(&self, t: usize) -> f64 {
        self.time[t]
    }

    /// Stable 16-hex-digit fingerprint of the table.
    pub fn hash(&self) -> &str {
        &self.hash
    }

    /// Coefficients of step `t` (between indices `t - 1` and `t`).
    pub fn coefficients(&self, t: usize) -> Result<StepCoefficients> {
        coefficients(self, t)
    }
}

/// Affine coefficients linking `z_{t-1}` and `z_t`.
///
/// Inversion direction: `z_t = c1 * z_{t-1} + c2 * eps`.
/// Sampling direction: `z_{t-1} = s1 * z_t + s2 * eps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepCoefficients {
    pub c1: f64,
    pub c2: f64,
    pub s1: f64,
    pub s2: f64,
}

pub fn coefficients(schedule: &NoiseSchedule, t: usize) -> Result<StepCoefficients> {
    let max = schedule.steps();
    if t == 0 || t > max {
        return Err(Error::StepOutOfRange { t, max });
    }
    let a_t = schedule.alpha_bar[t];
    let a_prev = schedule.alpha_bar[t - 1];
    let (sqrt_t, sqrt_prev) = (a_t.sqrt(), a_prev.sqrt());
    let sigma_t = (1.0 / a_t - 1.0).sqrt();
    let sigma_prev = (1.0 / a_prev - 1.0).sqrt();
    Ok(StepCoefficients {
        c1: sqrt_t / sqrt_prev,
        c2: sqrt_t * (sigma_t - sigma_prev),
        s1: sqrt_prev / sqrt_t,
        s2: sqrt_prev * (sigma_prev - sigma_t),
    })
}

impl StepCoefficients {
    /// `c1 * z_prev + c2 * eps`.
    pub fn invert(&self, z_prev: &LatentState, eps: &LatentState) -> LatentState {
        z_prev.lincomb(self.c1, eps, self.c2)
    }

    /// `s1 * z_t + s2 * eps`.
    pub fn sample(&self, z_t: &LatentState, eps: &LatentState) -> LatentState {
        z_t.lincomb(self.s1, eps, self.s2)
    }
}
