//! Gap measurements between ground-truth and inverted paths.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inversion::{Method, SpdInvConfig};
use crate::latent::{Condition, LatentState};
use crate::predictor::EpsilonPredictor;
use crate::sampler::generate;
use crate::schedule::NoiseSchedule;
use crate::trajectory::{Direction, Trajectory};

/// Per-step noise gap: entry `t` is `mse(truth z_t, inverted z_t)` for `t = 0..=T`.
pub fn noise_gap(truth: &Trajectory, inverted: &Trajectory) -> Result<Vec<f64>> {
    if truth.direction() != Direction::Generation || inverted.direction() != Direction::Inversion {
        return Err(Error::TrajectoryMismatch(format!(
            "expected (generation, inversion), got ({}, {})",
            truth.direction().as_str(),
            inverted.direction().as_str()
        )));
    }
    if truth.schedule_hash() != inverted.schedule_hash() {
        return Err(Error::TrajectoryMismatch(format!(
            "schedule hash {} != {}",
            truth.schedule_hash(),
            inverted.schedule_hash()
        )));
    }
    if truth.steps() != inverted.steps() {
        return Err(Error::TrajectoryMismatch(format!(
            "{} steps vs {} steps",
            truth.steps(),
            inverted.steps()
        )));
    }
    if truth.dim() != inverted.dim() {
        return Err(Error::DimensionMismatch {
            expected: truth.dim(),
            actual: inverted.dim(),
        });
    }
    Ok((0..=truth.steps())
        .map(|t| truth.state_at(t).mse(inverted.state_at(t)))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Reconstruction {
    pub mse: f64,
    /// `None` stands for infinite PSNR (identical inputs).
    pub psnr: Option<f64>,
}

/// MSE and PSNR of a round trip. The PSNR peak is `max |z0|`, or 1 when
/// the ground truth is identically zero.
pub fn reconstruction_gap(z0: &LatentState, z0_rec: &LatentState) -> Result<Reconstruction> {
    z0_rec.expect_dim(z0.dim())?;
    let mse = z0.mse(z0_rec);
    let peak = z0.as_slice().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let peak = if peak > 0.0 { peak } else { 1.0 };
    let psnr = (mse > 0.0).then(|| 10.0 * (peak * peak / mse).log10());
    Ok(Reconstruction { mse, psnr })
}

/// `mse(generate(z_hat, c_tgt).z_0, generate(z_star, c_tgt).z_0)`.
pub fn edit_divergence(
    z_star: &LatentState,
    z_hat: &LatentState,
    c_target: Condition,
    predictor: &dyn EpsilonPredictor,
    schedule: &NoiseSchedule,
    w: f64,
) -> Result<f64> {
    let ideal = generate(z_star, c_target, predictor, schedule, w)?;
    let edited = generate(z_hat, c_target, predictor, schedule, w)?;
    Ok(ideal.clean().mse(edited.clean()))
}

/// `log p_T(z | c) - log p_T(z | NULL)` under the time-`T` marginal of a
/// Gaussian mixture. Zero for `c = NULL`.
pub fn coupling_score(
    z_t: &LatentState,
    c: Condition,
    predictor: &dyn EpsilonPredictor,
    schedule: &NoiseSchedule,
) -> Result<f64> {
    let model = predictor
        .as_gaussian_mixture()
        .ok_or(Error::NotGaussianMixture(predictor.kind()))?;
    if c.is_null() {
        model.active(c)?;
        return Ok(0.0);
    }
    let t = schedule.steps();
    Ok(model.log_density(z_t, t, c, schedule)? - model.log_density(z_t, t, Condition::NULL, schedule)?)
}

/// Measurements of one trial for one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub source: Condition,
    pub target: Condition,
    pub noise_gap: Vec<f64>,
    pub final_noise_gap: f64,
    pub reconstruction: Reconstruction,
    pub mean_initial_residual: f64,
    pub mean_final_residual: f64,
    pub mean_rounds: f64,
    pub predictor_calls: usize,
    pub edit_divergence: f64,
    pub coupling: Option<f64>,
    /// Final residual per step `t = 1..=T`.
    pub step_final_residual: Vec<f64>,
    /// Rounds per step `t = 1..=T`.
    pub step_rounds: Vec<usize>,
    pub step_predictor_calls: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedTrial {
    pub trial: usize,
    pub error: String,
}

/// Means over successful trials.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Aggregate {
    pub trials_ok: usize,
    pub trials_failed: usize,
    pub noise_gap: Vec<f64>,
    pub final_noise_gap: f64,
    pub reconstruction_mse: f64,
    /// Mean over trials with finite PSNR.
    pub reconstruction_psnr: Option<f64>,
    pub mean_initial_residual: f64,
    pub mean_final_residual: f64,
    pub mean_rounds: f64,
    pub mean_predictor_calls: f64,
    pub edit_divergence: f64,
    pub coupling: Option<f64>,
    pub coupling_abs: Option<f64>,
    pub step_final_residual: Vec<f64>,
    pub step_rounds: Vec<f64>,
}

/// Experiment output for one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub method: Method,
    pub config: SpdInvConfig,
    pub predictor: String,
    pub schedule_hash: String,
    pub steps: usize,
    pub dim: usize,
    pub trials: Vec<TrialRecord>,
    pub failed: Vec<FailedTrial>,
    pub aggregate: Aggregate,
}

impl TrialRecord {
    /// Assembles the record from the trajectories of one trial.
    pub fn measure(
        trial: usize,
        truth: &Trajectory,
        inverted: &Trajectory,
        reconstructed: &Trajectory,
        edit_divergence: f64,
        coupling: Option<f64>,
        target: Condition,
    ) -> Result<Self> {
        let gap = noise_gap(truth, inverted)?;
        let steps = inverted.steps();
        let records: Vec<_> = (1..=steps).map(|t| inverted.record_at(t)).collect();
        let mean = |f: &dyn Fn(&crate::trajectory::StepRecord) -> f64| {
            records.iter().map(|r| f(r)).sum::<f64>() / steps as f64
        };
        Ok(Self {
            trial,
            source: truth.condition(),
            target,
            final_noise_gap: gap[steps],
            noise_gap: gap,
            reconstruction: reconstruction_gap(truth.clean(), reconstructed.clean())?,
            mean_initial_residual: mean(&|r| r.initial_residual),
            mean_final_residual: mean(&|r| r.final_residual),
            mean_rounds: mean(&|r| r.rounds as f64),
            predictor_calls: inverted.total_predictor_calls(),
            edit_divergence,
            coupling,
            step_final_residual: records.iter().map(|r| r.final_residual).collect(),
            step_rounds: records.iter().map(|r| r.rounds).collect(),
            step_predictor_calls: records.iter().map(|r| r.predictor_calls).collect(),
        })
    }
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn columnwise<F: Fn(&TrialRecord) -> Vec<f64>>(trials: &[TrialRecord], f: F) -> Vec<f64> {
    let Some(first) = trials.first() else {
        return Vec::new();
    };
    let mut acc = vec![0.0; f(first).len()];
    for tr in trials {
        for (a, v) in acc.iter_mut().zip(f(tr)) {
            *a += v;
        }
    }
    acc.iter_mut().for_each(|a| *a /= trials.len() as f64);
    acc
}

impl Aggregate {
    /// Trials must already be sorted by index; summation order follows it.
    pub fn from_trials(trials: &[TrialRecord], failed: usize) -> Self {
        let m = |f: fn(&TrialRecord) -> f64| mean(trials.iter().map(f)).unwrap_or(f64::NAN);
        Self {
            trials_ok: trials.len(),
            trials_failed: failed,
            noise_gap: columnwise(trials, |t| t.noise_gap.clone()),
            final_noise_gap: m(|t| t.final_noise_gap),
            reconstruction_mse: m(|t| t.reconstruction.mse),
            reconstruction_psnr: mean(trials.iter().filter_map(|t| t.reconstruction.psnr)),
            mean_initial_residual: m(|t| t.mean_initial_residual),
            mean_final_residual: m(|t| t.mean_final_residual),
            mean_rounds: m(|t| t.mean_rounds),
            mean_predictor_calls: m(|t| t.predictor_calls as f64),
            edit_divergence: m(|t| t.edit_divergence),
            coupling: mean(trials.iter().filter_map(|t| t.coupling)),
            coupling_abs: mean(trials.iter().filter_map(|t| t.coupling.map(f64::abs))),
            step_final_residual: columnwise(trials, |t| t.step_final_residual.clone()),
            step_rounds: columnwise(trials, |t| t.step_rounds.iter().map(|r| *r as f64).collect()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predictor::{GaussianMixture, ZeroPredictor};
    use crate::schedule::build_linear_schedule;
    use crate::trajectory::StepRecord;

    fn latent(v: &[f64]) -> LatentState {
        LatentState::new(v.to_vec()).unwrap()
    }

    fn path(direction: Direction, states: Vec<LatentState>, hash: &str) -> Trajectory {
        let d = states[0].dim();
        let steps = (1..states.len())
            .map(|t| StepRecord {
                t,
                initial_residual: 0.0,
                final_residual: 0.0,
                rounds: 0,
                predictor_calls: 1,
                eps: LatentState::zeros(d),
            })
            .collect();
        Trajectory::new(direction, Condition::NULL, hash, states, steps).unwrap()
    }

    #[test]
    fn identical_paths_have_zero_gap() {
        let states = vec![latent(&[1.0, 2.0]), latent(&[0.5, 0.1]), latent(&[0.0, -1.0])];
        let truth = path(Direction::Generation, states.iter().rev().cloned().collect(), "h");
        let inv = path(Direction::Inversion, states, "h");
        assert_eq!(noise_gap(&truth, &inv).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn constant_offset_gap() {
        let states = [latent(&[1.0, 2.0]), latent(&[0.5, 0.1]), latent(&[0.0, -1.0])];
        let u = latent(&[0.3, -0.1]);
        let truth = path(Direction::Generation, states.iter().rev().cloned().collect(), "h");
        let inv = path(Direction::Inversion, states.iter().map(|s| s.add(&u)).collect(), "h");
        for g in noise_gap(&truth, &inv).unwrap() {
            assert!((g - 0.05).abs() < 1e-15);
        }
    }

    #[test]
    fn mismatches_are_refused() {
        let states = vec![latent(&[1.0]), latent(&[0.5])];
        let truth = path(Direction::Generation, states.clone(), "a");
        let other = path(Direction::Inversion, states.clone(), "b");
        assert!(matches!(noise_gap(&truth, &other), Err(Error::TrajectoryMismatch(_))));
        let same_dir = path(Direction::Generation, states, "a");
        assert!(noise_gap(&truth, &same_dir).is_err());
    }

    #[test]
    fn reconstruction_values() {
        let z = latent(&[1.0, -2.0, 0.5]);
        let r = reconstruction_gap(&z, &z).unwrap();
        assert_eq!(r.mse, 0.0);
        assert_eq!(r.psnr, None);
        let r = reconstruction_gap(&z, &z.add(&LatentState::filled(3, 0.1))).unwrap();
        assert!((r.mse - 0.01).abs() < 1e-15);
        let expected = 10.0 * (4.0f64 / r.mse).log10();
        assert!((r.psnr.unwrap() - expected).abs() < 1e-9);
    }

    #[test]
    fn edit_divergence_zero_predictor() {
        let s = build_linear_schedule(1000, 1e-4, 2e-2, 10).unwrap();
        let zero = ZeroPredictor::new(2);
        let a = latent(&[0.3, -0.2]);
        let b = latent(&[0.1, 0.4]);
        assert_eq!(edit_divergence(&a, &a, Condition::NULL, &zero, &s, 1.0).unwrap(), 0.0);
        let gain: f64 = (1..=10).map(|t| s.coefficients(t).unwrap().s1).product();
        let expected = gain * gain * a.mse(&b);
        let got = edit_divergence(&a, &b, Condition::NULL, &zero, &s, 1.0).unwrap();
        assert!((got - expected).abs() < 1e-12 * expected);
    }

    #[test]
    fn coupling_null_and_non_mixture() {
        let s = build_linear_schedule(1000, 1e-4, 2e-2, 10).unwrap();
        let m = GaussianMixture::lab_default();
        let z = latent(&[0.3, 0.2]);
        assert_eq!(coupling_score(&z, Condition::NULL, &m, &s).unwrap(), 0.0);
        assert!(coupling_score(&z, Condition::label(1), &m, &s).unwrap().is_finite());
        assert!(matches!(
            coupling_score(&z, Condition::label(1), &ZeroPredictor::new(2), &s),
            Err(Error::NotGaussianMixture("zero"))
        ));
    }
}
