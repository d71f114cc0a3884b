//! Deterministic DDIM generation (eta = 0).

use crate::error::Result;
use crate::latent::{Condition, LatentState};
use crate::predictor::{guided_predict, EpsilonPredictor};
use crate::schedule::NoiseSchedule;
use crate::trajectory::{Direction, StepRecord, Trajectory};

/// `z_{t-1} = s1 z_t + s2 eps(z_t, t, c)`, also returning the noise estimate.
pub fn ddim_step_with_eps(
    z_t: &LatentState,
    t: usize,
    predictor: &dyn EpsilonPredictor,
    c: Condition,
    schedule: &NoiseSchedule,
    w: f64,
) -> Result<(LatentState, LatentState)> {
    let coeffs = schedule.coefficients(t)?;
    let eps = guided_predict(predictor, z_t, t, c, schedule, w)?;
    eps.check_finite(t, "noise prediction")?;
    let z_prev = coeffs.sample(z_t, &eps);
    z_prev.check_finite(t, "ddim step")?;
    Ok((z_prev, eps))
}

/// One deterministic sampling step from index `t` to `t - 1`.
pub fn ddim_step(
    z_t: &LatentState,
    t: usize,
    predictor: &dyn EpsilonPredictor,
    c: Condition,
    schedule: &NoiseSchedule,
    w: f64,
) -> Result<LatentState> {
    ddim_step_with_eps(z_t, t, predictor, c, schedule, w).map(|(z, _)| z)
}

/// Runs the sampler from `z_T` down to `z_0`, recording every noise estimate.
pub fn generate(
    z_start: &LatentState,
    c: Condition,
    predictor: &dyn EpsilonPredictor,
    schedule: &NoiseSchedule,
    w: f64,
) -> Result<Trajectory> {
    z_start.expect_dim(predictor.dim())?;
    z_start.check_finite(schedule.steps(), "initial noise")?;
    let steps = schedule.steps();
    let mut states = Vec::with_capacity(steps + 1);
    let mut records = Vec::with_capacity(steps);
    states.push(z_start.clone());
    for t in (1..=steps).rev() {
        let (z_prev, eps) = ddim_step_with_eps(&states[states.len() - 1], t, predictor, c, schedule, w)?;
        states.push(z_prev);
        records.push(StepRecord {
            t,
            initial_residual: 0.0,
            final_residual: 0.0,
            rounds: 0,
            predictor_calls: 1,
            eps,
        });
    }
    Trajectory::new(Direction::Generation, c, schedule.hash(), states, records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predictor::{LinearModel, ZeroPredictor};
    use crate::schedule::build_linear_schedule;

    #[test]
    fn zero_predictor_scales_by_s1() {
        let s = build_linear_schedule(1000, 1e-4, 2e-2, 20).unwrap();
        let z = LatentState::new(vec![1.0, -2.0]).unwrap();
        let out = ddim_step(&z, 7, &ZeroPredictor::new(2), Condition::NULL, &s, 1.0).unwrap();
        let s1 = s.coefficients(7).unwrap().s1;
        assert_eq!(out, z.scale(s1));
    }

    #[test]
    fn identity_step() {
        let s = NoiseSchedule::from_alpha_bar(vec![0.8, 0.8]).unwrap();
        let m = LinearModel::scalar(2, 0.7, vec![0.1, 0.2]).unwrap();
        let z = LatentState::new(vec![0.4, 0.5]).unwrap();
        assert_eq!(ddim_step(&z, 1, &m, Condition::NULL, &s, 1.0).unwrap(), z);
    }

    #[test]
    fn linear_step_matches_affine_map() {
        let s = build_linear_schedule(1000, 1e-4, 2e-2, 10).unwrap();
        let a = nalgebra::DMatrix::from_row_slice(2, 2, &[0.5, -0.2, 0.3, 1.1]);
        let m = LinearModel::new(a, vec![0.05, -0.1]).unwrap();
        let z = LatentState::new(vec![0.7, -1.3]).unwrap();
        let c = s.coefficients(6).unwrap();
        let eps = [0.5 * 0.7 + -0.2 * -1.3 + 0.05, 0.3 * 0.7 + 1.1 * -1.3 - 0.1];
        let out = ddim_step(&z, 6, &m, Condition::NULL, &s, 1.0).unwrap();
        for i in 0..2 {
            assert!((out[i] - (c.s1 * z[i] + c.s2 * eps[i])).abs() < 1e-14);
        }
    }

    #[test]
    fn single_step_trajectory() {
        let s = build_linear_schedule(1000, 1e-4, 2e-2, 1).unwrap();
        let z = LatentState::new(vec![0.3]).unwrap();
        let tr = generate(&z, Condition::NULL, &ZeroPredictor::new(1), &s, 1.0).unwrap();
        assert_eq!(tr.states().len(), 2);
        assert_eq!(tr.noise_code(), &z);
        assert_eq!(tr.clean(), &ddim_step(&z, 1, &ZeroPredictor::new(1), Condition::NULL, &s, 1.0).unwrap());
    }

    #[test]
    fn non_finite_step_names_index() {
        let s = build_linear_schedule(1000, 1e-4, 2e-2, 10).unwrap();
        let m = LinearModel::scalar(1, 1e300, vec![0.0]).unwrap();
        let z = LatentState::new(vec![1e300]).unwrap();
        let err = generate(&z, Condition::NULL, &m, &s, 1.0).unwrap_err();
        assert!(matches!(err, crate::Error::NonFinite { t: 10, .. }), "{err}");
    }
}
