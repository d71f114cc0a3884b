//! Inversion engines: naive DDIM inversion, fixed-round iteration (AIDI)
//! and gradient-descent fixed-point search (SPDInv).
//!
//! Every engine works on one step at a time. Given `z_{t-1}`, the exact
//! inversion step must satisfy the fixed-point equation
//!
//! ```text
//! z_t = f(z_t),   f(z) = c1 * z_{t-1} + c2 * eps(z, t, c)
//! ```
//!
//! Naive inversion replaces `eps(z_t, t, c)` by `eps(z_{t-1}, t - 1, c)`.
//! AIDI iterates `z <- f(z)`. SPDInv starts from the naive iterate and runs
//! plain gradient descent on `L(z) = ||f(z) - z||_2`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latent::{Condition, LatentState};
use crate::predictor::{guided_predict, guided_vjp, EpsilonPredictor};
use crate::schedule::{NoiseSchedule, StepCoefficients};
use crate::trajectory::{Direction, StepRecord, Trajectory};

/// Residual growth factor that aborts a step.
pub const DIVERGENCE_FACTOR: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Naive,
    Aidi,
    Spdinv,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Naive => "naive",
            Method::Aidi => "aidi",
            Method::Spdinv => "spdinv",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "naive" | "ddim" => Ok(Method::Naive),
            "aidi" => Ok(Method::Aidi),
            "spdinv" => Ok(Method::Spdinv),
            other => Err(Error::InvalidConfig(format!("unknown method {other:?}"))),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Inversion settings. Field names follow the usual symbols: `k` rounds,
/// threshold `delta`, learning rate `eta`, `steps` = T, guidance `w`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpdInvConfig {
    pub method: Method,
    #[serde(default = "defaults::k")]
    pub k: usize,
    #[serde(default = "defaults::delta")]
    pub delta: f64,
    #[serde(default = "defaults::eta")]
    pub eta: f64,
    #[serde(default = "defaults::steps")]
    pub steps: usize,
    #[serde(default = "defaults::w")]
    pub w: f64,
    #[serde(default = "defaults::aidi_rounds")]
    pub aidi_rounds: usize,
    /// Treat `eps` as constant inside each gradient evaluation.
    #[serde(default)]
    pub stop_gradient: bool,
}

mod defaults {
    pub fn k() -> usize {
        25
    }
    pub fn delta() -> f64 {
        5e-6
    }
    pub fn eta() -> f64 {
        1e-3
    }
    pub fn steps() -> usize {
        50
    }
    pub fn w() -> f64 {
        1.0
    }
    pub fn aidi_rounds() -> usize {
        5
    }
}

impl Default for SpdInvConfig {
    fn default() -> Self {
        Self {
            method: Method::Spdinv,
            k: defaults::k(),
            delta: defaults::delta(),
            eta: defaults::eta(),
            steps: defaults::steps(),
            w: defaults::w(),
            aidi_rounds: defaults::aidi_rounds(),
            stop_gradient: false,
        }
    }
}

impl SpdInvConfig {
    pub fn with_method(method: Method) -> Self {
        Self {
            method,
            ..Self::default()
        }
    }

    // Negated comparisons so that NaN is rejected too.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        if !(self.delta >= 0.0) {
            return Err(Error::InvalidConfig(format!("delta {} must be >= 0", self.delta)));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::InvalidConfig(format!("eta {} must be > 0", self.eta)));
        }
        if self.steps == 0 {
            return Err(Error::InvalidConfig("steps must be positive".into()));
        }
        if !self.w.is_finite() {
            return Err(Error::InvalidConfig(format!("guidance {} is not finite", self.w)));
        }
        if self.method == Method::Aidi && self.aidi_rounds == 0 {
            return Err(Error::InvalidConfig("aidi_rounds must be >= 1".into()));
        }
        Ok(())
    }
}

/// Outcome of one inversion step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub z_t: LatentState,
    /// `eps(z_t, t, c)` at the returned iterate, or the naive estimate.
    pub eps: LatentState,
    pub initial_residual: f64,
    pub final_residual: f64,
    pub rounds: usize,
    pub predictor_calls: usize,
}

/// The fixed-point problem of one step, for a fixed `z_{t-1}`.
struct FixedPoint<'a> {
    z_prev: &'a LatentState,
    t: usize,
    coeffs: StepCoefficients,
    predictor: &'a dyn EpsilonPredictor,
    c: Condition,
    schedule: &'a NoiseSchedule,
    w: f64,
}

impl<'a> FixedPoint<'a> {
    fn new(
        z_prev: &'a LatentState,
        t: usize,
        predictor: &'a dyn EpsilonPredictor,
        c: Condition,
        schedule: &'a NoiseSchedule,
        w: f64,
    ) -> Result<Self> {
        z_prev.expect_dim(predictor.dim())?;
        Ok(Self {
            z_prev,
            t,
            coeffs: schedule.coefficients(t)?,
            predictor,
            c,
            schedule,
            w,
        })
    }

    /// `(f(z), eps(z, t, c))`.
    fn map(&self, z: &LatentState) -> Result<(LatentState, LatentState)> {
        let eps = guided_predict(self.predictor, z, self.t, self.c, self.schedule, self.w)?;
        eps.check_finite(self.t, "noise prediction")?;
        Ok((self.coeffs.invert(self.z_prev, &eps), eps))
    }

    /// `eps(z_{t-1}, t - 1, c)` and the naive iterate built from it.
    fn naive(&self) -> Result<(LatentState, LatentState)> {
        let eps = guided_predict(self.predictor, self.z_prev, self.t - 1, self.c, self.schedule, self.w)?;
        eps.check_finite(self.t, "noise prediction")?;
        let z = self.coeffs.invert(self.z_prev, &eps);
        z.check_finite(self.t, "naive inversion")?;
        Ok((z, eps))
    }

    /// `grad L = (J_f - I)^T r / ||r||` with `J_f = c2 * d eps / d z`.
    fn gradient(&self, z: &LatentState, r: &LatentState, norm: f64, stop_gradient: bool) -> Result<LatentState> {
        if norm == 0.0 {
            return Ok(LatentState::zeros(z.dim()));
        }
        if stop_gradient {
            return Ok(r.scale(-1.0 / norm));
        }
        let jt_r = guided_vjp(self.predictor, z, self.t, self.c, self.schedule, self.w, r)?;
        Ok(jt_r.lincomb(self.coeffs.c2 / norm, r, -1.0 / norm))
    }
}

/// `z_t = c1 z_{t-1} + c2 eps(z_{t-1}, t - 1, c)`: one predictor call.
pub fn naive_invert_step(
    z_prev: &LatentState,
    t: usize,
    predictor: &dyn EpsilonPredictor,
    c: Condition,
    schedule: &NoiseSchedule,
    w: f64,
) -> Result<LatentState> {
    FixedPoint::new(z_prev, t, predictor, c, schedule, w)?
        .naive()
        .map(|(z, _)| z)
}

/// `f(z) = c2 eps(z, t, c) + c1 z_{t-1}`: one predictor call at index `t`.
pub fn fixed_point_map(
    z: &LatentState,
    z_prev: &LatentState,
    t: usize,
    predictor: &dyn EpsilonPredictor,
    c: Condition,
    schedule: &NoiseSchedule,
    w: f64,
) -> Result<LatentState> {
    z.expect_dim(predictor.dim())?;
    FixedPoint::new(z_prev, t, predictor, c, schedule, w)?
        .map(z)
        .map(|(f, _)| f)
}

/// `L = ||f(z) - z||_2`, unnormalized over the flattened latent.
pub fn residual_loss(
    z: &LatentState,
    z_prev: &LatentState,
    t: usize,
    predictor: &dyn EpsilonPredictor,
    c: Condition,
    schedule: &NoiseSchedule,
    w: f64,
) -> Result<f64> {
    Ok(fixed_point_map(z, z_prev, t, predictor, c, schedule, w)?
        .sub(z)
        .norm())
}

/// Gradient of [`residual_loss`]; the zero vector at an exact fixed point.
#[allow(clippy::too_many_arguments)]
pub fn residual_grad(
    z: &LatentState,
    z_prev: &LatentState,
    t: usize,
    predictor: &dyn EpsilonPredictor,
    c: Condition,
    schedule: &NoiseSchedule,
    w: f64,
    stop_gradient: bool,
) -> Result<LatentState> {
    z.expect_dim(predictor.dim())?;
    let problem = FixedPoint::new(z_prev, t, predictor, c, schedule, w)?;
    let (f, _) = problem.map(z)?;
    let r = f.sub(z);
    problem.gradient(z, &r, r.norm(), stop_gradient)
}

/// One SPDInv step.
///
/// Starts from the naive iterate and runs up to `k` updates
/// `z <- z - eta * grad L`. The residual is evaluated at the start of every
/// round and the loop breaks as soon as `L < delta` (or `L = 0`), before the
/// update. The iterate with the smallest evaluated residual is returned,
/// so `final_residual <= initial_residual` always holds.
///
/// Fixed-size steps on a norm end up oscillating in a band of width about
/// `eta` around the solution, so the divergence guard trips only when the
/// residual exceeds `DIVERGENCE_FACTOR * max(L0, eta)`.
///
/// Cost: one call for the naive start, one per residual evaluation, one per
/// vector-Jacobian product.
pub fn spdinv_step(
    z_prev: &LatentState,
    t: usize,
    predictor: &dyn EpsilonPredictor,
    c: Condition,
    schedule: &NoiseSchedule,
    config: &SpdInvConfig,
) -> Result<StepResult> {
    config.validate()?;
    let problem = FixedPoint::new(z_prev, t, predictor, c, schedule, config.w)?;
    let (mut z, _) = problem.naive()?;
    let mut calls = 1;
    let mut rounds = 0;
    let mut initial = None;
    let mut best: Option<(f64, LatentState, LatentState)> = None;

    for round in 0..=config.k {
        let (f, eps) = problem.map(&z)?;
        calls += 1;
        let r = f.sub(&z);
        let loss = r.norm();
        let l0 = *initial.get_or_insert(loss);
        let limit = DIVERGENCE_FACTOR * l0.max(config.eta);
        if !loss.is_finite() || loss > limit {
            return Err(Error::Diverged {
                t,
                residual: loss,
                initial: l0,
                limit,
            });
        }
        if best.as_ref().is_none_or(|(b, _, _)| loss < *b) {
            best = Some((loss, z.clone(), eps));
        }
        if loss < config.delta || loss == 0.0 || round == config.k {
            break;
        }
        let grad = problem.gradient(&z, &r, loss, config.stop_gradient)?;
        if !config.stop_gradient {
            calls += 1;
        }
        z = z.lincomb(1.0, &grad, -config.eta);
        z.check_finite(t, "gradient update")?;
        rounds += 1;
    }

    let (final_residual, z_t, eps) = best.expect("at least one round evaluated");
    Ok(StepResult {
        z_t,
        eps,
        initial_residual: initial.unwrap_or(0.0),
        final_residual,
        rounds,
        predictor_calls: calls,
    })
}

/// One AIDI step: `rounds` assignments `z <- f(z)` from the naive iterate.
///
/// The map evaluation that produces the next iterate also yields the
/// residual of the current one, so the guard `L > DIVERGENCE_FACTOR * L0`
/// is checked every round. Cost: `rounds + 2` predictor calls.
#[allow(clippy::too_many_arguments)]
pub fn aidi_step(
    z_prev: &LatentState,
    t: usize,
    predictor: &dyn EpsilonPredictor,
    c: Condition,
    schedule: &NoiseSchedule,
    rounds: usize,
    w: f64,
) -> Result<StepResult> {
    if rounds == 0 {
        return Err(Error::InvalidConfig("aidi rounds must be >= 1".into()));
    }
    let problem = FixedPoint::new(z_prev, t, predictor, c, schedule, w)?;
    let (mut z, _) = problem.naive()?;
    let (mut f, mut eps) = problem.map(&z)?;
    let initial = f.sub(&z).norm();
    let mut residual = initial;
    let limit = DIVERGENCE_FACTOR * initial;
    for _ in 0..rounds {
        z = f;
        z.check_finite(t, "fixed-point iteration")?;
        (f, eps) = problem.map(&z)?;
        residual = f.sub(&z).norm();
        if !residual.is_finite() || residual > limit {
            return Err(Error::Diverged {
                t,
                residual,
                initial,
                limit,
            });
        }
    }
    Ok(StepResult {
        z_t: z,
        eps,
        initial_residual: initial,
        final_residual: residual,
        rounds,
        predictor_calls: rounds + 2,
    })
}

/// Inverts `z_0` into a noise code with the method selected by `config`.
pub fn invert(
    z0: &LatentState,
    c: Condition,
    predictor: &dyn EpsilonPredictor,
    schedule: &NoiseSchedule,
    config: &SpdInvConfig,
) -> Result<Trajectory> {
    invert_with_budget(z0, c, predictor, schedule, config, None)
}

/// Like [`invert`], but AIDI uses `aidi_rounds[t - 1]` rounds at step `t`.
///
/// Used for call-budget-matched comparisons against an SPDInv run.
pub fn invert_with_budget(
    z0: &LatentState,
    c: Condition,
    predictor: &dyn EpsilonPredictor,
    schedule: &NoiseSchedule,
    config: &SpdInvConfig,
    aidi_rounds: Option<&[usize]>,
) -> Result<Trajectory> {
    config.validate()?;
    let steps = schedule.steps();
    if config.steps != steps {
        return Err(Error::InvalidConfig(format!(
            "config has T = {} but the schedule has {steps} steps",
            config.steps
        )));
    }
    if let Some(r) = aidi_rounds {
        if r.len() != steps {
            return Err(Error::InvalidConfig(format!(
                "{} per-step round counts for {steps} steps",
                r.len()
            )));
        }
    }
    z0.expect_dim(predictor.dim())?;
    z0.check_finite(0, "clean latent")?;

    let mut states = Vec::with_capacity(steps + 1);
    let mut records = Vec::with_capacity(steps);
    states.push(z0.clone());
    for t in 1..=steps {
        let z_prev = &states[t - 1];
        let result = match config.method {
            Method::Naive => {
                let problem = FixedPoint::new(z_prev, t, predictor, c, schedule, config.w)?;
                let (z, eps) = problem.naive()?;
                let (f, _) = problem.map(&z)?;
                let residual = f.sub(&z).norm();
                StepResult {
                    z_t: z,
                    eps,
                    initial_residual: residual,
                    final_residual: residual,
                    rounds: 0,
                    predictor_calls: 1,
                }
            }
            Method::Aidi => {
                let rounds = aidi_rounds.map_or(config.aidi_rounds, |r| r[t - 1].max(1));
                aidi_step(z_prev, t, predictor, c, schedule, rounds, config.w)?
            }
            Method::Spdinv => spdinv_step(z_prev, t, predictor, c, schedule, config)?,
        };
        records.push(StepRecord {
            t,
            initial_residual: result.initial_residual,
            final_residual: result.final_residual,
            rounds: result.rounds,
            predictor_calls: result.predictor_calls,
            eps: result.eps,
        });
        states.push(result.z_t);
    }
    Trajectory::new(Direction::Inversion, c, schedule.hash(), states, records)
}

/// AIDI rounds per step that match the predictor calls of an SPDInv trajectory.
///
/// AIDI spends `rounds + 2` calls per step, so it gets `calls - 2` rounds
/// (at least one); the per-step totals then differ by at most one call.
pub fn matched_aidi_rounds(spdinv: &Trajectory) -> Vec<usize> {
    (1..=spdinv.steps())
        .map(|t| spdinv.record_at(t).predictor_calls.saturating_sub(2).max(1))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predictor::{GaussianMixture, LinearModel, ZeroPredictor};
    use crate::schedule::build_linear_schedule;

    fn schedule(steps: usize) -> NoiseSchedule {
        build_linear_schedule(1000, 1e-4, 2e-2, steps).unwrap()
    }

    fn latent(v: &[f64]) -> LatentState {
        LatentState::new(v.to_vec()).unwrap()
    }

    #[test]
    fn naive_with_zero_predictor_scales() {
        let s = schedule(10);
        let z = latent(&[1.0, 2.0]);
        let out = naive_invert_step(&z, 3, &ZeroPredictor::new(2), Condition::NULL, &s, 1.0).unwrap();
        assert_eq!(out, z.scale(s.coefficients(3).unwrap().c1));
    }

    #[test]
    fn naive_linear_closed_form() {
        let s = schedule(10);
        let m = LinearModel::scalar(2, 0.6, vec![0.1, -0.2]).unwrap();
        let z = latent(&[0.5, -1.0]);
        let c = s.coefficients(4).unwrap();
        let out = naive_invert_step(&z, 4, &m, Condition::NULL, &s, 1.0).unwrap();
        for i in 0..2 {
            let eps = 0.6 * z[i] + [0.1, -0.2][i];
            assert!((out[i] - (c.c1 * z[i] + c.c2 * eps)).abs() < 1e-15);
        }
    }

    #[test]
    fn naive_identity_step() {
        let s = NoiseSchedule::from_alpha_bar(vec![0.7, 0.7]).unwrap();
        let z = latent(&[0.3, 0.1]);
        let m = GaussianMixture::lab_default();
        assert_eq!(naive_invert_step(&z, 1, &m, Condition::label(1), &s, 1.0).unwrap(), z);
    }

    #[test]
    fn map_ignores_z_when_eps_is_zero() {
        let s = schedule(10);
        let zp = latent(&[0.4, -0.4]);
        let expected = zp.scale(s.coefficients(5).unwrap().c1);
        for z in [latent(&[9.0, 9.0]), latent(&[-3.0, 0.0])] {
            let f = fixed_point_map(&z, &zp, 5, &ZeroPredictor::new(2), Condition::NULL, &s, 1.0).unwrap();
            assert_eq!(f, expected);
        }
    }

    #[test]
    fn zero_c2_step_returns_scaled_prev() {
        let s = NoiseSchedule::from_alpha_bar(vec![0.6, 0.6, 0.3]).unwrap();
        let m = LinearModel::scalar(2, 3.0, vec![1.0, 1.0]).unwrap();
        let zp = latent(&[0.2, 0.3]);
        let f = fixed_point_map(&latent(&[5.0, 5.0]), &zp, 1, &m, Condition::NULL, &s, 1.0).unwrap();
        assert_eq!(f, zp);
    }

    #[test]
    fn residual_of_displacement() {
        let s = schedule(10);
        let zp = latent(&[0.4, -0.4, 1.0]);
        let base = zp.scale(s.coefficients(2).unwrap().c1);
        let zero = ZeroPredictor::new(3);
        let l = residual_loss(&base, &zp, 2, &zero, Condition::NULL, &s, 1.0).unwrap();
        assert_eq!(l, 0.0);
        let u = latent(&[0.3, 0.0, -0.4]);
        let l = residual_loss(&base.add(&u), &zp, 2, &zero, Condition::NULL, &s, 1.0).unwrap();
        assert!((l - 0.5).abs() < 1e-15);
    }

    #[test]
    fn constant_map_gradient_points_to_image() {
        let s = schedule(10);
        let zp = latent(&[0.4, -0.4]);
        let z = latent(&[1.0, 1.0]);
        let zero = ZeroPredictor::new(2);
        let g = residual_grad(&z, &zp, 2, &zero, Condition::NULL, &s, 1.0, false).unwrap();
        let r = zp.scale(s.coefficients(2).unwrap().c1).sub(&z);
        let expected = r.scale(-1.0 / r.norm());
        assert!(g.sub(&expected).norm() < 1e-15);
        assert!((g.norm() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn gradient_vanishes_at_fixed_point() {
        let s = schedule(10);
        let zp = latent(&[0.4, -0.4]);
        let z = zp.scale(s.coefficients(2).unwrap().c1);
        let g = residual_grad(&z, &zp, 2, &ZeroPredictor::new(2), Condition::NULL, &s, 1.0, false).unwrap();
        assert_eq!(g, LatentState::zeros(2));
    }

    #[test]
    fn spdinv_breaks_immediately_on_zero_predictor() {
        let s = schedule(10);
        let zp = latent(&[0.4, -0.4]);
        for delta in [5e-6, 0.0] {
            let cfg = SpdInvConfig {
                delta,
                steps: 10,
                ..SpdInvConfig::default()
            };
            let r = spdinv_step(&zp, 3, &ZeroPredictor::new(2), Condition::NULL, &s, &cfg).unwrap();
            assert_eq!(r.initial_residual, 0.0);
            assert_eq!(r.rounds, 0);
            assert_eq!(r.predictor_calls, 2);
            assert_eq!(r.z_t, zp.scale(s.coefficients(3).unwrap().c1));
        }
    }

    #[test]
    fn spdinv_never_worse_than_start() {
        let s = schedule(50);
        let m = GaussianMixture::lab_default();
        let zp = latent(&[1.2, 0.4]);
        for eta in [1e-4, 1e-3, 1e-2] {
            let cfg = SpdInvConfig { eta, ..SpdInvConfig::default() };
            for t in [1, 10, 30, 50] {
                let r = spdinv_step(&zp, t, &m, Condition::label(1), &s, &cfg).unwrap();
                assert!(r.final_residual <= r.initial_residual.max(cfg.delta));
                assert!(r.rounds <= cfg.k);
                if r.final_residual <= cfg.delta && r.rounds < cfg.k {
                    assert_eq!(r.predictor_calls, 2 * r.rounds + 2);
                }
            }
        }
    }

    #[test]
    fn aidi_constant_map_one_round() {
        let s = schedule(10);
        let zp = latent(&[0.4, -0.4]);
        let r = aidi_step(&zp, 4, &ZeroPredictor::new(2), Condition::NULL, &s, 1, 1.0).unwrap();
        assert_eq!(r.final_residual, 0.0);
        assert_eq!(r.predictor_calls, 3);
        assert!(aidi_step(&zp, 4, &ZeroPredictor::new(2), Condition::NULL, &s, 0, 1.0).is_err());
    }

    #[test]
    fn aidi_expanding_map_trips_guard() {
        let s = schedule(10);
        let c2 = s.coefficients(5).unwrap().c2;
        let m = LinearModel::scalar(2, -2.0 / c2, vec![0.3, 0.1]).unwrap();
        let zp = latent(&[0.5, 0.5]);
        let err = aidi_step(&zp, 5, &m, Condition::NULL, &s, 10, 1.0).unwrap_err();
        assert!(matches!(err, Error::Diverged { t: 5, .. }), "{err}");
    }

    #[test]
    fn invert_single_step_each_method() {
        let s = schedule(1);
        let m = GaussianMixture::lab_default();
        let z0 = latent(&[1.9, 0.1]);
        for method in [Method::Naive, Method::Aidi, Method::Spdinv] {
            let cfg = SpdInvConfig {
                method,
                steps: 1,
                ..SpdInvConfig::default()
            };
            let tr = invert(&z0, Condition::label(1), &m, &s, &cfg).unwrap();
            assert_eq!(tr.states().len(), 2);
            assert_eq!(tr.direction(), Direction::Inversion);
        }
        let naive = invert(&z0, Condition::label(1), &m, &s, &SpdInvConfig { method: Method::Naive, steps: 1, ..Default::default() }).unwrap();
        assert_eq!(naive.noise_code(), &naive_invert_step(&z0, 1, &m, Condition::label(1), &s, 1.0).unwrap());
    }

    #[test]
    fn invert_rejects_mismatched_steps() {
        let s = schedule(10);
        let cfg = SpdInvConfig::default();
        assert!(invert(&latent(&[0.0, 0.0]), Condition::NULL, &ZeroPredictor::new(2), &s, &cfg).is_err());
    }

    #[test]
    fn config_validation() {
        let bad = [
            SpdInvConfig { eta: 0.0, ..Default::default() },
            SpdInvConfig { delta: -1.0, ..Default::default() },
            SpdInvConfig { method: Method::Aidi, aidi_rounds: 0, ..Default::default() },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err(), "{cfg:?}");
        }
        let parsed: SpdInvConfig = serde_json::from_str(r#"{"method":"spdinv","k":5}"#).unwrap();
        assert_eq!(parsed.k, 5);
        assert_eq!(parsed.delta, 5e-6);
        assert_eq!(parsed.eta, 1e-3);
        assert_eq!(parsed.steps, 50);
    }
}
