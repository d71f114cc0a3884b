use crate::error::{Error, Result};
use crate::latent::{Condition, LatentState};
use crate::schedule::NoiseSchedule;

use super::EpsilonPredictor;

/// Classifier-free guidance: `eps_u + w * (eps_c - eps_u)`.
///
/// `w = 1` returns `eps_cond` and `w = 0` returns `eps_uncond` bit-for-bit.
pub fn cfg_combine(eps_uncond: &LatentState, eps_cond: &LatentState, w: f64) -> Result<LatentState> {
    eps_cond.expect_dim(eps_uncond.dim())?;
    Ok(if w == 1.0 {
        eps_cond.clone()
    } else if w == 0.0 {
        eps_uncond.clone()
    } else {
        eps_uncond.lincomb(1.0 - w, eps_cond, w)
    })
}

fn needs_uncond(c: Condition, w: f64) -> bool {
    !c.is_null() && w != 1.0
}

/// Guided prediction. The conditional branch alone is evaluated when `w = 1`,
/// the unconditional one alone when `c` is NULL or `w = 0`.
pub fn guided_predict(
    predictor: &dyn EpsilonPredictor,
    z: &LatentState,
    t: usize,
    c: Condition,
    schedule: &NoiseSchedule,
    w: f64,
) -> Result<LatentState> {
    if !w.is_finite() {
        return Err(Error::InvalidConfig(format!("guidance scale {w} is not finite")));
    }
    if c.is_null() || w == 0.0 {
        return predictor.predict(z, t, Condition::NULL, schedule);
    }
    let cond = predictor.predict(z, t, c, schedule)?;
    if !needs_uncond(c, w) {
        return Ok(cond);
    }
    let uncond = predictor.predict(z, t, Condition::NULL, schedule)?;
    cfg_combine(&uncond, &cond, w)
}

/// Vector-Jacobian product of [`guided_predict`]; linear in `w` like the forward map.
pub fn guided_vjp(
    predictor: &dyn EpsilonPredictor,
    z: &LatentState,
    t: usize,
    c: Condition,
    schedule: &NoiseSchedule,
    w: f64,
    v: &LatentState,
) -> Result<LatentState> {
    if c.is_null() || w == 0.0 {
        return predictor.vjp(z, t, Condition::NULL, schedule, v);
    }
    let cond = predictor.vjp(z, t, c, schedule, v)?;
    if !needs_uncond(c, w) {
        return Ok(cond);
    }
    let uncond = predictor.vjp(z, t, Condition::NULL, schedule, v)?;
    cfg_combine(&uncond, &cond, w)
}
