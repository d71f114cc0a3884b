//! Numerical laboratory for inverting deterministic diffusion samplers.
//!
//! A clean latent `z_0` is mapped back to the noise code `z_T` that the DDIM
//! sampler would turn into it. Three step solvers are provided:
//!
//! * naive inversion, which evaluates the predictor at the previous latent;
//! * fixed-round iteration of the step's fixed-point map;
//! * gradient descent on the fixed-point residual with an early stop.
//!
//! Predictors are pluggable ([`predictor::EpsilonPredictor`]); the analytic
//! Gaussian mixture gives exact noise predictions, so inversion errors can be
//! measured against ground-truth trajectories.
//!
//! ```
//! use spdinv::{generate, invert, Condition, GaussianMixture, LatentState, Method, ScheduleParams, SpdInvConfig};
//!
//! let schedule = ScheduleParams { inference_steps: 50, ..Default::default() }.build()?;
//! let model = GaussianMixture::lab_default();
//! let z_t = LatentState::new(vec![0.4, -1.2])?;
//! let truth = generate(&z_t, Condition::label(1), &model, &schedule, 1.0)?;
//!
//! let config = SpdInvConfig { steps: 50, ..SpdInvConfig::with_method(Method::Spdinv) };
//! let inverted = invert(truth.clean(), Condition::label(1), &model, &schedule, &config)?;
//! assert!(inverted.noise_code().mse(&z_t) < 1e-3);
//! # Ok::<(), spdinv::Error>(())
//! ```

pub mod error;
pub mod format;
pub mod harness;
pub mod inversion;
pub mod latent;
pub mod metrics;
pub mod predictor;
pub mod sampler;
pub mod schedule;
pub mod trajectory;

pub use error::{Error, Result};
pub use format::{load_trajectory, save_trajectory};
pub use inversion::{aidi_step, invert, naive_invert_step, spdinv_step, Method, SpdInvConfig, StepResult};
pub use latent::{Condition, LatentState};
pub use metrics::{noise_gap, reconstruction_gap, GapReport};
pub use predictor::{EpsilonPredictor, GaussianMixture, LinearModel, MlpDenoiser, ZeroPredictor};
pub use sampler::{ddim_step, generate};
pub use schedule::{build_linear_schedule, coefficients, NoiseSchedule, ScheduleParams, StepCoefficients};
pub use trajectory::{Direction, StepRecord, Trajectory};
