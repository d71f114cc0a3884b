use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latent::{Condition, LatentState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Generation,
    Inversion,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Generation => "generation",
            Direction::Inversion => "inversion",
        }
    }
}

/// Diagnostics of one step between indices `t - 1` and `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub t: usize,
    /// Fixed-point residual of the initial iterate (zero for generation steps).
    pub initial_residual: f64,
    /// Fixed-point residual of the returned iterate (zero for generation steps).
    pub final_residual: f64,
    pub rounds: usize,
    pub predictor_calls: usize,
    /// Noise estimate associated with the step: the one used by the sampler or
    /// by the naive update, or the one evaluated at the returned iterate.
    pub eps: LatentState,
}

/// An ordered path of latents.
///
/// Generation paths store `z_T, ..., z_0`; inversion paths store
/// `z_0, ..., z_T`. Use [`Trajectory::state_at`] for index-based access.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    direction: Direction,
    condition: Condition,
    schedule_hash: String,
    states: Vec<LatentState>,
    steps: Vec<StepRecord>,
}

impl Trajectory {
    pub fn new(
        direction: Direction,
        condition: Condition,
        schedule_hash: impl Into<String>,
        states: Vec<LatentState>,
        steps: Vec<StepRecord>,
    ) -> Result<Self> {
        if states.len() < 2 {
            return Err(Error::TrajectoryMismatch("trajectory needs at least two states".into()));
        }
        if steps.len() + 1 != states.len() {
            return Err(Error::TrajectoryMismatch(format!(
                "{} states but {} step records",
                states.len(),
                steps.len()
            )));
        }
        let dim = states[0].dim();
        for s in states.iter().chain(steps.iter().map(|s| &s.eps)) {
            s.expect_dim(dim)?;
            if !s.is_finite() {
                return Err(Error::NonFinite {
                    t: 0,
                    context: "trajectory state",
                });
            }
        }
        Ok(Self {
            direction,
            condition,
            schedule_hash: schedule_hash.into(),
            states,
            steps,
        })
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    pub fn condition(&self) -> Condition {
        self.condition
    }

    pub fn schedule_hash(&self) -> &str {
        &self.schedule_hash
    }

    pub fn dim(&self) -> usize {
        self.states[0].dim()
    }

    /// Number of steps `T`.
    pub fn steps(&self) -> usize {
        self.steps.len()
    }

    /// States in storage order.
    pub fn states(&self) -> &[LatentState] {
        &self.states
    }

    /// Step records in storage order.
    pub fn records(&self) -> &[StepRecord] {
        &self.steps
    }

    /// `z_t` for `t = 0..=T` regardless of direction.
    pub fn state_at(&self, t: usize) -> &LatentState {
        match self.direction {
            Direction::Inversion => &self.states[t],
            Direction::Generation => &self.states[self.steps() - t],
        }
    }

    /// Diagnostics of step `t` in `1..=T`.
    pub fn record_at(&self, t: usize) -> &StepRecord {
        match self.direction {
            Direction::Inversion => &self.steps[t - 1],
            Direction::Generation => &self.steps[self.steps() - t],
        }
    }

    pub fn clean(&self) -> &LatentState {
        self.state_at(0)
    }

    pub fn noise_code(&self) -> &LatentState {
        self.state_at(self.steps())
    }

    pub fn total_predictor_calls(&self) -> usize {
        self.steps.iter().map(|s| s.predictor_calls).sum()
    }
}
