//! Discrete PID baseline with integral anti-windup clamping and a
//! 30-second-lagged derivative.

use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

use crate::agent::LAG_STEPS;
use crate::error::{Error, Result};

/// Controller gains and the clamp interval for the accumulated error sum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PidParams {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    /// Bounds on the accumulated error sum Σe. The default sizes the clamp to
    /// the actuator range: ki·Σe ∈ [0, 1].
    pub integral_clamp: (f64, f64),
}

impl Default for PidParams {
    fn default() -> Self {
        let ki = 0.9;
        Self { kp: 9.0, ki, kd: 22.5, integral_clamp: (0.0, 1.0 / ki) }
    }
}

impl PidParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("kp", self.kp), ("ki", self.ki), ("kd", self.kd)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!("PID gain {name} = {v} must be >= 0")));
            }
        }
        let (lo, hi) = self.integral_clamp;
        if lo.is_nan() || hi.is_nan() || lo > hi {
            return Err(Error::Config(format!("integral clamp [{lo}, {hi}] is empty")));
        }
        Ok(())
    }
}

/// Per-episode controller state.
#[derive(Debug, Clone)]
pub struct PidState {
    integral: f64,
    /// Recent errors, newest last; holds at most `LAG_STEPS + 1` values so
    /// the lagged error for the derivative is always available.
    errors: VecDeque<f64>,
}

impl PidState {
    pub fn new() -> Self {
        Self { integral: 0.0, errors: VecDeque::with_capacity(LAG_STEPS + 1) }
    }

    pub fn integral(&self) -> f64 {
        self.integral
    }
}

impl Default for PidState {
    fn default() -> Self {
        Self::new()
    }
}

/// One controller update. Returns the normalized action in [0, 1].
///
/// `raw = kp·e_k + ki·Σe (clamped) + kd·(e_k − e_{k−6})/6`, clipped to the
/// actuator range. Before six steps of history exist, `e_{k−6}` is taken to
/// be the first error seen.
pub fn pid_step(state: &mut PidState, y_measured: f64, target: f64, params: &PidParams) -> f64 {
    let error = target - y_measured;

    state.integral = (state.integral + error)
        .clamp(params.integral_clamp.0, params.integral_clamp.1);

    if state.errors.len() == LAG_STEPS + 1 {
        state.errors.pop_front();
    }
    state.errors.push_back(error);
    let lagged = *state.errors.front().unwrap();

    let raw = params.kp * error
        + params.ki * state.integral
        + params.kd * (error - lagged) / LAG_STEPS as f64;
    raw.clamp(0.0, 1.0)
}
