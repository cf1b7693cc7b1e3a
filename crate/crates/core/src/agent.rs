//! Agent-side machinery: the internal generic patient model, the
//! 4-dimensional observation, and action selection.
//!
//! Everything here is computed from measurements, emitted actions, and the
//! target only — the agent never sees the environment's hidden parameters.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::pkpd::{step_patient, DiscretePatientModel, PatientState};

/// Steps in the 30-second window used for the lookahead and lookback terms.
pub const LAG_STEPS: usize = 6;

/// Observation fed to the policy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    /// Measured response error: ỹ_k − y*_k.
    pub error: f64,
    /// Predicted 30-s-ahead effect-site change under zero further infusion.
    pub predicted_effect_delta: f64,
    /// Measured response change over the last 30 s: ỹ_k − ỹ_{k−6}.
    pub measured_change: f64,
    /// Current target.
    pub target: f64,
}

impl Observation {
    pub fn to_array(self) -> [f64; 4] {
        [self.error, self.predicted_effect_delta, self.measured_change, self.target]
    }
}

/// Generic patient model the agent steps in lockstep with its own actions to
/// estimate concentration levels it cannot measure.
#[derive(Debug, Clone)]
pub struct InternalModel {
    model: DiscretePatientModel,
    state: PatientState,
}

impl InternalModel {
    pub fn new(generic_model: DiscretePatientModel) -> Self {
        Self { model: generic_model, state: PatientState::zero() }
    }

    /// Advance the estimate with the action the agent actually emitted.
    pub fn update(&mut self, action: f64) {
        self.state = step_patient(&self.model, &self.state, action);
    }

    /// Estimated effect-site change over the next `LAG_STEPS` steps assuming
    /// no further infusion. Works on a copy; the live estimate is untouched.
    pub fn predicted_effect_site_delta(&self) -> f64 {
        let mut probe = self.state;
        for _ in 0..LAG_STEPS {
            probe = step_patient(&self.model, &probe, 0.0);
        }
        probe.x_e - self.state.x_e
    }

    pub fn x_hat(&self) -> [f64; 3] {
        self.state.x
    }

    pub fn x_e_hat(&self) -> f64 {
        self.state.x_e
    }
}

/// Assemble the observation for the current step.
///
/// `measured` holds every measurement up to and including the current step;
/// measurements before the start of the episode are taken to equal the first
/// one, so the 30-s change reads zero until enough history exists.
pub fn build_observation(
    measured: &[f64],
    target: f64,
    internal: &InternalModel,
) -> Observation {
    assert!(!measured.is_empty(), "need at least the current measurement");
    let current = *measured.last().unwrap();
    let lagged = if measured.len() > LAG_STEPS {
        measured[measured.len() - 1 - LAG_STEPS]
    } else {
        measured[0]
    };
    Observation {
        error: current - target,
        predicted_effect_delta: internal.predicted_effect_site_delta(),
        measured_change: current - lagged,
        target,
    }
}

/// How a policy's output distribution is turned into an infusion action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActionMode {
    /// Sample from the distribution (used in training).
    Stochastic,
    /// Highest-probability action; an exact tie falls back to no infusion.
    Deterministic,
    /// The infusion probability itself, as a fractional rate.
    Continuous,
}

/// Select an action from `(p_no_infuse, p_infuse)`.
pub fn select_action(probs: [f64; 2], mode: ActionMode, rng: &mut ChaCha8Rng) -> f64 {
    match mode {
        ActionMode::Stochastic => {
            if rng.random_range(0.0..1.0) < probs[1] {
                1.0
            } else {
                0.0
            }
        }
        ActionMode::Deterministic => {
            if probs[1] > probs[0] {
                1.0
            } else {
                0.0
            }
        }
        ActionMode::Continuous => probs[1],
    }
}
