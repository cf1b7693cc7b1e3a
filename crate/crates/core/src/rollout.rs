//! Closed-loop episode simulation: measure → observe → act → step, with a
//! full per-step log.
//!
//! The observation is computed for every controller (it is a pure function of
//! measurements, emitted actions, and the target), so PID episodes carry the
//! same state-space instrumentation as policy episodes.

use rand_chacha::ChaCha8Rng;

use crate::agent::{build_observation, select_action, ActionMode, InternalModel, Observation};
use crate::error::{Error, Result};
use crate::pid::{pid_step, PidParams, PidState};
use crate::pkpd::{
    measure, response, step_patient, DiscretePatientModel, MeasurementModel, PatientParams,
    PatientState,
};
use crate::policy::{self, PolicyWeights};

/// Per-step record of one episode plus the episode reward.
#[derive(Debug, Clone)]
pub struct EpisodeLog {
    pub targets: Vec<f64>,
    /// True response (noiseless).
    pub y_true: Vec<f64>,
    /// Measured response.
    pub y_measured: Vec<f64>,
    pub observations: Vec<[f64; 4]>,
    /// Normalized actions in [0, 1].
    pub actions: Vec<f64>,
    /// Mass delivered at each step [mg].
    pub infused_mg: Vec<f64>,
    /// Environment compartment amounts after each step.
    pub states: Vec<[f64; 3]>,
    /// Environment effect-site level after each step.
    pub effect_site: Vec<f64>,
    /// Cumulative negative absolute tracking error of the true response.
    pub reward: f64,
    pub patient: PatientParams,
    pub delta_t_s: f64,
}

impl EpisodeLog {
    pub fn steps(&self) -> usize {
        self.targets.len()
    }

    pub fn total_infused_mg(&self) -> f64 {
        self.infused_mg.iter().sum()
    }

    /// Consistency check: all per-step arrays share one length.
    pub fn validate(&self) -> Result<()> {
        let k = self.targets.len();
        let ok = self.y_true.len() == k
            && self.y_measured.len() == k
            && self.observations.len() == k
            && self.actions.len() == k
            && self.infused_mg.len() == k
            && self.states.len() == k
            && self.effect_site.len() == k;
        if !ok {
            return Err(Error::Numeric("episode log arrays have mismatched lengths".into()));
        }
        Ok(())
    }
}

/// Anything that can pick an infusion action each step.
pub trait Controller {
    fn act(&mut self, obs: &Observation, y_measured: f64, target: f64) -> Result<f64>;
}

/// Policy-network controller in one of the three action modes.
pub struct PolicyController<'w> {
    weights: &'w PolicyWeights,
    mode: ActionMode,
    rng: ChaCha8Rng,
}

impl<'w> PolicyController<'w> {
    pub fn new(weights: &'w PolicyWeights, mode: ActionMode, rng: ChaCha8Rng) -> Self {
        Self { weights, mode, rng }
    }
}

impl Controller for PolicyController<'_> {
    fn act(&mut self, obs: &Observation, _y_measured: f64, _target: f64) -> Result<f64> {
        let probs = policy::forward(self.weights, obs.to_array())?;
        Ok(select_action(probs, self.mode, &mut self.rng))
    }
}

/// PID baseline controller.
pub struct PidController {
    params: PidParams,
    state: PidState,
}

impl PidController {
    pub fn new(params: PidParams) -> Self {
        Self { params, state: PidState::new() }
    }
}

impl Controller for PidController {
    fn act(&mut self, _obs: &Observation, y_measured: f64, target: f64) -> Result<f64> {
        Ok(pid_step(&mut self.state, y_measured, target, &self.params))
    }
}

/// Environment pieces shared by the episodes of a batch or campaign.
pub struct EnvSetup<'m> {
    pub patient_model: &'m DiscretePatientModel,
    /// Generic model backing the agent's internal estimate.
    pub generic_model: &'m DiscretePatientModel,
    pub measurement: MeasurementModel,
}

/// Simulate one full episode.
///
/// `env_rng` drives only the measurement noise, so two controllers given
/// identically seeded RNGs see bit-identical noise streams.
pub fn run_closed_loop(
    env: &EnvSetup,
    patient: &PatientParams,
    targets: &[f64],
    controller: &mut dyn Controller,
    env_rng: &mut ChaCha8Rng,
) -> Result<EpisodeLog> {
    let steps = targets.len();
    let mut log = EpisodeLog {
        targets: targets.to_vec(),
        y_true: Vec::with_capacity(steps),
        y_measured: Vec::with_capacity(steps),
        observations: Vec::with_capacity(steps),
        actions: Vec::with_capacity(steps),
        infused_mg: Vec::with_capacity(steps),
        states: Vec::with_capacity(steps),
        effect_site: Vec::with_capacity(steps),
        reward: 0.0,
        patient: *patient,
        delta_t_s: env.patient_model.delta_t_s,
    };

    let mut state = PatientState::zero();
    let mut internal = InternalModel::new(env.generic_model.clone());
    let dose_per_step = env.patient_model.dose_per_step_mg();

    for &target in targets {
        let y = response(env.patient_model, &state);
        let y_measured = measure(y, &env.measurement, env_rng);
        log.y_measured.push(y_measured);

        let obs = build_observation(&log.y_measured, target, &internal);
        let action = controller.act(&obs, y_measured, target)?;
        if !(0.0..=1.0).contains(&action) {
            return Err(Error::Numeric(format!(
                "controller produced action {action} outside [0, 1] at step {}",
                log.y_true.len()
            )));
        }

        state = step_patient(env.patient_model, &state, action);
        internal.update(action);

        log.y_true.push(y);
        log.observations.push(obs.to_array());
        log.actions.push(action);
        log.infused_mg.push(action * dose_per_step);
        log.states.push(state.x);
        log.effect_site.push(state.x_e);
        log.reward -= (target - y).abs();
    }
    Ok(log)
}
