//! Workbench configuration: one TOML file covering the patient table, the
//! environment, training, and the PID baseline. Every section has defaults,
//! so a partial (or absent) file works.

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};
use crate::pid::PidParams;
use crate::pkpd::{LinkBeta, MeasurementModel, PatientRanges, DEFAULT_DELTA_T_S};

/// Environment-side settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    /// Step duration [s].
    pub delta_t_s: f64,
    /// Measurement noise variance.
    pub noise_variance: f64,
    /// Effect-site link discretization convention.
    pub link_beta: LinkBeta,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            delta_t_s: DEFAULT_DELTA_T_S,
            noise_variance: 3e-4,
            link_beta: LinkBeta::PerSecondRate,
        }
    }
}

impl EnvConfig {
    pub fn measurement(&self) -> MeasurementModel {
        MeasurementModel { noise_variance: self.noise_variance }
    }

    pub fn validate(&self) -> Result<()> {
        if self.delta_t_s.is_nan() || self.delta_t_s <= 0.0 {
            return Err(Error::Config(format!("delta_t_s {} must be positive", self.delta_t_s)));
        }
        if self.noise_variance.is_nan() || self.noise_variance < 0.0 {
            return Err(Error::Config(format!(
                "noise_variance {} must be >= 0",
                self.noise_variance
            )));
        }
        Ok(())
    }
}

/// Cross-entropy training settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Episodes per batch.
    pub batch_size: usize,
    /// Reward percentile cutoff: the best (100 − p)% of episodes are elite.
    pub elite_percentile: f64,
    /// Stop after this many batches.
    pub max_batches: usize,
    /// Optional early stop once the batch mean reward reaches this value.
    pub min_mean_reward: Option<f64>,
    /// SGD learning rate for the summed elite loss.
    pub learning_rate: f64,
    /// Optional exponential decay: the learning rate halves every this many
    /// batches. Damps the late-training wander of the decision boundary.
    pub learning_rate_half_life: Option<usize>,
    /// Steps per episode.
    pub episode_steps: usize,
    /// Piecewise-constant target segments per episode.
    pub targets_per_episode: usize,
    pub target_min: f64,
    pub target_max: f64,
    pub master_seed: u64,
    /// Write a checkpoint every this many batches (plus one at the end).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            elite_percentile: 70.0,
            max_batches: 4000,
            min_mean_reward: None,
            learning_rate: 0.002,
            learning_rate_half_life: Some(1200),
            episode_steps: 2000,
            targets_per_episode: 4,
            target_min: 0.25,
            target_max: 0.75,
            master_seed: 20260811,
            checkpoint_every: 100,
        }
    }
}

impl TrainConfig {
    /// Learning rate in effect for `batch_idx`.
    pub fn learning_rate_at(&self, batch_idx: usize) -> f64 {
        match self.learning_rate_half_life {
            Some(half_life) => {
                self.learning_rate * 0.5f64.powf(batch_idx as f64 / half_life as f64)
            }
            None => self.learning_rate,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        let p = self.elite_percentile;
        if p.is_nan() || p <= 0.0 || p >= 100.0 {
            return Err(Error::Config(format!(
                "elite_percentile {} must lie strictly between 0 and 100",
                self.elite_percentile
            )));
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return Err(Error::Config(format!(
                "learning_rate {} must be positive",
                self.learning_rate
            )));
        }
        if self.learning_rate_half_life == Some(0) {
            return Err(Error::Config("learning_rate_half_life must be >= 1".into()));
        }
        if self.episode_steps == 0 {
            return Err(Error::Config("episode_steps must be >= 1".into()));
        }
        if self.targets_per_episode == 0 || !self.episode_steps.is_multiple_of(self.targets_per_episode) {
            return Err(Error::Config(format!(
                "episode_steps {} must be divisible by targets_per_episode {}",
                self.episode_steps, self.targets_per_episode
            )));
        }
        let (lo, hi) = (self.target_min, self.target_max);
        if lo.is_nan() || hi.is_nan() || lo > hi || lo <= 0.0 || hi > 1.0 {
            return Err(Error::Config(format!(
                "target range [{}, {}] must satisfy 0 < min <= max <= 1",
                self.target_min, self.target_max
            )));
        }
        if self.checkpoint_every == 0 {
            return Err(Error::Config("checkpoint_every must be >= 1".into()));
        }
        Ok(())
    }
}

/// PID gains section; the clamp defaults to ki·Σe spanning the actuator range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PidConfig {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    pub integral_clamp: Option<(f64, f64)>,
}

impl Default for PidConfig {
    fn default() -> Self {
        Self { kp: 9.0, ki: 0.9, kd: 22.5, integral_clamp: None }
    }
}

impl PidConfig {
    pub fn params(&self) -> PidParams {
        let integral_clamp = self.integral_clamp.unwrap_or_else(|| {
            if self.ki > 0.0 {
                (0.0, 1.0 / self.ki)
            } else {
                (0.0, 0.0)
            }
        });
        PidParams { kp: self.kp, ki: self.ki, kd: self.kd, integral_clamp }
    }

    pub fn validate(&self) -> Result<()> {
        self.params().validate()
    }
}

/// The full configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct WorkbenchConfig {
    pub patient: PatientRanges,
    pub env: EnvConfig,
    pub train: TrainConfig,
    pub pid: PidConfig,
}

impl WorkbenchConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let cfg: WorkbenchConfig = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("cannot parse {}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.patient.validate()?;
        self.env.validate()?;
        self.train.validate()?;
        self.pid.validate()?;
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}
