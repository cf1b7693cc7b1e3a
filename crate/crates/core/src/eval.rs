//! Performance metrics, paired test campaigns, the paired t-test, and policy
//! map export.

use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::agent::{ActionMode, LAG_STEPS};
use crate::config::WorkbenchConfig;
use crate::error::{Error, Result};
use crate::pid::PidParams;
use crate::pkpd::{build_discrete_model, sample_patient, PatientParams};
use crate::policy::{self, PolicyWeights};
use crate::rollout::{run_closed_loop, EnvSetup, EpisodeLog, PidController, PolicyController};
use crate::seeds::{self, stream};
use crate::trainer::generate_episode_targets;

/// Out-of-bounds threshold: steps at 5% or more absolute performance error.
pub const OOB_THRESHOLD_PERCENT: f64 = 5.0;
/// Steps of sustained in-band tracking that end an induction phase.
pub const INDUCTION_SETTLE_STEPS: usize = LAG_STEPS;

/// Per-episode metrics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeMetrics {
    /// Median absolute performance error [%].
    pub mape: f64,
    /// Median performance error [%].
    pub mpe: f64,
    /// Share of steps with |PE| at or beyond 5% [%].
    pub oob_percent: f64,
    /// Mass infused before the first sustained entry into the ±5% band [mg].
    pub induction_mg: f64,
    /// Mass per minute over maintenance time (re-induction periods after
    /// target changes excluded) [mg/min].
    pub maintenance_mg_per_min: f64,
    /// Total infused mass [mg].
    pub total_mg: f64,
}

/// Signed performance error [%] of the true response against the target.
pub fn performance_error(y: f64, y_star: f64) -> Result<f64> {
    if y_star.is_nan() || y_star <= 0.0 {
        return Err(Error::Config(format!(
            "performance error undefined for target {y_star}"
        )));
    }
    Ok(100.0 * (y - y_star) / y_star)
}

/// Median with the usual two-middle-values average for even counts.
pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of an empty slice");
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Share of steps [%] with |PE| at or beyond the (inclusive) threshold.
pub fn oob_percent(pe: &[f64]) -> f64 {
    let count = pe.iter().filter(|p| p.abs() >= OOB_THRESHOLD_PERCENT).count();
    100.0 * count as f64 / pe.len() as f64
}

/// Target-segment boundaries: `(start, end)` pairs with `end` exclusive.
fn target_segments(targets: &[f64]) -> Vec<(usize, usize)> {
    let mut segments = Vec::new();
    let mut start = 0;
    for k in 1..targets.len() {
        if targets[k] != targets[k - 1] {
            segments.push((start, k));
            start = k;
        }
    }
    segments.push((start, targets.len()));
    segments
}

/// First step of a sustained in-band window inside `[start, end)`, if any.
fn sustained_entry(in_band: &[bool], start: usize, end: usize) -> Option<usize> {
    if end - start < INDUCTION_SETTLE_STEPS {
        return None;
    }
    (start..=end - INDUCTION_SETTLE_STEPS)
        .find(|&k| in_band[k..k + INDUCTION_SETTLE_STEPS].iter().all(|&b| b))
}

/// Compute the full metric set for one complete episode.
///
/// Induction runs from step 0 until the ±5% band is held for
/// [`INDUCTION_SETTLE_STEPS`] consecutive steps (or to the first target
/// change if that never happens). Each target change opens an analogous
/// re-induction period; those steps count toward neither maintenance mass
/// nor maintenance time.
pub fn episode_metrics(log: &EpisodeLog) -> Result<EpisodeMetrics> {
    log.validate()?;
    if log.steps() == 0 {
        return Err(Error::Config("episode log is empty".into()));
    }
    let pe: Vec<f64> = log
        .y_true
        .iter()
        .zip(log.targets.iter())
        .map(|(&y, &t)| performance_error(y, t))
        .collect::<Result<_>>()?;
    let abs_pe: Vec<f64> = pe.iter().map(|p| p.abs()).collect();
    let in_band: Vec<bool> = abs_pe.iter().map(|&p| p < OOB_THRESHOLD_PERCENT).collect();

    let segments = target_segments(&log.targets);
    let total_mg = log.total_infused_mg();

    let mut settling_mass = 0.0;
    let mut settling_steps = 0usize;
    let mut induction_mg = 0.0;
    for (seg_idx, &(start, end)) in segments.iter().enumerate() {
        let settle_end = sustained_entry(&in_band, start, end).unwrap_or(end);
        let mass: f64 = log.infused_mg[start..settle_end].iter().sum();
        settling_mass += mass;
        settling_steps += settle_end - start;
        if seg_idx == 0 {
            induction_mg = mass;
        }
    }

    let maintenance_steps = log.steps() - settling_steps;
    let maintenance_minutes = maintenance_steps as f64 * log.delta_t_s / 60.0;
    let maintenance_mg_per_min = if maintenance_steps > 0 {
        (total_mg - settling_mass) / maintenance_minutes
    } else {
        0.0
    };

    Ok(EpisodeMetrics {
        mape: median(&abs_pe),
        mpe: median(&pe),
        oob_percent: oob_percent(&pe),
        induction_mg,
        maintenance_mg_per_min,
        total_mg,
    })
}

/// The four benchmarked controllers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ControllerKind {
    Stochastic,
    Deterministic,
    Continuous,
    Pid,
}

impl ControllerKind {
    pub const ALL: [ControllerKind; 4] = [
        ControllerKind::Stochastic,
        ControllerKind::Deterministic,
        ControllerKind::Continuous,
        ControllerKind::Pid,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ControllerKind::Stochastic => "stochastic",
            ControllerKind::Deterministic => "deterministic",
            ControllerKind::Continuous => "continuous",
            ControllerKind::Pid => "pid",
        }
    }

    fn policy_mode(&self) -> Option<ActionMode> {
        match self {
            ControllerKind::Stochastic => Some(ActionMode::Stochastic),
            ControllerKind::Deterministic => Some(ActionMode::Deterministic),
            ControllerKind::Continuous => Some(ActionMode::Continuous),
            ControllerKind::Pid => None,
        }
    }

    /// Stable tag for policy-stream seed derivation.
    fn seed_tag(&self) -> u64 {
        match self {
            ControllerKind::Stochastic => 1,
            ControllerKind::Deterministic => 2,
            ControllerKind::Continuous => 3,
            ControllerKind::Pid => 4,
        }
    }
}

impl std::str::FromStr for ControllerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "stochastic" => Ok(ControllerKind::Stochastic),
            "deterministic" => Ok(ControllerKind::Deterministic),
            "continuous" => Ok(ControllerKind::Continuous),
            "pid" => Ok(ControllerKind::Pid),
            other => Err(Error::Config(format!(
                "unknown controller '{other}' (expected stochastic, deterministic, continuous, or pid)"
            ))),
        }
    }
}

impl std::fmt::Display for ControllerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// One campaign row: an episode/controller pair with its metrics.
#[derive(Debug, Clone)]
pub struct CampaignRow {
    pub episode: usize,
    pub controller: ControllerKind,
    pub metrics: EpisodeMetrics,
    pub patient: PatientParams,
}

/// Run a paired test campaign: `n_patients` randomized patients and target
/// schedules, each simulated once per controller with bit-identical
/// measurement-noise streams so controller comparisons are paired.
pub fn run_test_campaign(
    weights: Option<&PolicyWeights>,
    pid_params: &PidParams,
    n_patients: usize,
    controllers: &[ControllerKind],
    seed: u64,
    cfg: &WorkbenchConfig,
) -> Result<Vec<CampaignRow>> {
    if n_patients == 0 {
        return Err(Error::Config("campaign needs at least one patient".into()));
    }
    if controllers.is_empty() {
        return Err(Error::Config("campaign needs at least one controller".into()));
    }
    let needs_weights = controllers.iter().any(|c| c.policy_mode().is_some());
    if needs_weights && weights.is_none() {
        return Err(Error::Config("policy controllers need a weight checkpoint".into()));
    }
    let generic_model =
        build_discrete_model(&cfg.patient.generic(), cfg.env.delta_t_s, cfg.env.link_beta)?;

    let mut rows = Vec::with_capacity(n_patients * controllers.len());
    for episode in 0..n_patients {
        let mut patient_rng = seeds::rng(seed, &[stream::PATIENT, episode as u64]);
        let patient = sample_patient(&mut patient_rng, &cfg.patient);
        let mut target_rng = seeds::rng(seed, &[stream::TARGETS, episode as u64]);
        let targets = generate_episode_targets(&mut target_rng, cfg);
        let patient_model =
            build_discrete_model(&patient, cfg.env.delta_t_s, cfg.env.link_beta)?;
        let env = EnvSetup {
            patient_model: &patient_model,
            generic_model: &generic_model,
            measurement: cfg.env.measurement(),
        };

        for &kind in controllers {
            // One noise stream per episode, shared by all controllers.
            let mut env_rng = seeds::rng(seed, &[stream::ENV_NOISE, episode as u64]);
            let log = match kind.policy_mode() {
                Some(mode) => {
                    let policy_rng =
                        seeds::rng(seed, &[stream::POLICY, episode as u64, kind.seed_tag()]);
                    let mut controller = PolicyController::new(
                        weights.expect("checked above"),
                        mode,
                        policy_rng,
                    );
                    run_closed_loop(&env, &patient, &targets, &mut controller, &mut env_rng)?
                }
                None => {
                    let mut controller = PidController::new(*pid_params);
                    run_closed_loop(&env, &patient, &targets, &mut controller, &mut env_rng)?
                }
            };
            rows.push(CampaignRow {
                episode,
                controller: kind,
                metrics: episode_metrics(&log)?,
                patient,
            });
        }
    }
    Ok(rows)
}

/// Median of one metric for one controller across a campaign.
pub fn campaign_median(
    rows: &[CampaignRow],
    kind: ControllerKind,
    metric: impl Fn(&EpisodeMetrics) -> f64,
) -> Option<f64> {
    let values: Vec<f64> =
        rows.iter().filter(|r| r.controller == kind).map(|r| metric(&r.metrics)).collect();
    if values.is_empty() {
        None
    } else {
        Some(median(&values))
    }
}

/// Two-sided paired t-test result.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComparisonResult {
    pub n: usize,
    pub mean_difference: f64,
    pub t_statistic: f64,
    pub p_value: f64,
}

/// Standard two-sided paired t-test on equal-length samples.
pub fn paired_t_test(metric_a: &[f64], metric_b: &[f64]) -> Result<ComparisonResult> {
    if metric_a.len() != metric_b.len() {
        return Err(Error::Config(format!(
            "paired samples differ in length: {} vs {}",
            metric_a.len(),
            metric_b.len()
        )));
    }
    let n = metric_a.len();
    if n < 2 {
        return Err(Error::Config("paired t-test needs n >= 2".into()));
    }
    let diffs: Vec<f64> = metric_a.iter().zip(metric_b.iter()).map(|(a, b)| a - b).collect();
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n as f64 - 1.0);
    if var == 0.0 {
        return Err(Error::Degenerate(
            "paired differences have zero variance; t statistic undefined".into(),
        ));
    }
    let t = mean / (var / n as f64).sqrt();
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .map_err(|e| Error::Numeric(format!("t distribution: {e}")))?;
    let p = 2.0 * (1.0 - dist.cdf(t.abs()));
    Ok(ComparisonResult { n, mean_difference: mean, t_statistic: t, p_value: p })
}

/// Rectangular grid over (error, predicted effect-site change) with slices in
/// the 30-s measured change, at one fixed target.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyMapSpec {
    pub o1_min: f64,
    pub o1_max: f64,
    pub o1_count: usize,
    pub o2_min: f64,
    pub o2_max: f64,
    pub o2_count: usize,
    pub o3_slices: Vec<f64>,
    pub o4: f64,
}

impl Default for PolicyMapSpec {
    fn default() -> Self {
        Self {
            o1_min: -0.5,
            o1_max: 0.5,
            o1_count: 201,
            o2_min: -0.3,
            o2_max: 0.3,
            o2_count: 201,
            o3_slices: vec![-0.1, 0.0, 0.1],
            o4: 0.5,
        }
    }
}

impl PolicyMapSpec {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.o1_min, self.o1_max, self.o2_min, self.o2_max, self.o4]
            .iter()
            .chain(self.o3_slices.iter())
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Config("policy map grid contains non-finite values".into()));
        }
        if self.o1_count == 0 || self.o2_count == 0 || self.o3_slices.is_empty() {
            return Err(Error::Config("policy map grid must be non-empty".into()));
        }
        Ok(())
    }

    pub fn rows(&self) -> usize {
        self.o1_count * self.o2_count * self.o3_slices.len()
    }
}

/// One policy-map sample: the infusion probability at a grid point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyMapRow {
    pub o1: f64,
    pub o2: f64,
    pub o3: f64,
    pub p_infuse: f64,
}

fn linspace(min: f64, max: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![min];
    }
    (0..count)
        .map(|i| min + (max - min) * i as f64 / (count - 1) as f64)
        .collect()
}

/// Evaluate the policy over the grid; rows ordered o3-slice outermost, then
/// o1, then o2.
pub fn policy_map(weights: &PolicyWeights, spec: &PolicyMapSpec) -> Result<Vec<PolicyMapRow>> {
    spec.validate()?;
    let o1s = linspace(spec.o1_min, spec.o1_max, spec.o1_count);
    let o2s = linspace(spec.o2_min, spec.o2_max, spec.o2_count);
    let mut rows = Vec::with_capacity(spec.rows());
    for &o3 in &spec.o3_slices {
        for &o1 in &o1s {
            for &o2 in &o2s {
                let probs = policy::forward(weights, [o1, o2, o3, spec.o4])?;
                rows.push(PolicyMapRow { o1, o2, o3, p_infuse: probs[1] });
            }
        }
    }
    Ok(rows)
}
