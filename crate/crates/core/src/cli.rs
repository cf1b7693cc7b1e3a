//! Command-line entry points: train, evaluate, simulate, policy-map.
//!
//! Every command resolves its configuration, writes a `manifest.json` into
//! the output directory before doing real work, and then emits its artifacts
//! as flat files.

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;

use crate::checkpoint::{load_weights, Checkpoint, CheckpointMeta};
use crate::config::WorkbenchConfig;
use crate::error::{Error, Result};
use crate::eval::{
    campaign_median, paired_t_test, policy_map, run_test_campaign, ControllerKind, PolicyMapSpec,
};
use crate::export;
use crate::manifest::RunManifest;
use crate::pkpd::{PatientParams, PatientRanges, Sex};
use crate::trainer;

#[derive(Debug, Parser)]
#[command(
    name = "doseloop",
    version,
    about = "Closed-loop propofol dosing workbench: train, evaluate, simulate, export"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the policy network with the cross-entropy method.
    Train(TrainArgs),
    /// Run a paired evaluation campaign over randomized test patients.
    Evaluate(EvaluateArgs),
    /// Simulate one episode and export its trajectory.
    Simulate(SimulateArgs),
    /// Export the policy map over an observation grid.
    PolicyMap(PolicyMapArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Configuration file (TOML). Built-in defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Master seed override.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Batch-count override.
    #[arg(long)]
    pub batches: Option<usize>,
    /// Output directory.
    #[arg(long, default_value = "runs/train")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Weight checkpoint (required for the policy controllers).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Test patients per controller.
    #[arg(long = "n-episodes", default_value_t = 100)]
    pub n_episodes: usize,
    /// Comma-separated controllers: stochastic, deterministic, continuous, pid.
    #[arg(long, default_value = "stochastic,deterministic,continuous,pid")]
    pub modes: String,
    /// Campaign seed.
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value = "runs/evaluate")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Controller: pid, stochastic, deterministic, or continuous.
    #[arg(long, default_value = "pid")]
    pub controller: String,
    /// Weight checkpoint (policy controllers only).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Patient overrides on the generic patient, e.g.
    /// "age=45,weight=82,sex=female,ke0=0.2".
    #[arg(long)]
    pub patient: Option<String>,
    /// Accept patient values outside the configured sampling ranges.
    #[arg(long, default_value_t = false)]
    pub allow_out_of_range: bool,
    /// Comma-separated target segments, spread evenly over the episode.
    #[arg(long, default_value = "0.5")]
    pub targets: String,
    /// Episode length override [steps].
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "runs/simulate")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PolicyMapArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Grid spec, semicolon-separated:
    /// "o1=-0.5:0.5:201;o2=-0.3:0.3:201;o3=-0.1,0,0.1;o4=0.5".
    #[arg(long)]
    pub grid: Option<String>,
    #[arg(long, default_value = "runs/policy_map")]
    pub out: PathBuf,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(args) => cmd_train(&args),
        Command::Evaluate(args) => cmd_evaluate(&args),
        Command::Simulate(args) => cmd_simulate(&args),
        Command::PolicyMap(args) => cmd_policy_map(&args),
    }
}

fn load_config(path: &Option<PathBuf>) -> Result<WorkbenchConfig> {
    match path {
        Some(p) => WorkbenchConfig::load(p),
        None => Ok(WorkbenchConfig::default()),
    }
}

pub fn cmd_train(args: &TrainArgs) -> Result<()> {
    let mut cfg = load_config(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.train.master_seed = seed;
    }
    if let Some(batches) = args.batches {
        cfg.train.max_batches = batches;
    }
    cfg.validate()?;
    std::fs::create_dir_all(&args.out)?;
    let final_ckpt = args.out.join("checkpoint.json");
    RunManifest::new(
        "train",
        cfg.train.master_seed,
        &args.out,
        Some(&final_ckpt),
        serde_json::json!({
            "max_batches": cfg.train.max_batches,
            "batch_size": cfg.train.batch_size,
        }),
        &cfg,
    )
    .write(&args.out)?;

    let out_dir = args.out.clone();
    let master_seed = cfg.train.master_seed;
    let checkpoint_every = cfg.train.checkpoint_every;
    let result = trainer::train(&cfg, |row, weights| {
        let done = row.batch + 1;
        if done % checkpoint_every == 0 {
            let meta = CheckpointMeta {
                batches: done,
                final_mean_reward: Some(row.mean_reward),
                master_seed,
            };
            Checkpoint::from_weights(weights, meta)
                .save(&out_dir.join(format!("checkpoint_{done:05}.json")))?;
        }
        if done % 100 == 0 {
            eprintln!(
                "batch {done}: mean reward {:.2}, loss {:.1}",
                row.mean_reward, row.loss
            );
        }
        Ok(())
    })?;

    let final_reward = result.trace.last().map(|r| r.mean_reward);
    let meta = CheckpointMeta {
        batches: result.trace.len(),
        final_mean_reward: final_reward,
        master_seed,
    };
    Checkpoint::from_weights(&result.weights, meta).save(&final_ckpt)?;
    export::write_convergence_csv(&args.out.join("convergence.csv"), &result.trace)?;
    println!(
        "trained {} batches; final mean reward {}; checkpoint at {}",
        result.trace.len(),
        final_reward.map(|r| format!("{r:.2}")).unwrap_or_else(|| "n/a".into()),
        final_ckpt.display()
    );
    Ok(())
}

fn parse_modes(spec: &str) -> Result<Vec<ControllerKind>> {
    let mut kinds = Vec::new();
    for part in spec.split(',').filter(|s| !s.trim().is_empty()) {
        let kind: ControllerKind = part.parse()?;
        if !kinds.contains(&kind) {
            kinds.push(kind);
        }
    }
    if kinds.is_empty() {
        return Err(Error::Config("no controllers selected".into()));
    }
    Ok(kinds)
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<()> {
    let cfg = load_config(&args.config)?;
    let kinds = parse_modes(&args.modes)?;
    let needs_weights = kinds.iter().any(|k| *k != ControllerKind::Pid);
    let weights = match (&args.checkpoint, needs_weights) {
        (Some(path), _) => Some(load_weights(path)?),
        (None, true) => {
            return Err(Error::Config(
                "policy controllers need --checkpoint (use --modes pid to skip them)".into(),
            ))
        }
        (None, false) => None,
    };
    std::fs::create_dir_all(&args.out)?;
    RunManifest::new(
        "evaluate",
        args.seed,
        &args.out,
        args.checkpoint.as_deref(),
        serde_json::json!({
            "n_episodes": args.n_episodes,
            "modes": kinds.iter().map(|k| k.name()).collect::<Vec<_>>(),
        }),
        &cfg,
    )
    .write(&args.out)?;

    let rows = run_test_campaign(
        weights.as_ref(),
        &cfg.pid.params(),
        args.n_episodes,
        &kinds,
        args.seed,
        &cfg,
    )?;
    export::write_metrics_csv(&args.out.join("metrics.csv"), &rows)?;

    println!("controller,median_mape,median_mpe,median_oob");
    for kind in &kinds {
        let mape = campaign_median(&rows, *kind, |m| m.mape).unwrap();
        let mpe = campaign_median(&rows, *kind, |m| m.mpe).unwrap();
        let oob = campaign_median(&rows, *kind, |m| m.oob_percent).unwrap();
        println!("{kind},{mape:.3},{mpe:.3},{oob:.3}");
    }
    if kinds.contains(&ControllerKind::Continuous) && kinds.contains(&ControllerKind::Pid) {
        let pick = |kind: ControllerKind| -> Vec<f64> {
            rows.iter().filter(|r| r.controller == kind).map(|r| r.metrics.mape).collect()
        };
        match paired_t_test(&pick(ControllerKind::Continuous), &pick(ControllerKind::Pid)) {
            Ok(t) => println!(
                "paired t-test (continuous vs pid MAPE): t = {:.3}, p = {:.3e}, n = {}",
                t.t_statistic, t.p_value, t.n
            ),
            Err(e) => eprintln!("paired t-test skipped: {e}"),
        }
    }
    Ok(())
}

fn parse_patient_overrides(generic: PatientParams, spec: &str) -> Result<PatientParams> {
    let mut p = generic;
    for part in spec.split(',').filter(|s| !s.trim().is_empty()) {
        let (key, value) = part
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("patient override '{part}' is not key=value")))?;
        let key = key.trim().to_ascii_lowercase();
        let value = value.trim();
        if key == "sex" {
            p.demographics.sex = match value.to_ascii_lowercase().as_str() {
                "male" | "m" => Sex::Male,
                "female" | "f" => Sex::Female,
                other => return Err(Error::Config(format!("unknown sex '{other}'"))),
            };
            continue;
        }
        let num: f64 = value
            .parse()
            .map_err(|_| Error::Config(format!("patient override {key}={value} is not a number")))?;
        match key.as_str() {
            "age" => p.demographics.age_years = num,
            "height" => p.demographics.height_cm = num,
            "weight" => p.demographics.weight_kg = num,
            "ke0" => p.ke0_per_min = num,
            "gamma" => p.gamma = num,
            "c50" => p.c50 = num,
            other => {
                return Err(Error::Config(format!(
                    "unknown patient field '{other}' (age, height, weight, sex, ke0, gamma, c50)"
                )))
            }
        }
    }
    p.validate()?;
    Ok(p)
}

fn check_patient_in_ranges(p: &PatientParams, ranges: &PatientRanges) -> Result<()> {
    let checks = [
        ("age", p.demographics.age_years, ranges.age),
        ("height", p.demographics.height_cm, ranges.height),
        ("weight", p.demographics.weight_kg, ranges.weight),
        ("ke0", p.ke0_per_min, ranges.ke0),
        ("gamma", p.gamma, ranges.gamma),
        ("c50", p.c50, ranges.c50),
    ];
    for (name, value, range) in checks {
        if value < range.min || value > range.max {
            return Err(Error::Config(format!(
                "patient {name} = {value} outside [{}, {}]; pass --allow-out-of-range to override",
                range.min, range.max
            )));
        }
    }
    Ok(())
}

fn schedule_from_segments(segments: &[f64], steps: usize) -> Result<Vec<f64>> {
    if segments.is_empty() || steps < segments.len() {
        return Err(Error::Config(format!(
            "cannot spread {} target segments over {steps} steps",
            segments.len()
        )));
    }
    let hold = steps / segments.len();
    let mut schedule = Vec::with_capacity(steps);
    for &t in segments {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::Config(format!("target {t} outside [0, 1]")));
        }
        schedule.extend(std::iter::repeat_n(t, hold));
    }
    // Last segment absorbs the remainder.
    schedule.resize(steps, *segments.last().unwrap());
    Ok(schedule)
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let cfg = load_config(&args.config)?;
    let kind: ControllerKind = args.controller.parse()?;
    let mut patient = cfg.patient.generic();
    if let Some(spec) = &args.patient {
        patient = parse_patient_overrides(patient, spec)?;
        if !args.allow_out_of_range {
            check_patient_in_ranges(&patient, &cfg.patient)?;
        }
    }
    let steps = args.steps.unwrap_or(cfg.train.episode_steps);
    let segments: Vec<f64> = args
        .targets
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("target '{s}' is not a number")))
        })
        .collect::<Result<_>>()?;
    let targets = schedule_from_segments(&segments, steps)?;

    std::fs::create_dir_all(&args.out)?;
    RunManifest::new(
        "simulate",
        args.seed,
        &args.out,
        args.checkpoint.as_deref(),
        serde_json::json!({
            "controller": kind.name(),
            "steps": steps,
            "targets": segments,
            "patient": patient,
        }),
        &cfg,
    )
    .write(&args.out)?;

    let log = match kind {
        ControllerKind::Pid => trainer::run_pid_episode(&cfg, &patient, &targets, args.seed)?,
        _ => {
            let path = args.checkpoint.as_ref().ok_or_else(|| {
                Error::Config("policy controllers need --checkpoint".into())
            })?;
            let weights = load_weights(path)?;
            let mode = match kind {
                ControllerKind::Stochastic => crate::agent::ActionMode::Stochastic,
                ControllerKind::Deterministic => crate::agent::ActionMode::Deterministic,
                ControllerKind::Continuous => crate::agent::ActionMode::Continuous,
                ControllerKind::Pid => unreachable!(),
            };
            trainer::run_episode(&cfg, &patient, &targets, &weights, mode, args.seed)?
        }
    };
    let traj_path = args.out.join("trajectory.csv");
    export::write_trajectory_csv(&traj_path, &log)?;

    println!(
        "simulated {} steps ({} s) with {kind}: reward {:.2}, total infused {:.1} mg",
        log.steps(),
        log.steps() as f64 * log.delta_t_s,
        log.reward,
        log.total_infused_mg()
    );
    if targets.iter().all(|&t| t > 0.0) {
        let m = crate::eval::episode_metrics(&log)?;
        println!(
            "mape {:.3}%, mpe {:.3}%, oob {:.2}%, induction {:.1} mg, maintenance {:.2} mg/min",
            m.mape, m.mpe, m.oob_percent, m.induction_mg, m.maintenance_mg_per_min
        );
    }
    println!("trajectory written to {}", traj_path.display());
    Ok(())
}

fn parse_axis(value: &str) -> Result<(f64, f64, usize)> {
    let parts: Vec<&str> = value.split(':').collect();
    if parts.len() != 3 {
        return Err(Error::Config(format!("axis '{value}' is not min:max:count")));
    }
    let min: f64 = parts[0]
        .parse()
        .map_err(|_| Error::Config(format!("axis min '{}' is not a number", parts[0])))?;
    let max: f64 = parts[1]
        .parse()
        .map_err(|_| Error::Config(format!("axis max '{}' is not a number", parts[1])))?;
    let count: usize = parts[2]
        .parse()
        .map_err(|_| Error::Config(format!("axis count '{}' is not an integer", parts[2])))?;
    Ok((min, max, count))
}

fn parse_grid(spec: &str) -> Result<PolicyMapSpec> {
    let mut grid = PolicyMapSpec::default();
    for field in spec.split(';').filter(|s| !s.trim().is_empty()) {
        let (key, value) = field
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("grid field '{field}' is not key=value")))?;
        match key.trim() {
            "o1" => (grid.o1_min, grid.o1_max, grid.o1_count) = parse_axis(value.trim())?,
            "o2" => (grid.o2_min, grid.o2_max, grid.o2_count) = parse_axis(value.trim())?,
            "o3" => {
                grid.o3_slices = value
                    .split(',')
                    .map(|s| {
                        s.trim().parse::<f64>().map_err(|_| {
                            Error::Config(format!("o3 slice '{s}' is not a number"))
                        })
                    })
                    .collect::<Result<_>>()?;
            }
            "o4" => {
                grid.o4 = value
                    .trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("o4 '{value}' is not a number")))?;
            }
            other => return Err(Error::Config(format!("unknown grid field '{other}'"))),
        }
    }
    grid.validate()?;
    Ok(grid)
}

pub fn cmd_policy_map(args: &PolicyMapArgs) -> Result<()> {
    let cfg = load_config(&args.config)?;
    let weights = load_weights(&args.checkpoint)?;
    let grid = match &args.grid {
        Some(spec) => parse_grid(spec)?,
        None => PolicyMapSpec::default(),
    };
    std::fs::create_dir_all(&args.out)?;
    RunManifest::new(
        "policy-map",
        0,
        &args.out,
        Some(&args.checkpoint),
        serde_json::json!({
            "o1": [grid.o1_min, grid.o1_max, grid.o1_count],
            "o2": [grid.o2_min, grid.o2_max, grid.o2_count],
            "o3": grid.o3_slices,
            "o4": grid.o4,
        }),
        &cfg,
    )
    .write(&args.out)?;
    let rows = policy_map(&weights, &grid)?;
    let path = args.out.join("policy_map.csv");
    export::write_policy_map_csv(&path, &rows)?;
    println!("wrote {} policy-map rows to {}", rows.len(), path.display());
    Ok(())
}
