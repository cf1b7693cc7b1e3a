//! Plot-ready CSV exports: convergence trace, campaign metrics table,
//! episode trajectory, and policy map.
//!
//! Floats are written with Rust's shortest round-trip formatting, so files
//! regenerate byte-identically under a fixed seed.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::Result;
use crate::eval::{CampaignRow, PolicyMapRow};
use crate::pkpd::Sex;
use crate::rollout::EpisodeLog;
use crate::trainer::BatchTrace;

/// `batch_index,mean_reward,loss` — one row per training batch.
pub fn write_convergence_csv(path: &Path, trace: &[BatchTrace]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "batch_index,mean_reward,loss")?;
    for row in trace {
        writeln!(w, "{},{},{}", row.batch, row.mean_reward, row.loss)?;
    }
    w.flush()?;
    Ok(())
}

/// Per-episode campaign metrics with the patient parameters used.
pub fn write_metrics_csv(path: &Path, rows: &[CampaignRow]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(
        w,
        "episode_id,controller,mape,mpe,oob,induction_mg,maintenance_mg_min,total_mg,\
         age,height,weight,sex,ke0,gamma,c50"
    )?;
    for row in rows {
        let p = &row.patient;
        let sex = match p.demographics.sex {
            Sex::Male => "male",
            Sex::Female => "female",
        };
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            row.episode,
            row.controller,
            row.metrics.mape,
            row.metrics.mpe,
            row.metrics.oob_percent,
            row.metrics.induction_mg,
            row.metrics.maintenance_mg_per_min,
            row.metrics.total_mg,
            p.demographics.age_years,
            p.demographics.height_cm,
            p.demographics.weight_kg,
            sex,
            p.ke0_per_min,
            p.gamma,
            p.c50
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Full per-step trajectory of one episode.
pub fn write_trajectory_csv(path: &Path, log: &EpisodeLog) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "step,t_seconds,y_star,y,y_tilde,action,x1,x2,x3,xe")?;
    for k in 0..log.steps() {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{}",
            k,
            k as f64 * log.delta_t_s,
            log.targets[k],
            log.y_true[k],
            log.y_measured[k],
            log.actions[k],
            log.states[k][0],
            log.states[k][1],
            log.states[k][2],
            log.effect_site[k]
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Policy-map grid rows.
pub fn write_policy_map_csv(path: &Path, rows: &[PolicyMapRow]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "o1,o2,o3,p_infuse")?;
    for r in rows {
        writeln!(w, "{},{},{},{}", r.o1, r.o2, r.o3, r.p_infuse)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::BatchTrace;

    #[test]
    fn convergence_csv_round_trips_through_parse() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.csv");
        let trace = vec![
            BatchTrace { batch: 0, mean_reward: -512.345678901234, loss: 11090.1 },
            BatchTrace { batch: 1, mean_reward: -400.0, loss: 0.125 },
        ];
        write_convergence_csv(&path, &trace).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "batch_index,mean_reward,loss");
        for (line, row) in lines.zip(trace.iter()) {
            let mut cols = line.split(',');
            assert_eq!(cols.next().unwrap().parse::<usize>().unwrap(), row.batch);
            assert_eq!(cols.next().unwrap().parse::<f64>().unwrap(), row.mean_reward);
            assert_eq!(cols.next().unwrap().parse::<f64>().unwrap(), row.loss);
        }
    }
}
