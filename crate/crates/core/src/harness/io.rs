//! Run directories and CSV schemas.
//!
//! Layout of one run directory:
//!
//! - `config.toml`: the resolved config snapshot
//! - `epochs.csv`: `epoch,phase,mae,mse,mean_reward,revolutions,tube_violations,saturations,updates,critic1,critic2,actor,alpha,mean_entropy`
//! - `losses.csv`: `epoch,critic1,critic2,actor,alpha,mean_entropy` (epochs with updates only)
//! - `samples.csv`: `t,psi,omega,omega_d,u_base,pi_out,u_total,u_applied,reward` (optional)
//! - `checkpoint.txt`: final agent networks
//!
//! Floats are written in shortest round-trip form, so reading a CSV back
//! yields bit-identical values.

use std::fs;
use std::path::{Path, PathBuf};

use super::config::ExperimentConfig;
use super::experiment::{EpochLosses, EpochRecord, Phase, RunOutput};
use super::metrics::Sample;
use super::summary::Summary;
use crate::control::GridPoint;
use crate::error::{Error, Result};

pub const EPOCH_COLUMNS: [&str; 14] = [
    "epoch",
    "phase",
    "mae",
    "mse",
    "mean_reward",
    "revolutions",
    "tube_violations",
    "saturations",
    "updates",
    "critic1",
    "critic2",
    "actor",
    "alpha",
    "mean_entropy",
];

pub fn run_dir(root: &Path, label: &str, seed: u64) -> PathBuf {
    root.join(label).join(format!("seed-{seed}"))
}

fn f(x: f64) -> String {
    format!("{x}")
}

pub fn write_epochs(path: &Path, records: &[EpochRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(EPOCH_COLUMNS)?;
    for r in records {
        let l = &r.losses;
        w.write_record([
            r.epoch.to_string(),
            r.phase.as_str().to_string(),
            f(r.mae),
            f(r.mse),
            f(r.mean_reward),
            r.revolutions.to_string(),
            r.tube_violations.to_string(),
            r.saturations.to_string(),
            l.updates.to_string(),
            f(l.critic1),
            f(l.critic2),
            f(l.actor),
            f(l.alpha),
            f(l.entropy),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_epochs(path: &Path) -> Result<Vec<EpochRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != EPOCH_COLUMNS {
        return Err(Error::Config(format!("unexpected epoch CSV header {header:?}")));
    }
    let num = |s: &str| -> Result<f64> {
        s.parse::<f64>()
            .map_err(|e| Error::Config(format!("bad number `{s}`: {e}")))
    };
    let int = |s: &str| -> Result<u64> {
        s.parse::<u64>()
            .map_err(|e| Error::Config(format!("bad integer `{s}`: {e}")))
    };
    let mut out = Vec::new();
    for row in r.records() {
        let row = row?;
        let phase = match &row[1] {
            "runin" => Phase::Runin,
            "training" => Phase::Training,
            other => return Err(Error::Config(format!("unknown phase `{other}`"))),
        };
        out.push(EpochRecord {
            epoch: int(&row[0])? as usize,
            phase,
            mae: num(&row[2])?,
            mse: num(&row[3])?,
            mean_reward: num(&row[4])?,
            revolutions: int(&row[5])? as usize,
            tube_violations: int(&row[6])?,
            saturations: int(&row[7])?,
            losses: EpochLosses {
                updates: int(&row[8])?,
                critic1: num(&row[9])?,
                critic2: num(&row[10])?,
                actor: num(&row[11])?,
                alpha_loss: 0.0,
                alpha: num(&row[12])?,
                entropy: num(&row[13])?,
            },
        });
    }
    Ok(out)
}

pub fn write_losses(path: &Path, records: &[EpochRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "critic1", "critic2", "actor", "alpha", "mean_entropy"])?;
    for r in records.iter().filter(|r| r.losses.updates > 0) {
        let l = &r.losses;
        w.write_record([
            r.epoch.to_string(),
            f(l.critic1),
            f(l.critic2),
            f(l.actor),
            f(l.alpha),
            f(l.entropy),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_samples(path: &Path, samples: &[Sample]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "t", "psi", "omega", "omega_d", "u_base", "pi_out", "u_total", "u_applied", "reward",
    ])?;
    for s in samples {
        w.write_record([
            f(s.t),
            f(s.psi),
            f(s.omega),
            f(s.omega_d),
            f(s.u_base),
            f(s.pi_out),
            f(s.u_total),
            f(s.u_applied),
            f(s.reward),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_tune_table(path: &Path, table: &[GridPoint]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["kp", "ki", "mae", "stable"])?;
    for p in table {
        w.write_record([f(p.kp), f(p.ki), f(p.mae), p.stable.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_summary(path: &Path, s: &Summary) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "mae_runin",
        "mae_converged",
        "improvement",
        "reward_runin",
        "dip_count",
        "median_dip",
        "max_dip",
        "worst_runin_dip",
        "worst_training_mae",
    ])?;
    w.write_record([
        f(s.mae_runin),
        f(s.mae_converged),
        f(s.improvement),
        f(s.reward_runin),
        s.dips.len().to_string(),
        f(s.median_dip),
        f(s.max_dip),
        f(s.worst_runin_dip),
        f(s.worst_training_mae),
    ])?;
    w.flush()?;
    Ok(())
}

/// Writes every artifact of one run into `dir` (created if needed).
pub fn write_run(dir: &Path, cfg: &ExperimentConfig, run: &RunOutput) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut snapshot = cfg.clone();
    snapshot.seeds = vec![run.seed];
    snapshot.base.tune = false;
    snapshot.base.kp = run.gains.kp;
    snapshot.base.ki = run.gains.ki;
    fs::write(dir.join("config.toml"), snapshot.to_toml_string()?)?;
    write_epochs(&dir.join("epochs.csv"), &run.records)?;
    write_losses(&dir.join("losses.csv"), &run.records)?;
    if let Some(samples) = &run.samples {
        write_samples(&dir.join("samples.csv"), samples)?;
    }
    fs::write(dir.join("checkpoint.txt"), &run.checkpoint)?;
    Ok(())
}
