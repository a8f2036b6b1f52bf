use serde::Serialize;

use super::experiment::{EpochRecord, Phase};
use crate::error::{Error, Result};

/// Minimum number of epochs in the convergence window.
pub const MIN_CONVERGED_EPOCHS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub mae_runin: f64,
    pub mae_converged: f64,
    /// `(mae_runin - mae_converged) / mae_runin`.
    pub improvement: f64,
    pub reward_runin: f64,
    /// Relative reward drop of every training epoch whose mean reward is below
    /// the run-in mean, in epoch order.
    pub dips: Vec<f64>,
    pub median_dip: f64,
    pub max_dip: f64,
    /// Same measure over the run-in epochs themselves.
    pub worst_runin_dip: f64,
    pub worst_training_mae: f64,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Improvement after convergence and exploration dips relative to run-in.
///
/// The convergence window is the last `converged_epochs` records and must
/// lie entirely in the training phase.
pub fn summarize(records: &[EpochRecord], converged_epochs: usize) -> Result<Summary> {
    let runin: Vec<&EpochRecord> = records.iter().filter(|r| r.phase == Phase::Runin).collect();
    let training: Vec<&EpochRecord> =
        records.iter().filter(|r| r.phase == Phase::Training).collect();
    if runin.is_empty() {
        return Err(Error::Config("no run-in epochs to summarise".into()));
    }
    if converged_epochs < MIN_CONVERGED_EPOCHS || converged_epochs > training.len() {
        return Err(Error::Config(format!(
            "convergence window of {converged_epochs} epochs needs >= {MIN_CONVERGED_EPOCHS} and <= {} training epochs",
            training.len()
        )));
    }
    let mae_runin = mean(runin.iter().map(|r| r.mae));
    let reward_runin = mean(runin.iter().map(|r| r.mean_reward));
    let window = &training[training.len() - converged_epochs..];
    let mae_converged = mean(window.iter().map(|r| r.mae));
    let improvement = if mae_runin > 0.0 {
        (mae_runin - mae_converged) / mae_runin
    } else {
        0.0
    };
    let scale = reward_runin.abs();
    let dip = |r: f64| {
        if scale > 0.0 {
            (reward_runin - r) / scale
        } else {
            0.0
        }
    };
    let dips: Vec<f64> = training
        .iter()
        .filter(|r| r.mean_reward < reward_runin)
        .map(|r| dip(r.mean_reward))
        .collect();
    let worst_runin_dip = runin
        .iter()
        .map(|r| dip(r.mean_reward))
        .fold(0.0, f64::max);
    Ok(Summary {
        mae_runin,
        mae_converged,
        improvement,
        reward_runin,
        median_dip: median(&dips),
        max_dip: dips.iter().copied().fold(0.0, f64::max),
        dips,
        worst_runin_dip,
        worst_training_mae: training.iter().map(|r| r.mae).fold(0.0, f64::max),
    })
}
