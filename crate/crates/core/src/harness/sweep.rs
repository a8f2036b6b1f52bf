use std::path::Path;

use serde::Serialize;

use super::config::ExperimentConfig;
use super::experiment::run_experiment;
use super::io;
use super::summary::{summarize, Summary};
use crate::control::{PIGains, Reference};
use crate::error::Result;

/// One value along a sweep axis, expressed as config overrides.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub label: String,
    pub overrides: Vec<String>,
}

impl SweepPoint {
    pub fn new(label: impl Into<String>, overrides: &[&str]) -> Self {
        Self {
            label: label.into(),
            overrides: overrides.iter().map(|s| s.to_string()).collect(),
        }
    }
}

pub fn beta_axis(betas: &[f64]) -> Vec<SweepPoint> {
    betas
        .iter()
        .map(|b| SweepPoint {
            label: format!("beta{b}"),
            overrides: vec![format!("residual.beta={b:?}")],
        })
        .collect()
}

pub fn gains_axis(gains: &[PIGains]) -> Vec<SweepPoint> {
    gains
        .iter()
        .map(|g| SweepPoint {
            label: format!("kp{}-ki{}", g.kp, g.ki),
            overrides: vec![
                "base.tune=false".into(),
                format!("base.kp={:?}", g.kp),
                format!("base.ki={:?}", g.ki),
            ],
        })
        .collect()
}

pub fn reference_axis(refs: &[Reference]) -> Vec<SweepPoint> {
    refs.iter()
        .map(|r| {
            let overrides = match *r {
                Reference::Constant { rpm } => vec![
                    "reference.kind=\"constant\"".into(),
                    format!("reference.rpm={rpm:?}"),
                ],
                Reference::SineOfAngle { amplitude, offset } => vec![
                    "reference.kind=\"sine_of_angle\"".into(),
                    format!("reference.amplitude={amplitude:?}"),
                    format!("reference.offset={offset:?}"),
                ],
            };
            SweepPoint {
                label: r.label(),
                overrides,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub label: String,
    pub seed: u64,
    pub summary: Option<Summary>,
    /// Failure message when the run or its summary failed.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepAggregate {
    pub label: String,
    pub runs: usize,
    pub failures: usize,
    pub mean_improvement: f64,
    pub min_improvement: f64,
    pub max_improvement: f64,
    pub mean_median_dip: f64,
    pub mean_mae_runin: f64,
    pub mean_mae_converged: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    pub aggregates: Vec<SweepAggregate>,
}

/// Runs every (point, seed) pair. A failing run is recorded and the sweep
/// continues. When `out` is given each run writes its directory below it.
pub fn sweep(
    template: &ExperimentConfig,
    points: &[SweepPoint],
    seeds: &[u64],
    out: Option<&Path>,
) -> Result<SweepTable> {
    let mut rows = Vec::with_capacity(points.len() * seeds.len());
    for p in points {
        let cfg = template.with_overrides(&p.overrides)?;
        for &seed in seeds {
            let res = run_experiment(&cfg, seed).and_then(|run| {
                if let Some(root) = out {
                    io::write_run(&io::run_dir(root, &p.label, seed), &cfg, &run)?;
                }
                summarize(&run.records, cfg.convergence_epochs())
            });
            rows.push(match res {
                Ok(s) => SweepRow {
                    label: p.label.clone(),
                    seed,
                    summary: Some(s),
                    error: None,
                },
                Err(e) => SweepRow {
                    label: p.label.clone(),
                    seed,
                    summary: None,
                    error: Some(e.to_string()),
                },
            });
        }
    }
    let aggregates = points.iter().map(|p| aggregate(&p.label, &rows)).collect();
    Ok(SweepTable { rows, aggregates })
}

pub fn aggregate(label: &str, rows: &[SweepRow]) -> SweepAggregate {
    let mine: Vec<&SweepRow> = rows.iter().filter(|r| r.label == label).collect();
    let ok: Vec<&Summary> = mine.iter().filter_map(|r| r.summary.as_ref()).collect();
    let n = ok.len().max(1) as f64;
    let imp: Vec<f64> = ok.iter().map(|s| s.improvement).collect();
    SweepAggregate {
        label: label.to_string(),
        runs: mine.len(),
        failures: mine.len() - ok.len(),
        mean_improvement: imp.iter().sum::<f64>() / n,
        min_improvement: imp.iter().copied().fold(f64::INFINITY, f64::min),
        max_improvement: imp.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        mean_median_dip: ok.iter().map(|s| s.median_dip).sum::<f64>() / n,
        mean_mae_runin: ok.iter().map(|s| s.mae_runin).sum::<f64>() / n,
        mean_mae_converged: ok.iter().map(|s| s.mae_converged).sum::<f64>() / n,
    }
}

/// Writes the per-run rows and the per-point aggregates as two CSV files.
pub fn write_sweep(dir: &Path, table: &SweepTable) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join("sweep_rows.csv"))?;
    w.write_record([
        "label",
        "seed",
        "mae_runin",
        "mae_converged",
        "improvement",
        "median_dip",
        "worst_runin_dip",
        "error",
    ])?;
    for r in &table.rows {
        let (a, b, c, d, e) = match &r.summary {
            Some(s) => (
                s.mae_runin.to_string(),
                s.mae_converged.to_string(),
                s.improvement.to_string(),
                s.median_dip.to_string(),
                s.worst_runin_dip.to_string(),
            ),
            None => Default::default(),
        };
        w.write_record([
            r.label.clone(),
            r.seed.to_string(),
            a,
            b,
            c,
            d,
            e,
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(dir.join("sweep_aggregates.csv"))?;
    w.write_record([
        "label",
        "runs",
        "failures",
        "mean_improvement",
        "min_improvement",
        "max_improvement",
        "mean_median_dip",
        "mean_mae_runin",
        "mean_mae_converged",
    ])?;
    for a in &table.aggregates {
        w.write_record([
            a.label.clone(),
            a.runs.to_string(),
            a.failures.to_string(),
            a.mean_improvement.to_string(),
            a.min_improvement.to_string(),
            a.max_improvement.to_string(),
            a.mean_median_dip.to_string(),
            a.mean_mae_runin.to_string(),
            a.mean_mae_converged.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.epochs_total = 14;
        cfg.runin_epochs = 2;
        cfg.samples_per_epoch = 120;
        cfg.settle_time = 2.0;
        cfg.convergence_fraction = 10.0 / 14.0;
        cfg.sac.batch_size = 16;
        cfg.sac.buffer_capacity = 5000;
        cfg.sac.actor_hidden = vec![4];
        cfg.sac.critic_hidden = vec![4];
        cfg
    }

    #[test]
    fn row_count_is_axis_times_seeds() {
        let t = sweep(&tiny(), &beta_axis(&[0.05, 0.1]), &[0, 1], None).unwrap();
        assert_eq!(t.rows.len(), 4);
        assert_eq!(t.aggregates.len(), 2);
        assert!(t.rows.iter().all(|r| r.summary.is_some()));
    }

    #[test]
    fn failures_are_recorded() {
        let mut cfg = tiny();
        cfg.convergence_fraction = 0.1;
        let t = sweep(&cfg, &beta_axis(&[0.1]), &[0], None).unwrap();
        assert_eq!(t.aggregates[0].failures, 1);
        assert!(t.rows[0].error.is_some());
    }

    #[test]
    fn reference_axis_overrides_parse() {
        let pts = reference_axis(&[Reference::rpm90(), Reference::sine()]);
        let cfg = ExperimentConfig::default();
        assert_eq!(cfg.with_overrides(&pts[0].overrides).unwrap().reference, Reference::rpm90());
        assert_eq!(cfg.with_overrides(&pts[1].overrides).unwrap().reference, Reference::sine());
    }
}
