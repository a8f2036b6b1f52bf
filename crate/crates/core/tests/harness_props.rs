mod common;

use std::f64::consts::TAU;

use crrl::control::{PIGains, Reference};
use crrl::harness::baseline::{evaluate_mean_policy, pretrained_agent};
use crrl::harness::experiment::{tune_gains, ClosedLoop};
use crrl::harness::io;
use crrl::harness::metrics::split_revolutions;
use crrl::harness::sweep::{beta_axis, sweep};
use crrl::harness::{run_experiment, summarize, ExperimentConfig, Phase, Sample};
use crrl::residual::ResidualConfig;
use proptest::prelude::*;

fn small() -> ExperimentConfig {
    ExperimentConfig::default()
        .with_overrides(&[
            "epochs_total=50".into(),
            "runin_epochs=10".into(),
            "sac.critic_hidden=[32, 32]".into(),
            "sac.actor_hidden=[16, 16]".into(),
            "sac.batch_size=32".into(),
            "sample_log=true".into(),
        ])
        .unwrap()
}

/// Per-revolution MAE averaged over complete revolutions, by scanning for
/// sector changes and averaging the samples that follow each boundary.
fn brute_force_mae(samples: &[Sample]) -> Option<f64> {
    let sector = |s: &Sample| (s.psi / TAU).floor();
    let bounds: Vec<usize> = (1..samples.len()).filter(|&i| sector(&samples[i]) != sector(&samples[i - 1])).collect();
    if bounds.len() < 2 {
        return None;
    }
    let maes: Vec<f64> = bounds
        .windows(2)
        .map(|w| {
            let rev = &samples[w[0]..w[1]];
            rev.iter().map(|s| (s.omega_d - s.omega).abs()).sum::<f64>() / rev.len() as f64
        })
        .collect();
    Some(maes.iter().sum::<f64>() / maes.len() as f64)
}

#[test]
fn epoch_metrics_match_brute_force_recomputation() {
    let cfg = small();
    let run = run_experiment(&cfg, 3).unwrap();
    let samples = run.samples.as_ref().unwrap();
    assert_eq!(samples.len(), cfg.epochs_total * cfg.samples_per_epoch);
    for (rec, chunk) in run.records.iter().zip(samples.chunks(cfg.samples_per_epoch)) {
        let want = brute_force_mae(chunk).expect("epoch spans a revolution");
        assert!((rec.mae - want).abs() <= 1e-12 * want.max(1e-12), "epoch {}: {} vs {want}", rec.epoch, rec.mae);
        assert_eq!(rec.tube_violations, 0);
    }
    assert!(run.records[..cfg.runin_epochs].iter().all(|r| r.phase == Phase::Runin));
    assert_eq!(run.runin_agent_calls, 0);
}

#[test]
fn summary_is_reproducible_from_csv() {
    let cfg = small();
    let run = run_experiment(&cfg, 4).unwrap();
    let dir = tempfile::tempdir().unwrap();
    io::write_run(dir.path(), &cfg, &run).unwrap();
    let back = io::read_epochs(&dir.path().join("epochs.csv")).unwrap();
    let snap = ExperimentConfig::load(&dir.path().join("config.toml")).unwrap();
    let a = summarize(&run.records, cfg.convergence_epochs()).unwrap();
    let b = summarize(&back, snap.convergence_epochs()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn single_point_sweep_equals_direct_run() {
    let cfg = small();
    let table = sweep(&cfg, &beta_axis(&[0.2]), &[5], None).unwrap();
    let direct = summarize(&run_experiment(&cfg, 5).unwrap().records, cfg.convergence_epochs()).unwrap();
    assert_eq!(table.rows.len(), 1);
    assert_eq!(table.rows[0].summary.as_ref().unwrap(), &direct);
}

#[test]
fn tuned_gains_beat_the_poor_point() {
    let cfg = ExperimentConfig::default();
    let res = tune_gains(&cfg, 0).unwrap();
    let poor = res
        .table
        .iter()
        .find(|p| (p.kp - PIGains::poor().kp).abs() < 1e-9 && (p.ki - PIGains::poor().ki).abs() < 1e-9)
        .expect("poor point lies on the grid");
    assert!(res.best_mae <= poor.mae, "{} > {}", res.best_mae, poor.mae);
    assert!(res.table.iter().filter(|p| p.stable).all(|p| p.mae >= res.best_mae));
}

#[test]
fn tuned_loop_tracks_steadily() {
    let cfg = ExperimentConfig::default();
    let gains = tune_gains(&cfg, 0).unwrap().best;
    let mut cl = ClosedLoop::new(&cfg, gains, 0);
    cl.settle(cfg.settle_time).unwrap();
    let samples: Vec<Sample> = (0..3000).map(|_| cl.base_step(0.0).unwrap().0).collect();
    let revs = split_revolutions(&samples);
    let last: Vec<f64> = revs[revs.len() - 10..].iter().map(|r| r.mae).collect();
    let mean = last.iter().sum::<f64>() / 10.0;
    let std = (last.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / 10.0).sqrt();
    assert!(std < 0.1 * mean, "std {std} mean {mean}");
}

#[test]
fn imitation_tracks_within_twice_the_expert() {
    let cfg = ExperimentConfig::default();
    let expert = tune_gains(&cfg, 0).unwrap().best;
    let (mut agent, _) = pretrained_agent(&cfg, expert, 0).unwrap();
    let agent_mae = evaluate_mean_policy(&cfg, &mut agent, expert, 1, 4).unwrap();
    let mut cl = ClosedLoop::new(&cfg, expert, 1);
    cl.settle(cfg.settle_time).unwrap();
    let samples: Vec<Sample> = (0..4 * cfg.samples_per_epoch).map(|_| cl.base_step(0.0).unwrap().0).collect();
    let pi_mae = crrl::harness::compute_revolution_metrics(&samples).unwrap().mae;
    assert!(agent_mae <= 2.0 * pi_mae, "imitation {agent_mae} vs expert {pi_mae}");
}

#[test]
fn references_change_the_target_speed() {
    let rpm90 = ExperimentConfig { reference: Reference::rpm90(), ..small() };
    let sine = ExperimentConfig { reference: Reference::sine(), ..small() };
    for cfg in [rpm90, sine] {
        let run = run_experiment(&cfg, 0).unwrap();
        assert!(run.records.iter().all(|r| r.tube_violations == 0 && r.mae.is_finite()));
    }
}

proptest! {
    #[test]
    fn composition_stays_in_tube(u in -10.0f64..10.0, pi in -1.0f64..=1.0, beta in 0.0f64..2.0, rel in any::<bool>()) {
        let cfg = if rel { ResidualConfig::relative(beta) } else { ResidualConfig::absolute(beta) };
        prop_assert!(cfg.contains(u, cfg.compose(u, pi)));
        if rel {
            prop_assert_eq!(cfg.compose(0.0, pi), 0.0);
        }
        prop_assert_eq!(cfg.compose(u, 0.0), u);
    }
}
