use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use crrl::control::{rpm_to_rad_s, PIGains, Reference};
use crrl::harness::certify::write_trajectory;
use crrl::harness::io;
use crrl::harness::sweep::{beta_axis, gains_axis, reference_axis, write_sweep, SweepPoint};
use crrl::harness::{certify_config, rl_baseline, run_experiment, summarize, sweep, tune_gains, ExperimentConfig, Phase};
use crrl::stability::{adversarial_rollout, Adversary, RolloutSpec};
use crrl::{Error, Result};

#[derive(Parser)]
#[command(name = "crrl", about = "Constrained residual RL on a simulated slider-crank")]
struct Cli {
    /// TOML config; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Dotted override such as `residual.beta=0.1`; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Axis {
    Beta,
    Mode,
    Gains,
    Reference,
}

#[derive(Clone, Copy, ValueEnum)]
enum AdversaryArg {
    Worst,
    Zero,
}

#[derive(Subcommand)]
enum Cmd {
    /// Grid-search the PI gains for the configured reference.
    Tune {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// CSV path of the full table; default `<output_dir>/tune.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run-in plus residual training for each seed.
    Train {
        /// Run a single seed instead of the configured list.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "train")]
        label: String,
    },
    /// Certify the base gains and the configured tube.
    Certify {
        /// Peak base torque used to resolve a peak-fraction absolute width (N m).
        #[arg(long, default_value_t = 1.0)]
        peak_base: f64,
        /// Also run an adversarial rollout against the envelope.
        #[arg(long)]
        rollout: bool,
        #[arg(long, value_enum, default_value_t = AdversaryArg::Worst)]
        adversary: AdversaryArg,
        #[arg(long, default_value_t = 20.0)]
        horizon: f64,
        /// Direction of the initial error in the (e, de) plane (rad).
        #[arg(long, default_value_t = 0.7)]
        angle: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// One run per (axis value, seed) with aggregate tables.
    Sweep {
        #[arg(long, value_enum)]
        axis: Axis,
        /// Comma-separated values: betas, modes, `kp:ki` pairs, or references
        /// (`60` for constant rpm, `sin15+60` for the angle-dependent one).
        #[arg(long)]
        values: String,
        #[arg(long, default_value = "sweep")]
        label: String,
    },
    /// Standalone SAC pretrained on the tuned PI.
    Baseline {
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Summarise run directories from their `epochs.csv`.
    Report { dirs: Vec<PathBuf> },
}

fn seeds(cfg: &ExperimentConfig, seed: Option<u64>) -> Vec<u64> {
    seed.map(|s| vec![s]).unwrap_or_else(|| cfg.seeds.clone())
}

fn parse_f64(s: &str) -> Result<f64> {
    s.trim()
        .parse()
        .map_err(|_| Error::Config(format!("`{s}` is not a number")))
}

fn parse_reference(s: &str) -> Result<Reference> {
    let s = s.trim();
    if let Some(rest) = s.strip_prefix("sin") {
        let (a, o) = rest
            .split_once('+')
            .ok_or_else(|| Error::Config(format!("reference `{s}` is not sinA+B")))?;
        return Ok(Reference::SineOfAngle {
            amplitude: parse_f64(a)?,
            offset: parse_f64(o)?,
        });
    }
    Ok(Reference::Constant { rpm: parse_f64(s)? })
}

fn axis_points(axis: Axis, values: &str) -> Result<Vec<SweepPoint>> {
    let items: Vec<&str> = values.split(',').filter(|v| !v.trim().is_empty()).collect();
    if items.is_empty() {
        return Err(Error::Config("sweep axis is empty".into()));
    }
    Ok(match axis {
        Axis::Beta => beta_axis(&items.iter().map(|v| parse_f64(v)).collect::<Result<Vec<_>>>()?),
        Axis::Mode => items
            .iter()
            .map(|m| SweepPoint {
                label: m.trim().to_string(),
                overrides: vec![format!("residual.mode=\"{}\"", m.trim())],
            })
            .collect(),
        Axis::Gains => {
            let gains = items
                .iter()
                .map(|v| {
                    let (kp, ki) = v
                        .split_once(':')
                        .ok_or_else(|| Error::Config(format!("gains `{v}` are not kp:ki")))?;
                    Ok(PIGains {
                        kp: parse_f64(kp)?,
                        ki: parse_f64(ki)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            gains_axis(&gains)
        }
        Axis::Reference => reference_axis(&items.iter().map(|v| parse_reference(v)).collect::<Result<Vec<_>>>()?),
    })
}

fn print_summary(label: &str, seed: u64, s: &crrl::harness::Summary) {
    println!(
        "{label} seed {seed}: mae run-in {:.6}  converged {:.6}  improvement {:+.2}%  dips {}  median dip {:.5}  worst run-in dip {:.5}",
        s.mae_runin,
        s.mae_converged,
        100.0 * s.improvement,
        s.dips.len(),
        s.median_dip,
        s.worst_runin_dip
    );
}

fn cmd_tune(cfg: &ExperimentConfig, seed: u64, out: Option<PathBuf>) -> Result<()> {
    let res = tune_gains(cfg, seed)?;
    let path = out.unwrap_or_else(|| cfg.output_dir.join("tune.csv"));
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    io::write_tune_table(&path, &res.table)?;
    println!(
        "best kp = {}, ki = {}, mae = {:.6} rad/s ({} points, table at {})",
        res.best.kp,
        res.best.ki,
        res.best_mae,
        res.table.len(),
        path.display()
    );
    Ok(())
}

fn cmd_train(cfg: &ExperimentConfig, seed: Option<u64>, label: &str) -> Result<()> {
    for s in seeds(cfg, seed) {
        let run = run_experiment(cfg, s)?;
        let dir = io::run_dir(&cfg.output_dir, label, s);
        io::write_run(&dir, cfg, &run)?;
        let summary = summarize(&run.records, cfg.convergence_epochs())?;
        io::write_summary(&dir.join("summary.csv"), &summary)?;
        print_summary(label, s, &summary);
    }
    Ok(())
}

fn rollout_reference(r: &Reference) -> (f64, f64, f64) {
    match *r {
        Reference::Constant { rpm } => (rpm_to_rad_s(rpm), 0.0, 0.0),
        // Along the reference psi ~ offset t, so the angle-dependent term is a
        // time sinusoid at the offset speed.
        Reference::SineOfAngle { amplitude, offset } => {
            let w = rpm_to_rad_s(offset);
            (w, rpm_to_rad_s(amplitude), w.abs())
        }
    }
}

struct CertifyArgs {
    peak_base: f64,
    rollout: bool,
    adversary: AdversaryArg,
    horizon: f64,
    angle: f64,
    out: Option<PathBuf>,
}

fn cmd_certify(cfg: &ExperimentConfig, a: CertifyArgs) -> Result<()> {
    let gains = cfg.base.gains();
    let c = certify_config(cfg, gains, a.peak_base)?;
    println!("{}", c.human_report());
    let out = a.out.unwrap_or_else(|| cfg.output_dir.join("certify"));
    std::fs::create_dir_all(&out)?;
    c.write_csv(&out.join("certificate.csv"))?;
    if !a.rollout {
        return Ok(());
    }
    if !c.report.certified() {
        return Err(Error::Config("rollout requested for an uncertified configuration".into()));
    }
    let (speed, amplitude, frequency) = rollout_reference(&cfg.reference);
    let r0 = cfg.stability.epsilon.sqrt();
    let spec = RolloutSpec {
        gains,
        mode: c.mode,
        beta: c.beta,
        speed,
        amplitude,
        frequency,
        horizon: a.horizon,
        dt: 1e-3,
        e0: r0 * a.angle.cos(),
        de0: r0 * a.angle.sin(),
        adversary: match a.adversary {
            AdversaryArg::Worst => Adversary::Worst,
            AdversaryArg::Zero => Adversary::Constant(0.0),
        },
        record_every: 10,
    };
    let rep = adversarial_rollout(&cfg.plant, &spec, &c.report)?;
    write_trajectory(&out.join("rollout.csv"), &rep.trajectory)?;
    println!(
        "rollout: max |x| {:.6e}, final |x| {:.6e}, max |x| / envelope {:.4}, violations {}",
        rep.max_norm, rep.final_norm, rep.max_ratio, rep.violations
    );
    rep.check()
}

fn cmd_sweep(cfg: &ExperimentConfig, axis: Axis, values: &str, label: &str) -> Result<()> {
    let points = axis_points(axis, values)?;
    let root = cfg.output_dir.join(label);
    let table = sweep(cfg, &points, &cfg.seeds, Some(&root))?;
    write_sweep(&root, &table)?;
    for row in &table.rows {
        match (&row.summary, &row.error) {
            (Some(s), _) => print_summary(&row.label, row.seed, s),
            (None, Some(e)) => println!("{} seed {}: FAILED {e}", row.label, row.seed),
            _ => {}
        }
    }
    for a in &table.aggregates {
        println!(
            "{}: mean improvement {:+.2}% (min {:+.2}%, max {:+.2}%), mean median dip {:.5}, failures {}/{}",
            a.label,
            100.0 * a.mean_improvement,
            100.0 * a.min_improvement,
            100.0 * a.max_improvement,
            a.mean_median_dip,
            a.failures,
            a.runs
        );
    }
    let failures: usize = table.aggregates.iter().map(|a| a.failures).sum();
    if failures > 0 {
        return Err(Error::Config(format!("{failures} sweep runs failed")));
    }
    Ok(())
}

fn cmd_baseline(cfg: &ExperimentConfig, seed: Option<u64>) -> Result<()> {
    for s in seeds(cfg, seed) {
        let out = rl_baseline(cfg, s)?;
        let dir = io::run_dir(&cfg.output_dir, "baseline", s);
        std::fs::create_dir_all(&dir)?;
        std::fs::write(dir.join("config.toml"), cfg.to_toml_string()?)?;
        io::write_epochs(&dir.join("epochs.csv"), &out.records)?;
        io::write_losses(&dir.join("losses.csv"), &out.records)?;
        std::fs::write(dir.join("checkpoint.txt"), &out.checkpoint)?;
        let runin = out.records.iter().filter(|r| r.phase == Phase::Runin);
        let train: Vec<_> = out.records.iter().filter(|r| r.phase == Phase::Training).collect();
        let runin_max = runin.map(|r| r.mae).fold(0.0, f64::max);
        let train_max = train.iter().map(|r| r.mae).fold(0.0, f64::max);
        println!(
            "baseline seed {s}: expert kp = {}, ki = {}, imitation mse {:.3e}, worst run-in mae {:.5}, worst training mae {:.5}",
            out.expert.kp, out.expert.ki, out.pretrain_mse, runin_max, train_max
        );
    }
    Ok(())
}

fn cmd_report(dirs: &[PathBuf]) -> Result<()> {
    let mut violations = 0;
    for dir in dirs {
        let records = io::read_epochs(&dir.join("epochs.csv"))?;
        violations += records.iter().map(|r| r.tube_violations).sum::<u64>();
        let cfg = ExperimentConfig::load(&dir.join("config.toml"))?;
        let s = summarize(&records, cfg.convergence_epochs())?;
        print_summary(&dir.display().to_string(), cfg.seeds[0], &s);
    }
    if violations > 0 {
        return Err(Error::Config(format!("{violations} tube violations in the reported runs")));
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let cfg = ExperimentConfig::load_with_overrides(cli.config.as_deref().map(Path::new), &cli.overrides)?;
    match cli.cmd {
        Cmd::Tune { seed, out } => cmd_tune(&cfg, seed, out),
        Cmd::Train { seed, label } => cmd_train(&cfg, seed, &label),
        Cmd::Certify {
            peak_base,
            rollout,
            adversary,
            horizon,
            angle,
            out,
        } => cmd_certify(
            &cfg,
            CertifyArgs {
                peak_base,
                rollout,
                adversary,
                horizon,
                angle,
                out,
            },
        ),
        Cmd::Sweep { axis, values, label } => cmd_sweep(&cfg, axis, &values, &label),
        Cmd::Baseline { seed } => cmd_baseline(&cfg, seed),
        Cmd::Report { dirs } => cmd_report(&dirs),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::TubeViolation { .. } | Error::EnvelopeViolation { .. } => ExitCode::from(3),
                _ => ExitCode::from(1),
            }
        }
    }
}
