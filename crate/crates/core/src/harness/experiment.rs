use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use super::config::ExperimentConfig;
use super::metrics::{compute_revolution_metrics, sample_metrics, RevolutionMetrics, Sample};
use crate::control::{grid_search_tune, pi_action, ControllerState, PIGains, Reference, TuneResult};
use crate::error::{Error, Result};
use crate::plant::{self, clamp_torque, PlantParams, PlantState};
use crate::residual::{feature_dim, feature_map, training_action, FeatureScales, ResidualConfig, TubeMode};
use crate::sac::{LossReport, SacAgent, Transition};

/// Distinct stream for plant/sensor noise so agent sampling never shifts it.
const NOISE_STREAM: u64 = 0x6e6f_6973_6521;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Runin,
    Training,
}

impl Phase {
    pub fn as_str(&self) -> &'static str {
        match self {
            Phase::Runin => "runin",
            Phase::Training => "training",
        }
    }
}

/// Per-epoch mean of the SAC loss reports; all zero when `updates == 0`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct EpochLosses {
    pub updates: u64,
    pub critic1: f64,
    pub critic2: f64,
    pub actor: f64,
    pub alpha_loss: f64,
    pub alpha: f64,
    pub entropy: f64,
}

impl EpochLosses {
    pub(crate) fn add(&mut self, r: &LossReport) {
        self.updates += 1;
        self.critic1 += r.critic1;
        self.critic2 += r.critic2;
        self.actor += r.actor;
        self.alpha_loss += r.alpha_loss;
        self.alpha += r.alpha;
        self.entropy += r.entropy;
    }

    pub(crate) fn finish(mut self) -> Self {
        if self.updates > 0 {
            let n = self.updates as f64;
            self.critic1 /= n;
            self.critic2 /= n;
            self.actor /= n;
            self.alpha_loss /= n;
            self.alpha /= n;
            self.entropy /= n;
        }
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase: Phase,
    pub mae: f64,
    pub mse: f64,
    pub mean_reward: f64,
    /// Complete revolutions in the epoch; 0 means the metrics are per-sample.
    pub revolutions: usize,
    /// Always 0 in a returned record: a violation aborts the run.
    pub tube_violations: u64,
    pub saturations: u64,
    pub losses: EpochLosses,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub seed: u64,
    pub gains: PIGains,
    /// Residual configuration with the tube width resolved.
    pub residual: ResidualConfig,
    /// Largest `|u_base|` over the last run-in epoch.
    pub peak_base: f64,
    pub records: Vec<EpochRecord>,
    /// Full per-sample log when requested.
    pub samples: Option<Vec<Sample>>,
    pub checkpoint: String,
    /// Agent evaluations made before the first training epoch.
    pub runin_agent_calls: u64,
}

/// Plant plus PI base controller with optional noise.
#[derive(Debug, Clone)]
pub struct ClosedLoop {
    pub params: PlantParams,
    pub state: PlantState,
    pub ctrl: ControllerState,
    pub gains: PIGains,
    pub reference: Reference,
    pub dt: f64,
    pub substeps: usize,
    pub windup_limit: f64,
    pub torque_noise: f64,
    pub omega_noise: f64,
    noise_rng: ChaCha8Rng,
}

/// What one control period produced.
#[derive(Debug, Clone, Copy)]
pub struct StepOutcome {
    pub u_applied: f64,
    pub saturated: bool,
    /// Unscaled `-1/2 (omega_d - omega)^2` at the new state.
    pub reward: f64,
    pub omega_d_next: f64,
}

impl ClosedLoop {
    /// Starts at `psi = 0` with the crank already at the reference speed.
    pub fn new(cfg: &ExperimentConfig, gains: PIGains, seed: u64) -> Self {
        let omega0 = cfg.reference.value(0.0);
        Self {
            params: cfg.plant.clone(),
            state: PlantState::new(0.0, omega0),
            ctrl: ControllerState::default(),
            gains,
            reference: cfg.reference,
            dt: cfg.dt,
            substeps: cfg.substeps,
            windup_limit: cfg.base.windup_limit,
            torque_noise: cfg.torque_noise,
            omega_noise: cfg.omega_noise,
            noise_rng: ChaCha8Rng::seed_from_u64(seed ^ NOISE_STREAM),
        }
    }

    fn noise(&mut self, std: f64) -> f64 {
        if std > 0.0 {
            std * self.noise_rng.sample::<f64, _>(StandardNormal)
        } else {
            0.0
        }
    }

    /// Measured state (speed possibly noisy).
    pub fn observe(&mut self) -> PlantState {
        let mut s = self.state;
        s.omega += self.noise(self.omega_noise);
        s
    }

    /// Reference and PI output for the measured state; commits the
    /// controller state.
    pub fn base_action(&mut self, measured: &PlantState) -> (f64, f64) {
        let omega_d = self.reference.value(measured.psi);
        let (u, cs) = pi_action(
            &self.ctrl,
            omega_d,
            measured.omega,
            &self.gains,
            self.dt,
            self.windup_limit,
        );
        self.ctrl = cs;
        (omega_d, u)
    }

    /// Applies a torque command for one control period.
    pub fn apply(&mut self, u_command: f64, extra_noise: f64) -> Result<StepOutcome> {
        let noisy = u_command + self.noise(self.torque_noise) + self.noise(extra_noise);
        let (u_applied, saturated) = clamp_torque(noisy, &self.params);
        self.state = plant::advance(&self.state, u_applied, self.dt, self.substeps, &self.params)?;
        let omega_d_next = self.reference.value(self.state.psi);
        let e = omega_d_next - self.state.omega;
        Ok(StepOutcome {
            u_applied,
            saturated,
            reward: -0.5 * e * e,
            omega_d_next,
        })
    }

    /// Runs the base controller alone for `duration` seconds.
    pub fn settle(&mut self, duration: f64) -> Result<()> {
        let steps = (duration / self.dt).round() as usize;
        for _ in 0..steps {
            let m = self.observe();
            let (_, u) = self.base_action(&m);
            self.apply(u, 0.0)?;
        }
        Ok(())
    }

    /// One base-only control period, logged as a sample.
    pub fn base_step(&mut self, extra_noise: f64) -> Result<(Sample, bool)> {
        let m = self.observe();
        let (_, u) = self.base_action(&m);
        let out = self.apply(u, extra_noise)?;
        Ok((self.sample(u, 0.0, u, &out), out.saturated))
    }

    fn sample(&self, u_base: f64, pi_out: f64, u_total: f64, out: &StepOutcome) -> Sample {
        Sample {
            t: self.state.t,
            psi: self.state.psi,
            omega: self.state.omega,
            omega_d: out.omega_d_next,
            u_base,
            pi_out,
            u_total,
            u_applied: out.u_applied,
            reward: out.reward,
        }
    }
}

/// Epoch metrics over complete revolutions, falling back to per-sample
/// averages when the epoch holds none.
pub fn epoch_metrics(samples: &[Sample]) -> RevolutionMetrics {
    compute_revolution_metrics(samples).unwrap_or_else(|_| sample_metrics(samples))
}

/// One tuning episode: transient revolutions are discarded, then the mean
/// per-revolution MAE over the scored revolutions is returned. `None` marks a
/// divergent or stalled loop.
pub fn tuning_episode(cfg: &ExperimentConfig, gains: &PIGains, seed: u64) -> Option<f64> {
    let mut cl = ClosedLoop::new(cfg, *gains, seed);
    let transient = cfg.base.tune_transient_revolutions as f64 * TAU;
    let total = transient + cfg.base.tune_revolutions as f64 * TAU;
    let speed = cfg.reference.max_speed().max(1e-9);
    // Generous cap: ten times the nominal time for the whole episode.
    let max_steps = (10.0 * total / speed / cfg.dt).ceil() as usize + 1;
    let mut samples = Vec::new();
    for _ in 0..max_steps {
        let (s, _) = cl.base_step(0.0).ok()?;
        if !s.omega.is_finite() || s.omega.abs() > 10.0 * speed {
            return None;
        }
        if s.psi.abs() >= transient {
            samples.push(s);
        }
        if s.psi.abs() >= total {
            return compute_revolution_metrics(&samples).ok().map(|m| m.mae);
        }
    }
    None
}

/// Grid search of the PI gains on the simulated plant.
pub fn tune_gains(cfg: &ExperimentConfig, seed: u64) -> Result<TuneResult> {
    grid_search_tune(&cfg.base.grid.points(), 1, seed, |g, s| tuning_episode(cfg, g, s))
}

/// Gains used by a run: the configured pair or the grid-search optimum.
pub fn resolve_gains(cfg: &ExperimentConfig, seed: u64) -> Result<PIGains> {
    if cfg.base.tune {
        Ok(tune_gains(cfg, seed)?.best)
    } else {
        let g = cfg.base.gains();
        g.validate()?;
        Ok(g)
    }
}

/// Critic-input normalisation for the replay action.
fn action_input_scale(res: &ResidualConfig, peak_base: f64) -> f64 {
    let width = if !res.scale_during_training {
        1.0
    } else {
        match res.mode {
            TubeMode::Absolute => res.beta,
            TubeMode::Relative => res.beta * peak_base,
        }
    };
    if width > 0.0 && width.is_finite() {
        1.0 / width
    } else {
        1.0
    }
}

struct Pending {
    features: Vec<f64>,
    action: f64,
    gain: f64,
    reward: f64,
}

/// Run-in with the base controller alone, then residual training with a
/// per-sample tube audit.
pub fn run_experiment(cfg: &ExperimentConfig, seed: u64) -> Result<RunOutput> {
    cfg.validate()?;
    let gains = resolve_gains(cfg, seed)?;
    run_with_gains(cfg, seed, gains)
}

/// [`run_experiment`] with the base gains already chosen.
pub fn run_with_gains(cfg: &ExperimentConfig, seed: u64, gains: PIGains) -> Result<RunOutput> {
    cfg.validate()?;
    gains.validate()?;
    let mut cl = ClosedLoop::new(cfg, gains, seed);
    cl.settle(cfg.settle_time)?;

    let include_base = !cfg.residual.scale_during_training;
    let dim = feature_dim(include_base);
    let mut agent = SacAgent::new(dim, cfg.sac.clone(), seed)?;
    let scales = FeatureScales::new(cfg.reference.max_speed(), cfg.plant.torque_limit);

    let mut records = Vec::with_capacity(cfg.epochs_total);
    let mut log = cfg.sample_log.then(Vec::new);
    let mut epoch_samples = Vec::with_capacity(cfg.samples_per_epoch);
    let mut peak_base = 0.0f64;

    for epoch in 0..cfg.runin_epochs {
        epoch_samples.clear();
        let mut saturations = 0;
        for _ in 0..cfg.samples_per_epoch {
            let (s, sat) = cl.base_step(0.0)?;
            saturations += sat as u64;
            epoch_samples.push(s);
        }
        if epoch + 1 == cfg.runin_epochs {
            peak_base = epoch_samples.iter().fold(0.0, |m, s| m.max(s.u_base.abs()));
        }
        records.push(record(epoch, Phase::Runin, &epoch_samples, saturations, EpochLosses::default()));
        if let Some(l) = log.as_mut() {
            l.extend_from_slice(&epoch_samples);
        }
    }

    let runin_agent_calls = agent.act_calls;
    if runin_agent_calls != 0 {
        return Err(Error::Config("agent evaluated during run-in".into()));
    }
    let residual = cfg.residual.resolve(peak_base);
    residual.validate()?;
    agent.action_input_scale = action_input_scale(&residual, peak_base);

    let mut pending: Option<Pending> = None;
    let mut features = Vec::with_capacity(dim);
    let mut step: u64 = 0;
    for epoch in cfg.runin_epochs..cfg.epochs_total {
        epoch_samples.clear();
        let mut saturations = 0;
        let mut losses = EpochLosses::default();
        for _ in 0..cfg.samples_per_epoch {
            let measured = cl.observe();
            let (_, u_base) = cl.base_action(&measured);
            features.clear();
            feature_map(&measured, u_base, &scales, include_base).write_to(&mut features);
            let (pi_out, _) = agent.act(&features)?;
            let u_total = residual.compose(u_base, pi_out);
            residual.audit(step as usize, u_base, u_total)?;
            let stored = training_action(&residual, u_base, pi_out);

            if let Some(p) = pending.take() {
                agent.buffer.push(Transition {
                    features: p.features,
                    action: p.action,
                    gain: p.gain,
                    reward: p.reward,
                    next_features: features.clone(),
                    next_gain: stored.gain,
                    done: false,
                })?;
            }

            let out = cl.apply(u_total, 0.0)?;
            saturations += out.saturated as u64;
            epoch_samples.push(cl.sample(u_base, pi_out, u_total, &out));
            pending = Some(Pending {
                features: features.clone(),
                action: stored.value,
                gain: stored.gain,
                reward: cfg.reward_scale * out.reward,
            });

            step += 1;
            if agent.ready() && step % cfg.sac.update_every as u64 == 0 {
                let r = agent.update()?;
                losses.add(&r);
            }
        }
        records.push(record(epoch, Phase::Training, &epoch_samples, saturations, losses.finish()));
        if let Some(l) = log.as_mut() {
            l.extend_from_slice(&epoch_samples);
        }
    }

    Ok(RunOutput {
        seed,
        gains,
        residual,
        peak_base,
        records,
        samples: log,
        checkpoint: agent.nets.to_checkpoint(),
        runin_agent_calls,
    })
}

pub(crate) fn record(
    epoch: usize,
    phase: Phase,
    samples: &[Sample],
    saturations: u64,
    losses: EpochLosses,
) -> EpochRecord {
    let m = epoch_metrics(samples);
    EpochRecord {
        epoch,
        phase,
        mae: m.mae,
        mse: m.mse,
        mean_reward: m.mean_reward,
        revolutions: m.revolutions,
        tube_violations: 0,
        saturations,
        losses,
    }
}
