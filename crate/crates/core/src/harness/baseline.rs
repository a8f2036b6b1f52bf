//! Standalone SAC baseline: the agent imitates the PI controller on logged
//! demonstrations, then drives the plant with full torque authority.

use super::config::ExperimentConfig;
use super::experiment::{record, tune_gains, ClosedLoop, EpochLosses, EpochRecord, Phase};
use super::metrics::Sample;
use crate::control::PIGains;
use crate::error::{Error, Result};
use crate::residual::{feature_dim, feature_map, FeatureScales};
use crate::sac::{SacAgent, Transition};

/// Separates the demonstration run from the logged run-in.
const DEMO_STREAM: u64 = 0x6465_6d6f;

#[derive(Debug, Clone)]
pub struct BaselineOutput {
    pub seed: u64,
    pub expert: PIGains,
    /// Mean squared error of the imitation fit on the demonstrations.
    pub pretrain_mse: f64,
    pub records: Vec<EpochRecord>,
    pub checkpoint: String,
}

/// Logged `(features, u / torque_limit)` pairs from the PI controller with
/// exploration noise on the applied torque.
pub fn collect_demonstrations(
    cfg: &ExperimentConfig,
    expert: PIGains,
    seed: u64,
    samples: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut cl = ClosedLoop::new(cfg, expert, seed ^ DEMO_STREAM);
    cl.settle(cfg.settle_time)?;
    let scales = FeatureScales::new(cfg.reference.max_speed(), cfg.plant.torque_limit);
    let mut features = Vec::with_capacity(samples * feature_dim(false));
    let mut targets = Vec::with_capacity(samples);
    for _ in 0..samples {
        let m = cl.observe();
        let (_, u) = cl.base_action(&m);
        feature_map(&m, u, &scales, false).write_to(&mut features);
        targets.push((u / cfg.plant.torque_limit).clamp(-0.999, 0.999));
        cl.apply(u, cfg.pretrain.demo_noise)?;
    }
    Ok((features, targets))
}

/// Builds an agent and fits its actor to the expert's demonstrations.
pub fn pretrained_agent(cfg: &ExperimentConfig, expert: PIGains, seed: u64) -> Result<(SacAgent, f64)> {
    let n = cfg.runin_epochs * cfg.samples_per_epoch;
    let (features, targets) = collect_demonstrations(cfg, expert, seed, n)?;
    let mut agent = SacAgent::new(feature_dim(false), cfg.sac.clone(), seed)?;
    let p = &cfg.pretrain;
    let mse = agent.pretrain_actor(&features, &targets, p.steps, p.batch, p.lr, p.log_std)?;
    Ok((agent, mse))
}

/// Closed-loop MAE of the agent's deterministic action, from the
/// base-controlled settled state, over `epochs` epochs.
pub fn evaluate_mean_policy(cfg: &ExperimentConfig, agent: &mut SacAgent, expert: PIGains, seed: u64, epochs: usize) -> Result<f64> {
    let mut cl = ClosedLoop::new(cfg, expert, seed);
    cl.settle(cfg.settle_time)?;
    let scales = FeatureScales::new(cfg.reference.max_speed(), cfg.plant.torque_limit);
    let mut samples = Vec::with_capacity(epochs * cfg.samples_per_epoch);
    let mut feats = Vec::with_capacity(3);
    for _ in 0..epochs * cfg.samples_per_epoch {
        let m = cl.observe();
        feats.clear();
        feature_map(&m, 0.0, &scales, false).write_to(&mut feats);
        let a = agent.act_mean(&feats)?;
        let u = a * cfg.plant.torque_limit;
        let out = cl.apply(u, 0.0)?;
        samples.push(Sample {
            t: cl.state.t,
            psi: cl.state.psi,
            omega: cl.state.omega,
            omega_d: out.omega_d_next,
            u_base: 0.0,
            pi_out: a,
            u_total: u,
            u_applied: out.u_applied,
            reward: out.reward,
        });
    }
    Ok(super::experiment::epoch_metrics(&samples).mae)
}

/// Run-in under the grid-search optimal PI, then standalone SAC on full
/// authority.
pub fn rl_baseline(cfg: &ExperimentConfig, seed: u64) -> Result<BaselineOutput> {
    cfg.validate()?;
    let expert = tune_gains(cfg, seed)?.best;
    let (mut agent, pretrain_mse) = pretrained_agent(cfg, expert, seed)?;
    if !agent.nets.is_finite() {
        return Err(Error::NonFinite("pretrained actor"));
    }
    let mut cl = ClosedLoop::new(cfg, expert, seed);
    cl.settle(cfg.settle_time)?;
    let scales = FeatureScales::new(cfg.reference.max_speed(), cfg.plant.torque_limit);
    let limit = cfg.plant.torque_limit;
    let mut records = Vec::with_capacity(cfg.epochs_total);
    let mut epoch_samples = Vec::with_capacity(cfg.samples_per_epoch);

    for epoch in 0..cfg.runin_epochs {
        epoch_samples.clear();
        let mut sat = 0;
        for _ in 0..cfg.samples_per_epoch {
            let (s, saturated) = cl.base_step(0.0)?;
            sat += saturated as u64;
            epoch_samples.push(s);
        }
        records.push(record(epoch, Phase::Runin, &epoch_samples, sat, EpochLosses::default()));
    }

    let mut pending: Option<(Vec<f64>, f64, f64)> = None;
    let mut feats = Vec::with_capacity(3);
    let mut step: u64 = 0;
    for epoch in cfg.runin_epochs..cfg.epochs_total {
        epoch_samples.clear();
        let mut sat = 0;
        let mut losses = EpochLosses::default();
        for _ in 0..cfg.samples_per_epoch {
            let m = cl.observe();
            feats.clear();
            feature_map(&m, 0.0, &scales, false).write_to(&mut feats);
            let (a, _) = agent.act(&feats)?;
            if let Some((f, act, r)) = pending.take() {
                agent.buffer.push(Transition {
                    features: f,
                    action: act,
                    gain: 1.0,
                    reward: r,
                    next_features: feats.clone(),
                    next_gain: 1.0,
                    done: false,
                })?;
            }
            let u = a * limit;
            let out = cl.apply(u, 0.0)?;
            sat += out.saturated as u64;
            epoch_samples.push(Sample {
                t: cl.state.t,
                psi: cl.state.psi,
                omega: cl.state.omega,
                omega_d: out.omega_d_next,
                u_base: 0.0,
                pi_out: a,
                u_total: u,
                u_applied: out.u_applied,
                reward: out.reward,
            });
            pending = Some((feats.clone(), a, cfg.reward_scale * out.reward));
            step += 1;
            if agent.ready() && step % cfg.sac.update_every as u64 == 0 {
                losses.add(&agent.update()?);
            }
        }
        records.push(record(epoch, Phase::Training, &epoch_samples, sat, losses.finish()));
    }
    Ok(BaselineOutput {
        seed,
        expert,
        pretrain_mse,
        records,
        checkpoint: agent.nets.to_checkpoint(),
    })
}
