//! Soft Actor-Critic for a one-dimensional action: tanh-squashed Gaussian
//! actor, twin critics with Polyak-averaged targets and a learned entropy
//! temperature.
//!
//! Critics see `[features, action * action_input_scale]` where the action is
//! the replay representation chosen by the residual layer. Each transition
//! carries the derivative of that representation with respect to the raw
//! agent output (`gain`), so the actor is trained through the scaling.

pub mod buffer;
pub mod policy;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{AdamState, ForwardCache, Mlp, MlpSpec, OutputHead};

pub use buffer::{Batch, ReplayBuffer, Transition};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SacHyper {
    pub gamma: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub tau: f64,
    pub target_entropy: f64,
    pub actor_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    /// Starting temperature.
    pub init_alpha: f64,
    /// Learning rate of the temperature; `None` uses `lr`.
    pub alpha_lr: Option<f64>,
    /// Environment steps per gradient update.
    pub update_every: usize,
}

impl Default for SacHyper {
    fn default() -> Self {
        Self::crrl()
    }
}

impl SacHyper {
    /// Residual agent settings.
    pub fn crrl() -> Self {
        Self {
            gamma: 0.97,
            lr: 3e-4,
            batch_size: 256,
            buffer_capacity: 1_000_000,
            tau: 0.005,
            target_entropy: -1.0,
            actor_hidden: vec![32, 32],
            critic_hidden: vec![128, 128, 128],
            init_alpha: 0.1,
            alpha_lr: None,
            update_every: 1,
        }
    }

    /// Standalone agent settings.
    pub fn standalone_rl() -> Self {
        Self {
            gamma: 0.9,
            lr: 1e-5,
            critic_hidden: vec![32, 32],
            ..Self::crrl()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad(format!("gamma = {} outside [0, 1]", self.gamma));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad(format!("tau = {} outside (0, 1]", self.tau));
        }
        if self.batch_size == 0 || self.batch_size > self.buffer_capacity {
            return bad("batch_size must be in 1..=buffer_capacity".into());
        }
        if !(self.lr >= 0.0) || !(self.init_alpha > 0.0) {
            return bad("lr must be >= 0 and init_alpha > 0".into());
        }
        if self.actor_hidden.is_empty() || self.critic_hidden.is_empty() {
            return bad("networks need at least one hidden layer".into());
        }
        if self.update_every == 0 {
            return bad("update_every must be >= 1".into());
        }
        Ok(())
    }

    pub fn actor_spec(&self, feature_dim: usize) -> Result<MlpSpec> {
        MlpSpec::new(feature_dim, &self.actor_hidden, 2, OutputHead::GaussianPair)
    }

    pub fn critic_spec(&self, feature_dim: usize) -> Result<MlpSpec> {
        MlpSpec::new(feature_dim + 1, &self.critic_hidden, 1, OutputHead::Linear)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SacNetworks {
    pub actor: Mlp,
    pub critic1: Mlp,
    pub critic2: Mlp,
    pub target1: Mlp,
    pub target2: Mlp,
    pub log_alpha: f64,
}

impl SacNetworks {
    pub fn init<R: Rng + ?Sized>(feature_dim: usize, hyper: &SacHyper, rng: &mut R) -> Result<Self> {
        let actor = Mlp::init(hyper.actor_spec(feature_dim)?, rng);
        let critic1 = Mlp::init(hyper.critic_spec(feature_dim)?, rng);
        let critic2 = Mlp::init(hyper.critic_spec(feature_dim)?, rng);
        Ok(Self {
            target1: critic1.clone(),
            target2: critic2.clone(),
            actor,
            critic1,
            critic2,
            log_alpha: hyper.init_alpha.ln(),
        })
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.exp()
    }

    pub fn feature_dim(&self) -> usize {
        self.actor.spec.input()
    }

    /// `(mean, log_std)` of the pre-squash Gaussian.
    pub fn policy_params(&self, features: &[f64]) -> Result<(f64, f64)> {
        let out = self.actor.forward(features)?;
        Ok((out[0], out[1]))
    }

    /// Draws `a = tanh(mean + std z)` and its log-density.
    pub fn sample_action<R: Rng + ?Sized>(&self, features: &[f64], rng: &mut R) -> Result<(f64, f64)> {
        let (mean, log_std) = self.policy_params(features)?;
        let z: f64 = rng.sample(StandardNormal);
        Ok(policy::squash(mean, log_std, z))
    }

    pub fn is_finite(&self) -> bool {
        self.actor.is_finite()
            && self.critic1.is_finite()
            && self.critic2.is_finite()
            && self.target1.is_finite()
            && self.target2.is_finite()
            && self.log_alpha.is_finite()
    }

    pub fn to_checkpoint(&self) -> String {
        let mut s = format!("sac v1\nlog_alpha {:016x}\n", self.log_alpha.to_bits());
        for (name, net) in [
            ("actor", &self.actor),
            ("critic1", &self.critic1),
            ("critic2", &self.critic2),
            ("target1", &self.target1),
            ("target2", &self.target2),
        ] {
            s.push_str(&format!("[{name}]\n"));
            s.push_str(&net.to_checkpoint());
        }
        s
    }

    pub fn from_checkpoint(text: &str) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        let mut lines = text.lines();
        if lines.next() != Some("sac v1") {
            return Err(bad("missing `sac v1` header"));
        }
        let log_alpha = lines
            .next()
            .and_then(|l| l.strip_prefix("log_alpha "))
            .and_then(|h| u64::from_str_radix(h, 16).ok())
            .map(f64::from_bits)
            .ok_or_else(|| bad("missing log_alpha"))?;
        let rest: Vec<&str> = lines.collect();
        let mut nets = Vec::new();
        let mut i = 0;
        while i < rest.len() {
            if !rest[i].starts_with('[') {
                return Err(bad("expected section header"));
            }
            let start = i + 1;
            let mut end = start;
            while end < rest.len() && !rest[end].starts_with('[') {
                end += 1;
            }
            nets.push(Mlp::from_checkpoint(&rest[start..end].join("\n"))?);
            i = end;
        }
        let [actor, critic1, critic2, target1, target2]: [Mlp; 5] =
            nets.try_into().map_err(|_| bad("expected five networks"))?;
        Ok(Self {
            actor,
            critic1,
            critic2,
            target1,
            target2,
            log_alpha,
        })
    }
}

/// `target <- (1 - tau) target + tau online`.
pub fn soft_update(target: &mut Mlp, online: &Mlp, tau: f64) -> Result<()> {
    target.soft_update_from(online, tau)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct LossReport {
    pub critic1: f64,
    pub critic2: f64,
    pub actor: f64,
    pub alpha_loss: f64,
    pub alpha: f64,
    /// Monte-Carlo entropy estimate `-mean(log pi)` over the batch.
    pub entropy: f64,
}

fn stack_critic_inputs(features: &[f64], dim: usize, actions: &[f64], out: &mut Vec<f64>) {
    out.clear();
    for (row, a) in features.chunks(dim).zip(actions) {
        out.extend_from_slice(row);
        out.push(*a);
    }
}

#[derive(Debug, Default)]
struct Scratch {
    actor_cache: ForwardCache,
    c1_cache: ForwardCache,
    c2_cache: ForwardCache,
    critic_in: Vec<f64>,
    act_in: Vec<f64>,
    z: Vec<f64>,
    a: Vec<f64>,
    logp: Vec<f64>,
    targets: Vec<f64>,
    d_out: Vec<f64>,
    d_in1: Vec<f64>,
    d_in2: Vec<f64>,
    grad_actor: Vec<f64>,
    grad_c1: Vec<f64>,
    grad_c2: Vec<f64>,
}

/// Trainer-owned SAC state: networks, optimisers, replay and RNG.
#[derive(Debug)]
pub struct SacAgent {
    pub hyper: SacHyper,
    pub nets: SacNetworks,
    pub buffer: ReplayBuffer,
    /// Multiplies the replay action before it enters the critics.
    pub action_input_scale: f64,
    opt_actor: AdamState,
    opt_c1: AdamState,
    opt_c2: AdamState,
    opt_alpha: AdamState,
    rng: ChaCha8Rng,
    scratch: Scratch,
    /// Actor evaluations made while acting in the environment.
    pub act_calls: u64,
    pub updates: u64,
}

impl SacAgent {
    pub fn new(feature_dim: usize, hyper: SacHyper, seed: u64) -> Result<Self> {
        hyper.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let nets = SacNetworks::init(feature_dim, &hyper, &mut rng)?;
        let alpha_lr = hyper.alpha_lr.unwrap_or(hyper.lr);
        Ok(Self {
            opt_actor: AdamState::new(nets.actor.n_params(), hyper.lr),
            opt_c1: AdamState::new(nets.critic1.n_params(), hyper.lr),
            opt_c2: AdamState::new(nets.critic2.n_params(), hyper.lr),
            opt_alpha: AdamState::new(1, alpha_lr),
            buffer: ReplayBuffer::new(hyper.buffer_capacity, feature_dim),
            action_input_scale: 1.0,
            nets,
            hyper,
            rng,
            scratch: Scratch::default(),
            act_calls: 0,
            updates: 0,
        })
    }

    /// Stochastic action for the environment.
    pub fn act(&mut self, features: &[f64]) -> Result<(f64, f64)> {
        self.act_calls += 1;
        self.nets.sample_action(features, &mut self.rng)
    }

    /// Deterministic `tanh(mean)`.
    pub fn act_mean(&mut self, features: &[f64]) -> Result<f64> {
        self.act_calls += 1;
        Ok(self.nets.policy_params(features)?.0.tanh())
    }

    pub fn ready(&self) -> bool {
        self.buffer.len() >= self.hyper.batch_size
    }

    /// Samples a minibatch and performs one update of critics, actor and
    /// temperature followed by the target soft update.
    pub fn update(&mut self) -> Result<LossReport> {
        if !self.ready() {
            return Err(Error::Config(format!(
                "replay holds {} transitions, batch needs {}",
                self.buffer.len(),
                self.hyper.batch_size
            )));
        }
        let batch = self.buffer.sample(self.hyper.batch_size, &mut self.rng)?;
        self.update_on(&batch)
    }

    /// Soft Bellman targets `r + gamma (1 - done) (min Qbar(s', a') - alpha log pi(a'|s'))`.
    pub fn critic_target(&mut self, batch: &Batch) -> Result<Vec<f64>> {
        self.compute_targets(batch)?;
        Ok(self.scratch.targets.clone())
    }

    fn compute_targets(&mut self, batch: &Batch) -> Result<()> {
        let n = batch.len;
        let dim = batch.dim;
        let alpha = self.nets.alpha();
        let sc = &mut self.scratch;
        self.nets
            .actor
            .forward_batch(&batch.next_features, n, &mut sc.actor_cache)?;
        sc.act_in.clear();
        sc.logp.clear();
        {
            let out = sc.actor_cache.output();
            for i in 0..n {
                let z: f64 = self.rng.sample(StandardNormal);
                let (a, lp) = policy::squash(out[2 * i], out[2 * i + 1], z);
                sc.act_in.push(batch.next_gains[i] * a * self.action_input_scale);
                sc.logp.push(lp);
            }
        }
        stack_critic_inputs(&batch.next_features, dim, &sc.act_in, &mut sc.critic_in);
        self.nets.target1.forward_batch(&sc.critic_in, n, &mut sc.c1_cache)?;
        self.nets.target2.forward_batch(&sc.critic_in, n, &mut sc.c2_cache)?;
        sc.targets.clear();
        let (q1, q2) = (sc.c1_cache.output(), sc.c2_cache.output());
        for i in 0..n {
            let soft_v = q1[i].min(q2[i]) - alpha * sc.logp[i];
            sc.targets
                .push(batch.rewards[i] + self.hyper.gamma * (1.0 - batch.dones[i]) * soft_v);
        }
        if sc.targets.iter().any(|t| !t.is_finite()) {
            return Err(Error::NonFinite("critic target"));
        }
        Ok(())
    }

    pub fn update_on(&mut self, batch: &Batch) -> Result<LossReport> {
        let n = batch.len;
        let dim = batch.dim;
        let inv_n = 1.0 / n as f64;
        let alpha = self.nets.alpha();
        self.compute_targets(batch)?;

        // critics
        let sc = &mut self.scratch;
        sc.act_in.clear();
        sc.act_in
            .extend(batch.actions.iter().map(|a| a * self.action_input_scale));
        stack_critic_inputs(&batch.features, dim, &sc.act_in, &mut sc.critic_in);
        let mut critic_losses = [0.0; 2];
        for (k, (net, opt, cache, grad)) in [
            (&mut self.nets.critic1, &mut self.opt_c1, &mut sc.c1_cache, &mut sc.grad_c1),
            (&mut self.nets.critic2, &mut self.opt_c2, &mut sc.c2_cache, &mut sc.grad_c2),
        ]
        .into_iter()
        .enumerate()
        {
            net.forward_batch(&sc.critic_in, n, cache)?;
            sc.d_out.clear();
            let mut loss = 0.0;
            for (q, y) in cache.output().iter().zip(&sc.targets) {
                let r = q - y;
                loss += r * r;
                sc.d_out.push(2.0 * r * inv_n);
            }
            critic_losses[k] = loss * inv_n;
            grad.clear();
            grad.resize(net.n_params(), 0.0);
            net.backward(cache, &sc.d_out, Some(grad), None)?;
            opt.step(&mut net.params, grad)?;
        }

        // actor, through the freshly updated critics
        self.nets
            .actor
            .forward_batch(&batch.features, n, &mut sc.actor_cache)?;
        sc.z.clear();
        sc.a.clear();
        sc.logp.clear();
        sc.act_in.clear();
        {
            let out = sc.actor_cache.output();
            for i in 0..n {
                let z: f64 = self.rng.sample(StandardNormal);
                let (a, lp) = policy::squash(out[2 * i], out[2 * i + 1], z);
                sc.z.push(z);
                sc.a.push(a);
                sc.logp.push(lp);
                sc.act_in.push(batch.gains[i] * a * self.action_input_scale);
            }
        }
        stack_critic_inputs(&batch.features, dim, &sc.act_in, &mut sc.critic_in);
        self.nets.critic1.forward_batch(&sc.critic_in, n, &mut sc.c1_cache)?;
        self.nets.critic2.forward_batch(&sc.critic_in, n, &mut sc.c2_cache)?;
        // route the -1/n cotangent to whichever critic is smaller per sample
        let mut d1 = vec![0.0; n];
        let mut d2 = vec![0.0; n];
        let mut actor_loss = 0.0;
        {
            let (q1, q2) = (sc.c1_cache.output(), sc.c2_cache.output());
            for i in 0..n {
                if q1[i] <= q2[i] {
                    d1[i] = -inv_n;
                    actor_loss += alpha * sc.logp[i] - q1[i];
                } else {
                    d2[i] = -inv_n;
                    actor_loss += alpha * sc.logp[i] - q2[i];
                }
            }
        }
        actor_loss *= inv_n;
        sc.d_in1.clear();
        sc.d_in1.resize(n * (dim + 1), 0.0);
        sc.d_in2.clear();
        sc.d_in2.resize(n * (dim + 1), 0.0);
        self.nets
            .critic1
            .backward(&mut sc.c1_cache, &d1, None, Some(&mut sc.d_in1))?;
        self.nets
            .critic2
            .backward(&mut sc.c2_cache, &d2, None, Some(&mut sc.d_in2))?;

        sc.d_out.clear();
        {
            let out = sc.actor_cache.output();
            for i in 0..n {
                let log_std = out[2 * i + 1];
                let std = log_std.exp();
                let a = sc.a[i];
                // d(-minQ)/da, already carrying the 1/n factor
                let dq_da = (sc.d_in1[i * (dim + 1) + dim] + sc.d_in2[i * (dim + 1) + dim])
                    * batch.gains[i]
                    * self.action_input_scale;
                let du = dq_da * (1.0 - a * a);
                let (gm, gs) = policy::log_prob_grad(a, log_std, sc.z[i]);
                sc.d_out.push(alpha * gm * inv_n + du);
                sc.d_out.push(alpha * gs * inv_n + du * std * sc.z[i]);
            }
        }
        sc.grad_actor.clear();
        sc.grad_actor.resize(self.nets.actor.n_params(), 0.0);
        self.nets
            .actor
            .backward(&mut sc.actor_cache, &sc.d_out, Some(&mut sc.grad_actor), None)?;
        self.opt_actor
            .step(&mut self.nets.actor.params, &sc.grad_actor)?;

        // temperature: minimise -log_alpha * mean(log pi + target_entropy)
        let mean_logp = sc.logp.iter().sum::<f64>() * inv_n;
        let alpha_loss = -self.nets.log_alpha * (mean_logp + self.hyper.target_entropy);
        let mut la = [self.nets.log_alpha];
        self.opt_alpha
            .step(&mut la, &[-(mean_logp + self.hyper.target_entropy)])?;
        self.nets.log_alpha = la[0];

        let tau = self.hyper.tau;
        self.nets.target1.soft_update_from(&self.nets.critic1, tau)?;
        self.nets.target2.soft_update_from(&self.nets.critic2, tau)?;
        self.updates += 1;

        let report = LossReport {
            critic1: critic_losses[0],
            critic2: critic_losses[1],
            actor: actor_loss,
            alpha_loss,
            alpha: self.nets.alpha(),
            entropy: -mean_logp,
        };
        if ![
            report.critic1,
            report.critic2,
            report.actor,
            report.alpha_loss,
        ]
        .iter()
        .all(|v| v.is_finite())
            || !self.nets.is_finite()
        {
            return Err(Error::NonFinite("SAC update"));
        }
        Ok(report)
    }

    /// Supervised warm start: regresses `tanh(mean)` onto target actions and
    /// pulls `log_std` toward `log_std_target`. Returns the final mean-squared
    /// action error.
    pub fn pretrain_actor(
        &mut self,
        features: &[f64],
        targets: &[f64],
        steps: usize,
        batch: usize,
        lr: f64,
        log_std_target: f64,
    ) -> Result<f64> {
        let dim = self.nets.feature_dim();
        let n = targets.len();
        if features.len() != n * dim || n == 0 {
            return Err(Error::Shape {
                expected: n * dim,
                got: features.len(),
            });
        }
        let mut opt = AdamState::new(self.nets.actor.n_params(), lr);
        let mut cache = ForwardCache::default();
        let mut grad = vec![0.0; self.nets.actor.n_params()];
        let mut rows = Vec::with_capacity(batch * dim);
        let mut tgt = Vec::with_capacity(batch);
        let mut d_out = Vec::with_capacity(2 * batch);
        for _ in 0..steps {
            rows.clear();
            tgt.clear();
            for _ in 0..batch {
                let i = self.rng.random_range(0..n);
                rows.extend_from_slice(&features[i * dim..(i + 1) * dim]);
                tgt.push(targets[i]);
            }
            self.nets.actor.forward_batch(&rows, batch, &mut cache)?;
            d_out.clear();
            let out = cache.output();
            for (i, t) in tgt.iter().enumerate() {
                let a = out[2 * i].tanh();
                d_out.push(2.0 * (a - t) * (1.0 - a * a) / batch as f64);
                d_out.push(2.0 * (out[2 * i + 1] - log_std_target) / batch as f64);
            }
            grad.iter_mut().for_each(|g| *g = 0.0);
            self.nets
                .actor
                .backward(&mut cache, &d_out, Some(&mut grad), None)?;
            opt.step(&mut self.nets.actor.params, &grad)?;
        }
        let mut err = 0.0;
        for i in 0..n {
            let a = self.nets.policy_params(&features[i * dim..(i + 1) * dim])?.0.tanh();
            err += (a - targets[i]).powi(2);
        }
        Ok(err / n as f64)
    }
}
