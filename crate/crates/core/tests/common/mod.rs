//! Independent oracles shared by the integration tests and the acceptance
//! gate. Nothing here calls the code it checks except through its public
//! entry points.
#![allow(dead_code)]

use std::f64::consts::PI;

use crrl::nn::{AdamState, ForwardCache, Mlp, MlpSpec, OutputHead, LOG_STD_MAX, LOG_STD_MIN};
use crrl::plant::{self, PlantParams, PlantState};
use crrl::sac::{policy, Batch, SacAgent, SacHyper, Transition};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Overrides that shrink the experiment to desk scale: fewer epochs and a
/// smaller critic than the laboratory settings.
pub const DESK: [&str; 3] = ["epochs_total=150", "sac.critic_hidden=[64, 64]", "sac.batch_size=64"];

// ---------------------------------------------------------------- plant

/// Value with first and second derivative along the crank angle.
#[derive(Debug, Clone, Copy)]
pub struct Jet {
    pub v: f64,
    pub d: f64,
    pub dd: f64,
}

impl Jet {
    pub fn var(x: f64) -> Self {
        Jet { v: x, d: 1.0, dd: 0.0 }
    }
    pub fn c(x: f64) -> Self {
        Jet { v: x, d: 0.0, dd: 0.0 }
    }
    pub fn add(self, o: Jet) -> Jet {
        Jet { v: self.v + o.v, d: self.d + o.d, dd: self.dd + o.dd }
    }
    pub fn scale(self, k: f64) -> Jet {
        Jet { v: k * self.v, d: k * self.d, dd: k * self.dd }
    }
    pub fn sin(self) -> Jet {
        let (s, c) = self.v.sin_cos();
        Jet { v: s, d: c * self.d, dd: -s * self.d * self.d + c * self.dd }
    }
    pub fn cos(self) -> Jet {
        let (s, c) = self.v.sin_cos();
        Jet { v: c, d: -s * self.d, dd: -c * self.d * self.d - s * self.dd }
    }
    pub fn asin(self) -> Jet {
        let q = 1.0 - self.v * self.v;
        let f1 = 1.0 / q.sqrt();
        let f2 = self.v / (q * q.sqrt());
        Jet { v: self.v.asin(), d: f1 * self.d, dd: f2 * self.d * self.d + f1 * self.dd }
    }
}

/// `(M, dM/dpsi, dV/dpsi)` from the body positions of the mechanism: the
/// crank turns about the origin, the rod joins the crank pin to a slider on
/// the x axis, gravity acts along y.
pub fn lagrangian_terms(psi: f64, p: &PlantParams) -> (f64, f64, f64) {
    let q = Jet::var(psi);
    let rod = q.sin().scale(-p.l1 / p.l2).asin();
    let crank_com = (q.cos().scale(p.r1), q.sin().scale(p.r1));
    let pin = (q.cos().scale(p.l1), q.sin().scale(p.l1));
    let rod_com = (pin.0.add(rod.cos().scale(p.r2)), pin.1.add(rod.sin().scale(p.r2)));
    let slider = pin.0.add(rod.cos().scale(p.l2));
    // Kinetic energy 1/2 M w^2 with M = sum m |dp/dpsi|^2 + I (d angle/dpsi)^2.
    let sq = |a: Jet, b: Jet| (a.d * a.d + b.d * b.d, 2.0 * (a.d * a.dd + b.d * b.dd));
    let (c1, dc1) = sq(crank_com.0, crank_com.1);
    let (c2, dc2) = sq(rod_com.0, rod_com.1);
    let m = p.i1 + p.m1 * c1 + p.m2 * c2 + p.i2 * rod.d * rod.d + p.m_slider * slider.d * slider.d;
    let dm = p.m1 * dc1 + p.m2 * dc2 + 2.0 * p.i2 * rod.d * rod.dd + 2.0 * p.m_slider * slider.d * slider.dd;
    let dv = p.gravity * (p.m1 * crank_com.1.d + p.m2 * rod_com.1.d);
    (m, dm, dv)
}

/// Plant with randomised geometry and masses around the laboratory values.
pub fn random_plant<R: Rng>(r: &mut R) -> PlantParams {
    let base = PlantParams::table_i();
    let mut f = |x: f64| x * r.random_range(0.5..1.5);
    let mut p = PlantParams {
        l1: f(base.l1),
        r1: f(base.r1),
        r2: f(base.r2),
        i1: f(base.i1),
        i2: f(base.i2),
        m1: f(base.m1),
        m2: f(base.m2),
        m_slider: f(base.m_slider),
        c_fric: f(base.c_fric),
        gravity: 9.81,
        ..base
    };
    p.l2 = p.l1 * r.random_range(1.5..8.0);
    p.r2 = p.r2.min(p.l2);
    p
}

/// Largest error of `plant::dynamics` against the Lagrangian oracle over
/// `n` random (plant, state, torque) triples, relative to the magnitude of
/// the generalised forces divided by the inertia.
pub fn plant_lagrangian_max_rel_error(n: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..n {
        let p = random_plant(&mut r);
        let psi = r.random_range(-4.0 * PI..4.0 * PI);
        let w = r.random_range(-30.0..30.0);
        let u = r.random_range(-p.torque_limit..p.torque_limit);
        let (m, dm, dv) = lagrangian_terms(psi, &p);
        let forces = [u, -p.c_fric * w, -0.5 * dm * w * w, -dv];
        let oracle = forces.iter().sum::<f64>() / m;
        let scale = forces.iter().map(|f| f.abs()).sum::<f64>() / m;
        let got = plant::dynamics(&PlantState::new(psi, w), u, &p).unwrap();
        worst = worst.max((got - oracle).abs() / scale);
    }
    worst
}

/// Relative drift of kinetic plus potential energy over `steps` frictionless
/// unforced RK4 steps of `dt`.
pub fn plant_energy_drift(steps: usize, dt: f64) -> f64 {
    let p = PlantParams {
        c_fric: 0.0,
        coulomb: 0.0,
        gravity: 9.81,
        ..PlantParams::table_i()
    };
    let energy = |s: &PlantState| {
        let (m, _, _) = lagrangian_terms(s.psi, &p);
        0.5 * m * s.omega * s.omega + plant::potential_energy(s.psi, &p)
    };
    let mut s = PlantState::new(0.0, 3.0 * PI);
    let e0 = energy(&s);
    let mut worst = 0.0f64;
    for _ in 0..steps {
        s = plant::step(&s, 0.0, dt, &p).unwrap();
        worst = worst.max((energy(&s) - e0).abs() / e0.abs());
    }
    worst
}

/// Observed convergence order of the integrator from three step sizes.
pub fn plant_observed_order() -> f64 {
    let p = PlantParams::table_i();
    let run = |h: f64| {
        let n = (1.0 / h).round() as usize;
        let mut s = PlantState::new(0.3, 5.0);
        for _ in 0..n {
            s = plant::step(&s, 1.5, h, &p).unwrap();
        }
        s
    };
    let (a, b, c) = (run(0.02), run(0.01), run(0.005));
    let e1 = (a.omega - b.omega).abs() + (a.psi - b.psi).abs();
    let e2 = (b.omega - c.omega).abs() + (b.psi - c.psi).abs();
    (e1 / e2).log2()
}

// ---------------------------------------------------------------- nn

/// Straightforward forward pass over the documented flat layout.
pub fn naive_forward(spec: &MlpSpec, params: &[f64], x: &[f64]) -> Vec<f64> {
    let mut a = x.to_vec();
    let mut off = 0;
    let nl = spec.widths.len() - 1;
    for l in 0..nl {
        let (nin, nout) = (spec.widths[l], spec.widths[l + 1]);
        let mut z = vec![0.0; nout];
        for (o, zo) in z.iter_mut().enumerate() {
            let mut acc = params[off + nout * nin + o];
            for i in 0..nin {
                acc += params[off + o * nin + i] * a[i];
            }
            *zo = if l + 1 < nl { acc.max(0.0) } else { acc };
        }
        off += nout * nin + nout;
        a = z;
    }
    if spec.head == OutputHead::GaussianPair {
        let half = a.len() / 2;
        for v in &mut a[half..] {
            *v = v.clamp(LOG_STD_MIN, LOG_STD_MAX);
        }
    }
    a
}

pub fn random_spec<R: Rng>(r: &mut R) -> MlpSpec {
    let input = r.random_range(1..6);
    let depth = r.random_range(1..4);
    let hidden: Vec<usize> = (0..depth).map(|_| r.random_range(2..12)).collect();
    if r.random_bool(0.5) {
        MlpSpec::new(input, &hidden, r.random_range(1..4), OutputHead::Linear).unwrap()
    } else {
        MlpSpec::new(input, &hidden, 2 * r.random_range(1..3), OutputHead::GaussianPair).unwrap()
    }
}

/// Largest relative error of the reverse-mode parameter and input gradients
/// of `<c, f(x)>` against central differences, over `nets` random networks.
/// Errors are relative to `max(|analytic|, |numeric|, 1e-3)`.
pub fn nn_gradcheck_max_rel(nets: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let h = 1e-6;
    let mut worst = 0.0f64;
    for _ in 0..nets {
        let spec = random_spec(&mut r);
        let mut net = Mlp::init(spec.clone(), &mut r);
        let x: Vec<f64> = (0..spec.input()).map(|_| r.random_range(-2.0..2.0)).collect();
        let cot: Vec<f64> = (0..spec.output()).map(|_| r.random_range(-1.0..1.0)).collect();
        let objective = |net: &Mlp, x: &[f64]| -> f64 {
            naive_forward(&net.spec, &net.params, x).iter().zip(&cot).map(|(a, b)| a * b).sum()
        };
        let mut cache = ForwardCache::default();
        net.forward_batch(&x, 1, &mut cache).unwrap();
        let mut g = vec![0.0; net.n_params()];
        let mut gx = vec![0.0; spec.input()];
        net.backward(&mut cache, &cot, Some(&mut g), Some(&mut gx)).unwrap();
        let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-3);
        for i in 0..net.n_params() {
            let orig = net.params[i];
            net.params[i] = orig + h;
            let fp = objective(&net, &x);
            net.params[i] = orig - h;
            let fm = objective(&net, &x);
            net.params[i] = orig;
            worst = worst.max(rel(g[i], (fp - fm) / (2.0 * h)));
        }
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp[i] += h;
            let mut xm = x.clone();
            xm[i] -= h;
            worst = worst.max(rel(gx[i], (objective(&net, &xp) - objective(&net, &xm)) / (2.0 * h)));
        }
    }
    worst
}

/// Final loss of Adam on an ill-conditioned separable quadratic.
pub fn adam_quadratic_final_loss(steps: usize) -> f64 {
    let curv = [1.0, 10.0, 100.0, 0.1];
    let centre = [1.0, -2.0, 0.5, 3.0];
    let loss = |x: &[f64]| -> f64 { (0..4).map(|i| 0.5 * curv[i] * (x[i] - centre[i]).powi(2)).sum() };
    let mut x = vec![0.0; 4];
    let mut opt = AdamState::new(4, 0.05);
    for k in 0..steps {
        if k == steps / 2 {
            opt.lr = 0.005;
        }
        let g: Vec<f64> = (0..4).map(|i| curv[i] * (x[i] - centre[i])).collect();
        opt.step(&mut x, &g).unwrap();
    }
    loss(&x)
}

// ---------------------------------------------------------------- sac

fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, n: usize) -> f64 {
    let n = n + n % 2;
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

/// Largest gap between the probability of action intervals computed from
/// the squashed log-density and from the underlying Gaussian in pre-squash
/// coordinates, plus the deviation of the total mass from 1.
pub fn tanh_gaussian_quadrature_error() -> f64 {
    let cases = [(0.0, 0.0), (0.7, -0.5), (-1.3, -1.2), (0.2, 0.4), (2.0, -2.0)];
    let edges = [-0.999, -0.9, -0.5, -0.1, 0.0, 0.3, 0.6, 0.95, 0.999];
    let mut worst = 0.0f64;
    for &(mean, log_std) in &cases {
        let std = f64::exp(log_std);
        let gauss = |u: f64| (-0.5 * ((u - mean) / std).powi(2)).exp() / (std * (2.0 * PI).sqrt());
        for w in edges.windows(2) {
            let squashed = simpson(|a| policy::log_prob(mean, log_std, a).exp(), w[0], w[1], 20_000);
            let direct = simpson(gauss, w[0].atanh(), w[1].atanh(), 20_000);
            worst = worst.max((squashed - direct).abs());
        }
        let total = simpson(|a| policy::log_prob(mean, log_std, a).exp(), -0.999_999, 0.999_999, 200_000);
        worst = worst.max((total - 1.0).abs());
    }
    worst
}

/// Entropy of `tanh(N(mean, std))` by quadrature in pre-squash coordinates.
pub fn squashed_entropy(mean: f64, log_std: f64) -> f64 {
    let std = log_std.exp();
    let gauss = |u: f64| (-0.5 * ((u - mean) / std).powi(2)).exp() / (std * (2.0 * PI).sqrt());
    // -E[log p(a)] = H(gauss) + E[log(1 - tanh(u)^2)]
    let jac = simpson(|u| gauss(u) * (1.0 - u.tanh().powi(2)).ln(), mean - 12.0 * std, mean + 12.0 * std, 40_000);
    0.5 * (2.0 * PI * std::f64::consts::E).ln() + log_std + jac
}

/// One-state continuing task with constant reward under a fixed policy.
/// The soft value has the closed form `C = (r + gamma alpha H) / (1 - gamma)`;
/// target networks set to the constant `C` must map back to `C` in
/// expectation. Returns `(mean target - C, standard error)`.
pub fn soft_bellman_fixed_point_gap() -> (f64, f64) {
    let (gamma, alpha, reward) = (0.9, 0.2, -0.3);
    let hyper = SacHyper {
        gamma,
        init_alpha: alpha,
        actor_hidden: vec![4],
        critic_hidden: vec![4],
        batch_size: 1,
        buffer_capacity: 10,
        ..SacHyper::crrl()
    };
    let mut agent = SacAgent::new(1, hyper, 3).unwrap();
    // Actor: mean 0.4, log_std -0.6 regardless of the input.
    let (mean, log_std) = (0.4, -0.6);
    agent.nets.actor.params.iter_mut().for_each(|p| *p = 0.0);
    let n = agent.nets.actor.n_params();
    agent.nets.actor.params[n - 2] = mean;
    agent.nets.actor.params[n - 1] = log_std;
    let h = squashed_entropy(mean, log_std);
    let c = (reward + gamma * alpha * h) / (1.0 - gamma);
    for t in [&mut agent.nets.target1, &mut agent.nets.target2] {
        t.params.iter_mut().for_each(|p| *p = 0.0);
        let k = t.n_params();
        t.params[k - 1] = c;
    }
    let mut batch = Batch::default();
    let tr = Transition {
        features: vec![1.0],
        action: 0.0,
        gain: 1.0,
        reward,
        next_features: vec![1.0],
        next_gain: 1.0,
        done: false,
    };
    let n_rows = 200_000;
    for _ in 0..n_rows {
        batch.push(&tr);
    }
    let targets = agent.critic_target(&batch).unwrap();
    let mean_t = targets.iter().sum::<f64>() / n_rows as f64;
    let var = targets.iter().map(|t| (t - mean_t).powi(2)).sum::<f64>() / (n_rows - 1) as f64;
    (mean_t - c, (var / n_rows as f64).sqrt())
}

/// Continuous bandit with reward `-k (a - best)^2`: distance of the learned
/// deterministic action from `best` after `updates` updates.
pub fn bandit_error(best: f64, updates: usize, seed: u64) -> f64 {
    let hyper = SacHyper {
        gamma: 0.0,
        lr: 3e-3,
        batch_size: 64,
        buffer_capacity: 10_000,
        actor_hidden: vec![16, 16],
        critic_hidden: vec![32, 32],
        init_alpha: 0.05,
        ..SacHyper::crrl()
    };
    let mut agent = SacAgent::new(1, hyper, seed).unwrap();
    let x = [1.0];
    let mut done_updates = 0;
    while done_updates < updates {
        let (a, _) = agent.act(&x).unwrap();
        agent
            .buffer
            .push(Transition {
                features: x.to_vec(),
                action: a,
                gain: 1.0,
                reward: -4.0 * (a - best).powi(2),
                next_features: x.to_vec(),
                next_gain: 1.0,
                done: true,
            })
            .unwrap();
        if agent.ready() {
            agent.update().unwrap();
            done_updates += 1;
        }
    }
    (agent.act_mean(&x).unwrap() - best).abs()
}

/// Pearson statistic of replay sampling frequencies over `cells` stored
/// transitions and `draws` samples (uniform null, `cells - 1` dof).
pub fn replay_chi_square(cells: usize, draws: usize, seed: u64) -> f64 {
    let mut buf = crrl::sac::ReplayBuffer::new(cells, 1);
    for i in 0..cells {
        buf.push(Transition {
            features: vec![i as f64],
            action: 0.0,
            gain: 1.0,
            reward: 0.0,
            next_features: vec![0.0],
            next_gain: 1.0,
            done: false,
        })
        .unwrap();
    }
    let mut counts = vec![0usize; cells];
    let mut r = rng(seed);
    for i in buf.sample_indices(draws, &mut r).unwrap() {
        counts[i] += 1;
    }
    let expect = draws as f64 / cells as f64;
    counts.iter().map(|&c| (c as f64 - expect).powi(2) / expect).sum()
}

// ---------------------------------------------------------------- stability

use crrl::control::PIGains;
use crrl::residual::TubeMode;
use crrl::stability::{
    adversarial_rollout, certify_with_policy, compute_norms, CertificateInput, CertificateReport,
    LambdaPolicy, RolloutReport, RolloutSpec, Adversary, SystemNorms,
};

pub fn lab_norms(epsilon: f64) -> SystemNorms {
    compute_norms(&PlantParams::table_i(), PI, epsilon, 3600).unwrap()
}

/// A random (gains, tube, reference, initial error) tuple together with
/// its best certificate.
#[derive(Debug, Clone)]
pub struct StressCase {
    pub spec: RolloutSpec,
    pub report: CertificateReport,
}

pub fn random_case<R: Rng>(r: &mut R, adversary: Adversary) -> StressCase {
    let epsilon = r.random_range(0.01..0.5);
    let norms = lab_norms(epsilon);
    let gains = PIGains {
        kp: 10f64.powf(r.random_range(-0.5..1.5)),
        ki: 10f64.powf(r.random_range(-1.0..1.5)),
    };
    let mode = if r.random_bool(0.5) { TubeMode::Relative } else { TubeMode::Absolute };
    let beta = match mode {
        TubeMode::Relative => r.random_range(0.0..0.45),
        TubeMode::Absolute => r.random_range(0.0..0.5),
    };
    let speed = r.random_range(2.0..12.0);
    let amplitude = r.random_range(0.0..3.0);
    let frequency = r.random_range(0.0..10.0);
    let input = CertificateInput {
        kp: gains.kp,
        ki: gains.ki,
        lambda: 1.0,
        beta,
        omega0: speed + amplitude,
        alpha0: amplitude * frequency,
        theta0: 0.0,
        norms,
    };
    let report = certify_with_policy(&input, mode, &LambdaPolicy::default()).unwrap();
    let angle = r.random_range(0.0..std::f64::consts::TAU);
    StressCase {
        spec: RolloutSpec {
            gains,
            mode,
            beta,
            speed,
            amplitude,
            frequency,
            horizon: 20.0,
            dt: 1e-3,
            e0: epsilon.sqrt() * angle.cos(),
            de0: epsilon.sqrt() * angle.sin(),
            adversary,
            record_every: 0,
        },
        report,
    }
}

/// Rolls out `n` random certified cases; returns the reports and the number
/// of candidates drawn.
pub fn certified_rollouts(n: usize, seed: u64) -> (Vec<(StressCase, RolloutReport)>, usize) {
    let mut r = rng(seed);
    let mut out = Vec::with_capacity(n);
    let mut drawn = 0;
    while out.len() < n {
        drawn += 1;
        let case = random_case(&mut r, Adversary::Worst);
        if !case.report.certified() {
            continue;
        }
        let rep = adversarial_rollout(&PlantParams::table_i(), &case.spec, &case.report).unwrap();
        out.push((case, rep));
    }
    (out, drawn)
}

/// Searches relative tubes far beyond the certified range, scoring each
/// against the envelope certified at zero width. Returns the first case
/// that leaves the envelope.
pub fn falsification_search(seed: u64, tries: usize) -> Option<(StressCase, RolloutReport)> {
    let mut r = rng(seed);
    for _ in 0..tries {
        let mut case = random_case(&mut r, Adversary::Worst);
        case.spec.mode = TubeMode::Relative;
        case.spec.beta = 0.0;
        let input = CertificateInput {
            kp: case.spec.gains.kp,
            ki: case.spec.gains.ki,
            lambda: 1.0,
            beta: 0.0,
            omega0: case.spec.speed + case.spec.amplitude,
            alpha0: case.spec.amplitude * case.spec.frequency,
            theta0: 0.0,
            norms: lab_norms(case.spec.e0.hypot(case.spec.de0).powi(2)),
        };
        let report = certify_with_policy(&input, TubeMode::Relative, &LambdaPolicy::default()).unwrap();
        if !report.certified() {
            continue;
        }
        case.report = report;
        case.spec.beta = r.random_range(1.2..3.0);
        case.spec.horizon = 10.0;
        let rep = adversarial_rollout(&PlantParams::table_i(), &case.spec, &case.report).unwrap();
        if rep.violations > 0 {
            return Some((case, rep));
        }
    }
    None
}
