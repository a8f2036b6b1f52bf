//! Closed-loop stress test of a certificate: the model-based tracking law
//! with its tube driven by a worst-case sign adversary.

use serde::Serialize;

use super::{error_envelope, CertificateReport};
use crate::control::PIGains;
use crate::error::{Error, Result};
use crate::plant::{dynamics, effective_inertia, gravity_torque, inertia_slope, PlantParams, PlantState};
use crate::residual::TubeMode;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Adversary {
    /// Sign that maximises the instantaneous growth of `V`.
    Worst,
    /// Residual held at a constant value in `[-1, 1]`.
    Constant(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RolloutSpec {
    pub gains: PIGains,
    pub mode: TubeMode,
    pub beta: f64,
    /// Reference speed `speed + amplitude sin(frequency t)` (rad/s, rad/s, rad/s).
    pub speed: f64,
    pub amplitude: f64,
    pub frequency: f64,
    pub horizon: f64,
    pub dt: f64,
    /// Initial position and velocity error.
    pub e0: f64,
    pub de0: f64,
    pub adversary: Adversary,
    /// Keep every n-th state in the report (0 keeps none).
    pub record_every: usize,
}

impl RolloutSpec {
    /// `(q_r, dq_r, ddq_r)` at time `t`.
    pub fn reference(&self, t: f64) -> (f64, f64, f64) {
        let w = self.frequency;
        if w == 0.0 {
            return (self.speed * t, self.speed, 0.0);
        }
        let (s, c) = (w * t).sin_cos();
        (
            self.speed * t + self.amplitude / w * (1.0 - c),
            self.speed + self.amplitude * s,
            self.amplitude * w * c,
        )
    }

    /// Reference speed and acceleration bounds `(omega0, alpha0)`.
    pub fn bounds(&self) -> (f64, f64) {
        (
            self.speed.abs() + self.amplitude.abs(),
            self.amplitude.abs() * self.frequency.abs(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RolloutReport {
    pub x0_norm: f64,
    pub max_norm: f64,
    pub final_norm: f64,
    /// Largest `|x(t)| / envelope(t)`.
    pub max_ratio: f64,
    pub violations: usize,
    /// `(t, |x|, envelope)` of the first violation.
    pub first_violation: Option<(f64, f64, f64)>,
    /// `(t, e, de)` samples.
    pub trajectory: Vec<(f64, f64, f64)>,
}

impl RolloutReport {
    pub fn check(&self) -> Result<()> {
        match self.first_violation {
            None => Ok(()),
            Some((t, norm, bound)) => Err(Error::EnvelopeViolation { t, norm, bound }),
        }
    }
}

fn signum0(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Torque of the tracking law plus tube at `(t, q, dq)`.
fn control(spec: &RolloutSpec, lambda: f64, params: &PlantParams, t: f64, q: f64, dq: f64) -> Result<f64> {
    let (qr, dqr, ddqr) = spec.reference(t);
    let (e, de) = (q - qr, dq - dqr);
    let m = effective_inertia(q, params)?;
    let damping = params.c_fric + 0.5 * inertia_slope(q, params)? * dq;
    let feedforward = m * ddqr + damping * dqr + gravity_torque(q, params);
    let (kp, ki) = (spec.gains.kp, spec.gains.ki);
    let feedback = kp * de + ki * e;
    // d V / d de = kp/2 e + lambda M de; the residual enters de' through -1/M.
    let grad = 0.5 * kp * e + lambda * m * de;
    let pi = match spec.adversary {
        Adversary::Constant(p) => p.clamp(-1.0, 1.0),
        Adversary::Worst => match spec.mode {
            TubeMode::Absolute => -signum0(grad),
            TubeMode::Relative => -signum0(feedback * grad),
        },
    };
    Ok(match spec.mode {
        TubeMode::Absolute => feedforward - feedback - spec.beta * pi,
        TubeMode::Relative => feedforward - feedback * (1.0 + spec.beta * pi),
    })
}

/// Integrates the certified loop with RK4 (control re-evaluated at every
/// stage) and compares `|x(t)|` with the envelope of `report` at every step.
/// Saturation and Coulomb friction are disabled: the bound assumes neither.
pub fn adversarial_rollout(
    plant: &PlantParams,
    spec: &RolloutSpec,
    report: &CertificateReport,
) -> Result<RolloutReport> {
    if !(spec.dt > 0.0) || !(spec.horizon >= 0.0) {
        return Err(Error::Config("rollout needs dt > 0 and horizon >= 0".into()));
    }
    let mut params = plant.clone();
    params.torque_limit = f64::MAX;
    params.coulomb = 0.0;
    let lambda = report.lambda;
    let x0_norm = spec.e0.hypot(spec.de0);

    let (qr0, dqr0, _) = spec.reference(0.0);
    let (mut q, mut dq) = (qr0 + spec.e0, dqr0 + spec.de0);
    let steps = (spec.horizon / spec.dt).ceil() as usize;
    let accel = |t: f64, q: f64, dq: f64| -> Result<f64> {
        let u = control(spec, lambda, &params, t, q, dq)?;
        dynamics(&PlantState { psi: q, omega: dq, t }, u, &params)
    };

    let mut out = RolloutReport {
        x0_norm,
        max_norm: x0_norm,
        final_norm: x0_norm,
        max_ratio: 0.0,
        violations: 0,
        first_violation: None,
        trajectory: Vec::new(),
    };
    let observe = |k: usize, t: f64, q: f64, dq: f64, out: &mut RolloutReport| {
        let (qr, dqr, _) = spec.reference(t);
        let (e, de) = (q - qr, dq - dqr);
        let norm = e.hypot(de);
        let bound = error_envelope(t, x0_norm, report);
        out.max_norm = out.max_norm.max(norm);
        out.final_norm = norm;
        out.max_ratio = out.max_ratio.max(norm / bound);
        if norm > bound {
            out.violations += 1;
            if out.first_violation.is_none() {
                out.first_violation = Some((t, norm, bound));
            }
        }
        if spec.record_every > 0 && k % spec.record_every == 0 {
            out.trajectory.push((t, e, de));
        }
    };
    observe(0, 0.0, q, dq, &mut out);
    let h = spec.dt;
    for k in 0..steps {
        let t = k as f64 * h;
        let stage = || -> Result<(f64, f64)> {
            let k1 = (dq, accel(t, q, dq)?);
            let k2 = (dq + 0.5 * h * k1.1, accel(t + 0.5 * h, q + 0.5 * h * k1.0, dq + 0.5 * h * k1.1)?);
            let k3 = (dq + 0.5 * h * k2.1, accel(t + 0.5 * h, q + 0.5 * h * k2.0, dq + 0.5 * h * k2.1)?);
            let k4 = (dq + h * k3.1, accel(t + h, q + h * k3.0, dq + h * k3.1)?);
            Ok((
                q + h / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0),
                dq + h / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1),
            ))
        };
        let next = match stage() {
            Ok(next) => Some(next),
            Err(Error::NonFinite(_) | Error::NonFiniteState { .. }) => None,
            Err(e) => return Err(e),
        };
        match next {
            Some((nq, ndq)) if nq.is_finite() && ndq.is_finite() => {
                q = nq;
                dq = ndq;
            }
            _ => {
                // A blown-up state is the strongest possible violation.
                let bound = error_envelope(t + h, x0_norm, report);
                out.violations += 1;
                out.max_norm = f64::INFINITY;
                out.max_ratio = f64::INFINITY;
                out.final_norm = f64::INFINITY;
                out.first_violation.get_or_insert((t + h, f64::INFINITY, bound));
                break;
            }
        }
        observe(k + 1, t + h, q, dq, &mut out);
    }
    Ok(out)
}
