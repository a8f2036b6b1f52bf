//! Single degree-of-freedom slider-crank driven by a crank torque.
//!
//! The mechanism is reduced to the crank angle `psi` through the kinematic
//! chain, giving the scalar manipulator equation
//!
//! ```text
//! M(psi) psi'' + 1/2 M'(psi) omega^2 + c omega + g(psi) = u
//! ```
//!
//! with `M` the configuration-dependent effective inertia. The slider moves
//! along the line through the crank pivot (in-line slider-crank).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Gravitational acceleration used when gravity is switched on (m/s^2).
pub const STANDARD_GRAVITY: f64 = 9.81;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantParams {
    /// Crank length (m).
    pub l1: f64,
    /// Connecting rod length (m).
    pub l2: f64,
    /// Crank pivot to crank centre of mass (m).
    pub r1: f64,
    /// Crank pin to rod centre of mass (m).
    pub r2: f64,
    /// Crank inertia about its centre of mass (kg m^2).
    pub i1: f64,
    /// Rod inertia about its centre of mass (kg m^2).
    pub i2: f64,
    pub m1: f64,
    pub m2: f64,
    pub m_slider: f64,
    /// Viscous motor friction (N m s/rad).
    pub c_fric: f64,
    /// Optional Coulomb friction level (N m), smoothed around zero speed.
    pub coulomb: f64,
    /// Symmetric torque saturation (N m).
    pub torque_limit: f64,
    /// Gravitational acceleration acting in the mechanism plane, perpendicular
    /// to the slider axis. Zero for a horizontal rig.
    pub gravity: f64,
}

impl Default for PlantParams {
    fn default() -> Self {
        Self::table_i()
    }
}

impl PlantParams {
    /// Laboratory slider-crank values.
    pub fn table_i() -> Self {
        Self {
            l1: 0.05,
            l2: 0.275,
            r1: 0.33,
            r2: 0.1375,
            i1: 0.0038,
            i2: 0.002193,
            m1: 0.223,
            m2: 0.348,
            m_slider: 0.795,
            c_fric: 0.0047,
            coulomb: 0.0,
            torque_limit: 4.0,
            gravity: 0.0,
        }
    }

    /// Same plant with the two centre-of-mass distances exchanged.
    pub fn with_swapped_com(mut self) -> Self {
        std::mem::swap(&mut self.r1, &mut self.r2);
        self
    }

    /// Crank-only variant: rod and slider massless, so `M` is constant.
    pub fn crank_only(self) -> Self {
        Self {
            m2: 0.0,
            m_slider: 0.0,
            i2: 0.0,
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.l1,
            self.l2,
            self.r1,
            self.r2,
            self.i1,
            self.i2,
            self.m1,
            self.m2,
            self.m_slider,
            self.c_fric,
            self.coulomb,
            self.torque_limit,
            self.gravity,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidPlant("non-finite parameter".into()));
        }
        if self.l1 <= 0.0 {
            return Err(Error::InvalidPlant(format!("l1 = {} must be > 0", self.l1)));
        }
        if self.l2 <= self.l1 {
            return Err(Error::KinematicDomain {
                l1: self.l1,
                l2: self.l2,
            });
        }
        if self.i1 <= 0.0 || self.m1 <= 0.0 {
            return Err(Error::InvalidPlant("crank mass and inertia must be > 0".into()));
        }
        if self.i2 < 0.0 || self.m2 < 0.0 || self.m_slider < 0.0 || self.r1 < 0.0 || self.r2 < 0.0
        {
            return Err(Error::InvalidPlant("negative mass, inertia or distance".into()));
        }
        if self.c_fric < 0.0 || self.coulomb < 0.0 {
            return Err(Error::InvalidPlant("friction must be >= 0".into()));
        }
        if self.torque_limit <= 0.0 {
            return Err(Error::InvalidPlant("torque_limit must be > 0".into()));
        }
        Ok(())
    }

    /// Crank inertia about the pivot.
    pub fn crank_inertia(&self) -> f64 {
        self.i1 + self.m1 * self.r1 * self.r1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PlantState {
    /// Unwrapped crank angle (rad).
    pub psi: f64,
    /// Crank angular velocity (rad/s).
    pub omega: f64,
    pub t: f64,
}

impl PlantState {
    pub fn new(psi: f64, omega: f64) -> Self {
        Self { psi, omega, t: 0.0 }
    }

    pub fn is_finite(&self) -> bool {
        self.psi.is_finite() && self.omega.is_finite() && self.t.is_finite()
    }

    fn check(&self) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFiniteState {
                t: self.t,
                psi: self.psi,
                omega: self.omega,
            })
        }
    }
}

/// Configuration-dependent geometry of the chain, with first and second
/// derivatives with respect to the crank angle.
#[derive(Debug, Clone, Copy)]
struct Chain {
    /// Slider position and its derivatives.
    x: f64,
    dx: f64,
    ddx: f64,
    /// Rod angle derivatives.
    dphi: f64,
    ddphi: f64,
    /// Rod centre of mass velocity Jacobian (per unit crank speed) and its derivative.
    rod_dx: f64,
    rod_ddx: f64,
    rod_dy: f64,
    rod_ddy: f64,
}

fn chain(psi: f64, p: &PlantParams) -> Result<Chain> {
    if p.l2 <= p.l1 || p.l1 <= 0.0 {
        return Err(Error::KinematicDomain { l1: p.l1, l2: p.l2 });
    }
    let k = p.l1 / p.l2;
    let (s, c) = psi.sin_cos();
    // cos of the rod angle; strictly positive because l2 > l1
    let cr = (1.0 - k * k * s * s).sqrt();

    let dphi = -k * c / cr;
    let ddphi = k * s * (cr * cr - k * k * c * c) / (cr * cr * cr);

    // d/dpsi (s c / cr) enters every horizontal Jacobian along the rod
    let sc_over = s * c / cr;
    let d_sc_over = ((c * c - s * s) * cr * cr + k * k * s * s * c * c) / (cr * cr * cr);

    let along = |r: f64| (-p.l1 * s - r * k * k * sc_over, -p.l1 * c - r * k * k * d_sc_over);

    let (dx, ddx) = along(p.l2);
    let (rod_dx, rod_ddx) = along(p.r2);
    let lean = 1.0 - p.r2 / p.l2;

    Ok(Chain {
        x: p.l1 * c + p.l2 * cr,
        dx,
        ddx,
        dphi,
        ddphi,
        rod_dx,
        rod_ddx,
        rod_dy: p.l1 * c * lean,
        rod_ddy: -p.l1 * s * lean,
    })
}

/// Slider position `x(psi)` and `dx/dpsi`.
pub fn slider_kinematics(psi: f64, params: &PlantParams) -> Result<(f64, f64)> {
    let ch = chain(psi, params)?;
    Ok((ch.x, ch.dx))
}

fn inertia_terms(ch: &Chain, p: &PlantParams) -> (f64, f64) {
    let m = p.crank_inertia()
        + p.m2 * (ch.rod_dx * ch.rod_dx + ch.rod_dy * ch.rod_dy)
        + p.i2 * ch.dphi * ch.dphi
        + p.m_slider * ch.dx * ch.dx;
    let dm = 2.0
        * (p.m2 * (ch.rod_dx * ch.rod_ddx + ch.rod_dy * ch.rod_ddy)
            + p.i2 * ch.dphi * ch.ddphi
            + p.m_slider * ch.dx * ch.ddx);
    (m, dm)
}

/// Effective inertia `M(psi)` seen at the crank.
pub fn effective_inertia(psi: f64, params: &PlantParams) -> Result<f64> {
    let ch = chain(psi, params)?;
    Ok(inertia_terms(&ch, params).0)
}

/// Analytic `dM/dpsi`.
pub fn inertia_slope(psi: f64, params: &PlantParams) -> Result<f64> {
    let ch = chain(psi, params)?;
    Ok(inertia_terms(&ch, params).1)
}

/// Generalised gravity torque `g(psi) = dV/dpsi`.
pub fn gravity_torque(psi: f64, params: &PlantParams) -> f64 {
    if params.gravity == 0.0 {
        return 0.0;
    }
    let lean = 1.0 - params.r2 / params.l2;
    params.gravity * psi.cos() * (params.m1 * params.r1 + params.m2 * params.l1 * lean)
}

pub fn potential_energy(psi: f64, params: &PlantParams) -> f64 {
    if params.gravity == 0.0 {
        return 0.0;
    }
    let lean = 1.0 - params.r2 / params.l2;
    params.gravity * psi.sin() * (params.m1 * params.r1 + params.m2 * params.l1 * lean)
}

/// Friction torque opposing motion: viscous plus optional smoothed Coulomb.
pub fn friction_torque(omega: f64, params: &PlantParams) -> f64 {
    let mut f = params.c_fric * omega;
    if params.coulomb > 0.0 {
        f += params.coulomb * (omega / COULOMB_SMOOTHING).tanh();
    }
    f
}

const COULOMB_SMOOTHING: f64 = 1e-2;

/// Saturates a torque command at the plant limit; the flag reports clamping.
pub fn clamp_torque(torque: f64, params: &PlantParams) -> (f64, bool) {
    let lim = params.torque_limit;
    if torque > lim {
        (lim, true)
    } else if torque < -lim {
        (-lim, true)
    } else {
        (torque, false)
    }
}

/// Crank angular acceleration for the (saturated) torque.
pub fn dynamics(state: &PlantState, torque: f64, params: &PlantParams) -> Result<f64> {
    state.check()?;
    if !torque.is_finite() {
        return Err(Error::NonFinite("torque"));
    }
    let (u, _) = clamp_torque(torque, params);
    let ch = chain(state.psi, params)?;
    let (m, dm) = inertia_terms(&ch, params);
    let w = state.omega;
    let accel = (u
        - friction_torque(w, params)
        - 0.5 * dm * w * w
        - gravity_torque(state.psi, params))
        / m;
    if accel.is_finite() {
        Ok(accel)
    } else {
        Err(Error::NonFinite("acceleration"))
    }
}

/// One classical fourth-order Runge-Kutta step with the torque held constant.
pub fn step(state: &PlantState, torque: f64, dt: f64, params: &PlantParams) -> Result<PlantState> {
    if !(dt > 0.0) {
        return Err(Error::Config(format!("dt = {dt} must be > 0")));
    }
    let f = |psi: f64, omega: f64| -> Result<(f64, f64)> {
        let s = PlantState { psi, omega, t: state.t };
        Ok((omega, dynamics(&s, torque, params)?))
    };
    let (k1p, k1w) = f(state.psi, state.omega)?;
    let (k2p, k2w) = f(state.psi + 0.5 * dt * k1p, state.omega + 0.5 * dt * k1w)?;
    let (k3p, k3w) = f(state.psi + 0.5 * dt * k2p, state.omega + 0.5 * dt * k2w)?;
    let (k4p, k4w) = f(state.psi + dt * k3p, state.omega + dt * k3w)?;
    let next = PlantState {
        psi: state.psi + dt / 6.0 * (k1p + 2.0 * k2p + 2.0 * k3p + k4p),
        omega: state.omega + dt / 6.0 * (k1w + 2.0 * k2w + 2.0 * k3w + k4w),
        t: state.t + dt,
    };
    next.check()?;
    Ok(next)
}

/// Holds `torque` for one control period split into `substeps` RK4 steps.
pub fn advance(
    state: &PlantState,
    torque: f64,
    period: f64,
    substeps: usize,
    params: &PlantParams,
) -> Result<PlantState> {
    let n = substeps.max(1);
    let h = period / n as f64;
    let mut s = *state;
    for _ in 0..n {
        s = step(&s, torque, h, params)?;
    }
    Ok(s)
}

/// `1/2 M(psi) omega^2`.
pub fn kinetic_energy(state: &PlantState, params: &PlantParams) -> Result<f64> {
    let m = effective_inertia(state.psi, params)?;
    Ok(0.5 * m * state.omega * state.omega)
}

pub fn total_energy(state: &PlantState, params: &PlantParams) -> Result<f64> {
    Ok(kinetic_energy(state, params)? + potential_energy(state.psi, params))
}
