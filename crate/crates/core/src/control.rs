//! PI angular-velocity controller, reference signals and the grid-search tuner.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub fn rpm_to_rad_s(rpm: f64) -> f64 {
    rpm * 2.0 * PI / 60.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PIGains {
    pub kp: f64,
    pub ki: f64,
}

impl PIGains {
    pub fn new(kp: f64, ki: f64) -> Result<Self> {
        let g = Self { kp, ki };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.kp >= 0.0 && self.ki >= 0.0) || (self.kp == 0.0 && self.ki == 0.0) {
            return Err(Error::Config(format!(
                "PI gains must be non-negative and not both zero (kp = {}, ki = {})",
                self.kp, self.ki
            )));
        }
        Ok(())
    }

    /// Averagely tuned controller used in the constraint comparisons.
    pub fn average() -> Self {
        Self { kp: 1.4, ki: 0.1 }
    }

    pub fn poor() -> Self {
        Self { kp: 0.2, ki: 0.1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControllerState {
    /// Integrated velocity error (rad), i.e. the negated position error.
    pub e_int: f64,
    /// Last commanded output (N m).
    pub u: f64,
}

/// Integral clamp in rad.
pub const DEFAULT_WINDUP_LIMIT: f64 = 10.0;

/// Velocity-error PI law with a clamped integrator.
///
/// Returns the new output and the updated state; the integral is advanced
/// before it is used, so `u = kp e + ki e_int'`.
pub fn pi_action(
    cs: &ControllerState,
    omega_d: f64,
    omega: f64,
    gains: &PIGains,
    dt: f64,
    windup_limit: f64,
) -> (f64, ControllerState) {
    let err = omega_d - omega;
    let e_int = (cs.e_int + err * dt).clamp(-windup_limit, windup_limit);
    let u = gains.kp * err + gains.ki * e_int;
    (u, ControllerState { e_int, u })
}

/// Angular velocity reference as a function of crank angle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Reference {
    Constant { rpm: f64 },
    /// `amplitude sin(psi) + offset`, both in rpm.
    SineOfAngle { amplitude: f64, offset: f64 },
}

impl Reference {
    pub fn rpm60() -> Self {
        Reference::Constant { rpm: 60.0 }
    }

    pub fn rpm90() -> Self {
        Reference::Constant { rpm: 90.0 }
    }

    pub fn sine() -> Self {
        Reference::SineOfAngle {
            amplitude: 15.0,
            offset: 60.0,
        }
    }

    /// `omega_d` in rad/s.
    pub fn value(&self, psi: f64) -> f64 {
        match *self {
            Reference::Constant { rpm } => rpm_to_rad_s(rpm),
            Reference::SineOfAngle { amplitude, offset } => {
                rpm_to_rad_s(amplitude * psi.sin() + offset)
            }
        }
    }

    /// Bound on `|omega_d|` over all angles (rad/s).
    pub fn max_speed(&self) -> f64 {
        match *self {
            Reference::Constant { rpm } => rpm_to_rad_s(rpm.abs()),
            Reference::SineOfAngle { amplitude, offset } => {
                rpm_to_rad_s(amplitude.abs() + offset.abs())
            }
        }
    }

    /// Bound on `|d omega_d / dt|` along the reference itself (`omega = omega_d`).
    pub fn max_accel(&self) -> f64 {
        match *self {
            Reference::Constant { .. } => 0.0,
            Reference::SineOfAngle { amplitude, .. } => rpm_to_rad_s(amplitude.abs()) * self.max_speed(),
        }
    }

    /// Short label for file names and tables.
    pub fn label(&self) -> String {
        match *self {
            Reference::Constant { rpm } => format!("const{rpm}"),
            Reference::SineOfAngle { amplitude, offset } => format!("sin{amplitude}+{offset}"),
        }
    }
}

pub fn reference_value(reference: &Reference, psi: f64) -> f64 {
    reference.value(psi)
}

/// Inclusive arithmetic range used by the tuner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GainRange {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl GainRange {
    pub fn values(&self) -> Vec<f64> {
        if !(self.step > 0.0) || self.stop < self.start {
            return vec![self.start];
        }
        let n = ((self.stop - self.start) / self.step + 1e-9).floor() as usize;
        // round to a decimal lattice so 0.1 + 0.1 + 0.1 prints and compares as 0.3
        (0..=n)
            .map(|i| ((self.start + i as f64 * self.step) * 1e9).round() / 1e9)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainGrid {
    pub kp: GainRange,
    pub ki: GainRange,
}

impl Default for GainGrid {
    fn default() -> Self {
        Self {
            kp: GainRange {
                start: 0.1,
                stop: 2.6,
                step: 0.1,
            },
            ki: GainRange {
                start: 0.1,
                stop: 1.2,
                step: 0.1,
            },
        }
    }
}

impl GainGrid {
    pub fn single(gains: PIGains) -> Self {
        let pt = |v| GainRange {
            start: v,
            stop: v,
            step: 1.0,
        };
        Self {
            kp: pt(gains.kp),
            ki: pt(gains.ki),
        }
    }

    pub fn points(&self) -> Vec<PIGains> {
        let kps = self.kp.values();
        let kis = self.ki.values();
        kps.iter()
            .flat_map(|&kp| kis.iter().map(move |&ki| PIGains { kp, ki }))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub kp: f64,
    pub ki: f64,
    /// Mean absolute velocity error; `+inf` when the loop diverged.
    pub mae: f64,
    pub stable: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneResult {
    pub best: PIGains,
    pub best_mae: f64,
    pub table: Vec<GridPoint>,
}

/// Exhaustive search over the gain grid.
///
/// `evaluate` runs one closed-loop episode for the given gains and seed and
/// returns the tracking MAE, or `None` if the loop went unstable. Divergent
/// points are kept in the table with `mae = +inf`.
pub fn grid_search_tune<F>(
    points: &[PIGains],
    episodes_per_point: usize,
    seed: u64,
    mut evaluate: F,
) -> Result<TuneResult>
where
    F: FnMut(&PIGains, u64) -> Option<f64>,
{
    if points.is_empty() {
        return Err(Error::Config("empty gain grid".into()));
    }
    let episodes = episodes_per_point.max(1);
    let table: Vec<GridPoint> = points
        .iter()
        .map(|g| {
            let mut total = 0.0;
            let mut stable = true;
            for ep in 0..episodes {
                match evaluate(g, seed.wrapping_add(ep as u64)) {
                    Some(m) if m.is_finite() => total += m,
                    _ => {
                        stable = false;
                        break;
                    }
                }
            }
            GridPoint {
                kp: g.kp,
                ki: g.ki,
                mae: if stable {
                    total / episodes as f64
                } else {
                    f64::INFINITY
                },
                stable,
            }
        })
        .collect();

    let best = table
        .iter()
        .min_by(|a, b| {
            a.mae
                .total_cmp(&b.mae)
                .then(a.kp.total_cmp(&b.kp))
                .then(a.ki.total_cmp(&b.ki))
        })
        .copied()
        .expect("non-empty table");
    if !best.stable {
        return Err(Error::Config("every grid point diverged".into()));
    }
    Ok(TuneResult {
        best: PIGains {
            kp: best.kp,
            ki: best.ki,
        },
        best_mae: best.mae,
        table,
    })
}
