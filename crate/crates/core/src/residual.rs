//! Composition of base-controller and agent outputs inside an action tube.
//!
//! Absolute mode adds `beta * pi` to the base torque; relative mode adds
//! `(beta * u_base) * pi`, so the admissible band scales with the base output
//! and collapses to a point whenever the base controller outputs zero.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::plant::PlantState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TubeMode {
    Absolute,
    Relative,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResidualConfig {
    pub mode: TubeMode,
    /// Tube width: N m in absolute mode, dimensionless in relative mode.
    pub beta: f64,
    /// Store the scaled residual torque (rather than the raw agent output)
    /// as the replay action and train through the scaling.
    #[serde(default = "default_true")]
    pub scale_during_training: bool,
}

fn default_true() -> bool {
    true
}

impl ResidualConfig {
    pub fn relative(beta: f64) -> Self {
        Self {
            mode: TubeMode::Relative,
            beta,
            scale_during_training: true,
        }
    }

    pub fn absolute(beta: f64) -> Self {
        Self {
            mode: TubeMode::Absolute,
            beta,
            scale_during_training: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return Err(Error::Config(format!("beta = {} must be >= 0", self.beta)));
        }
        Ok(())
    }

    /// Whether the agent's features carry the base output (unscaled training).
    pub fn features_include_base(&self) -> bool {
        !self.scale_during_training
    }

    pub fn compose(&self, u_base: f64, pi_out: f64) -> f64 {
        match self.mode {
            TubeMode::Absolute => compose_absolute(u_base, pi_out, self.beta),
            TubeMode::Relative => compose_relative(u_base, pi_out, self.beta),
        }
    }

    /// Tube edges `(lo, hi)` around `u_base`, computed exactly as the
    /// composition at `pi = -1, +1` so containment checks need no tolerance.
    pub fn tube(&self, u_base: f64) -> (f64, f64) {
        let a = self.compose(u_base, -1.0);
        let b = self.compose(u_base, 1.0);
        if a <= b {
            (a, b)
        } else {
            (b, a)
        }
    }

    pub fn contains(&self, u_base: f64, u_total: f64) -> bool {
        let (lo, hi) = self.tube(u_base);
        lo <= u_total && u_total <= hi
    }

    /// Tube check that reports the offending sample.
    pub fn audit(&self, sample: usize, u_base: f64, u_total: f64) -> Result<()> {
        if self.contains(u_base, u_total) {
            Ok(())
        } else {
            Err(Error::TubeViolation {
                sample,
                u_base,
                u_total,
                beta: self.beta,
            })
        }
    }
}

/// `u + beta_a * pi`.
pub fn compose_absolute(u_base: f64, pi_out: f64, beta_a: f64) -> f64 {
    u_base + beta_a * pi_out
}

/// `u (1 + beta_r pi)`, evaluated as `u + (beta_r u) pi` so the stored scaled
/// action added to `u` reproduces it bit for bit.
pub fn compose_relative(u_base: f64, pi_out: f64, beta_r: f64) -> f64 {
    u_base + (beta_r * u_base) * pi_out
}

/// Fixed normalisation constants for the agent's observation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureScales {
    /// Divides omega; `2 * max |omega_d|`.
    pub omega: f64,
    /// Divides the base torque; the plant torque limit.
    pub torque: f64,
}

impl FeatureScales {
    pub fn new(max_reference_speed: f64, torque_limit: f64) -> Self {
        Self {
            omega: 2.0 * max_reference_speed,
            torque: torque_limit,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureVector {
    pub omega: f64,
    pub sin_psi: f64,
    pub cos_psi: f64,
    pub u_base: Option<f64>,
}

impl FeatureVector {
    pub fn len(&self) -> usize {
        if self.u_base.is_some() {
            4
        } else {
            3
        }
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn write_to(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(&[self.omega, self.sin_psi, self.cos_psi]);
        if let Some(u) = self.u_base {
            out.push(u);
        }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(4);
        self.write_to(&mut v);
        v
    }
}

pub fn feature_dim(include_base: bool) -> usize {
    if include_base {
        4
    } else {
        3
    }
}

/// Observation `y(s)`: normalised speed and the angle through sine and cosine.
pub fn feature_map(
    state: &PlantState,
    u_base: f64,
    scales: &FeatureScales,
    include_base: bool,
) -> FeatureVector {
    let (s, c) = state.psi.sin_cos();
    FeatureVector {
        omega: state.omega / scales.omega,
        sin_psi: s,
        cos_psi: c,
        u_base: include_base.then(|| u_base / scales.torque),
    }
}

/// Replay representation of one agent action.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StoredAction {
    /// Value written to the replay buffer.
    pub value: f64,
    /// `d value / d pi` at this state; lets the actor update differentiate
    /// through the scaling.
    pub gain: f64,
}

pub fn training_action(cfg: &ResidualConfig, u_base: f64, pi_out: f64) -> StoredAction {
    let gain = action_gain(cfg, u_base);
    let value = if cfg.scale_during_training {
        gain * pi_out
    } else {
        pi_out
    };
    StoredAction { value, gain }
}

/// Scaling from agent output to stored action at a state with base output `u_base`.
pub fn action_gain(cfg: &ResidualConfig, u_base: f64) -> f64 {
    if !cfg.scale_during_training {
        return 1.0;
    }
    match cfg.mode {
        TubeMode::Absolute => cfg.beta,
        TubeMode::Relative => cfg.beta * u_base,
    }
}

/// Inverse of [`training_action`]: the applied (pre-saturation) torque.
pub fn reconstruct_total(cfg: &ResidualConfig, u_base: f64, stored: f64) -> f64 {
    if cfg.scale_during_training {
        u_base + stored
    } else {
        cfg.compose(u_base, stored)
    }
}
