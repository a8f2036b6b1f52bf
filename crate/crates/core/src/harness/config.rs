use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::control::{GainGrid, PIGains, Reference, DEFAULT_WINDUP_LIMIT};
use crate::error::{Error, Result};
use crate::plant::PlantParams;
use crate::residual::{ResidualConfig, TubeMode};
use crate::sac::SacHyper;
use crate::stability::LambdaPolicy;

/// How the tube width is given in the config.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BetaUnit {
    /// `beta` is used as is (N m for absolute tubes).
    #[default]
    Native,
    /// Absolute tubes only: `beta` is a fraction of the largest base torque
    /// observed over the last run-in epoch.
    PeakBaseFraction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResidualSection {
    pub mode: TubeMode,
    pub beta: f64,
    pub beta_unit: BetaUnit,
    pub scale_during_training: bool,
}

impl Default for ResidualSection {
    fn default() -> Self {
        Self {
            mode: TubeMode::Relative,
            beta: 0.2,
            beta_unit: BetaUnit::Native,
            scale_during_training: true,
        }
    }
}

impl ResidualSection {
    /// Residual config with the tube width resolved against the peak base torque.
    pub fn resolve(&self, peak_base: f64) -> ResidualConfig {
        let beta = match (self.mode, self.beta_unit) {
            (TubeMode::Absolute, BetaUnit::PeakBaseFraction) => self.beta * peak_base,
            _ => self.beta,
        };
        ResidualConfig {
            mode: self.mode,
            beta,
            scale_during_training: self.scale_during_training,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaseSection {
    pub kp: f64,
    pub ki: f64,
    /// Replace `kp`/`ki` by the grid-search optimum for the configured reference.
    pub tune: bool,
    pub grid: GainGrid,
    pub windup_limit: f64,
    /// Revolutions discarded before a tuning episode is scored.
    pub tune_transient_revolutions: usize,
    /// Revolutions scored per tuning episode.
    pub tune_revolutions: usize,
}

impl Default for BaseSection {
    fn default() -> Self {
        Self {
            kp: 1.4,
            ki: 0.1,
            tune: false,
            grid: GainGrid::default(),
            windup_limit: DEFAULT_WINDUP_LIMIT,
            tune_transient_revolutions: 2,
            tune_revolutions: 10,
        }
    }
}

impl BaseSection {
    pub fn gains(&self) -> PIGains {
        PIGains {
            kp: self.kp,
            ki: self.ki,
        }
    }
}

/// Settings of the imitation phase that precedes standalone SAC.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainSection {
    /// Gradient steps of the imitation regression.
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub log_std: f64,
    /// Std of Gaussian torque noise injected while the expert is logged, so
    /// the demonstrations cover off-reference speeds (N m).
    pub demo_noise: f64,
}

impl Default for PretrainSection {
    fn default() -> Self {
        Self {
            steps: 20_000,
            batch: 128,
            lr: 1e-3,
            log_std: -3.0,
            demo_noise: 0.3,
        }
    }
}

/// Auxiliary inputs of the gain certificate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StabilitySection {
    /// Half-width of the angle set over which the model norms are taken (rad).
    pub eta: f64,
    /// Bound on the squared initial error norm.
    pub epsilon: f64,
    pub theta0: f64,
    pub norm_samples: usize,
    pub lambda: LambdaPolicy,
    /// Bisection tolerance of the tube-width search.
    pub beta_tol: f64,
}

impl Default for StabilitySection {
    fn default() -> Self {
        Self {
            eta: std::f64::consts::PI,
            epsilon: 0.1,
            theta0: 0.0,
            norm_samples: 3600,
            lambda: LambdaPolicy::default(),
            beta_tol: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub plant: PlantParams,
    pub base: BaseSection,
    pub residual: ResidualSection,
    pub sac: SacHyper,
    pub reference: Reference,
    pub seeds: Vec<u64>,
    pub epochs_total: usize,
    pub runin_epochs: usize,
    pub samples_per_epoch: usize,
    /// Control period (s).
    pub dt: f64,
    /// RK4 steps per control period.
    pub substeps: usize,
    /// PI-only simulated time before epoch 0 so the integrator reaches its
    /// periodic regime (s).
    pub settle_time: f64,
    /// Std of additive Gaussian torque noise (N m); 0 disables it.
    pub torque_noise: f64,
    /// Std of additive Gaussian noise on the measured speed (rad/s).
    pub omega_noise: f64,
    /// Multiplies `-1/2 (omega_d - omega)^2` before it reaches the agent.
    pub reward_scale: f64,
    /// Fraction of epochs at the end that form the convergence window.
    pub convergence_fraction: f64,
    pub pretrain: PretrainSection,
    pub stability: StabilitySection,
    pub output_dir: PathBuf,
    /// Write the per-sample log next to the epoch CSV.
    pub sample_log: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            plant: PlantParams::table_i(),
            base: BaseSection::default(),
            residual: ResidualSection::default(),
            sac: SacHyper::crrl(),
            reference: Reference::rpm60(),
            seeds: vec![0, 1, 2, 3, 4],
            epochs_total: 300,
            runin_epochs: 65,
            samples_per_epoch: 500,
            dt: 0.01,
            substeps: 10,
            settle_time: 30.0,
            torque_noise: 0.0,
            omega_noise: 0.0,
            reward_scale: 1000.0,
            convergence_fraction: 0.2,
            pretrain: PretrainSection::default(),
            stability: StabilitySection::default(),
            output_dir: PathBuf::from("runs"),
            sample_log: false,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.plant.validate()?;
        self.sac.validate()?;
        if !self.base.tune {
            self.base.gains().validate()?;
        }
        if !(self.residual.beta >= 0.0) {
            return Err(Error::Config("residual.beta must be >= 0".into()));
        }
        if self.runin_epochs >= self.epochs_total {
            return Err(Error::Config(format!(
                "runin_epochs ({}) must be < epochs_total ({})",
                self.runin_epochs, self.epochs_total
            )));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        if self.samples_per_epoch == 0 || !(self.dt > 0.0) || self.substeps == 0 {
            return Err(Error::Config(
                "samples_per_epoch, dt and substeps must be positive".into(),
            ));
        }
        if !(self.convergence_fraction > 0.0 && self.convergence_fraction <= 1.0) {
            return Err(Error::Config("convergence_fraction must be in (0, 1]".into()));
        }
        if self.torque_noise < 0.0 || self.omega_noise < 0.0 {
            return Err(Error::Config("noise levels must be >= 0".into()));
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let value: toml::Table =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Self::from_table(value)
    }

    fn from_table(table: toml::Table) -> Result<Self> {
        let cfg: Self = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    /// Loads a config (or the defaults) and applies `key=value` overrides,
    /// where `key` is a dotted path such as `residual.beta` or `sac.lr`.
    pub fn load_with_overrides(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = match path {
            Some(p) => toml::from_str::<toml::Table>(&std::fs::read_to_string(p)?)
                .map_err(|e| Error::Config(e.to_string()))?,
            None => toml::Table::try_from(Self::default())
                .map_err(|e| Error::Config(e.to_string()))?,
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg = Self::from_table(table)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Copy of this config with dotted `key=value` overrides applied.
    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self> {
        let mut table = toml::Table::try_from(self).map_err(|e| Error::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg = Self::from_table(table)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn convergence_epochs(&self) -> usize {
        ((self.epochs_total as f64 * self.convergence_fraction).round() as usize).max(1)
    }
}

/// Sets `a.b.c = value` in a TOML table. The value is parsed as a TOML
/// literal, falling back to a bare string.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
    let key = key.trim();
    let raw = raw.trim();
    let value = parse_literal(raw);
    let parts: Vec<&str> = key.split('.').collect();
    let (last, path) = parts.split_last().expect("split yields at least one part");
    let mut node = table;
    for p in path {
        let entry = node
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("`{p}` in `{key}` is not a table")))?;
    }
    node.insert(last.to_string(), value);
    Ok(())
}

fn parse_literal(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match toml::from_str::<toml::Table>(&doc) {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}
