//! Experiment orchestration: run-in and training loop, metrics, summaries,
//! sweeps, the standalone baseline and the on-disk artifacts.

pub mod baseline;
pub mod certify;
pub mod config;
pub mod experiment;
pub mod io;
pub mod metrics;
pub mod summary;
pub mod sweep;

pub use baseline::{rl_baseline, BaselineOutput};
pub use certify::{certify_config, Certification};
pub use config::{BetaUnit, ExperimentConfig};
pub use experiment::{
    resolve_gains, run_experiment, run_with_gains, tune_gains, ClosedLoop, EpochLosses, EpochRecord, Phase,
    RunOutput,
};
pub use metrics::{compute_revolution_metrics, RevolutionMetrics, Sample};
pub use summary::{summarize, Summary};
pub use sweep::{sweep, SweepPoint, SweepTable};
