use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid plant parameters: {0}")]
    InvalidPlant(String),

    #[error("kinematic domain error: connecting rod ({l2}) must be longer than crank ({l1})")]
    KinematicDomain { l1: f64, l2: f64 },

    #[error("non-finite simulation state at t = {t}: psi = {psi}, omega = {omega}")]
    NonFiniteState { t: f64, psi: f64, omega: f64 },

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("replay buffer is empty")]
    EmptyBuffer,

    #[error("tube violation at sample {sample}: u_base = {u_base}, u_total = {u_total}, beta = {beta}")]
    TubeViolation {
        sample: usize,
        u_base: f64,
        u_total: f64,
        beta: f64,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("no complete revolution in trajectory slice")]
    NoRevolution,

    #[error("envelope violated at t = {t}: |x| = {norm} > bound {bound}")]
    EnvelopeViolation { t: f64, norm: f64, bound: f64 },

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
