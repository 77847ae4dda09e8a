use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value for {what}: {value}")]
    NonFinite { what: &'static str, value: f64 },

    #[error("action {0} outside [{min}, {max}]", min = crate::sim::Action::MIN, max = crate::sim::Action::MAX)]
    ActionOutOfBounds(f64),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("input has {got} entries, network expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("unknown scenario `{name}` (valid: {valid})")]
    UnknownScenario { name: String, valid: String },

    #[error("replay buffer is empty")]
    EmptyBuffer,

    #[error("training diverged at step {step}: td loss {loss}")]
    Divergence { step: usize, loss: f64 },

    #[error("model file: {0}")]
    ModelFormat(String),

    #[error("model file version {found} is not supported (expected {expected})")]
    ModelVersion { found: u32, expected: u32 },

    #[error("model mismatch: {0}")]
    ModelMismatch(String),

    #[error("rollout ended before termination with residual discount {residual:e}")]
    RolloutTooShort { residual: f64 },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub(crate) fn ensure_finite(what: &'static str, value: f64) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFinite { what, value })
    }
}
