use thiserror::Error;

/// Errors produced by configuration validation, simulation, training, and I/O.
#[derive(Debug, Error)]
pub enum SimError {
    /// A sub-loop rate does not divide the master rate.
    #[error("rate {rate} Hz does not divide master rate {master} Hz (task `{task}`)")]
    RateNotDivisible {
        task: &'static str,
        rate: u32,
        master: u32,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// Plant state left the configured bounds; the partial log up to the
    /// aborting step is retained for diagnosis.
    #[error("numerical divergence at t = {t:.4} s: {quantity} = {value:.3e} exceeds bound {bound:.3e}")]
    Diverged {
        t: f64,
        quantity: &'static str,
        value: f64,
        bound: f64,
        partial: Box<crate::runlog::RunLog>,
    },

    #[error("filter cutoff {cutoff} Hz must lie in (0, {nyquist}) Hz at sample rate {sample_rate} Hz")]
    InvalidCutoff {
        cutoff: f64,
        sample_rate: f64,
        nyquist: f64,
    },

    #[error("feature dimension mismatch: model expects {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("training diverged: {0}")]
    TrainingDiverged(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("model checkpoint error: {0}")]
    Checkpoint(String),

    #[error("unknown estimator preset `{0}`")]
    UnknownPreset(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("config parse error: {0}")]
    TomlParse(#[from] toml::de::Error),

    #[error("config serialize error: {0}")]
    TomlSer(#[from] toml::ser::Error),
}

impl SimError {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        SimError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, SimError>;
