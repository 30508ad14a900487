use thiserror::Error;

/// Error type shared across the whole library.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor / layer shape mismatch.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// Invalid argument or malformed input data.
    #[error("invalid input: {0}")]
    Input(String),

    /// Non-finite values or other numeric failures.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// API contract violated (e.g. non-scalar backward root).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Point-cloud extraction failed (missing ONH coverage, empty crop, ...).
    #[error("extraction failed: {0}")]
    Extraction(String),

    /// Least-squares plane fit degenerate.
    #[error("plane fit failed: {0}")]
    Fit(String),

    /// Dataset split impossible under the grouping constraints.
    #[error("split failed: {0}")]
    Split(String),

    /// Evaluation metric undefined for the given inputs.
    #[error("metric error: {0}")]
    Metric(String),

    /// Checkpoint / model mismatch or unusable model.
    #[error("model error: {0}")]
    Model(String),

    /// Training loss became non-finite.
    #[error("training diverged: {0}")]
    Divergence(String),

    /// A whole experiment arm cannot run (e.g. tissue missing in scans).
    #[error("experiment failed: {0}")]
    Experiment(String),

    /// Bad configuration file or values.
    #[error("config error: {0}")]
    Config(String),

    /// Sample unusable for augmentation (too few points after crop).
    #[error("sample skipped: {0}")]
    SkipSample(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// Malformed file contents.
    #[error("format error: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;
