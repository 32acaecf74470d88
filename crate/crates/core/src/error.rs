use std::fmt;

/// A config problem addressed by its dotted field path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

impl fmt::Display for FieldError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("depth L = {0} is too small, need L >= 2")]
    InvalidDepth(usize),
    #[error("unknown {kind} `{value}`")]
    UnknownName { kind: &'static str, value: String },
    #[error("layer {layer} out of range 1..={max}")]
    LayerOutOfRange { layer: usize, max: usize },
    #[error("non-finite values at layer {layer}")]
    Overflow { layer: usize },
    #[error("learning-rate override has {got} entries, expected {expected}")]
    OverrideLength { expected: usize, got: usize },
    #[error("network is at step {step}; operation needs the initial state")]
    Stale { step: u64 },
    #[error("calibration failed at layer {layer}: {reason}")]
    Calibration { layer: usize, reason: String },
    #[error("class index {class} out of range for {classes} outputs")]
    InvalidClass { class: usize, classes: usize },
    #[error("target does not fit the loss: {0}")]
    TargetMismatch(String),
    #[error("value {value} at position {index} is not positive")]
    NonPositive { index: usize, value: f64 },
    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("singular value decomposition failed")]
    Svd,
    #[error("covariance is not positive semi-definite")]
    NotPsd,
    #[error("Monte-Carlo estimate diverged: {0}")]
    Divergence(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("batch size {batch} exceeds dataset size {n}")]
    BatchTooLarge { batch: usize, n: usize },
    #[error("bad magic number {found:#x}, expected {expected:#x}")]
    Magic { expected: u32, found: u32 },
    #[error("file truncated while reading {0}")]
    Truncated(&'static str),
    #[error("{images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("invalid config:\n{}", .0.iter().map(|e| format!("  {e}")).collect::<Vec<_>>().join("\n"))]
    Config(Vec<FieldError>),
    #[error("{parameterization} at m = {m}, seed {seed}, step {t}: {source}")]
    InCell { parameterization: String, m: usize, seed: u64, t: u64, source: Box<Error> },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for failures caused by floating-point blow-up rather than bad input.
    pub fn is_numeric(&self) -> bool {
        if let Error::InCell { source, .. } = self {
            return source.is_numeric();
        }
        matches!(
            self,
            Error::Overflow { .. } | Error::Divergence(_) | Error::Svd | Error::NotPsd | Error::Calibration { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
