use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A per-group array does not have the size the rest of the model implies.
    /// Groups are numbered from 1; block 0 is the shared parameter.
    #[error("group {group}: {what} has size {found}, expected {expected}")]
    GroupShape { group: usize, what: &'static str, expected: usize, found: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// The gradient step produced NaN/inf, which in practice means the step
    /// size is too large for the design.
    #[error("non-finite gradient at iteration {iteration}, block {block}; step size too large?")]
    Divergence { iteration: usize, block: usize },

    #[error("contraction rate undefined: {0}")]
    RateUndefined(String),

    #[error(
        "cone sampler rejected {attempts} candidates in a row; \
         supply an explicit ray construction for this cone"
    )]
    SamplerExhausted { attempts: usize },

    #[error("group {group} has {samples} samples, fewer than the {folds} folds requested")]
    GroupTooSmall { group: usize, samples: usize, folds: usize },

    #[error("unknown preset `{0}` (expected one of fig_a, fig_b, fig_c, fig_d)")]
    UnknownPreset(String),

    #[error("{path}: line {line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures caused by the numbers themselves (divergence,
    /// non-finite data) rather than by bad input or configuration.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::NonFinite(_) | Error::Divergence { .. } | Error::RateUndefined(_))
    }
}
