use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid specification: {0}")]
    InvalidSpec(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("incompatible quantizer/dither pairing: {0}")]
    IncompatibleDither(String),

    #[error("invalid radius {0}: must be positive and finite")]
    InvalidRadius(f64),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("anchor point is not in the constraint set (excess {excess:e})")]
    InfeasibleAnchor { excess: f64 },

    #[error("unsupported parameters: {0}")]
    UnsupportedParameters(String),

    #[error("solver diverged at iteration {iteration} (objective {objective})")]
    Divergence { iteration: usize, objective: f64 },

    #[error("rate fit failed: {0}")]
    Fit(String),

    #[error("too few samples: {requested} < {minimum}")]
    TooFewSamples { requested: usize, minimum: usize },

    #[error("trial failed (m = {m}, trial = {trial_id}, seed = {seed}): {source}")]
    Trial {
        m: usize,
        trial_id: u64,
        seed: u64,
        #[source]
        source: Box<Error>,
    },
}
