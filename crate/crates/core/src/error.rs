use thiserror::Error;

/// A scanned `(t, |a(t)|/max|a|, |b(t)|/max|b|)` profile.
pub type DecayProfile = Vec<(f64, f64, f64)>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid spectral density: {0}")]
    InvalidDensity(String),

    #[error("occupation undefined: {0}")]
    Domain(String),

    #[error("bath correlations have not decayed below {threshold} within t_max = {t_max}")]
    MemoryExceedsHorizon {
        threshold: f64,
        t_max: f64,
        profile: DecayProfile,
    },

    #[error("chain of length {requested} requested from {available} discretized modes")]
    ChainTooLong { requested: usize, available: usize },

    #[error("free-fermion backend requires V = 0 (got V = {0}); interacting system requires tebd or dense")]
    InteractingSystem(f64),

    #[error("singular Green's function at ω = {0}")]
    SingularGreen(f64),

    #[error("frequency quadrature did not converge (estimated error {estimate:.3e}); refinement trace: {trace:?}")]
    QuadratureNonConvergence { estimate: f64, trace: Vec<(f64, f64, f64)> },

    #[error("dense oracle limited to 12 modes, got {0}")]
    TooManyModes(usize),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid schedule: {0}")]
    Schedule(String),

    #[error("cycle {cycle}: {source}")]
    Cycle {
        cycle: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("timeline inconsistency at t = {t} between t1 = {t1_a} and t1 = {t1_b} (deviation {deviation:.3e})")]
    Inconsistent {
        t: f64,
        t1_a: f64,
        t1_b: f64,
        deviation: f64,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("linear algebra failure: {0}")]
    LinAlg(String),
}

pub type Result<T> = std::result::Result<T, Error>;
