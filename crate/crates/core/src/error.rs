use thiserror::Error;

/// Errors produced by the numerical core.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parameter point {point:?} lies outside the parameter domain")]
    OutsideDomain { point: Vec<f64> },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("sample set is empty")]
    EmptySampleSet,

    #[error("at least {required} samples are needed, got {got}")]
    TooFewSamples { required: usize, got: usize },

    #[error("matrix is not positive definite ({context})")]
    NotPositiveDefinite { context: String },

    #[error("risk region has no hits among {trials} trial samples; increase the trial count")]
    EmptyRiskRegion { trials: usize },

    #[error(
        "acceptance-rejection drew {trials} candidates but accepted only {accepted} of {target}; \
         the surrogate may be stale or the region probability ({probability:.3e}) too small"
    )]
    MaxTrialsExceeded {
        trials: u64,
        accepted: usize,
        target: usize,
        probability: f64,
    },

    #[error(
        "iteration {iteration}: estimated threshold {threshold:.6e} exceeds the sampled VaR {t_next:.6e} \
         after resampling with {trial_count} trial samples"
    )]
    ThresholdInconsistent {
        iteration: usize,
        threshold: f64,
        t_next: f64,
        trial_count: usize,
    },

    #[error("reduced basis is empty")]
    EmptyBasis,

    #[error("tensor quadrature in {dim} dimensions is refused (at most 3)")]
    QuadratureDimension { dim: usize },

    #[error("{what} did not converge within {iterations} iterations (residual {residual:.3e})")]
    NonConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("iteration {iteration}: {source}")]
    AtIteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("cache i/o: {0}")]
    Io(#[from] std::io::Error),

    #[error("cache format: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn at(self, iteration: usize) -> Self {
        match self {
            e @ Error::AtIteration { .. } => e,
            e => Error::AtIteration {
                iteration,
                source: Box::new(e),
            },
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
