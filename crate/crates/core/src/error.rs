use thiserror::Error;

/// Errors raised anywhere in the probing, identification and detection pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown primitive polynomial `{id}` for order {order}")]
    UnknownPolynomial { order: u32, id: String },
    #[error("polynomial `{id}` is not primitive: sequence repeats after {period} steps (expected {expected})")]
    NonPrimitivePolynomial { id: String, period: usize, expected: usize },
    #[error("PRBS order {0} out of range (2..=20)")]
    OrderOutOfRange(u32),
    #[error("invalid probing configuration: {0}")]
    InvalidProbingConfig(String),
    #[error("PRBS order {prbs} does not match probing configuration order {config}")]
    OrderMismatch { prbs: u32, config: u32 },
    #[error("sample interval mismatch: {0} s vs {1} s")]
    SampleIntervalMismatch(f64, f64),
    #[error("insufficient samples: need {needed}, have {available}")]
    InsufficientSamples { needed: usize, available: usize },
    #[error("filter cutoff {cutoff_hz} Hz must lie in (0, {nyquist_hz}) Hz")]
    CutoffOutOfRange { cutoff_hz: f64, nyquist_hz: f64 },
    #[error("requested {requested} Markov parameters but one period holds only {available}")]
    MarkovLengthTooLarge { requested: usize, available: usize },
    #[error("need at least {needed} Markov parameters, got {got}")]
    TooFewMarkovParameters { needed: usize, got: usize },
    #[error("invalid tolerance {0}: must lie in (0, 1)")]
    InvalidTolerance(f64),
    #[error("frequency {omega} rad/s exceeds the Nyquist limit {nyquist} rad/s")]
    BeyondNyquist { omega: f64, nyquist: f64 },
    #[error("singular resolvent at {omega} rad/s")]
    SingularResolvent { omega: f64 },
    #[error("invalid frequency grid: {0}")]
    InvalidGrid(String),
    #[error("non-finite frequency response value")]
    NonFinite,
    #[error(
        "sample spacing mismatch: {0} s vs {1} s; systems identified at different bit durations are not comparable"
    )]
    DeltaMismatch(f64, f64),
    #[error("invalid network: {0}")]
    InvalidNetwork(String),
    #[error("singular nodal matrix: floating subnetwork {buses:?} has no reference path")]
    FloatingSubnetwork { buses: Vec<String> },
    #[error("singular nodal matrix at {omega} rad/s")]
    SingularAtFrequency { omega: f64 },
    #[error("unknown plant {0}")]
    UnknownPlant(u8),
    #[error("unknown breaker {0}")]
    UnknownBreaker(u8),
    #[error("invalid load scale factor {0}: must be positive")]
    InvalidScale(f64),
    #[error("schedule error: {0}")]
    Schedule(String),
    #[error("incomplete baseline library: missing state(s) {0:?}")]
    IncompleteLibrary(Vec<u8>),
    #[error("baseline library mismatch: {0}")]
    LibraryMismatch(String),
    #[error("Monte-Carlo run {run} failed: {source}")]
    RunFailed {
        run: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable category, used for CLI exit reporting.
    pub fn category(&self) -> &'static str {
        match self {
            Error::UnknownPolynomial { .. }
            | Error::NonPrimitivePolynomial { .. }
            | Error::OrderOutOfRange(_)
            | Error::InvalidProbingConfig(_)
            | Error::OrderMismatch { .. } => "signal",
            Error::SampleIntervalMismatch(..)
            | Error::InsufficientSamples { .. }
            | Error::CutoffOutOfRange { .. }
            | Error::MarkovLengthTooLarge { .. } => "probe",
            Error::TooFewMarkovParameters { .. }
            | Error::InvalidTolerance(_)
            | Error::BeyondNyquist { .. }
            | Error::SingularResolvent { .. } => "sysid",
            Error::InvalidGrid(_) | Error::NonFinite | Error::DeltaMismatch(..) => "nugap",
            Error::InvalidNetwork(_)
            | Error::FloatingSubnetwork { .. }
            | Error::SingularAtFrequency { .. }
            | Error::UnknownPlant(_)
            | Error::UnknownBreaker(_)
            | Error::InvalidScale(_)
            | Error::Schedule(_) => "netsim",
            Error::IncompleteLibrary(_) | Error::LibraryMismatch(_) => "detector",
            Error::RunFailed { .. } => "harness",
            Error::Io { .. } | Error::Json(_) => "io",
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
