use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("truncation n_max = {n_max} too small (need at least {min})")]
    TruncationTooSmall { n_max: usize, min: usize },

    #[error("quadrature did not converge after {panels} panels (last change {last_change:e})")]
    NonConvergence { panels: usize, last_change: f64 },

    #[error("augmented stationary system is singular")]
    SingularSystem,

    #[error("stationary state unconverged: residual {residual:e}, tail mass {tail_mass:e}")]
    Unconverged { residual: f64, tail_mass: f64 },

    #[error("spectrum anomaly: {0}")]
    SpectrumAnomaly(SpectrumAnomaly),

    #[error("dense eigensolver failed: {0}")]
    EigenFailure(String),

    #[error("time step {dt} too large; stability needs dt < {suggested}")]
    StepTooLarge { dt: f64, suggested: f64 },

    #[error("insufficient decay: {0}")]
    InsufficientDecay(String),

    #[error("invalid sweep configuration: {0}")]
    ConfigInvalid(String),

    #[error("cannot write output {path}: {source}")]
    OutputUnwritable {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub enum SpectrumAnomaly {
    /// No eigenvalue close enough to zero for a stationary mode.
    NoZeroMode { smallest: f64 },
    /// More than one eigenvalue below the zero-mode threshold.
    Degenerate { count: usize },
    /// An eigenvalue with clearly negative real part.
    Unstable { re: f64 },
    /// Only the zero mode exists (1x1 effective spectrum).
    NoSubleading,
}

impl std::fmt::Display for SpectrumAnomaly {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SpectrumAnomaly::NoZeroMode { smallest } => {
                write!(f, "no zero mode (smallest |lambda| = {smallest:e})")
            }
            SpectrumAnomaly::Degenerate { count } => {
                write!(f, "{count} eigenvalues below the zero-mode threshold")
            }
            SpectrumAnomaly::Unstable { re } => write!(f, "eigenvalue with Re = {re:e}"),
            SpectrumAnomaly::NoSubleading => write!(f, "no subleading eigenvalue"),
        }
    }
}
