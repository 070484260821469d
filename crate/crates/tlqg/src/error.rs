use std::fmt;

/// Errors surfaced by the planning and simulation pipeline.
#[derive(Debug)]
pub enum Error {
    /// A range fell below the degeneracy threshold (robot on top of a landmark).
    DegenerateGeometry {
        landmark: String,
        range: f64,
    },
    /// A matrix that must be positive definite failed its Cholesky factorization.
    NotPositiveDefinite(&'static str),
    /// Arguments violate a documented precondition.
    InvalidArgument(String),
    /// Scenario config failed validation; every violation is listed.
    Config(Vec<String>),
    /// A plan artifact could not be parsed or is inconsistent with the config.
    PlanArtifact(String),
    /// Too many Monte Carlo rollouts aborted for the statistics to be valid.
    StatisticalValidity {
        aborted: usize,
        total: usize,
    },
    Io(std::io::Error),
    Json(serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::DegenerateGeometry { landmark, range } => write!(
                f,
                "degenerate geometry: range to landmark {landmark} is {range:.3e} m (< 1e-9 m)"
            ),
            Error::NotPositiveDefinite(what) => {
                write!(f, "{what} is not positive definite")
            }
            Error::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            Error::Config(violations) => {
                writeln!(f, "scenario config is invalid:")?;
                for v in violations {
                    writeln!(f, "  - {v}")?;
                }
                Ok(())
            }
            Error::PlanArtifact(msg) => write!(f, "plan artifact error: {msg}"),
            Error::StatisticalValidity { aborted, total } => write!(
                f,
                "{aborted} of {total} rollouts aborted (> 1% budget); statistics are invalid"
            ),
            Error::Io(e) => write!(f, "io error: {e}"),
            Error::Json(e) => write!(f, "json error: {e}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            Error::Json(e) => Some(e),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Json(e)
    }
}
