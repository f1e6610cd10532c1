use std::fmt;

/// Errors raised by the solver stack.
///
/// Constraint violations found while validating an instance are reported as
/// data (see [`crate::model::ValidationReport`]), not through this type.
#[derive(Debug)]
pub enum Error {
    /// Vector or matrix sizes disagree.
    Dimension {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    /// A parameter is outside its admissible range.
    InvalidParameter(String),
    /// The feasible set of a projection or QP is empty.
    Infeasible(String),
    /// An inner QP for one agent hit its iteration limit.
    QpMaxIter { agent: usize, iterations: usize },
    /// An inner QP for one agent was detected infeasible.
    AgentInfeasible { agent: usize },
    /// The coordinator subproblem has no minimizer for the given price.
    Unbounded(String),
    /// The operation needs structure the coupling does not provide.
    Unsupported(String),
    /// The mean-field map is not the scaled gradient of the potential.
    PotentialCondition { max_deviation: f64 },
    /// Scenario files or CLI overrides are malformed.
    Config(String),
    Io(std::io::Error),
    Csv(csv::Error),
    Json(serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Dimension {
                what,
                expected,
                found,
            } => write!(f, "dimension mismatch in {what}: expected {expected}, found {found}"),
            Error::InvalidParameter(msg) => write!(f, "invalid parameter: {msg}"),
            Error::Infeasible(msg) => write!(f, "infeasible: {msg}"),
            Error::QpMaxIter { agent, iterations } => {
                write!(f, "agent {agent}: QP reached max_iter ({iterations})")
            }
            Error::AgentInfeasible { agent } => write!(f, "agent {agent}: QP infeasible"),
            Error::Unbounded(msg) => write!(f, "unbounded subproblem: {msg}"),
            Error::Unsupported(msg) => write!(f, "unsupported: {msg}"),
            Error::PotentialCondition { max_deviation } => write!(
                f,
                "potential condition fails (max deviation {max_deviation:.3e})"
            ),
            Error::Config(msg) => write!(f, "config: {msg}"),
            Error::Io(e) => write!(f, "io: {e}"),
            Error::Csv(e) => write!(f, "csv: {e}"),
            Error::Json(e) => write!(f, "json: {e}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            Error::Csv(e) => Some(e),
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

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Csv(e)
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Json(e)
    }
}

pub(crate) fn check_len(what: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::Dimension {
            what,
            expected,
            found,
        })
    }
}
