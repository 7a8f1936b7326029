use thiserror::Error;

use crate::game::lp::LpError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("prosumer {id} is infeasible: {reason}")]
    InfeasibleProsumer { id: String, reason: String },

    #[error("coalition is empty")]
    EmptyCoalition,

    #[error("{what} has {size} players, limit is {limit}")]
    SizeLimit {
        what: &'static str,
        size: usize,
        limit: usize,
    },

    #[error("bisection did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("linear program failed: {0}")]
    Lp(#[from] LpError),

    #[error("D-NEM responses diverge from the centralized optimum: aggregate {dnem} vs {centralized}")]
    DnemMismatch { dnem: f64, centralized: f64 },

    #[error("coalition size {size}, run {run}, hour {hour}: {source}")]
    InRun {
        size: usize,
        run: usize,
        hour: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{}", format_rows(.0))]
    Rows(Vec<RowError>),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// A problem with one line of an input file.
#[derive(Debug, Clone, PartialEq)]
pub struct RowError {
    pub line: u64,
    pub message: String,
}

fn format_rows(rows: &[RowError]) -> String {
    let mut out = format!("{} invalid row(s)", rows.len());
    for row in rows {
        out.push_str(&format!("\n  line {}: {}", row.line, row.message));
    }
    out
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// Whether the error was caused by user-provided data rather than by
    /// a failure inside the solvers.
    pub fn is_input_error(&self) -> bool {
        if let Error::InRun { source, .. } = self {
            return source.is_input_error();
        }
        !matches!(
            self,
            Error::NonConvergence { .. } | Error::Lp(_) | Error::DnemMismatch { .. }
        )
    }
}
