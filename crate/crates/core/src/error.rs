use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    Dimension {
        context: &'static str,
        expected: String,
        found: String,
    },

    #[error("transfer function evaluated at a pole (lambda = {re:+.6}{im:+.6}i)")]
    EvaluationAtPole { re: f64, im: f64 },

    #[error("feedback interconnection is not well posed")]
    IllPosedLoop,

    #[error("impulse response overflowed after {taps} taps")]
    Overflow { taps: usize },

    #[error("Riccati iteration did not converge for the {pair} pair after {iterations} iterations")]
    Infeasible { pair: &'static str, iterations: usize },

    #[error("unstable system: {what} has spectral radius {radius:.6}")]
    Unstable { what: &'static str, radius: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("H2 tail energy {tail:.3e} above threshold after refinement cap")]
    TailEnergy { tail: f64 },

    #[error("config: {0}")]
    Config(String),

    #[error("snapshot: {0}")]
    Snapshot(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn dim(context: &'static str, expected: impl ToString, found: impl ToString) -> Self {
        Error::Dimension {
            context,
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }
}
