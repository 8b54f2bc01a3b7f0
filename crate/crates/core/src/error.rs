use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("map is not invertible: {0}")]
    NonInvertible(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("homological equation unsolvable: mean {mean:e} is nonzero")]
    Unsolvable { mean: f64 },

    #[error("resonance at k = {k:?} (divisor {divisor:.3e})")]
    Resonance { k: Vec<i64>, divisor: f64 },

    #[error("inversion error: {0}")]
    Inversion(String),

    #[error("iteration did not converge: {0}")]
    Iteration(String),

    #[error("divergence at stage {stage}: residuals {residuals:?}")]
    Divergence { stage: usize, residuals: Vec<f64> },

    #[error("work budget exceeded; largest completed K = {largest_completed}")]
    Budget { largest_completed: usize },

    #[error("unknown entry: {0}")]
    Lookup(String),

    #[error("range error: {0}")]
    Range(String),
}
