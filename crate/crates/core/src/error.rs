use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("nonpositive coefficient {value} at node ({i}, {j})")]
    Coefficient { i: usize, j: usize, value: f64 },

    #[error("non-finite value of {law} at r = {at}")]
    LawEvaluation { law: String, at: f64 },

    #[error("non-finite value at node {node}")]
    FieldEvaluation { node: usize },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("linear solve stalled after {iterations} iterations, relative residual {residual:e}")]
    LinearSolve { iterations: usize, residual: f64 },

    #[error("Newton iteration did not converge in {iterations} iterations, residual {residual:e}")]
    Newton { iterations: usize, residual: f64 },

    #[error("loss of parabolicity: phi'({value}) = {slope} below delta_phi = {delta}")]
    Parabolicity { value: f64, slope: f64, delta: f64 },

    #[error("step {step}: {source}")]
    Step {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("probe {probe}: {source}")]
    Probe {
        probe: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("solution diverged at step {step}")]
    Divergence { step: usize },

    #[error("lookup failed: {0}")]
    Lookup(String),

    #[error("checkpoint storage of {needed} bytes exceeds the limit of {limit} bytes; use fewer time steps or a coarser grid")]
    Resource { needed: usize, limit: usize },

    #[error("line search stalled at iteration {iteration} after {backtracks} backtracks (J = {cost:e}, |grad| = {grad_norm:e})")]
    Stall {
        iteration: usize,
        backtracks: usize,
        cost: f64,
        grad_norm: f64,
    },

    #[error("degenerate estimate: {0}")]
    Degenerate(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("malformed data: {0}")]
    Format(String),
}

impl Error {
    /// True for errors caused by bad input (configuration, parameters,
    /// shapes) rather than by a numerical failure of the model.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::Parameter(_) | Error::Lookup(_) | Error::Format(_)
        )
    }

    pub(crate) fn at_step(self, step: usize) -> Error {
        Error::Step {
            step,
            source: Box::new(self),
        }
    }
}
