use thiserror::Error;

/// Errors produced by measure construction, solvers, and samplers.
#[derive(Debug, Error)]
pub enum Error {
    /// A measure, cost matrix, or contrast failed a structural invariant.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A group with zero observations cannot yield an empirical measure.
    #[error("empty sample: group {0} has no observations")]
    EmptySample(usize),

    /// Source and target masses of a transport problem do not match.
    #[error("unbalanced: source mass {source_mass} != target mass {target_mass}")]
    Unbalanced { source_mass: f64, target_mass: f64 },

    /// The cost matrix does not identify measures (zero off-diagonal cost).
    #[error("cost matrix is not identifiable: c[{i}][{j}] = 0 off the diagonal")]
    NotIdentifiable { i: usize, j: usize },

    /// An exact solver could not certify optimality.
    #[error("solver failure: {reason} (residual {residual:.3e})")]
    SolverFailure { reason: String, residual: f64 },

    /// A dimension disagreement between two inputs.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A sampler was asked for a scheme its design does not support.
    #[error("{0}")]
    UnsupportedScheme(String),

    /// The limit functional of the barycenter test requires full support.
    #[error(
        "support mismatch: the pooled estimate assigns zero mass to point {0}; \
         restrict the ground space to the joint support before calling"
    )]
    SupportMismatch(usize),

    /// An iterative projection ran out of its iteration budget.
    #[error("null projection did not converge after {0} rounds")]
    ProjectionDiverged(usize),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::DimensionMismatch(msg.into())
    }

    pub(crate) fn solver(reason: impl Into<String>, residual: f64) -> Self {
        Error::SolverFailure {
            reason: reason.into(),
            residual,
        }
    }
}
