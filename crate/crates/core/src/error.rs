use thiserror::Error;

/// Errors raised by the geometry, series and expansion layers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum FgError {
    #[error("invalid chart: {0}")]
    InvalidChart(String),

    #[error("axis {axis} out of range for a {dim}-dimensional chart")]
    AxisOutOfRange { axis: usize, dim: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("rank mismatch: expected {expected}, found {found}")]
    RankMismatch { expected: usize, found: usize },

    #[error("metric is not positive definite at grid point {point} (pivot {pivot:e})")]
    NotPositiveDefinite { point: usize, pivot: f64 },

    #[error("tensor is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("singular leading block at grid point {point}")]
    SingularLeadingBlock { point: usize },

    #[error("evaluation point s = {0} must be positive")]
    NonPositiveS(f64),

    #[error("indicial order {0} is not admissible")]
    InadmissibleOrder(String),

    #[error("solvability violation at order {order} (log level {log_level}): {what} defect {defect:e} exceeds {tol:e}")]
    Solvability {
        order: usize,
        log_level: usize,
        what: &'static str,
        defect: f64,
        tol: f64,
    },

    #[error("parity violation at order {order} (log level {log_level}): defect {defect:e} exceeds {tol:e}")]
    Parity {
        order: usize,
        log_level: usize,
        defect: f64,
        tol: f64,
    },

    #[error("invalid boundary data: {0}")]
    InvalidBoundaryData(String),

    #[error("finite-difference stencil [{lo}, {hi}] leaves (0, 1)")]
    StencilOutOfRange { lo: f64, hi: f64 },

    #[error("degenerate decay fit: {0}")]
    DegenerateFit(String),
}

impl FgError {
    /// Order and defect carried by engine violations, if any.
    pub fn violation(&self) -> Option<(usize, f64)> {
        match self {
            FgError::Solvability { order, defect, .. } | FgError::Parity { order, defect, .. } => {
                Some((*order, *defect))
            }
            _ => None,
        }
    }
}

pub type Result<T> = std::result::Result<T, FgError>;
