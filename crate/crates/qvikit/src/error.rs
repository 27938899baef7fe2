use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("interval lower end is not a sub-solution: T(lower) drops below lower by {worst:.3e} at node {node}")]
    NotSubSolution { worst: f64, node: usize },

    #[error("interval upper end is not a super-solution: T(upper) exceeds upper by {worst:.3e} at node {node}")]
    NotSuperSolution { worst: f64, node: usize },

    #[error(
        "monotonicity violated in {direction} iteration at step {iteration}: \
         iterate moved against the monotone direction by {worst:.3e} at node {node}"
    )]
    MonotonicityViolated {
        direction: &'static str,
        iteration: usize,
        worst: f64,
        node: usize,
    },

    #[error("fixed-point iteration exceeded {max_iter} iterations (last step size {last_delta:.3e})")]
    MaxIterExceeded { max_iter: usize, last_delta: f64 },

    #[error("ellipticity violated: {0}")]
    EllipticityViolated(String),

    #[error("solver diverged: {0}")]
    SolverDiverged(String),

    #[error("projected Gauss-Seidel exceeded {max_sweeps} sweeps (complementarity residual {residual:.3e})")]
    MaxSweepsExceeded { max_sweeps: usize, residual: f64 },

    #[error("non-convergence: {0}")]
    NonConvergence(String),

    #[error("active-set enumeration failed: {0}")]
    NoValidActiveSet(String),

    #[error("inner solve for the coupled obstacle diverged: {0}")]
    InnerSolveDiverged(String),

    #[error("negativity detected in coupled obstacle state: z = {value:.3e} at node {node}")]
    NegativityDetected { value: f64, node: usize },

    #[error("coupled obstacle dropped below its floor {floor}: value {value:.3e} at node {node}")]
    ObstacleFloorViolated { value: f64, node: usize, floor: f64 },

    #[error("monotone direction violated at sequence index {n}: breach of {worst:.3e} at node {node}")]
    DirectionViolated { n: usize, worst: f64, node: usize },

    #[error("envelope sandwich violated at sequence index {n} ({which}): breach of {worst:.3e}")]
    SandwichViolated { n: usize, which: &'static str, worst: f64 },

    #[error("inadmissible control: {0}")]
    InadmissibleControl(String),

    #[error("search budget exceeded: {0}")]
    BudgetExceeded(String),

    #[error("config parse error: {0}")]
    Parse(String),

    #[error("config validation failed:\n  {}", .violations.join("\n  "))]
    Validation { violations: Vec<String> },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
