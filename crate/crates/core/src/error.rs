use thiserror::Error;

/// Errors produced by mesh generation, assembly and solvers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("mesh refinement exceeded the element budget of {budget} (reached {reached})")]
    ElementBudgetExceeded { budget: usize, reached: usize },

    #[error("degenerate element: {0}")]
    DegenerateElement(String),

    #[error("evaluation outside the domain: {0}")]
    EvaluationOutsideDomain(String),

    #[error("root finding failed: {0}")]
    RootFindingFailed(String),

    #[error(
        "solver did not converge within {max_iter} iterations \
         (best residual {best_residual:.3e}, target {tol:.3e})"
    )]
    SolverDidNotConverge {
        max_iter: usize,
        best_residual: f64,
        tol: f64,
    },

    #[error("eigenvalue iteration did not converge: {0}")]
    EigenDidNotConverge(String),

    #[error("study aborted at level {level}: {source}")]
    StudyAborted {
        level: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
