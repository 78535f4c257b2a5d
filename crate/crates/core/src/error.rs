use thiserror::Error;

use crate::ip_solver::PrimalDualPoint;

#[derive(Debug, Error)]
pub enum Error {
    #[error("iterate is not strictly interior: {0}")]
    NotInterior(String),

    #[error("Newton matrix is singular (LICQ/SOSC suspect)")]
    Regularity,

    #[error("no convergence after {iterations} iterations, residual {residual:.3e}")]
    NotConverged {
        iterations: usize,
        residual: f64,
        last: Box<PrimalDualPoint>,
    },

    #[error("line search could not reduce the residual while staying interior (residual {residual:.3e})")]
    LineSearch { residual: f64 },

    #[error("disturbance-to-action Jacobian is rank deficient (condition number {condition:.3e})")]
    RankDeficient { condition: f64 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("KKT structure: {0}")]
    Structure(String),

    #[error("degenerate data: {0}")]
    Degenerate(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("run aborted: {0}")]
    Aborted(String),

    #[error("configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
