use thiserror::Error;

/// Errors produced by the game model, solvers, and experiment runners.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {msg}")]
    Parse { path: String, msg: String },

    #[error("{path}: dimension mismatch: {msg}")]
    Dimension { path: String, msg: String },

    #[error("{path}: R must be diagonal with strictly positive diagonal entries")]
    NotDiagonalPositive { path: String },

    #[error("{path}: covariance must be symmetric positive semidefinite ({msg})")]
    NotPsd { path: String, msg: String },

    #[error("Nash equilibrium existence check failed at t={t}: cond(Phi_t) = {cond:e}")]
    Existence { t: usize, cond: f64 },

    #[error("closed-loop matrix F_t is numerically singular at t={t}: cond = {cond:e}")]
    SingularClosedLoop { t: usize, cond: f64 },

    #[error("regressor [X_t; 1] is rank deficient at t={t}: rank {rank} < {required}")]
    RankDeficient {
        t: usize,
        rank: usize,
        required: usize,
    },

    #[error("degenerate regressor distribution: sigma_min = {sigma_min:e}")]
    DegenerateRegressor { sigma_min: f64 },

    #[error("constrained least squares did not converge for player {player}, t={t}")]
    ClsNonConvergence { player: usize, t: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn dim(path: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Dimension {
            path: path.into(),
            msg: msg.into(),
        }
    }

    pub(crate) fn parse(path: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            msg: msg.into(),
        }
    }
}
