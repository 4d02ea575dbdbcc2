use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("unknown channel `{0}`")]
    UnknownChannel(String),

    #[error("duplicate channel name `{0}`")]
    DuplicateChannel(String),

    #[error("interconnection is not well posed (I - D_yu D_K is singular)")]
    IllPosed,

    #[error("system is not stable (spectral abscissa {0:e})")]
    Unstable(f64),

    #[error("resolvent is singular at omega = {0}")]
    SingularResolvent(f64),

    #[error("bisection could not bracket a feasible value: {0}")]
    NoBracket(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("cholesky factorization failed: {0}")]
    Cholesky(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid confidence budget: log det term minus 2 log(delta) = {0}")]
    InvalidBudget(f64),

    #[error("posterior variance {0:e} is negative beyond round-off")]
    NegativeVariance(f64),

    #[error("sector [{kappa1}, {kappa2}] does not contain zero")]
    SectorSign { kappa1: f64, kappa2: f64 },

    #[error("lmi builder: {0}")]
    Builder(String),

    #[error("lmi problem is infeasible")]
    Infeasible,

    #[error("lmi problem is unbounded")]
    Unbounded,

    #[error("solver failure: {0}")]
    Solver(String),

    #[error("controller reconstruction failed: {0}")]
    Reconstruction(String),

    #[error("simulation diverged at t = {time}")]
    Diverged { time: f64 },

    #[error("algebraic loop through the nonlinearity did not converge at t = {time}")]
    AlgebraicLoop { time: f64 },

    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("assumption violated: {0}")]
    Assumption(String),

    #[error("config: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
