use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("unsupported dimension {0}")]
    UnsupportedDimension(u32),

    /// A vanishing denominator where positive conductivities forbid one.
    #[error("degenerate configuration: {0}")]
    Degenerate(String),

    #[error("no convergence after {iterations} iterations, residual sup {residual_sup:e}")]
    Convergence {
        iterations: usize,
        residual_sup: f64,
        residuals: Vec<f64>,
    },

    #[error("invalid materials: {0}")]
    InvalidMaterials(String),

    #[error("infeasible fractions at s = {s}: {bound}")]
    InfeasibleFractions { s: f64, bound: String },

    #[error("no feasible alpha: lower bound {lo} is not below upper bound {hi}")]
    NoFeasibleAlpha { lo: f64, hi: f64 },

    #[error("alpha = {alpha} lies outside the feasible interval ({lo}, {hi})")]
    AlphaOutOfRange { alpha: f64, lo: f64, hi: f64 },

    #[error("no feasible gamma at s = {s}: lower bound {lower} is not below upper bound {upper}")]
    InfeasibleGamma { s: f64, lower: f64, upper: f64 },

    #[error("material cover needs {needed} high conductivities, cap is {cap}")]
    TooManyMaterials { needed: usize, cap: usize },

    #[error("geometry violation: {0}")]
    Geometry(String),

    #[error("sweep failed at {param}: {source}")]
    Sweep {
        param: f64,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
