use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Inputs have incompatible shapes (order sets, frames, scenarios).
    #[error("structural error: {0}")]
    Structural(String),

    /// Input value outside the domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("non-finite value produced by the {block} block at t = {t} s")]
    NonFinite { block: &'static str, t: f64 },

    #[error("equilibrium not found after {iterations} iterations (scaled residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("singular Jacobian during equilibrium solve (iteration {iteration})")]
    SingularJacobian { iteration: usize },

    #[error("step size underflow at t = {t} s (h = {h:.3e} s)")]
    StepUnderflow { t: f64, h: f64 },

    #[error("current limiter is saturated at the operating point; refusing to linearize a nonsmooth point")]
    SaturatedOperatingPoint,

    #[error("eigen decomposition failed: {0}")]
    Eigen(String),

    #[error("oracle integration unstable at dt = {dt:.3e} s (t = {t} s)")]
    OracleUnstable { dt: f64, t: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
