use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension {0}: at least two levels are required")]
    InvalidDimension(usize),
    #[error("matrix is not Hermitian (defect {0:.3e})")]
    NotHermitian(f64),
    #[error("matrix is not traceless (trace {0:.3e})")]
    NotTraceless(f64),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("step size underflow at t = {0}")]
    StepUnderflow(f64),
    #[error("quadrature did not converge: {0}")]
    Quadrature(String),
    #[error("numerical abort: {0}")]
    Numerical(String),
    #[error("internal consistency error: {0}")]
    Consistency(String),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
