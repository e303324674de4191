use thiserror::Error;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("hessian not positive definite after {attempts} damping attempts (last damping {damping:e})")]
    NotPositiveDefinite { attempts: usize, damping: f64 },
}

pub type Result<T> = std::result::Result<T, LabError>;
