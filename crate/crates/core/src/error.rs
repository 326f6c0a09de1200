use alloc::string::String;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("CFL condition violated: Courant number {courant:.4} exceeds {limit}")]
    CflViolation { courant: f64, limit: f64 },
    #[error("ensemble needs at least 2 members, got {0}")]
    EnsembleTooSmall(usize),
    #[error("training diverged in {stage} at epoch {epoch} (loss = {loss})")]
    Diverged {
        stage: &'static str,
        epoch: usize,
        loss: f64,
    },
    #[error("forward trace does not match network layout")]
    MissingTrace,
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn ensure_dim(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            expected,
            got,
        })
    }
}
