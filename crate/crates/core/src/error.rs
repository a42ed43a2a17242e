use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix is empty")]
    EmptyMatrix,

    #[error("matrix is identically zero")]
    ZeroMatrix,

    #[error("non-finite entry at position {0}")]
    NonFinite(usize),

    #[error("SVD did not converge within {sweeps} Jacobi sweeps")]
    SvdNoConvergence { sweeps: usize },

    #[error("right-hand side lies outside range(J): residual norm {residual:e}")]
    RangeViolation { residual: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("iterates became non-finite at iteration {iter}")]
    Divergence { iter: usize },

    #[error("ODE step size underflow at t = {reached_time}")]
    StepUnderflow {
        reached_time: f64,
        partial: Box<crate::sop_linear::SopLinearState>,
    },

    #[error("critical point with nonzero residual but no index with u = v = 0 (tolerance {tol:e})")]
    InconsistentCriticalPoint { tol: f64 },

    #[error("every sampled null-space vector had a zero off-support part")]
    DegenerateSubspace,

    #[error("sample index {index} out of range for {len} samples")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("training diverged (non-finite loss) in epoch {epoch}")]
    TrainingDiverged { epoch: usize },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        if e.is_io_error() {
            match e.into_kind() {
                csv::ErrorKind::Io(io) => Error::Io(io),
                _ => unreachable!(),
            }
        } else {
            Error::Parse(e.to_string())
        }
    }
}

pub(crate) fn check_len(what: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::DimensionMismatch(format!(
            "{what}: expected length {want}, got {got}"
        )));
    }
    Ok(())
}
