use thiserror::Error;

pub type Result<T, E = CdimError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CdimError {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("dimension mismatch: {what} (expected {expected}, got {got})")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("degenerate time: {0}")]
    DegenerateTime(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("solver diverged at t={t} (inner step {inner}, eta={eta:e}): {detail}")]
    Divergence {
        t: usize,
        inner: usize,
        eta: f64,
        detail: String,
    },

    #[error("training diverged at epoch {epoch}, step {step}: {detail}")]
    Training {
        epoch: usize,
        step: usize,
        detail: String,
    },

    #[error("calibration failed on sample {sample}: {detail}")]
    Calibration { sample: usize, detail: String },

    #[error("profile fingerprint mismatch: expected {expected}, found {found}")]
    Fingerprint { expected: String, found: String },

    #[error("format error: {0}")]
    Format(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CdimError {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        CdimError::Parameter(msg.into())
    }
}

pub(crate) fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(CdimError::Dimension {
            what,
            expected,
            got,
        });
    }
    Ok(())
}

pub(crate) fn check_finite(what: &str, v: &[f64]) -> Result<()> {
    if let Some(i) = v.iter().position(|x| !x.is_finite()) {
        return Err(CdimError::Numeric(format!(
            "{what} has non-finite entry at index {i}"
        )));
    }
    Ok(())
}
