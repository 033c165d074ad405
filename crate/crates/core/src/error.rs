use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("validation error in `{field}`{}: {message}", circle_suffix(*.circle))]
    Validation {
        field: String,
        circle: Option<usize>,
        message: String,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("history gap on circle {circle}: buffer covers {covered:.6} but the delay needs {needed:.6}")]
    HistoryGap {
        circle: usize,
        covered: f64,
        needed: f64,
    },

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("spectral radius did not converge (power iteration ~ {power_estimate:e}, gelfand ~ {gelfand_estimate:e})")]
    Convergence {
        power_estimate: f64,
        gelfand_estimate: f64,
    },

    #[error("no sign change of r(gain) - 1 within {doublings} bracket doublings (last bracket [{lo}, {hi}])")]
    Bracket { doublings: usize, lo: f64, hi: f64 },

    #[error("small-gain violation: {0}")]
    SmallGainViolation(String),

    #[error("CFL violation: dt = {dt} exceeds dx_min / v_max = {limit}")]
    Cfl { dt: f64, limit: f64 },

    #[error("trajectory norm reached exact zero at t = {time} (finite extinction)")]
    Extinction { time: f64 },

    #[error("no unforced companion run available to fit the decay envelope")]
    MissingEnvelope,

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn circle_suffix(circle: Option<usize>) -> String {
    match circle {
        Some(j) => format!(" (circle {j})"),
        None => String::new(),
    }
}

impl Error {
    pub(crate) fn validation(
        field: impl Into<String>,
        circle: Option<usize>,
        message: impl Into<String>,
    ) -> Self {
        Error::Validation {
            field: field.into(),
            circle,
            message: message.into(),
        }
    }

    /// Errors that stem from a malformed or invalid input document.
    pub fn is_input_error(&self) -> bool {
        matches!(self, Error::Schema(_) | Error::Validation { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
