use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Failure modes shared by every stage of the pipeline.
///
/// The CLI maps these onto exit codes through [`Error::exit_code`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("usage: {0}")]
    Usage(String),

    #[error("structural error: {0}")]
    Structural(String),

    #[error("depth exhausted: {what} (stored depth {depth}, best achieved {achieved:.3e})")]
    DepthExhausted {
        what: String,
        depth: usize,
        achieved: f64,
    },

    #[error("ill-conditioned {what}: {detail}")]
    IllConditioned { what: String, detail: String },

    #[error("{stage}: residual {achieved:.3e} above tolerance {tol:.3e}")]
    Residual {
        stage: &'static str,
        achieved: f64,
        tol: f64,
    },

    #[error("control domain violation: {0}")]
    Domain(String),

    #[error("precondition failed: {}", .0.join("; "))]
    Precondition(Vec<String>),

    #[error("lie closure did not stabilize below cap {cap}")]
    ClosureCap { cap: usize },

    #[error("synthesis budget exhausted after {switchings} switchings, tracking distance {achieved:.3e} (requested {eps:.3e})")]
    Budget {
        switchings: usize,
        achieved: f64,
        eps: f64,
    },

    #[error("no drift time in [0, {t_max}] reaches tolerance {tol:.3e}; best residual {best:.3e} at t = {t_star}")]
    PhaseAdjust {
        t_max: f64,
        tol: f64,
        best: f64,
        t_star: f64,
    },

    #[error("hypothesis failure: {0}")]
    Hypothesis(String),

    #[error("{path}: {message}")]
    Parse { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn structural(msg: impl Into<String>) -> Self {
        Error::Structural(msg.into())
    }

    /// 1 for usage errors, 2 for malformed input, 3 for failed hypotheses, 4 for synthesis failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 1,
            Error::Structural(_)
            | Error::Parse { .. }
            | Error::Io(_)
            | Error::Json(_)
            | Error::Domain(_)
            | Error::DepthExhausted { .. } => 2,
            Error::Hypothesis(_) | Error::Precondition(_) => 3,
            Error::IllConditioned { .. }
            | Error::Residual { .. }
            | Error::ClosureCap { .. }
            | Error::Budget { .. }
            | Error::PhaseAdjust { .. } => 4,
        }
    }
}
