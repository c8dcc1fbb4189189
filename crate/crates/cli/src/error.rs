use thiserror::Error;
use uqkit::UqError;

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad or missing configuration, detected before any work starts.
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Uq(#[from] UqError),

    #[error("internal error: {0}")]
    Internal(String),
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_DIVERGED: i32 = 4;
pub const EXIT_INTERNAL: i32 = 5;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Internal(_) => EXIT_INTERNAL,
            CliError::Uq(e) => match e {
                UqError::Parameter(_)
                | UqError::Spec(_)
                | UqError::State(_)
                | UqError::UnsupportedClassCount(_) => EXIT_CONFIG,
                UqError::Dimension(_)
                | UqError::EmptyInput(_)
                | UqError::Parse { .. }
                | UqError::Split(_)
                | UqError::Data(_)
                | UqError::DegenerateInput(_)
                | UqError::Calibration { .. }
                | UqError::Io { .. }
                | UqError::Json(_)
                | UqError::Csv(_) => EXIT_DATA,
                UqError::Diverged { .. } | UqError::Numeric { .. } | UqError::Ensemble { .. } => EXIT_DIVERGED,
                UqError::Domain(_) => EXIT_INTERNAL,
            },
        }
    }
}
