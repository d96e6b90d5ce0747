use nha_core::Error as CoreError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("{context}: {source}")]
    Io {
        context: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] CoreError),
}

impl CliError {
    pub fn io(context: impl std::fmt::Display, source: std::io::Error) -> Self {
        Self::Io {
            context: context.to_string(),
            source,
        }
    }

    /// 2: configuration, I/O or schema; 3: solver; 4: training.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) | Self::Io { .. } => 2,
            Self::Core(e) => match e {
                CoreError::NonFiniteFlow { .. }
                | CoreError::StepUnderflow { .. }
                | CoreError::NoSignChange { .. }
                | CoreError::ZenoGuard { .. } => 3,
                CoreError::DivergedLoss { .. } | CoreError::NoSupervision => 4,
                _ => 2,
            },
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
