use laser_core::protocol::ProtocolError;
use laser_core::trace_file::TraceIoError;
use laser_core::LaserError;
use laser_eval::EvalError;
use laser_toyvlm::ToyError;

/// Failure with its process exit code.
#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Io(String),
    Protocol(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Io(_) => 2,
            CliError::Protocol(_) => 3,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Validation(m) | CliError::Io(m) | CliError::Protocol(m) => m,
        }
    }
}

impl From<LaserError> for CliError {
    fn from(e: LaserError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<TraceIoError> for CliError {
    fn from(e: TraceIoError) -> Self {
        match e {
            TraceIoError::Io { .. } | TraceIoError::Stream(_) => CliError::Io(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<ProtocolError> for CliError {
    fn from(e: ProtocolError) -> Self {
        match e {
            ProtocolError::Config(_) => CliError::Validation(e.to_string()),
            _ => CliError::Protocol(e.to_string()),
        }
    }
}

impl From<ToyError> for CliError {
    fn from(e: ToyError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Image { .. } => CliError::Io(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}
