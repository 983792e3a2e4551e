use thiserror::Error;

/// Failure of a command, mapped to the process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error [{stage}] {context}: {message}")]
    Data { stage: &'static str, context: String, message: String },
    #[error("computation error [{stage}] {context}: {message}")]
    Compute { stage: &'static str, context: String, message: String },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Data { .. } => 2,
            CliError::Compute { .. } => 3,
        }
    }

    /// Wraps a library error, naming the pipeline stage it came from.
    pub fn from_core(err: portcon_core::Error, context: impl Into<String>) -> Self {
        use portcon_core::Error as E;
        let context = context.into();
        let stage = match &err {
            E::Data(_) => "data",
            E::Signal(_) => "signals",
            E::Covariance(_) => "covariance",
            E::Construction(_) => "construction",
            E::Backtest(_) => "backtest",
            E::Analytics(_) => "analytics",
        };
        let message = match &err {
            E::Data(e) => e.to_string(),
            E::Signal(e) => e.to_string(),
            E::Covariance(e) => e.to_string(),
            E::Construction(e) => e.to_string(),
            E::Backtest(e) => e.to_string(),
            E::Analytics(e) => e.to_string(),
        };
        match err {
            E::Data(_) => CliError::Data { stage, context, message },
            _ => CliError::Compute { stage, context, message },
        }
    }

    pub fn data(stage: &'static str, context: impl Into<String>, message: impl ToString) -> Self {
        CliError::Data { stage, context: context.into(), message: message.to_string() }
    }

    pub fn compute(stage: &'static str, context: impl Into<String>, message: impl ToString) -> Self {
        CliError::Compute { stage, context: context.into(), message: message.to_string() }
    }

    /// Failure to write into the output directory.
    pub fn output(path: &std::path::Path, err: impl std::fmt::Display) -> Self {
        CliError::Config(format!("cannot write {}: {err}", path.display()))
    }
}
