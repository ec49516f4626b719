use std::fmt;

use seacast::bench::BenchError;
use seacast::eval::EvalError;
use seacast::features::FeatureError;
use seacast::gbdt::GbdtError;
use seacast::ingest::IngestError;
use seacast::prep::PrepError;

/// Failure classes with stable process exit codes.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Io(String),
    InsufficientData(String),
    Model(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::InsufficientData(_) => 4,
            CliError::Model(_) => 5,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Io(m) => write!(f, "I/O error: {m}"),
            CliError::InsufficientData(m) => write!(f, "insufficient data: {m}"),
            CliError::Model(m) => write!(f, "model error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<IngestError> for CliError {
    fn from(e: IngestError) -> Self {
        match e {
            IngestError::MissingColumn(_) => CliError::Config(e.to_string()),
            _ => CliError::Io(e.to_string()),
        }
    }
}

impl From<PrepError> for CliError {
    fn from(e: PrepError) -> Self {
        match e {
            PrepError::Config(_) => CliError::Config(e.to_string()),
            _ => CliError::Io(e.to_string()),
        }
    }
}

impl From<FeatureError> for CliError {
    fn from(e: FeatureError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<GbdtError> for CliError {
    fn from(e: GbdtError) -> Self {
        match e {
            GbdtError::InvalidParams(_) => CliError::Config(e.to_string()),
            GbdtError::InvalidInput(_) => CliError::InsufficientData(e.to_string()),
            GbdtError::Io(_) => CliError::Io(e.to_string()),
            GbdtError::Schema { .. } | GbdtError::Format { .. } | GbdtError::UnsupportedVersion(_) => {
                CliError::Model(e.to_string())
            }
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Config(m) => CliError::Config(m),
            EvalError::InvalidInput(m) => CliError::InsufficientData(m),
            EvalError::Model(g) => g.into(),
            EvalError::Io(io) => io.into(),
        }
    }
}

impl From<BenchError> for CliError {
    fn from(e: BenchError) -> Self {
        match e {
            BenchError::InsufficientData { .. } => CliError::InsufficientData(e.to_string()),
            BenchError::Config(m) => CliError::Config(m),
        }
    }
}
