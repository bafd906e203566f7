use std::path::Path;

use dttd_core::dataio::DataIoError;
use dttd_core::metrics::MetricsError;
use dttd_core::network::NetworkError;
use dttd_core::synthdata::SynthError;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    /// Bad arguments, configs or input data.
    #[error("{0}")]
    Validation(String),
    /// A check ran and did not pass.
    #[error("{0}")]
    Failure(String),
    #[error("{0}")]
    Io(String),
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Validation(_) => 1,
            HarnessError::Failure(_) => 2,
            HarnessError::Io(_) => 3,
        }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        HarnessError::Io(format!("{}: {e}", path.display()))
    }
}

impl From<DataIoError> for HarnessError {
    fn from(e: DataIoError) -> Self {
        match e {
            DataIoError::Io { .. } | DataIoError::Locked(_) => HarnessError::Io(e.to_string()),
            _ => HarnessError::Validation(e.to_string()),
        }
    }
}

impl From<NetworkError> for HarnessError {
    fn from(e: NetworkError) -> Self {
        match e {
            NetworkError::NonFiniteLoss { .. } => HarnessError::Failure(e.to_string()),
            _ => HarnessError::Validation(e.to_string()),
        }
    }
}

impl From<SynthError> for HarnessError {
    fn from(e: SynthError) -> Self {
        HarnessError::Validation(e.to_string())
    }
}

impl From<MetricsError> for HarnessError {
    fn from(e: MetricsError) -> Self {
        HarnessError::Validation(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;
