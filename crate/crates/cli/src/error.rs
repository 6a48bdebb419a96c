use help_core::archspace::ArchError;
use help_core::devicesim::DeviceError;
use help_core::embedding::EmbeddingError;
use help_core::metalearn::MetaError;
use help_core::nas::NasError;
use help_core::nnet::NnetError;
use help_core::predictor::PredictorError;
use thiserror::Error;

/// Exit status 2 for anything wrong with the inputs, 3 for failures while computing.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid input: {0}")]
    Validation(String),
    #[error("run failed: {0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl From<DeviceError> for CliError {
    fn from(e: DeviceError) -> Self {
        match e {
            DeviceError::Io { .. } => CliError::Runtime(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<ArchError> for CliError {
    fn from(e: ArchError) -> Self {
        match e {
            ArchError::Io { .. } => CliError::Runtime(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<EmbeddingError> for CliError {
    fn from(e: EmbeddingError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<NnetError> for CliError {
    fn from(e: NnetError) -> Self {
        match e {
            NnetError::NonFinite { .. }
            | NnetError::NonFiniteGradient { .. }
            | NnetError::TapeCapExceeded { .. } => CliError::Runtime(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<PredictorError> for CliError {
    fn from(e: PredictorError) -> Self {
        match e {
            PredictorError::Nnet(n) => n.into(),
            PredictorError::Embedding(x) => x.into(),
            PredictorError::Io { .. } => CliError::Runtime(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<MetaError> for CliError {
    fn from(e: MetaError) -> Self {
        match e {
            MetaError::Predictor(p) => p.into(),
            MetaError::Device(d) => d.into(),
            MetaError::Arch(a) => a.into(),
            MetaError::Nnet(n) => n.into(),
            MetaError::Config(_) | MetaError::EmptySupport | MetaError::NoTrainDevices => {
                CliError::Validation(e.to_string())
            }
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<NasError> for CliError {
    fn from(e: NasError) -> Self {
        match e {
            NasError::Predictor(m) => m.into(),
            NasError::Device(d) => d.into(),
            NasError::Io { .. } => CliError::Runtime(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}
