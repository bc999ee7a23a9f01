use voxworld_core::buffers::BufferError;
use voxworld_core::conditions::ConditionError;
use voxworld_core::formats::FormatError;
use voxworld_core::gaussians::GaussianError;
use voxworld_core::lidar::LidarError;
use voxworld_core::outpaint::SamplerError;
use voxworld_core::sparse_grid::GridError;

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const RUNTIME: i32 = 1;
    pub const USAGE: i32 = 2;
    pub const INPUT: i32 = 3;
    pub const DENOISER: i32 = 4;
    pub const SERVICE: i32 = 5;
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("denoiser failure: {0}")]
    Denoiser(String),
    #[error("service failure: {0}")]
    Service(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => exit::USAGE,
            CliError::Input(_) => exit::INPUT,
            CliError::Denoiser(_) => exit::DENOISER,
            CliError::Service(_) => exit::SERVICE,
            CliError::Runtime(_) => exit::RUNTIME,
        }
    }
}

impl From<SamplerError> for CliError {
    fn from(e: SamplerError) -> Self {
        match e {
            SamplerError::Denoiser(_) => CliError::Denoiser(e.to_string()),
            SamplerError::Format(f) => f.into(),
            SamplerError::InvalidRequest(_) | SamplerError::Disconnected(_) => CliError::Config(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

macro_rules! input_error {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Input(e.to_string())
            }
        }
    )*};
}

input_error!(FormatError, GridError, BufferError, GaussianError, LidarError, ConditionError);

pub type Result<T> = std::result::Result<T, CliError>;
