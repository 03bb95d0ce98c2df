//! Command implementations behind the `meshnet` binary.

pub mod args;
mod commands;
pub mod config;

use thiserror::Error;

pub use args::Cli;
pub use commands::run;
pub use config::RunConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Verification(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 1,
            CliError::Verification(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

macro_rules! runtime_from {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Runtime(e.to_string())
            }
        }
    )*};
}

runtime_from!(
    std::io::Error,
    meshnet::dataset::DatasetError,
    meshnet::mesh_io::CacheError,
    meshnet::mesh_io::LoadError,
    meshnet::mesh_io::ManifestError,
    meshnet::preprocess::PreprocessError,
    meshnet::tensor::CheckpointError
);

impl From<meshnet::model::ModelError> for CliError {
    fn from(e: meshnet::model::ModelError) -> Self {
        match e {
            meshnet::model::ModelError::Config(m) => CliError::Config(m),
            e => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<meshnet::train::TrainError> for CliError {
    fn from(e: meshnet::train::TrainError) -> Self {
        match e {
            meshnet::train::TrainError::Config(m) => CliError::Config(m),
            meshnet::train::TrainError::Label { .. } => CliError::Config(e.to_string()),
            meshnet::train::TrainError::Model(m) => m.into(),
            e => CliError::Runtime(e.to_string()),
        }
    }
}
