//! Residual 1D classification network exposing logits and the deep
//! feature `F` (the pooled activation feeding the last layer).

mod config;
mod model;

pub use config::NetworkConfig;
pub use model::{batch_tensor, feature_norm, ConvBn, ForwardPass, Mode, Model, ResidualBlock, BN_EPS, BN_MOMENTUM};

use thiserror::Error;

use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("network config: {0}")]
    Config(String),
    #[error("input length {actual} does not match configured length {expected}")]
    InputLength { expected: usize, actual: usize },
    #[error("checkpoint does not match network: {0}")]
    Checkpoint(String),
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}
