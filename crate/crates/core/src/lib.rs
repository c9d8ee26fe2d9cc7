//! Bayesian fully-connected tensor network fusion of a low-resolution
//! hyperspectral image with a high-resolution multispectral image.
//!
//! The pipeline is: [`degradation`] builds the spatial and spectral
//! operators (and simulates observations), [`patchwork`] cuts the images into
//! overlapping patch groups, [`inference`] fits one four-factor network per
//! group by variational EM, and [`metrics`] scores the result. [`harness`]
//! ties these together into scenario and ablation runs with file outputs.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod degradation;
pub mod harness;
pub mod inference;
pub mod io;
pub mod metrics;
pub mod patchwork;
pub mod sylvester;
pub mod synthetic;
pub mod tensor;

use thiserror::Error;

pub use inference::{fuse, fuse_traced, FusionConfig, FusionOutput};
pub use tensor::{DenseTensor, FctnRanks};

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] tensor::TensorError),
    #[error(transparent)]
    Sylvester(#[from] sylvester::SylvesterError),
    #[error(transparent)]
    Degradation(#[from] degradation::DegradationError),
    #[error(transparent)]
    Patch(#[from] patchwork::PatchError),
    #[error(transparent)]
    Inference(#[from] inference::InferenceError),
    #[error(transparent)]
    Metric(#[from] metrics::MetricError),
    #[error(transparent)]
    Io(#[from] io::IoError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("cannot write output {path}: {msg}")]
    Output { path: String, msg: String },
}

impl Error {
    /// Stable machine-readable category, used as the CLI error tag.
    pub fn category(&self) -> &'static str {
        use inference::InferenceError as I;
        match self {
            Error::Tensor(_) => "shape",
            Error::Sylvester(_) | Error::Inference(I::Solve { .. }) => "solver",
            Error::Inference(I::Config(_)) | Error::Config(_) => "config",
            Error::Inference(I::Shape(_) | I::Tensor(_) | I::Patch(_)) | Error::Patch(_) => "shape",
            Error::Inference(I::Degradation(_)) | Error::Degradation(_) => "degradation",
            Error::Inference(I::Metric(_)) | Error::Metric(_) => "metric",
            Error::Io(io::IoError::File { .. }) | Error::Output { .. } => "io",
            Error::Io(_) => "format",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
