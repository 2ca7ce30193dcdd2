//! Leaf-disease classifier built on a small dense tensor type: true 2-D
//! convolution, residual blocks, a fully connected softmax head, SGD
//! training, gradient checking, confusion-matrix evaluation and the
//! periodic cloud prediction pipeline.

pub mod conv;
pub mod dataset;
pub mod eval;
pub mod gradcheck;
pub mod layers;
pub mod model;
pub mod pipeline;
pub mod preprocess;
pub mod tensor;
pub mod train;
pub mod weights;

use serde::{Deserialize, Serialize};

pub use conv::{conv2d, conv2d_backward, ConvKernel, ConvMode, Padding};
pub use dataset::{Dataset, Sample};
pub use eval::{evaluate, ConfusionMatrix};
pub use gradcheck::{grad_check, GradCheckReport};
pub use layers::{relu, softmax, Affine, ConvLayer, DenseLayer, Layer, ResidualBlock};
pub use model::{ModelSpec, Network, PredictionResult};
pub use pipeline::{predict_pipeline, PipelineReport, PredictionPipeline};
pub use preprocess::preprocess;
pub use tensor::Tensor;
pub use train::{train, TrainConfig, TrainOutcome};

/// Side length of the square grayscale model input.
pub const INPUT_SIZE: usize = 32;

#[derive(Debug, thiserror::Error)]
pub enum ClassifierError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("non-finite values after {0} layer")]
    NonFinite(&'static str),
    #[error("label error: {0}")]
    Label(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("weights file: {0}")]
    Format(String),
    #[error("image: {0}")]
    Image(#[from] crate::sensors::SensorError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Axis-aligned rectangle in pixel coordinates, origin top-left.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
}
