//! Exact execution of lowered networks.

mod kernels;
mod run;

pub use kernels::{
    apply_post, apply_thresholds, binconv_packed, binconv_reference, concat, conv_f32, dequant, maxpool_f32,
    maxpool_u2, quantize, reorg,
};
pub use run::{run_network, run_profiled, run_traced, NodeValue, Profile};

use crate::layout::LayoutError;
use crate::model_ir::{BlobError, TensorDesc};
use crate::transform::TransformError;

/// Integer accumulators of a binarized convolution, depth-innermost.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AccumulatorMap {
    pub desc: TensorDesc,
    pub data: Vec<i32>,
}

impl AccumulatorMap {
    pub fn max_abs(&self) -> i32 {
        self.data.iter().map(|v| v.abs()).max().unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EngineError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("layout mismatch: {0}")]
    LayoutMismatch(String),
    #[error("expected 2 activation planes and 1 weight plane, found {acts} and {weights}")]
    PlaneCountMismatch { acts: usize, weights: usize },
    #[error("expected {expected} channels, found {found}")]
    ChannelMismatch { expected: usize, found: usize },
    #[error("unexpected tensor dtype")]
    WrongDtype,
    #[error("image is {found}, network expects {expected}")]
    InputShape { expected: String, found: String },
    #[error("could not start worker pool: {0}")]
    ThreadPool(String),
    #[error(transparent)]
    Blob(#[from] BlobError),
    #[error(transparent)]
    Layout(#[from] LayoutError),
    #[error(transparent)]
    Lowered(#[from] TransformError),
}
