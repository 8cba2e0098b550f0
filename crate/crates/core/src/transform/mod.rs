//! Graph rewriting: marker pruning, weight binarization, threshold folding
//! and lowering to the packed pipeline.

mod fold;
mod io;
mod lower;
mod prune;

pub use fold::{
    affine_to_thresholds, apply_chain, chain_direction, dequantize, fold_affine_chain, quantize_f32,
    split_trailing_leaky, AffineFold, ChannelOp, Direction, ThresholdUnit,
};
pub use io::{parse_lowered, serialize_lowered};
pub(crate) use lower::channel_chain;
pub use lower::{lower_graph, LBlob, LNode, LOp, LoweredGraph, Value};
pub use prune::{binarize_weights, prune_weight_quant_subgraph};

use crate::layout::LayoutError;
use crate::model_ir::{BlobError, DType, Diagnostics, GraphError, ModelError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TransformError {
    #[error("binarize_w marker `{0}` is not on a conv weight edge")]
    MarkerOnNonWeightEdge(String),
    #[error("weight {index} is not finite")]
    NonFiniteWeight { index: usize },
    #[error("expected f32 weights, found {0:?}")]
    WrongDtype(DType),
    #[error("non-affine node at chain position {position}")]
    NonAffineNodeInChain { position: usize },
    #[error("channel {channel} has zero scale")]
    ZeroScaleChannel { channel: usize },
    #[error("chain parameter is not finite")]
    NonFiniteParameter,
    #[error("chain has {found} channels, expected {expected}")]
    ChannelMismatch { expected: usize, found: usize },
    #[error("leaky_relu slope must be positive for threshold folding")]
    NonMonotoneActivation,
    #[error("quantizer step must be positive")]
    NonPositiveStep,
    #[error("cannot fold the subgraph after `{0}` into a threshold unit")]
    UnfoldableSubgraph(String),
    #[error("accumulator bound {bound} of `{node}` overflows i32")]
    AccumulatorOverflow { node: String, bound: i64 },
    #[error("model is already lowered")]
    AlreadyLowered,
    #[error("graph has validation errors:\n{0}")]
    Invalid(Diagnostics),
    #[error("malformed lowered node `{node}`: {reason}")]
    MalformedLowered { node: String, reason: String },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Blob(#[from] BlobError),
    #[error(transparent)]
    Layout(#[from] LayoutError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Parses and lowers a container, rejecting one that is already lowered.
pub fn lower_container(bytes: &[u8]) -> Result<LoweredGraph, TransformError> {
    if crate::model_ir::is_lowered(bytes)? {
        return Err(TransformError::AlreadyLowered);
    }
    lower_graph(&crate::model_ir::parse_model(bytes)?)
}
