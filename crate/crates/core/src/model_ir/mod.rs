//! Model container, graph representation, validation and size accounting.

mod container;
mod graph;
mod size;
mod tensor;
mod validate;

pub(crate) use container::{decode_dense, encode_dense, read_container, split_blobs, write_container};
pub use container::{is_lowered, parse_model, serialize_model, BlobDoc, BlobEncoding, ModelError, MAGIC, VERSION};
pub use graph::{Graph, GraphError, Node, Op};
pub use size::{model_size_report, LayerSize, SizeReport};
pub use tensor::{BlobData, BlobError, DType, Layout, Shape, TensorBlob, TensorDesc};
pub use validate::{
    conv_info, conv_output, infer_shapes, pool_output, validate_graph, ConvInfo, Diagnostic, Diagnostics, Domain, Rule,
    Severity, ShapeInfo,
};
