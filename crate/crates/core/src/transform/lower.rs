use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::fold::{
    affine_to_thresholds, apply_chain, cut_point, fold_affine_chain, quantize_f32, split_trailing_leaky, ChannelOp,
    ThresholdUnit,
};
use super::prune::{binarize_weights, prune_weight_quant_subgraph};
use super::TransformError;
use crate::layout::{bitpack, to_depth_innermost, PackedTensor};
use crate::model_ir::{
    conv_info, conv_output, infer_shapes, pool_output, validate_graph, DType, Domain, Graph, Layout, Node, Op, Shape,
    TensorBlob, TensorDesc,
};

/// What flows out of a lowered node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Value {
    Real,
    Codes {
        delta: f32,
    },
    /// Integer accumulators of a binarized convolution.
    Accumulator,
}

/// A weight tensor of the lowered graph.
#[derive(Debug, Clone, PartialEq)]
pub enum LBlob {
    /// f32 kernels of an unquantized layer, depth-innermost.
    Dense(TensorBlob),
    /// Bit-packed bin1 kernels, one per output channel.
    Packed(PackedTensor),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LOp {
    Input,
    /// Dense convolution; a coded input is dequantized with `input_delta`.
    ConvF32 {
        weights: usize,
        kernel: [usize; 2],
        filters: usize,
        stride: usize,
        pad: usize,
        input_delta: Option<f32>,
        post: Vec<ChannelOp>,
    },
    Quantize {
        delta: f32,
    },
    BinConv {
        weights: usize,
        kernel: [usize; 2],
        filters: usize,
        stride: usize,
        pad: usize,
    },
    Threshold {
        unit: ThresholdUnit,
        delta: f32,
    },
    /// Accumulators back to f32 (`input_delta * acc`), then `post`.
    Dequant {
        input_delta: f32,
        post: Vec<ChannelOp>,
    },
    MaxPool {
        size: usize,
        stride: usize,
    },
    Reorg {
        stride: usize,
    },
    Concat,
    Output,
}

impl LOp {
    pub fn kind(&self) -> &'static str {
        match self {
            LOp::Input => "input",
            LOp::ConvF32 { .. } => "conv_f32",
            LOp::Quantize { .. } => "quantize",
            LOp::BinConv { .. } => "binconv",
            LOp::Threshold { .. } => "threshold",
            LOp::Dequant { .. } => "dequant",
            LOp::MaxPool { .. } => "maxpool",
            LOp::Reorg { .. } => "reorg",
            LOp::Concat => "concat",
            LOp::Output => "output",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LNode {
    pub id: String,
    pub op: LOp,
    /// Indices of earlier nodes.
    pub inputs: Vec<usize>,
    pub shape: Shape,
    pub value: Value,
    /// Conv node this node was lowered from, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layer: Option<String>,
    /// Source-graph node whose output this node reproduces.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin: Option<String>,
}

/// Executable form: nodes in topological order plus weight tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct LoweredGraph {
    pub nodes: Vec<LNode>,
    pub blobs: Vec<LBlob>,
}

impl LoweredGraph {
    pub fn input_shape(&self) -> Shape {
        self.nodes[0].shape
    }

    pub fn output(&self) -> &LNode {
        self.nodes.last().expect("lowered graph is never empty")
    }

    pub fn binconvs(&self) -> impl Iterator<Item = (usize, &LNode)> {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| matches!(n.op, LOp::BinConv { .. }))
    }

    pub fn packed(&self, blob: usize) -> Option<&PackedTensor> {
        match self.blobs.get(blob)? {
            LBlob::Packed(p) => Some(p),
            LBlob::Dense(_) => None,
        }
    }

    pub fn dense(&self, blob: usize) -> Option<&TensorBlob> {
        match self.blobs.get(blob)? {
            LBlob::Dense(t) => Some(t),
            LBlob::Packed(_) => None,
        }
    }

    /// Structural check: input order, blob kinds, shapes and value kinds.
    pub fn check(&self) -> Result<(), TransformError> {
        let bad = |node: &LNode, reason: String| TransformError::MalformedLowered {
            node: node.id.clone(),
            reason,
        };
        if self.nodes.is_empty() {
            return Err(TransformError::MalformedLowered {
                node: String::new(),
                reason: "no nodes".into(),
            });
        }
        let mut ids = HashSet::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if !ids.insert(node.id.as_str()) {
                return Err(bad(node, "duplicate id".into()));
            }
            if node.inputs.iter().any(|&j| j >= i) {
                return Err(bad(node, "inputs must refer to earlier nodes".into()));
            }
            let ins: Vec<&LNode> = node.inputs.iter().map(|&j| &self.nodes[j]).collect();
            let arity = match node.op {
                LOp::Input => 0,
                LOp::Concat => ins.len().max(1),
                _ => 1,
            };
            if ins.len() != arity {
                return Err(bad(node, format!("{} takes {arity} input(s)", node.op.kind())));
            }
            if (i == 0) != matches!(node.op, LOp::Input)
                || (i + 1 == self.nodes.len()) != matches!(node.op, LOp::Output)
            {
                return Err(bad(node, "input must come first and output last".into()));
            }
            let (shape, value) = self.infer(node, &ins).map_err(|r| bad(node, r))?;
            if shape != node.shape || value != node.value {
                return Err(bad(
                    node,
                    format!(
                        "declared {} {:?}, computed {} {:?}",
                        node.shape, node.value, shape, value
                    ),
                ));
            }
        }
        Ok(())
    }

    fn infer(&self, node: &LNode, ins: &[&LNode]) -> Result<(Shape, Value), String> {
        let first = ins.first().map(|n| (n.shape, n.value));
        let conv_shape = |blob: Option<KernelShape>, kernel: [usize; 2], filters: usize, stride: usize, pad: usize| {
            let (input, _) = first.unwrap();
            let Some((desc, count)) = blob else {
                return Err("weight blob missing or of the wrong kind".to_string());
            };
            if desc.height != kernel[0] || desc.width != kernel[1] || count != filters || desc.depth != input.depth {
                return Err(format!(
                    "weights {}x{}x{}x{count} do not fit kernel {kernel:?} over {input}",
                    desc.height, desc.width, desc.depth
                ));
            }
            if stride == 0 {
                return Err("stride must be >= 1".into());
            }
            conv_output(input, kernel, filters, stride, pad).ok_or_else(|| "kernel does not fit input".to_string())
        };
        Ok(match &node.op {
            LOp::Input => (node.shape, Value::Real),
            LOp::ConvF32 {
                weights,
                kernel,
                filters,
                stride,
                pad,
                input_delta,
                post,
            } => {
                let (_, v) = first.unwrap();
                let expect = match v {
                    Value::Real => None,
                    Value::Codes { delta } => Some(delta),
                    Value::Accumulator => return Err("conv_f32 cannot read accumulators".into()),
                };
                if expect != *input_delta {
                    return Err("input_delta does not match the producer".into());
                }
                let blob = self
                    .dense(*weights)
                    .filter(|t| t.desc.dtype == DType::F32 && t.desc.layout == Layout::DepthInnermost)
                    .map(|t| (t.desc, t.count));
                let out = conv_shape(blob, *kernel, *filters, *stride, *pad)?;
                check_post(post, out.depth)?;
                (out, Value::Real)
            }
            LOp::BinConv {
                weights,
                kernel,
                filters,
                stride,
                pad,
            } => {
                if !matches!(first.unwrap().1, Value::Codes { .. }) {
                    return Err("binconv input must be codes".into());
                }
                let blob = self
                    .packed(*weights)
                    .filter(|p| p.desc.dtype == DType::Bin1)
                    .map(|p| (p.desc, p.count));
                (conv_shape(blob, *kernel, *filters, *stride, *pad)?, Value::Accumulator)
            }
            LOp::Quantize { delta } => {
                let (s, v) = first.unwrap();
                if v != Value::Real || !(*delta > 0.0) {
                    return Err("quantize needs a real input and a positive step".into());
                }
                (s, Value::Codes { delta: *delta })
            }
            LOp::Threshold { unit, delta } => {
                let (s, v) = first.unwrap();
                if v != Value::Accumulator || unit.channels() != s.depth || unit.direction.len() != s.depth {
                    return Err("threshold needs accumulators with one unit per channel".into());
                }
                (s, Value::Codes { delta: *delta })
            }
            LOp::Dequant { post, .. } => {
                let (s, v) = first.unwrap();
                if v != Value::Accumulator {
                    return Err("dequant needs accumulators".into());
                }
                check_post(post, s.depth)?;
                (s, Value::Real)
            }
            LOp::MaxPool { size, stride } => {
                let (s, v) = first.unwrap();
                if v == Value::Accumulator || *size == 0 || *stride == 0 {
                    return Err("maxpool needs real values or codes".into());
                }
                (pool_output(s, *size, *stride).ok_or("window does not fit")?, v)
            }
            LOp::Reorg { stride } => {
                let (s, v) = first.unwrap();
                if *stride == 0 || s.height % stride != 0 || s.width % stride != 0 || v == Value::Accumulator {
                    return Err("stride must divide the input".into());
                }
                (
                    Shape::new(s.height / stride, s.width / stride, s.depth * stride * stride),
                    v,
                )
            }
            LOp::Concat => {
                let (s0, v0) = first.unwrap();
                if ins
                    .iter()
                    .any(|n| n.value != v0 || n.shape.height != s0.height || n.shape.width != s0.width)
                    || v0 == Value::Accumulator
                {
                    return Err("concat inputs must agree".into());
                }
                (
                    Shape::new(s0.height, s0.width, ins.iter().map(|n| n.shape.depth).sum()),
                    v0,
                )
            }
            LOp::Output => {
                let (s, v) = first.unwrap();
                if v == Value::Accumulator {
                    return Err("output cannot be accumulators".into());
                }
                (s, v)
            }
        })
    }
}

/// Kernel descriptor and kernel count of a weight blob.
type KernelShape = (TensorDesc, usize);

fn check_post(post: &[ChannelOp], channels: usize) -> Result<(), String> {
    for op in post {
        let ok = match op {
            ChannelOp::BatchNorm {
                gamma, beta, mean, var, ..
            } => [gamma.len(), beta.len(), mean.len(), var.len()]
                .iter()
                .all(|&l| l == channels),
            ChannelOp::Scale { values } | ChannelOp::Bias { values } => values.len() == channels,
            ChannelOp::LeakyRelu { .. } => true,
        };
        if !ok {
            return Err(format!("per-channel vectors must have {channels} entries"));
        }
    }
    Ok(())
}

/// Maximal single-consumer run of per-channel nodes after `start`.
pub(crate) fn channel_chain<'g>(g: &'g Graph, consumers: &HashMap<&str, Vec<&str>>, start: &str) -> Vec<&'g Node> {
    let mut chain = Vec::new();
    let mut cur = start;
    loop {
        let next = match consumers.get(cur).map(Vec::as_slice) {
            Some([one]) => g.node(one).filter(|n| n.op.is_channel_op()),
            _ => None,
        };
        let Some(next) = next else { break };
        chain.push(next);
        cur = next.id.as_str();
    }
    chain
}

fn single_consumer<'g>(g: &'g Graph, consumers: &HashMap<&str, Vec<&str>>, id: &str) -> Option<&'g Node> {
    match consumers.get(id).map(Vec::as_slice) {
        Some([one]) => g.node(one),
        _ => None,
    }
}

struct Builder {
    nodes: Vec<LNode>,
    blobs: Vec<LBlob>,
    map: HashMap<String, usize>,
}

impl Builder {
    fn push(&mut self, node: LNode) -> usize {
        self.nodes.push(node);
        self.nodes.len() - 1
    }

    fn value(&self, i: usize) -> Value {
        self.nodes[i].value
    }

    fn input(&self, node: &Node, k: usize) -> usize {
        self.map[node.inputs[k].as_str()]
    }
}

fn value_of(d: Domain) -> Value {
    match d {
        Domain::Real => Value::Real,
        Domain::Codes(delta) => Value::Codes { delta },
    }
}

/// Lowers a validated graph to the packed integer-threshold pipeline.
///
/// Binarized convolutions whose chain ends in a quantizer (possibly through
/// max-pools) become `binconv -> threshold [-> maxpool on codes]`; other
/// binarized convolutions keep their chain after a `dequant`. Convolutions
/// without a marker stay f32 with their chain applied per channel.
pub fn lower_graph(g: &Graph) -> Result<LoweredGraph, TransformError> {
    let diags = validate_graph(g);
    if diags.has_errors() {
        return Err(TransformError::Invalid(diags));
    }
    let g = prune_weight_quant_subgraph(g)?;
    let (info, _) = infer_shapes(&g);
    let consumers = g.consumer_map();
    let mut b = Builder {
        nodes: Vec::new(),
        blobs: Vec::new(),
        map: HashMap::new(),
    };
    let mut absorbed: HashSet<&str> = HashSet::new();

    for node in g.nodes() {
        if absorbed.contains(node.id.as_str()) {
            continue;
        }
        let shape = info.shape(&node.id).expect("validated graph has shapes");
        let value = value_of(info.domains[&node.id]);
        let plain = |op: LOp, inputs: Vec<usize>| LNode {
            id: node.id.clone(),
            op,
            inputs,
            shape,
            value,
            layer: None,
            origin: Some(node.id.clone()),
        };
        let idx = match &node.op {
            Op::Input { .. } => b.push(plain(LOp::Input, vec![])),
            Op::QuantizeAct { delta } => {
                let i = b.input(node, 0);
                b.push(plain(LOp::Quantize { delta: *delta }, vec![i]))
            }
            Op::MaxPool { size, stride } => {
                let i = b.input(node, 0);
                b.push(plain(
                    LOp::MaxPool {
                        size: *size,
                        stride: *stride,
                    },
                    vec![i],
                ))
            }
            Op::Reorg { stride } => {
                let i = b.input(node, 0);
                b.push(plain(LOp::Reorg { stride: *stride }, vec![i]))
            }
            Op::Concat {} => {
                let ins = (0..node.inputs.len()).map(|k| b.input(node, k)).collect();
                b.push(plain(LOp::Concat, ins))
            }
            Op::Output {} => {
                let i = b.input(node, 0);
                b.push(plain(LOp::Output, vec![i]))
            }
            Op::Conv2d { .. } => {
                let (last, idx) = lower_conv(&g, &consumers, &info, node, &mut b, &mut absorbed)?;
                b.map.insert(last, idx);
                continue;
            }
            Op::BinarizeW {} => continue,
            _ => return Err(TransformError::UnfoldableSubgraph(node.id.clone())),
        };
        b.map.insert(node.id.clone(), idx);
    }

    let lg = LoweredGraph {
        nodes: b.nodes,
        blobs: b.blobs,
    };
    lg.check()?;
    Ok(lg)
}

/// Returns the id of the last source node the conv absorbed and its lowered index.
fn lower_conv<'g>(
    g: &'g Graph,
    consumers: &HashMap<&str, Vec<&str>>,
    info: &crate::model_ir::ShapeInfo,
    node: &'g Node,
    b: &mut Builder,
    absorbed: &mut HashSet<&'g str>,
) -> Result<(String, usize), TransformError> {
    let conv = conv_info(g, node).expect("validated conv");
    let blob = g.blob(conv.weights.expect("validated conv has weights"));
    let input = b.map[conv.data_input];
    let out_shape = info.shape(&node.id).expect("validated conv has a shape");
    let chain = channel_chain(g, consumers, &node.id);
    let ops: Vec<ChannelOp> = chain.iter().map(|n| ChannelOp::from_op(&n.op).unwrap()).collect();
    let chain_end = chain.last().copied().unwrap_or(node);
    for n in &chain {
        absorbed.insert(n.id.as_str());
    }

    if !conv.binarized {
        let weights = match blob.desc.layout {
            Layout::HeightInnermost => to_depth_innermost(blob)?,
            Layout::DepthInnermost => blob.clone(),
        };
        b.blobs.push(LBlob::Dense(weights));
        let input_delta = match b.value(input) {
            Value::Codes { delta } => Some(delta),
            _ => None,
        };
        let idx = b.push(LNode {
            id: node.id.clone(),
            op: LOp::ConvF32 {
                weights: b.blobs.len() - 1,
                kernel: conv.kernel,
                filters: conv.filters,
                stride: conv.stride,
                pad: conv.pad,
                input_delta,
                post: ops,
            },
            inputs: vec![input],
            shape: out_shape,
            value: Value::Real,
            layer: Some(node.id.clone()),
            origin: Some(chain_end.id.clone()),
        });
        return Ok((chain_end.id.clone(), idx));
    }

    let Value::Codes { delta: input_delta } = b.value(input) else {
        return Err(TransformError::UnfoldableSubgraph(node.id.clone()));
    };
    let kd = blob.desc.depth;
    let bound = 3i64 * (conv.kernel[0] * conv.kernel[1] * kd) as i64;
    if bound >= i32::MAX as i64 / 2 {
        return Err(TransformError::AccumulatorOverflow {
            node: node.id.clone(),
            bound,
        });
    }
    let bits = binarize_weights(blob)?;
    let bits = match bits.desc.layout {
        Layout::HeightInnermost => to_depth_innermost(&bits)?,
        Layout::DepthInnermost => bits,
    };
    b.blobs.push(LBlob::Packed(bitpack(&bits)?));
    let conv_idx = b.push(LNode {
        id: node.id.clone(),
        op: LOp::BinConv {
            weights: b.blobs.len() - 1,
            kernel: conv.kernel,
            filters: conv.filters,
            stride: conv.stride,
            pad: conv.pad,
        },
        inputs: vec![input],
        shape: out_shape,
        value: Value::Accumulator,
        layer: Some(node.id.clone()),
        origin: None,
    });

    // max-pools between the chain and the quantizer run on codes after thresholding
    let mut pools = Vec::new();
    let mut cur = chain_end;
    while let Some(next) = single_consumer(g, consumers, &cur.id).filter(|n| matches!(n.op, Op::MaxPool { .. })) {
        pools.push(next);
        cur = next;
    }
    let quant = single_consumer(g, consumers, &cur.id).filter(|n| matches!(n.op, Op::QuantizeAct { .. }));

    let Some(quant) = quant else {
        let idx = b.push(LNode {
            id: format!("{}.dequant", node.id),
            op: LOp::Dequant { input_delta, post: ops },
            inputs: vec![conv_idx],
            shape: out_shape,
            value: Value::Real,
            layer: Some(node.id.clone()),
            origin: Some(chain_end.id.clone()),
        });
        return Ok((chain_end.id.clone(), idx));
    };
    let Op::QuantizeAct { delta } = quant.op else {
        unreachable!()
    };

    let unit = fold_thresholds(&node.id, &ops, out_shape.depth, input_delta, delta, bound)?;
    let mut idx = b.push(LNode {
        id: format!("{}.threshold", node.id),
        op: LOp::Threshold { unit, delta },
        inputs: vec![conv_idx],
        shape: out_shape,
        value: Value::Codes { delta },
        layer: Some(node.id.clone()),
        origin: pools.is_empty().then(|| quant.id.clone()),
    });
    for (k, pool) in pools.iter().enumerate() {
        let Op::MaxPool { size, stride } = pool.op else {
            unreachable!()
        };
        idx = b.push(LNode {
            id: pool.id.clone(),
            op: LOp::MaxPool { size, stride },
            inputs: vec![idx],
            shape: info.shape(&pool.id).expect("validated pool has a shape"),
            value: Value::Codes { delta },
            layer: None,
            origin: (k + 1 == pools.len()).then(|| quant.id.clone()),
        });
        absorbed.insert(pool.id.as_str());
    }
    absorbed.insert(quant.id.as_str());
    Ok((quant.id.clone(), idx))
}

/// Threshold unit for `quantize(chain(f32(input_delta * acc)))` over `|acc| <= bound`.
///
/// The composed affine fold gives each cut-point in closed form; the cut-point
/// is then moved to the exact crossing of the node-by-node chain evaluation,
/// so the unit reproduces the unlowered pipeline bit for bit.
fn fold_thresholds(
    conv: &str,
    ops: &[ChannelOp],
    channels: usize,
    input_delta: f32,
    delta: f32,
    bound: i64,
) -> Result<ThresholdUnit, TransformError> {
    let (affine, slope) = split_trailing_leaky(ops);
    let fold = fold_affine_chain::<f64>(affine, channels).map_err(|e| match e {
        TransformError::NonAffineNodeInChain { .. } => TransformError::UnfoldableSubgraph(conv.to_string()),
        other => other,
    })?;
    // accumulators reach the chain as input_delta * acc
    let mut on_acc = fold.clone();
    for s in &mut on_acc.scale {
        *s *= input_delta as f64;
    }
    let slope = slope.map(|s| s as f64);
    let closed = affine_to_thresholds(&on_acc, &(delta as f64), slope.as_ref())?;
    let mut unit = closed.clone();
    for c in 0..channels {
        let code = |acc: i64| {
            let x = (input_delta as f64 * acc as f64) as f32;
            quantize_f32(apply_chain(ops, c, x), delta)
        };
        for j in 0..3 {
            let t = cut_point(
                unit.direction[c],
                j as u8 + 1,
                -bound,
                bound,
                closed.t[c][j] as i64,
                code,
            );
            unit.t[c][j] = t as i32;
        }
    }
    Ok(unit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model_ir::BlobData;

    fn blob(kh: usize, kw: usize, kd: usize, count: usize, v: impl Fn(usize) -> f32) -> TensorBlob {
        let desc = TensorDesc::new(kh, kw, kd, DType::F32, Layout::HeightInnermost);
        let n = kh * kw * kd * count;
        TensorBlob::new(desc, count, BlobData::F32((0..n).map(v).collect())).unwrap()
    }

    fn conv(k: usize, filters: usize) -> Op {
        Op::Conv2d {
            kernel: [k, k],
            filters,
            stride: 1,
            pad: (k - 1) / 2,
            binarized: false,
        }
    }

    /// input -> conv_f32 -> quantize -> binconv -> output
    fn minimal() -> Graph {
        let nodes = vec![
            Node::new(
                "in",
                Op::Input {
                    height: 4,
                    width: 4,
                    depth: 3,
                },
                &[],
            ),
            Node::new("c0", conv(3, 16), &["in"]).with_weights(0),
            Node::new("q0", Op::QuantizeAct { delta: 0.5 }, &["c0"]),
            Node::new("w1", Op::BinarizeW {}, &[]).with_weights(1),
            Node::new("c1", conv(3, 8), &["q0", "w1"]),
            Node::new("out", Op::Output {}, &["c1"]),
        ];
        let blobs = vec![
            blob(3, 3, 3, 16, |i| ((i * 7) % 11) as f32 / 11.0 - 0.5),
            blob(3, 3, 16, 8, |i| ((i * 5) % 13) as f32 - 6.0),
        ];
        Graph::new(nodes, blobs).unwrap()
    }

    #[test]
    fn minimal_graph_lowers() {
        let lg = lower_graph(&minimal()).unwrap();
        let kinds: Vec<&str> = lg.nodes.iter().map(|n| n.op.kind()).collect();
        assert_eq!(kinds, ["input", "conv_f32", "quantize", "binconv", "dequant", "output"]);
        assert_eq!(lg.blobs.iter().filter(|b| matches!(b, LBlob::Packed(_))).count(), 1);
        let p = lg.packed(1).unwrap();
        assert_eq!(p.desc.layout, Layout::DepthInnermost);
        assert_eq!(p.byte_len(), 4 * 3 * 3 * 8);
    }

    #[test]
    fn chain_folds_into_threshold() {
        let mut g = minimal();
        let (mut nodes, blobs) = g.clone().into_parts();
        let out = nodes.pop().unwrap();
        nodes.push(Node::new(
            "bn1",
            Op::BatchNorm {
                gamma: (0..8).map(|c| if c % 3 == 0 { -1.5 } else { 0.7 }).collect(),
                beta: vec![0.25; 8],
                mean: vec![0.1; 8],
                var: vec![2.0; 8],
                eps: 1e-5,
            },
            &["c1"],
        ));
        nodes.push(Node::new("lk1", Op::LeakyRelu { slope: 0.1 }, &["bn1"]));
        nodes.push(Node::new("q1", Op::QuantizeAct { delta: 0.4 }, &["lk1"]));
        nodes.push(Node::new("out", Op::Output {}, &["q1"]));
        drop(out);
        g = Graph::new(nodes, blobs).unwrap();
        let lg = lower_graph(&g).unwrap();
        let th = lg.nodes.iter().find(|n| matches!(n.op, LOp::Threshold { .. })).unwrap();
        assert_eq!(th.origin.as_deref(), Some("q1"));
        let LOp::Threshold { unit, .. } = &th.op else {
            unreachable!()
        };
        assert!(unit.is_ordered());
        let ops: Vec<ChannelOp> = ["bn1", "lk1"]
            .iter()
            .map(|id| ChannelOp::from_op(&g.node(id).unwrap().op).unwrap())
            .collect();
        let bound = 3 * 9 * 16;
        for c in 0..8 {
            for acc in -bound..=bound {
                let real = quantize_f32(apply_chain(&ops, c, (0.5f64 * acc as f64) as f32), 0.4);
                assert_eq!(unit.code(c, acc), real, "channel {c} acc {acc}");
            }
        }
    }

    #[test]
    fn invalid_graph_is_rejected() {
        let (mut nodes, blobs) = minimal().into_parts();
        if let Op::Conv2d { pad, .. } = &mut nodes[4].op {
            *pad = 2;
        }
        let g = Graph::new(nodes, blobs).unwrap();
        assert!(matches!(lower_graph(&g), Err(TransformError::Invalid(_))));
    }
}
