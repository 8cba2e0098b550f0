//! Shape inference and design-assumption checks.

use std::collections::HashMap;
use std::fmt;

use serde::Serialize;

use super::graph::{Graph, Node, Op};
use super::tensor::{DType, Shape};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    /// Binarized conv output maps must be a multiple of 8.
    OutputMapsMultipleOf8,
    /// Binarized conv input maps must be a multiple of 16.
    InputMapsMultipleOf16,
    Arity,
    MissingWeights,
    WeightShape,
    KernelDepthMismatch,
    Stride,
    Padding,
    EmptyOutput,
    ChannelCount,
    NonFinite,
    Step,
    Domain,
    PoolShape,
    ReorgShape,
    ConcatShape,
    MarkerPlacement,
    /// Interior conv without a `binarize_w` marker.
    MissingQuantMarker,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    pub severity: Severity,
    pub node: String,
    pub rule: Rule,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(f, "{sev}[{:?}] node `{}`: {}", self.rule, self.node, self.message)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
#[serde(transparent)]
pub struct Diagnostics(pub Vec<Diagnostic>);

impl Diagnostics {
    pub fn has_errors(&self) -> bool {
        self.errors().next().is_some()
    }

    pub fn errors(&self) -> impl Iterator<Item = &Diagnostic> {
        self.0.iter().filter(|d| d.severity == Severity::Error)
    }

    pub fn warnings(&self) -> impl Iterator<Item = &Diagnostic> {
        self.0.iter().filter(|d| d.severity == Severity::Warning)
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Diagnostic> {
        self.0.iter()
    }
}

impl fmt::Display for Diagnostics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for d in &self.0 {
            writeln!(f, "{d}")?;
        }
        Ok(())
    }
}

/// Value domain of a node's output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Domain {
    Real,
    /// 2-bit codes with the quantizer step that produced them.
    Codes(f32),
}

/// Shapes and domains for every activation-producing node.
#[derive(Debug, Clone, Default)]
pub struct ShapeInfo {
    pub shapes: HashMap<String, Shape>,
    pub domains: HashMap<String, Domain>,
}

impl ShapeInfo {
    pub fn shape(&self, id: &str) -> Option<Shape> {
        self.shapes.get(id).copied()
    }
}

/// Conv attributes resolved against the graph (weights may live on a marker).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvInfo<'g> {
    pub data_input: &'g str,
    pub weights: Option<usize>,
    pub binarized: bool,
    pub kernel: [usize; 2],
    pub filters: usize,
    pub stride: usize,
    pub pad: usize,
}

pub fn conv_info<'g>(g: &'g Graph, node: &'g Node) -> Option<ConvInfo<'g>> {
    let Op::Conv2d {
        kernel,
        filters,
        stride,
        pad,
        binarized,
    } = node.op
    else {
        return None;
    };
    let data_input = node.inputs.first()?.as_str();
    let marker = node
        .inputs
        .get(1)
        .and_then(|id| g.node(id))
        .filter(|m| matches!(m.op, Op::BinarizeW {}));
    Some(ConvInfo {
        data_input,
        weights: node.weights.or_else(|| marker.and_then(|m| m.weights)),
        binarized: binarized || marker.is_some(),
        kernel,
        filters,
        stride,
        pad,
    })
}

pub fn conv_output(input: Shape, kernel: [usize; 2], filters: usize, stride: usize, pad: usize) -> Option<Shape> {
    let h = (input.height + 2 * pad).checked_sub(kernel[0])? / stride + 1;
    let w = (input.width + 2 * pad).checked_sub(kernel[1])? / stride + 1;
    Some(Shape::new(h, w, filters))
}

pub fn pool_output(input: Shape, size: usize, stride: usize) -> Option<Shape> {
    let h = input.height.checked_sub(size)? / stride + 1;
    let w = input.width.checked_sub(size)? / stride + 1;
    Some(Shape::new(h, w, input.depth))
}

struct Ctx<'g> {
    g: &'g Graph,
    info: ShapeInfo,
    diags: Vec<Diagnostic>,
}

impl<'g> Ctx<'g> {
    fn push(&mut self, severity: Severity, node: &Node, rule: Rule, message: String) {
        self.diags.push(Diagnostic {
            severity,
            node: node.id.clone(),
            rule,
            message,
        });
    }

    fn error(&mut self, node: &Node, rule: Rule, message: String) {
        self.push(Severity::Error, node, rule, message);
    }

    fn input(&self, node: &Node, i: usize) -> Option<(Shape, Domain)> {
        let id = node.inputs.get(i)?;
        Some((*self.info.shapes.get(id)?, *self.info.domains.get(id)?))
    }

    fn set(&mut self, node: &Node, shape: Shape, domain: Domain) {
        self.info.shapes.insert(node.id.clone(), shape);
        self.info.domains.insert(node.id.clone(), domain);
    }
}

/// Infers shapes and value domains, collecting diagnostics in topological order.
pub fn infer_shapes(g: &Graph) -> (ShapeInfo, Diagnostics) {
    let convs: Vec<&str> = g.conv_nodes().map(|n| n.id.as_str()).collect();
    let first = convs.first().copied();
    let last = convs.last().copied();
    let consumers = g.consumer_map();
    let mut cx = Ctx {
        g,
        info: ShapeInfo::default(),
        diags: Vec::new(),
    };

    for node in g.nodes() {
        let expected_arity = match &node.op {
            Op::Input { .. } => Some(0),
            Op::BinarizeW {} => None,
            Op::Conv2d { .. } => None,
            Op::Concat {} => None,
            _ => Some(1),
        };
        if let Some(n) = expected_arity {
            if node.inputs.len() != n {
                cx.error(
                    node,
                    Rule::Arity,
                    format!("{} takes {n} input(s), has {}", node.op.kind(), node.inputs.len()),
                );
                continue;
            }
        }

        match &node.op {
            Op::Input { height, width, depth } => {
                if *height == 0 || *width == 0 || *depth == 0 {
                    cx.error(node, Rule::EmptyOutput, "input has a zero dimension".into());
                    continue;
                }
                cx.set(node, Shape::new(*height, *width, *depth), Domain::Real);
            }
            Op::BinarizeW {} => {
                if !node.inputs.is_empty() {
                    cx.error(
                        node,
                        Rule::MarkerPlacement,
                        "binarize_w marker must hold weights, not sit on an activation edge".into(),
                    );
                } else if node.weights.is_none() {
                    cx.error(
                        node,
                        Rule::MissingWeights,
                        "binarize_w marker carries no weight blob".into(),
                    );
                }
                let feeds_conv_weights = consumers.get(node.id.as_str()).into_iter().flatten().all(|c| {
                    g.node(c)
                        .is_some_and(|c| c.is_conv() && c.inputs.get(1) == Some(&node.id))
                });
                if !feeds_conv_weights {
                    cx.error(
                        node,
                        Rule::MarkerPlacement,
                        "binarize_w marker must feed the weight slot of a conv2d".into(),
                    );
                }
            }
            Op::Conv2d { .. } => check_conv(
                &mut cx,
                node,
                Some(node.id.as_str()) == first || Some(node.id.as_str()) == last,
            ),
            Op::BatchNorm {
                gamma,
                beta,
                mean,
                var,
                eps,
            } => {
                let Some((shape, domain)) = cx.input(node, 0) else {
                    continue;
                };
                let d = shape.depth;
                if [gamma.len(), beta.len(), mean.len(), var.len()].iter().any(|&l| l != d) {
                    cx.error(
                        node,
                        Rule::ChannelCount,
                        format!("batchnorm vectors must have {d} entries"),
                    );
                    continue;
                }
                let finite = gamma.iter().chain(beta).chain(mean).chain(var).all(|x| x.is_finite()) && eps.is_finite();
                if !finite {
                    cx.error(node, Rule::NonFinite, "batchnorm parameters must be finite".into());
                    continue;
                }
                if let Some(c) = var.iter().position(|&v| (v as f64) + (*eps as f64) <= 0.0) {
                    cx.error(
                        node,
                        Rule::NonFinite,
                        format!("channel {c}: var + eps must be positive"),
                    );
                    continue;
                }
                real_only(&mut cx, node, shape, domain);
            }
            Op::Scale { values } | Op::Bias { values } => {
                let Some((shape, domain)) = cx.input(node, 0) else {
                    continue;
                };
                if values.len() != shape.depth {
                    cx.error(
                        node,
                        Rule::ChannelCount,
                        format!(
                            "{} vector must have {} entries, has {}",
                            node.op.kind(),
                            shape.depth,
                            values.len()
                        ),
                    );
                    continue;
                }
                if !values.iter().all(|x| x.is_finite()) {
                    cx.error(node, Rule::NonFinite, "parameters must be finite".into());
                    continue;
                }
                real_only(&mut cx, node, shape, domain);
            }
            Op::LeakyRelu { slope } => {
                let Some((shape, domain)) = cx.input(node, 0) else {
                    continue;
                };
                if !slope.is_finite() {
                    cx.error(node, Rule::NonFinite, "slope must be finite".into());
                    continue;
                }
                real_only(&mut cx, node, shape, domain);
            }
            Op::QuantizeAct { delta } => {
                let Some((shape, domain)) = cx.input(node, 0) else {
                    continue;
                };
                if !(delta.is_finite() && *delta > 0.0) {
                    cx.error(
                        node,
                        Rule::Step,
                        format!("quantizer step must be positive, got {delta}"),
                    );
                    continue;
                }
                if domain != Domain::Real {
                    cx.error(node, Rule::Domain, "quantize_act input is already quantized".into());
                    continue;
                }
                cx.set(node, shape, Domain::Codes(*delta));
            }
            Op::MaxPool { size, stride } => {
                let Some((shape, domain)) = cx.input(node, 0) else {
                    continue;
                };
                if *size == 0 || *stride == 0 {
                    cx.error(node, Rule::PoolShape, "pool size and stride must be >= 1".into());
                    continue;
                }
                match pool_output(shape, *size, *stride) {
                    Some(out) => cx.set(node, out, domain),
                    None => cx.error(
                        node,
                        Rule::PoolShape,
                        format!("{size}x{size} window does not fit {shape}"),
                    ),
                }
            }
            Op::Reorg { stride } => {
                let Some((shape, domain)) = cx.input(node, 0) else {
                    continue;
                };
                let s = *stride;
                if s == 0 || shape.height % s != 0 || shape.width % s != 0 {
                    cx.error(node, Rule::ReorgShape, format!("stride {s} must divide {shape}"));
                    continue;
                }
                cx.set(
                    node,
                    Shape::new(shape.height / s, shape.width / s, shape.depth * s * s),
                    domain,
                );
            }
            Op::Concat {} => {
                let parts: Option<Vec<(Shape, Domain)>> = (0..node.inputs.len()).map(|i| cx.input(node, i)).collect();
                let Some(parts) = parts else { continue };
                if parts.is_empty() {
                    cx.error(node, Rule::Arity, "concat needs at least one input".into());
                    continue;
                }
                let (s0, d0) = parts[0];
                if parts.iter().any(|(s, _)| s.height != s0.height || s.width != s0.width) {
                    cx.error(node, Rule::ConcatShape, "concat inputs differ in spatial size".into());
                    continue;
                }
                if parts.iter().any(|(_, d)| *d != d0) {
                    cx.error(
                        node,
                        Rule::Domain,
                        "concat inputs must share a domain (and quantizer step)".into(),
                    );
                    continue;
                }
                let depth = parts.iter().map(|(s, _)| s.depth).sum();
                cx.set(node, Shape::new(s0.height, s0.width, depth), d0);
            }
            Op::Output {} => {
                let Some((shape, domain)) = cx.input(node, 0) else {
                    continue;
                };
                cx.set(node, shape, domain);
            }
        }
    }
    (cx.info, Diagnostics(cx.diags))
}

fn real_only(cx: &mut Ctx<'_>, node: &Node, shape: Shape, domain: Domain) {
    if domain != Domain::Real {
        cx.error(
            node,
            Rule::Domain,
            format!("{} cannot act on quantized codes", node.op.kind()),
        );
    } else {
        cx.set(node, shape, Domain::Real);
    }
}

fn check_conv(cx: &mut Ctx<'_>, node: &Node, exempt: bool) {
    let g = cx.g;
    let Some(info) = conv_info(g, node) else {
        cx.error(node, Rule::Arity, "conv2d needs a data input".into());
        return;
    };
    let marker_slot = node.inputs.get(1).and_then(|id| g.node(id));
    if node.inputs.len() > 2
        || (node.inputs.len() == 2 && !marker_slot.is_some_and(|m| matches!(m.op, Op::BinarizeW {})))
    {
        cx.error(
            node,
            Rule::Arity,
            "conv2d takes a data input and an optional binarize_w marker".into(),
        );
        return;
    }
    if node.weights.is_some() && marker_slot.is_some() {
        cx.error(
            node,
            Rule::MissingWeights,
            "weights given both on the conv and on its marker".into(),
        );
        return;
    }
    let Some((input, domain)) = cx.input(node, 0) else {
        return;
    };
    let [kh, kw] = info.kernel;
    if kh == 0 || kw == 0 || info.filters == 0 {
        cx.error(node, Rule::WeightShape, "kernel dims and filters must be >= 1".into());
        return;
    }
    if info.stride == 0 {
        cx.error(node, Rule::Stride, "stride must be >= 1".into());
        return;
    }
    if info.pad != 0 && (info.pad != (kh - 1) / 2 || info.pad != (kw - 1) / 2) {
        cx.error(
            node,
            Rule::Padding,
            format!("pad must be 0 or (K-1)/2 = {}, got {}", (kh - 1) / 2, info.pad),
        );
        return;
    }
    let Some(blob_index) = info.weights else {
        cx.error(node, Rule::MissingWeights, "conv2d has no weight blob".into());
        return;
    };
    let blob = g.blob(blob_index);
    let d = blob.desc;
    if d.dtype != DType::F32 {
        cx.error(
            node,
            Rule::WeightShape,
            format!("weights must be f32 before lowering, found {:?}", d.dtype),
        );
        return;
    }
    if d.height != kh || d.width != kw || blob.count != info.filters {
        cx.error(
            node,
            Rule::WeightShape,
            format!(
                "weight blob is {}x{}x{}x{}, attributes say {kh}x{kw}xKdx{}",
                d.height, d.width, d.depth, blob.count, info.filters
            ),
        );
        return;
    }
    if d.depth != input.depth {
        cx.error(
            node,
            Rule::KernelDepthMismatch,
            format!("kernel depth Kd={} must equal input depth Id={}", d.depth, input.depth),
        );
        return;
    }
    let Some(out) = conv_output(input, info.kernel, info.filters, info.stride, info.pad) else {
        cx.error(
            node,
            Rule::EmptyOutput,
            format!("{kh}x{kw} kernel does not fit {input}"),
        );
        return;
    };

    if info.binarized {
        if !matches!(domain, Domain::Codes(_)) {
            cx.error(
                node,
                Rule::Domain,
                "binarized conv input must come from quantize_act (through maxpool/reorg/concat)".into(),
            );
        }
        if !exempt {
            if info.filters % 8 != 0 {
                cx.error(
                    node,
                    Rule::OutputMapsMultipleOf8,
                    format!(
                        "number of output feature maps Od={} is not a multiple of 8",
                        info.filters
                    ),
                );
            }
            if input.depth % 16 != 0 {
                cx.error(
                    node,
                    Rule::InputMapsMultipleOf16,
                    format!(
                        "number of input feature maps Id={} is not a multiple of 16",
                        input.depth
                    ),
                );
            }
        }
    } else if !exempt {
        cx.push(
            Severity::Warning,
            node,
            Rule::MissingQuantMarker,
            "interior conv has no binarize_w marker and stays f32".into(),
        );
    }
    cx.set(node, out, Domain::Real);
}

/// Checks a parsed graph against its structural rules and the accelerator's
/// design assumptions. Pure: diagnostics come back in topological order.
pub fn validate_graph(g: &Graph) -> Diagnostics {
    infer_shapes(g).1
}
