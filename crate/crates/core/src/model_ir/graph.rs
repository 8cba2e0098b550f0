use std::collections::{BTreeSet, HashMap, VecDeque};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::tensor::{Shape, TensorBlob};

fn is_false(b: &bool) -> bool {
    !*b
}

/// Node operation with its kind-specific attributes (pre-lowering form).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", deny_unknown_fields)]
pub enum Op {
    #[serde(rename = "input")]
    Input { height: usize, width: usize, depth: usize },
    #[serde(rename = "conv2d")]
    Conv2d {
        /// `[Kh, Kw]`
        kernel: [usize; 2],
        filters: usize,
        stride: usize,
        pad: usize,
        /// Set once the weight-quantization marker has been pruned.
        #[serde(default, skip_serializing_if = "is_false")]
        binarized: bool,
    },
    #[serde(rename = "batchnorm")]
    BatchNorm {
        gamma: Vec<f32>,
        beta: Vec<f32>,
        mean: Vec<f32>,
        var: Vec<f32>,
        eps: f32,
    },
    #[serde(rename = "scale")]
    Scale { values: Vec<f32> },
    #[serde(rename = "bias")]
    Bias { values: Vec<f32> },
    #[serde(rename = "leaky_relu")]
    LeakyRelu { slope: f32 },
    #[serde(rename = "quantize_act")]
    QuantizeAct { delta: f32 },
    /// Weight-quantization marker: holds the kernel blob of the conv it feeds.
    #[serde(rename = "binarize_w")]
    BinarizeW {},
    #[serde(rename = "maxpool")]
    MaxPool { size: usize, stride: usize },
    /// Space-to-depth by `stride` (YOLOv2 passthrough).
    #[serde(rename = "reorg")]
    Reorg { stride: usize },
    /// Depth-wise concatenation in input order.
    #[serde(rename = "concat")]
    Concat {},
    #[serde(rename = "output")]
    Output {},
}

impl Op {
    pub fn kind(&self) -> &'static str {
        match self {
            Op::Input { .. } => "input",
            Op::Conv2d { .. } => "conv2d",
            Op::BatchNorm { .. } => "batchnorm",
            Op::Scale { .. } => "scale",
            Op::Bias { .. } => "bias",
            Op::LeakyRelu { .. } => "leaky_relu",
            Op::QuantizeAct { .. } => "quantize_act",
            Op::BinarizeW {} => "binarize_w",
            Op::MaxPool { .. } => "maxpool",
            Op::Reorg { .. } => "reorg",
            Op::Concat {} => "concat",
            Op::Output {} => "output",
        }
    }

    /// Per-channel nodes that may sit between a conv and the next quantizer.
    pub fn is_channel_op(&self) -> bool {
        matches!(
            self,
            Op::BatchNorm { .. } | Op::Scale { .. } | Op::Bias { .. } | Op::LeakyRelu { .. }
        )
    }

    /// Parameter count of per-channel vectors carried in the attributes.
    pub fn channel_params(&self) -> usize {
        match self {
            Op::BatchNorm {
                gamma, beta, mean, var, ..
            } => gamma.len() + beta.len() + mean.len() + var.len(),
            Op::Scale { values } | Op::Bias { values } => values.len(),
            _ => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Node {
    pub id: String,
    pub op: Op,
    #[serde(default)]
    pub inputs: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<usize>,
}

impl Node {
    pub fn new(id: impl Into<String>, op: Op, inputs: &[&str]) -> Self {
        Self {
            id: id.into(),
            op,
            inputs: inputs.iter().map(|s| s.to_string()).collect(),
            weights: None,
        }
    }

    pub fn with_weights(mut self, blob: usize) -> Self {
        self.weights = Some(blob);
        self
    }

    pub fn is_conv(&self) -> bool {
        matches!(self.op, Op::Conv2d { .. })
    }

    fn is_weight_source(&self) -> bool {
        matches!(self.op, Op::BinarizeW {}) && self.inputs.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GraphError {
    #[error("duplicate node id `{0}`")]
    DuplicateNode(String),
    #[error("node `{node}` reads undefined input `{input}`")]
    DanglingInput { node: String, input: String },
    #[error("node `{node}` references missing blob #{blob}")]
    DanglingBlob { node: String, blob: usize },
    #[error("graph contains a cycle through node `{node}`")]
    CyclicGraph { node: String },
    #[error("graph must have exactly one input node, found {0}")]
    InputCount(usize),
    #[error("graph must have exactly one output node, found {0}")]
    OutputCount(usize),
    #[error("node `{0}` is not reachable from the input")]
    Unreachable(String),
}

/// Directed acyclic CNN graph with its parameter blobs.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    nodes: IndexMap<String, Node>,
    topo_order: Vec<String>,
    blobs: Vec<TensorBlob>,
}

impl Graph {
    /// Builds a graph, checking structure and computing a topological order.
    ///
    /// The order is Kahn's algorithm with ties broken by position in `nodes`, so
    /// a node list that is already topologically sorted is kept as-is.
    pub fn new(nodes: Vec<Node>, blobs: Vec<TensorBlob>) -> Result<Self, GraphError> {
        let mut map = IndexMap::with_capacity(nodes.len());
        for node in nodes {
            if map.contains_key(&node.id) {
                return Err(GraphError::DuplicateNode(node.id));
            }
            map.insert(node.id.clone(), node);
        }

        for node in map.values() {
            for input in &node.inputs {
                if !map.contains_key(input) {
                    return Err(GraphError::DanglingInput {
                        node: node.id.clone(),
                        input: input.clone(),
                    });
                }
            }
            if let Some(b) = node.weights {
                if b >= blobs.len() {
                    return Err(GraphError::DanglingBlob {
                        node: node.id.clone(),
                        blob: b,
                    });
                }
            }
        }

        let topo_order = topo_sort(&map)?;

        let inputs = map.values().filter(|n| matches!(n.op, Op::Input { .. })).count();
        if inputs != 1 {
            return Err(GraphError::InputCount(inputs));
        }
        let outputs = map.values().filter(|n| matches!(n.op, Op::Output {})).count();
        if outputs != 1 {
            return Err(GraphError::OutputCount(outputs));
        }

        let graph = Self {
            nodes: map,
            topo_order,
            blobs,
        };
        graph.check_reachable()?;
        Ok(graph)
    }

    fn check_reachable(&self) -> Result<(), GraphError> {
        let consumers = self.consumer_map();
        let start = self.input_node().id.as_str();
        let mut seen: BTreeSet<&str> = BTreeSet::new();
        let mut queue = VecDeque::from([start]);
        seen.insert(start);
        while let Some(id) = queue.pop_front() {
            for &c in consumers.get(id).into_iter().flatten() {
                if seen.insert(c) {
                    queue.push_back(c);
                }
            }
        }
        for id in &self.topo_order {
            let node = &self.nodes[id];
            if !seen.contains(id.as_str()) && !node.is_weight_source() {
                return Err(GraphError::Unreachable(id.clone()));
            }
        }
        Ok(())
    }

    pub fn nodes(&self) -> impl Iterator<Item = &Node> {
        self.topo_order.iter().map(move |id| &self.nodes[id])
    }

    pub fn node(&self, id: &str) -> Option<&Node> {
        self.nodes.get(id)
    }

    pub fn topo_order(&self) -> &[String] {
        &self.topo_order
    }

    pub fn blobs(&self) -> &[TensorBlob] {
        &self.blobs
    }

    pub fn blob(&self, index: usize) -> &TensorBlob {
        &self.blobs[index]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn input_node(&self) -> &Node {
        self.nodes
            .values()
            .find(|n| matches!(n.op, Op::Input { .. }))
            .expect("graph invariant: one input node")
    }

    pub fn input_shape(&self) -> Shape {
        match self.input_node().op {
            Op::Input { height, width, depth } => Shape::new(height, width, depth),
            _ => unreachable!(),
        }
    }

    pub fn output_node(&self) -> &Node {
        self.nodes
            .values()
            .find(|n| matches!(n.op, Op::Output {}))
            .expect("graph invariant: one output node")
    }

    /// Map from node id to the ids of nodes reading it, in topological order.
    pub fn consumer_map(&self) -> HashMap<&str, Vec<&str>> {
        let mut map: HashMap<&str, Vec<&str>> = HashMap::new();
        for id in &self.topo_order {
            for input in &self.nodes[id].inputs {
                map.entry(input.as_str()).or_default().push(id.as_str());
            }
        }
        map
    }

    pub fn conv_nodes(&self) -> impl Iterator<Item = &Node> {
        self.nodes().filter(|n| n.is_conv())
    }

    /// Nodes in topological order, consuming the graph.
    pub fn into_parts(self) -> (Vec<Node>, Vec<TensorBlob>) {
        let mut nodes = self.nodes;
        let ordered = self
            .topo_order
            .iter()
            .map(|id| nodes.swap_remove(id).expect("topo ids are node ids"))
            .collect();
        (ordered, self.blobs)
    }
}

fn topo_sort(nodes: &IndexMap<String, Node>) -> Result<Vec<String>, GraphError> {
    let position: HashMap<&str, usize> = nodes.keys().enumerate().map(|(i, k)| (k.as_str(), i)).collect();
    let mut indegree = vec![0usize; nodes.len()];
    let mut consumers: Vec<Vec<usize>> = vec![Vec::new(); nodes.len()];
    for (i, node) in nodes.values().enumerate() {
        indegree[i] = node.inputs.len();
        for input in &node.inputs {
            consumers[position[input.as_str()]].push(i);
        }
    }
    let mut ready: BTreeSet<usize> = (0..nodes.len()).filter(|&i| indegree[i] == 0).collect();
    let mut order = Vec::with_capacity(nodes.len());
    while let Some(i) = ready.pop_first() {
        order.push(i);
        for &c in &consumers[i] {
            indegree[c] -= 1;
            if indegree[c] == 0 {
                ready.insert(c);
            }
        }
    }
    if order.len() != nodes.len() {
        let stuck = (0..nodes.len())
            .find(|&i| indegree[i] > 0)
            .expect("some node left with inputs");
        return Err(GraphError::CyclicGraph {
            node: nodes.get_index(stuck).unwrap().0.clone(),
        });
    }
    Ok(order
        .into_iter()
        .map(|i| nodes.get_index(i).unwrap().0.clone())
        .collect())
}
