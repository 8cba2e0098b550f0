//! Seeded synthetic networks: `toy`, `darknet19_320` and `yolov2_320`.
//!
//! Weights are random; batch-norm statistics are set from the expected
//! pre-activation spread so every quantizer sees a spread of codes.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::model_ir::{BlobData, DType, Graph, Layout, Node, Op, Shape, TensorBlob, TensorDesc};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Arch {
    Toy,
    Darknet19_320,
    Yolov2_320,
}

impl Arch {
    pub const ALL: [Arch; 3] = [Arch::Toy, Arch::Darknet19_320, Arch::Yolov2_320];

    pub fn name(self) -> &'static str {
        match self {
            Arch::Toy => "toy",
            Arch::Darknet19_320 => "darknet19_320",
            Arch::Yolov2_320 => "yolov2_320",
        }
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown architecture `{0}` (expected toy, darknet19_320 or yolov2_320)")]
pub struct UnknownArchitecture(pub String);

impl FromStr for Arch {
    type Err = UnknownArchitecture;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Arch::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| UnknownArchitecture(s.to_string()))
    }
}

/// Per-channel ops placed after a conv.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Chain {
    /// batchnorm, leaky_relu(0.1)
    BnLeaky,
    /// scale, bias, leaky_relu(0.1)
    ScaleBiasLeaky,
    /// batchnorm only
    Bn,
    /// bias only (detection head)
    Bias,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvSpec {
    pub kernel: usize,
    pub filters: usize,
    pub stride: usize,
    pub binarized: bool,
    pub chain: Chain,
    /// 2x2/2 max-pool between the chain and the quantizer.
    pub pool: bool,
    /// Quantizer step; `None` leaves the output real-valued.
    pub quant: Option<f32>,
}

impl ConvSpec {
    pub fn new(kernel: usize, filters: usize) -> Self {
        Self {
            kernel,
            filters,
            stride: 1,
            binarized: true,
            chain: Chain::BnLeaky,
            pool: false,
            quant: Some(0.5),
        }
    }

    pub fn f32(mut self) -> Self {
        self.binarized = false;
        self
    }

    pub fn pooled(mut self) -> Self {
        self.pool = true;
        self
    }

    pub fn stride(mut self, s: usize) -> Self {
        self.stride = s;
        self
    }

    pub fn chain(mut self, c: Chain) -> Self {
        self.chain = c;
        self
    }

    pub fn quant(mut self, q: Option<f32>) -> Self {
        self.quant = q;
        self
    }
}

#[derive(Debug, Clone, Copy)]
struct Tensor {
    shape: Shape,
    /// Expected second moment of the values, for calibration.
    m2: f64,
}

/// Incremental graph builder with seeded parameters.
pub struct NetBuilder {
    nodes: Vec<Node>,
    blobs: Vec<TensorBlob>,
    tensors: HashMap<String, Tensor>,
    rng: ChaCha8Rng,
    convs: usize,
}

impl NetBuilder {
    pub fn new(seed: u64, input: Shape) -> Self {
        let mut b = Self {
            nodes: Vec::new(),
            blobs: Vec::new(),
            tensors: HashMap::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            convs: 0,
        };
        b.push(
            Node::new(
                "input",
                Op::Input {
                    height: input.height,
                    width: input.width,
                    depth: input.depth,
                },
                &[],
            ),
            input,
            1.0 / 3.0,
        );
        b
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub fn shape(&self, id: &str) -> Shape {
        self.tensors[id].shape
    }

    fn push(&mut self, node: Node, shape: Shape, m2: f64) -> String {
        let id = node.id.clone();
        self.tensors.insert(id.clone(), Tensor { shape, m2 });
        self.nodes.push(node);
        id
    }

    fn normal(&mut self, mean: f64, sd: f64) -> f64 {
        Normal::new(mean, sd).expect("finite sd").sample(&mut self.rng)
    }

    fn vector(&mut self, n: usize, f: impl Fn(&mut Self) -> f64) -> Vec<f32> {
        (0..n).map(|_| f(self) as f32).collect()
    }

    /// Random quantizer step in [0.3, 0.7].
    pub fn random_step(&mut self) -> f32 {
        self.rng.random_range(0.3f32..0.7)
    }

    /// Appends conv, chain, optional pool and optional quantizer; returns the last id.
    pub fn conv(&mut self, input: &str, spec: ConvSpec) -> String {
        self.convs += 1;
        let n = self.convs;
        let src = self.tensors[input];
        let k = spec.kernel;
        let pad = (k - 1) / 2;
        let out = Shape::new(
            (src.shape.height + 2 * pad - k) / spec.stride + 1,
            (src.shape.width + 2 * pad - k) / spec.stride + 1,
            spec.filters,
        );
        let fan_in = k * k * src.shape.depth;
        let sd_w = (2.0 / fan_in as f64).sqrt();
        let weights: Vec<f32> = (0..fan_in * spec.filters)
            .map(|_| self.normal(0.0, sd_w) as f32)
            .collect();
        let desc = TensorDesc::new(k, k, src.shape.depth, DType::F32, Layout::HeightInnermost);
        self.blobs
            .push(TensorBlob::new(desc, spec.filters, BlobData::F32(weights)).expect("consistent weight blob"));
        let blob = self.blobs.len() - 1;
        let w2 = if spec.binarized { 1.0 } else { sd_w * sd_w };
        let spread = (fan_in as f64 * src.m2 * w2).sqrt().max(1e-3);

        let op = Op::Conv2d {
            kernel: [k, k],
            filters: spec.filters,
            stride: spec.stride,
            pad,
            binarized: false,
        };
        let conv_id = format!("conv{n}");
        let conv = if spec.binarized {
            let marker = format!("bw{n}");
            self.nodes
                .push(Node::new(marker.clone(), Op::BinarizeW {}, &[]).with_weights(blob));
            Node::new(conv_id, op, &[input, &marker])
        } else {
            Node::new(conv_id, op, &[input]).with_weights(blob)
        };
        let mut last = self.push(conv, out, spread * spread);

        let c = spec.filters;
        let mut chain: Vec<(String, Op)> = Vec::new();
        match spec.chain {
            Chain::BnLeaky | Chain::Bn => {
                let gamma = self.vector(c, |b| {
                    let g = b.normal(1.0, 0.3);
                    if b.rng.random_bool(0.1) {
                        -g
                    } else {
                        g
                    }
                });
                let beta = self.vector(c, |b| b.normal(0.0, 0.2));
                let mean = self.vector(c, |b| b.normal(0.0, 0.1 * spread));
                let var = self.vector(c, |b| spread * spread * b.rng.random_range(0.5..2.0));
                chain.push((
                    format!("bn{n}"),
                    Op::BatchNorm {
                        gamma,
                        beta,
                        mean,
                        var,
                        eps: 1e-5,
                    },
                ));
            }
            Chain::ScaleBiasLeaky => {
                let values = self.vector(c, |b| {
                    let s = b.rng.random_range(0.5..1.5) / spread;
                    if b.rng.random_bool(0.1) {
                        -s
                    } else {
                        s
                    }
                });
                chain.push((format!("scale{n}"), Op::Scale { values }));
                let values = self.vector(c, |b| b.normal(0.0, 0.2));
                chain.push((format!("bias{n}"), Op::Bias { values }));
            }
            Chain::Bias => {
                let values = self.vector(c, |b| b.normal(0.0, 0.1));
                chain.push((format!("bias{n}"), Op::Bias { values }));
            }
            Chain::None => {}
        }
        if matches!(spec.chain, Chain::BnLeaky | Chain::ScaleBiasLeaky) {
            chain.push((format!("leaky{n}"), Op::LeakyRelu { slope: 0.1 }));
        }
        let m2 = if matches!(spec.chain, Chain::None | Chain::Bias) {
            spread * spread
        } else {
            1.0
        };
        for (id, op) in chain {
            last = self.push(Node::new(id, op, &[&last]), out, m2);
        }
        if spec.pool {
            last = self.maxpool(&last, 2, 2);
        }
        if let Some(delta) = spec.quant {
            last = self.quantize(&last, delta);
        }
        last
    }

    pub fn maxpool(&mut self, input: &str, size: usize, stride: usize) -> String {
        let src = self.tensors[input];
        let shape = Shape::new(
            (src.shape.height - size) / stride + 1,
            (src.shape.width - size) / stride + 1,
            src.shape.depth,
        );
        let id = format!("pool_{input}");
        self.push(Node::new(id, Op::MaxPool { size, stride }, &[input]), shape, src.m2)
    }

    pub fn quantize(&mut self, input: &str, delta: f32) -> String {
        let shape = self.tensors[input].shape;
        let id = format!("q_{input}");
        let m2 = 2.5 * (delta as f64).powi(2);
        self.push(Node::new(id, Op::QuantizeAct { delta }, &[input]), shape, m2)
    }

    pub fn reorg(&mut self, input: &str, stride: usize) -> String {
        let src = self.tensors[input];
        let shape = Shape::new(
            src.shape.height / stride,
            src.shape.width / stride,
            src.shape.depth * stride * stride,
        );
        let id = format!("reorg_{input}");
        self.push(Node::new(id, Op::Reorg { stride }, &[input]), shape, src.m2)
    }

    pub fn concat(&mut self, inputs: &[&str]) -> String {
        let first = self.tensors[inputs[0]];
        let depth = inputs.iter().map(|i| self.tensors[*i].shape.depth).sum();
        let shape = Shape::new(first.shape.height, first.shape.width, depth);
        let id = format!("concat_{}", inputs.join("_"));
        self.push(Node::new(id, Op::Concat {}, inputs), shape, first.m2)
    }

    pub fn finish(mut self, input: &str) -> Graph {
        self.nodes.push(Node::new("output", Op::Output {}, &[input]));
        Graph::new(self.nodes, self.blobs).expect("builder emits a well-formed graph")
    }
}

pub fn generate(arch: Arch, seed: u64) -> Graph {
    match arch {
        Arch::Toy => toy(seed),
        Arch::Darknet19_320 => darknet19_320(seed),
        Arch::Yolov2_320 => yolov2_320(seed),
    }
}

/// 6 convs on a 16x16x3 input, covering every lowered node kind.
pub fn toy(seed: u64) -> Graph {
    let mut b = NetBuilder::new(seed, Shape::new(16, 16, 3));
    let d = b.random_step();
    let x = b.conv("input", ConvSpec::new(3, 16).f32().quant(Some(d)));
    let d = b.random_step();
    let x = b.conv(&x, ConvSpec::new(3, 32).pooled().quant(Some(d)));
    let shared = b.random_step();
    let a = b.conv(
        &x,
        ConvSpec::new(1, 16).chain(Chain::ScaleBiasLeaky).quant(Some(shared)),
    );
    let c = b.conv(&a, ConvSpec::new(3, 32).stride(2).quant(Some(shared)));
    let r = b.reorg(&a, 2);
    let x = b.concat(&[&r, &c]);
    let x = b.conv(&x, ConvSpec::new(3, 32).chain(Chain::Bn).quant(None));
    let x = b.conv(&x, ConvSpec::new(1, 10).f32().chain(Chain::Bias).quant(None));
    b.finish(&x)
}

/// Darknet-19 backbone (convs 1-18) on a 320x320x3 input; returns the builder,
/// the last quantized activation and the conv13 activation before its pool.
fn darknet_backbone(seed: u64) -> (NetBuilder, String, String) {
    let mut b = NetBuilder::new(seed, Shape::new(320, 320, 3));
    let d = b.random_step();
    let mut x = b.conv("input", ConvSpec::new(3, 32).f32().pooled().quant(Some(d)));
    let body: [(usize, usize, bool); 17] = [
        (3, 64, true),
        (3, 128, false),
        (1, 64, false),
        (3, 128, true),
        (3, 256, false),
        (1, 128, false),
        (3, 256, true),
        (3, 512, false),
        (1, 256, false),
        (3, 512, false),
        (1, 256, false),
        (3, 512, false),
        (3, 1024, false),
        (1, 512, false),
        (3, 1024, false),
        (1, 512, false),
        (3, 1024, false),
    ];
    let mut route = String::new();
    for (i, (k, f, pool)) in body.into_iter().enumerate() {
        let d = b.random_step();
        let spec = ConvSpec::new(k, f).quant(Some(d));
        x = b.conv(&x, if pool { spec.pooled() } else { spec });
        if i == 11 {
            // conv13: its activation also feeds the passthrough
            route = x.clone();
            x = b.maxpool(&x, 2, 2);
        }
    }
    (b, x, route)
}

/// 19 convs, 5 max-pools, batch-norm + leaky chains; first and last conv f32.
pub fn darknet19_320(seed: u64) -> Graph {
    let (mut b, x, _) = darknet_backbone(seed);
    let x = b.conv(&x, ConvSpec::new(1, 125).f32().chain(Chain::Bias).quant(None));
    b.finish(&x)
}

/// Darknet-19 backbone plus the YOLOv2 detection tail with the
/// reorg/concat passthrough from conv13; 22 convs.
pub fn yolov2_320(seed: u64) -> Graph {
    let (mut b, x, route) = darknet_backbone(seed);
    let Op::QuantizeAct { delta: shared } = b.nodes.iter().find(|n| n.id == route).expect("route").op else {
        unreachable!()
    };
    let d = b.random_step();
    let x = b.conv(&x, ConvSpec::new(3, 1024).quant(Some(d)));
    let x = b.conv(&x, ConvSpec::new(3, 1024).quant(Some(shared)));
    let r = b.reorg(&route, 2);
    let x = b.concat(&[&r, &x]);
    let d = b.random_step();
    let x = b.conv(&x, ConvSpec::new(3, 1024).quant(Some(d)));
    let x = b.conv(&x, ConvSpec::new(1, 125).f32().chain(Chain::Bias).quant(None));
    b.finish(&x)
}

/// Uniform [0, 1) image, depth-innermost f32.
pub fn random_image(shape: Shape, seed: u64) -> TensorBlob {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..shape.elements()).map(|_| rng.random::<f32>()).collect();
    TensorBlob::single(shape.desc(DType::F32, Layout::DepthInnermost), BlobData::F32(data)).expect("sized image")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model_ir::validate_graph;

    #[test]
    fn architectures_are_valid() {
        for arch in Arch::ALL {
            let g = generate(arch, 7);
            let diags = validate_graph(&g);
            assert!(diags.is_empty(), "{arch}: {diags:?}");
        }
    }

    #[test]
    fn darknet_structure() {
        let g = darknet19_320(1);
        assert_eq!(g.conv_nodes().count(), 19);
        assert_eq!(g.nodes().filter(|n| matches!(n.op, Op::MaxPool { .. })).count(), 5);
        assert_eq!(g.input_shape(), Shape::new(320, 320, 3));
        assert_eq!(yolov2_320(1).conv_nodes().count(), 22);
    }

    #[test]
    fn seeded() {
        assert_eq!(toy(3), toy(3));
        assert_ne!(toy(3), toy(4));
        assert_eq!("yolov2_320".parse::<Arch>(), Ok(Arch::Yolov2_320));
        assert!("resnet".parse::<Arch>().is_err());
    }
}
