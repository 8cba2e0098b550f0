//! Independent oracles for bqnn tests.
//!
//! Nothing here calls into the engine, the lowering or the layout code; only
//! the graph and tensor types are shared.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use bqnn_core::fixture::{Chain, ConvSpec, NetBuilder};
use bqnn_core::layout::AddressOrder;
use bqnn_core::model_ir::{Graph, Op, Shape};
use rand::Rng;

/// Value of one graph node in the real-valued simulator, depth-innermost.
#[derive(Debug, Clone, PartialEq)]
pub enum SimValue {
    Real(Vec<f32>),
    Codes(Vec<u8>, f32),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimTensor {
    pub shape: Shape,
    pub value: SimValue,
}

impl SimTensor {
    fn real(&self, i: usize) -> f64 {
        match &self.value {
            SimValue::Real(v) => v[i] as f64,
            SimValue::Codes(c, delta) => *delta as f64 * c[i] as f64,
        }
    }

    /// Real view (codes times their step, rounded to f32).
    pub fn to_f32(&self) -> Vec<f32> {
        (0..self.shape.elements()).map(|i| self.real(i) as f32).collect()
    }
}

fn at(s: Shape, h: usize, w: usize, d: usize) -> usize {
    (h * s.width + w) * s.depth + d
}

fn quant(x: f32, delta: f32) -> u8 {
    let v = (x as f64 / delta as f64 + 0.5).floor();
    if v >= 3.0 {
        3
    } else if v >= 1.0 {
        v as u8
    } else {
        0
    }
}

fn per_channel(src: &SimTensor, f: impl Fn(usize, f64) -> f32) -> SimValue {
    let d = src.shape.depth;
    let SimValue::Real(v) = &src.value else {
        panic!("channel op on codes");
    };
    SimValue::Real(v.iter().enumerate().map(|(i, &x)| f(i % d, x as f64)).collect())
}

/// Explicit-quantizer simulation of the unlowered graph: every node in
/// topological order, f32 between nodes, f64 inside each node. Binarized
/// convolutions use `sign(w)` weights on the real input.
pub fn simulate(g: &Graph, image: &[f32]) -> BTreeMap<String, SimTensor> {
    let mut vals: HashMap<String, SimTensor> = HashMap::new();
    for id in g.topo_order() {
        let node = g.node(id).expect("topo id");
        let input = |k: usize| &vals[&node.inputs[k]];
        let t = match &node.op {
            Op::Input { height, width, depth } => SimTensor {
                shape: Shape::new(*height, *width, *depth),
                value: SimValue::Real(image.to_vec()),
            },
            Op::BinarizeW {} => continue,
            Op::Conv2d {
                kernel,
                filters,
                stride,
                pad,
                binarized,
            } => {
                let src = input(0);
                let marker = node.inputs.get(1).and_then(|m| g.node(m));
                let blob = g.blob(marker.and_then(|m| m.weights).or(node.weights).expect("conv weights"));
                let sign = *binarized || marker.is_some();
                let w = blob.as_f32().expect("f32 weights");
                let (kh, kw, kd) = (kernel[0], kernel[1], src.shape.depth);
                let klen = kh * kw * kd;
                let is = src.shape;
                let oh = (is.height + 2 * pad - kh) / stride + 1;
                let ow = (is.width + 2 * pad - kw) / stride + 1;
                let os = Shape::new(oh, ow, *filters);
                let mut out = vec![0f32; os.elements()];
                for oy in 0..oh {
                    for ox in 0..ow {
                        for o in 0..*filters {
                            let mut acc = 0f64;
                            for ky in 0..kh {
                                for kx in 0..kw {
                                    let iy = (oy * stride + ky) as isize - *pad as isize;
                                    let ix = (ox * stride + kx) as isize - *pad as isize;
                                    if iy < 0 || ix < 0 || iy >= is.height as isize || ix >= is.width as isize {
                                        continue;
                                    }
                                    for d in 0..kd {
                                        let wv = w[o * klen + blob.desc.index(ky, kx, d)];
                                        let wv = if !sign {
                                            wv as f64
                                        } else if wv >= 0.0 {
                                            1.0
                                        } else {
                                            -1.0
                                        };
                                        acc += src.real(at(is, iy as usize, ix as usize, d)) * wv;
                                    }
                                }
                            }
                            out[at(os, oy, ox, o)] = acc as f32;
                        }
                    }
                }
                SimTensor {
                    shape: os,
                    value: SimValue::Real(out),
                }
            }
            Op::BatchNorm {
                gamma,
                beta,
                mean,
                var,
                eps,
            } => {
                let src = input(0);
                let value = per_channel(src, |c, x| {
                    let sd = (var[c] as f64 + *eps as f64).sqrt();
                    (gamma[c] as f64 * (x - mean[c] as f64) / sd + beta[c] as f64) as f32
                });
                SimTensor {
                    shape: src.shape,
                    value,
                }
            }
            Op::Scale { values } => {
                let src = input(0);
                let value = per_channel(src, |c, x| (x * values[c] as f64) as f32);
                SimTensor {
                    shape: src.shape,
                    value,
                }
            }
            Op::Bias { values } => {
                let src = input(0);
                let value = per_channel(src, |c, x| (x + values[c] as f64) as f32);
                SimTensor {
                    shape: src.shape,
                    value,
                }
            }
            Op::LeakyRelu { slope } => {
                let src = input(0);
                let value = per_channel(src, |_, x| if x >= 0.0 { x as f32 } else { (*slope as f64 * x) as f32 });
                SimTensor {
                    shape: src.shape,
                    value,
                }
            }
            Op::QuantizeAct { delta } => {
                let src = input(0);
                let SimValue::Real(v) = &src.value else {
                    panic!("quantizer on codes")
                };
                SimTensor {
                    shape: src.shape,
                    value: SimValue::Codes(v.iter().map(|&x| quant(x, *delta)).collect(), *delta),
                }
            }
            Op::MaxPool { size, stride } => {
                let src = input(0);
                let is = src.shape;
                let os = Shape::new(
                    (is.height - size) / stride + 1,
                    (is.width - size) / stride + 1,
                    is.depth,
                );
                let pick = |oy: usize, ox: usize, d: usize| {
                    let mut best = at(is, oy * stride, ox * stride, d);
                    for ky in 0..*size {
                        for kx in 0..*size {
                            let i = at(is, oy * stride + ky, ox * stride + kx, d);
                            if src.real(i) > src.real(best) {
                                best = i;
                            }
                        }
                    }
                    best
                };
                let idx: Vec<usize> = (0..os.height)
                    .flat_map(|y| (0..os.width).flat_map(move |x| (0..os.depth).map(move |d| (y, x, d))))
                    .map(|(y, x, d)| pick(y, x, d))
                    .collect();
                SimTensor {
                    shape: os,
                    value: gather(&src.value, &idx),
                }
            }
            Op::Reorg { stride } => {
                let src = input(0);
                let (is, s) = (src.shape, *stride);
                let os = Shape::new(is.height / s, is.width / s, is.depth * s * s);
                let mut idx = vec![0; os.elements()];
                for y in 0..os.height {
                    for x in 0..os.width {
                        for dy in 0..s {
                            for dx in 0..s {
                                for d in 0..is.depth {
                                    idx[at(os, y, x, (dy * s + dx) * is.depth + d)] = at(is, y * s + dy, x * s + dx, d);
                                }
                            }
                        }
                    }
                }
                SimTensor {
                    shape: os,
                    value: gather(&src.value, &idx),
                }
            }
            Op::Concat {} => {
                let parts: Vec<&SimTensor> = (0..node.inputs.len()).map(input).collect();
                let s0 = parts[0].shape;
                let depth = parts.iter().map(|p| p.shape.depth).sum();
                let os = Shape::new(s0.height, s0.width, depth);
                let value = match &parts[0].value {
                    SimValue::Real(_) => {
                        let mut v = Vec::with_capacity(os.elements());
                        for p in 0..s0.height * s0.width {
                            for t in &parts {
                                let d = t.shape.depth;
                                v.extend((0..d).map(|k| t.real(p * d + k) as f32));
                            }
                        }
                        SimValue::Real(v)
                    }
                    SimValue::Codes(_, delta) => {
                        let mut v = Vec::with_capacity(os.elements());
                        for p in 0..s0.height * s0.width {
                            for t in &parts {
                                let SimValue::Codes(c, _) = &t.value else {
                                    panic!("mixed concat")
                                };
                                let d = t.shape.depth;
                                v.extend_from_slice(&c[p * d..(p + 1) * d]);
                            }
                        }
                        SimValue::Codes(v, *delta)
                    }
                };
                SimTensor { shape: os, value }
            }
            Op::Output {} => input(0).clone(),
        };
        vals.insert(id.clone(), t);
    }
    vals.into_iter().collect()
}

fn gather(v: &SimValue, idx: &[usize]) -> SimValue {
    match v {
        SimValue::Real(x) => SimValue::Real(idx.iter().map(|&i| x[i]).collect()),
        SimValue::Codes(c, d) => SimValue::Codes(idx.iter().map(|&i| c[i]).collect(), *d),
    }
}

/// Naive binary convolution: `codes` is `h x w x d` depth-innermost,
/// `weights[o][ky][kx][d]` flattened, values in {-1, +1}.
#[allow(clippy::too_many_arguments)]
pub fn binconv_naive(
    codes: &[u8],
    input: Shape,
    weights: &[i8],
    kernel: [usize; 2],
    filters: usize,
    stride: usize,
    pad: usize,
) -> Vec<i32> {
    let (kh, kw, kd) = (kernel[0], kernel[1], input.depth);
    let oh = (input.height + 2 * pad - kh) / stride + 1;
    let ow = (input.width + 2 * pad - kw) / stride + 1;
    let mut out = Vec::with_capacity(oh * ow * filters);
    for oy in 0..oh {
        for ox in 0..ow {
            for o in 0..filters {
                let mut acc = 0i64;
                for ky in 0..kh {
                    for kx in 0..kw {
                        let iy = (oy * stride + ky) as i64 - pad as i64;
                        let ix = (ox * stride + kx) as i64 - pad as i64;
                        if iy < 0 || ix < 0 || iy >= input.height as i64 || ix >= input.width as i64 {
                            continue;
                        }
                        for d in 0..kd {
                            let a = codes[at(input, iy as usize, ix as usize, d)] as i64;
                            let w = weights[((o * kh + ky) * kw + kx) * kd + d] as i64;
                            acc += a * w;
                        }
                    }
                }
                out.push(acc as i32);
            }
        }
    }
    out
}

fn flat_address(order: AddressOrder, s: Shape, h: usize, w: usize, d: usize) -> usize {
    match order {
        AddressOrder::DepthInnermost => h * s.width * s.depth + w * s.depth + d,
        AddressOrder::WidthInnermost => d * s.height * s.width + h * s.width + w,
        AddressOrder::HeightInnermost => d * s.width * s.height + w * s.height + h,
    }
}

/// Every element address read by window `(oy, ox)`, sorted and deduplicated.
pub fn window_addresses(
    input: Shape,
    kernel: [usize; 2],
    order: AddressOrder,
    stride: usize,
    pad: usize,
    oy: usize,
    ox: usize,
) -> Vec<usize> {
    let mut set = BTreeSet::new();
    for ky in 0..kernel[0] {
        for kx in 0..kernel[1] {
            let iy = (oy * stride + ky) as i64 - pad as i64;
            let ix = (ox * stride + kx) as i64 - pad as i64;
            if iy < 0 || ix < 0 || iy >= input.height as i64 || ix >= input.width as i64 {
                continue;
            }
            for d in 0..input.depth {
                set.insert(flat_address(order, input, iy as usize, ix as usize, d));
            }
        }
    }
    set.into_iter().collect()
}

/// Number of maximal contiguous intervals in a sorted address list.
pub fn count_runs(addrs: &[usize]) -> usize {
    if addrs.is_empty() {
        return 0;
    }
    1 + addrs.windows(2).filter(|p| p[1] != p[0] + 1).count()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TraceTotals {
    pub windows: u64,
    pub runs: u64,
    pub elements: u64,
    /// Bursts for one activation plane.
    pub bursts: u64,
    /// Words fetched for one activation plane.
    pub beats: u64,
}

/// Brute-force trace over every output window: element runs, and bursts of at
/// most `max_burst` consecutive 32-bit words when each innermost line is
/// padded to whole words.
pub fn trace(
    input: Shape,
    kernel: [usize; 2],
    order: AddressOrder,
    stride: usize,
    pad: usize,
    max_burst: usize,
) -> TraceTotals {
    let oh = (input.height + 2 * pad - kernel[0]) / stride + 1;
    let ow = (input.width + 2 * pad - kernel[1]) / stride + 1;
    let line = match order {
        AddressOrder::DepthInnermost => input.depth,
        AddressOrder::WidthInnermost => input.width,
        AddressOrder::HeightInnermost => input.height,
    };
    let words_per_line = line.div_ceil(32);
    let mut t = TraceTotals::default();
    for oy in 0..oh {
        for ox in 0..ow {
            let addrs = window_addresses(input, kernel, order, stride, pad, oy, ox);
            t.windows += 1;
            t.runs += count_runs(&addrs) as u64;
            t.elements += addrs.len() as u64;
            let words: BTreeSet<usize> = addrs
                .iter()
                .map(|a| (a / line) * words_per_line + (a % line) / 32)
                .collect();
            let mut burst_len = 0usize;
            let mut prev: Option<usize> = None;
            for w in words {
                let extends = prev == Some(w.wrapping_sub(1)) && burst_len < max_burst;
                if !extends {
                    t.bursts += 1;
                    burst_len = 0;
                }
                burst_len += 1;
                t.beats += 1;
                prev = Some(w);
            }
        }
    }
    t
}

/// Random valid network on a small input: 2-5 convs with random kernels,
/// strides, chains and pools, first and last conv f32, optional
/// reorg/concat passthrough.
pub fn random_graph(rng: &mut impl Rng) -> Graph {
    let side = 4 * rng.random_range(2..=4usize);
    let input = Shape::new(side, side, rng.random_range(1..=4usize));
    let mut b = NetBuilder::new(rng.random(), input);
    let mut delta = rng.random_range(0.25f32..1.0);
    let mut x = b.conv("input", ConvSpec::new(3, 16).f32().quant(Some(delta)));
    for _ in 0..rng.random_range(1..=3usize) {
        let s = b.shape(&x);
        let k = if rng.random_bool(0.6) { 3 } else { 1 };
        let filters = 16 * rng.random_range(1..=3usize);
        let chain = match rng.random_range(0..4u8) {
            0 => Chain::BnLeaky,
            1 => Chain::ScaleBiasLeaky,
            2 => Chain::Bn,
            _ => Chain::None,
        };
        let halves = s.height % 2 == 0 && s.height >= 4;
        let passthrough = halves && rng.random_bool(0.4);
        let next = if passthrough {
            delta
        } else {
            rng.random_range(0.25f32..1.0)
        };
        let mut spec = ConvSpec::new(k, filters).chain(chain).quant(Some(next));
        if halves && rng.random_bool(0.5) {
            spec = spec.pooled();
        } else if halves {
            spec = spec.stride(2);
        }
        let prev = x.clone();
        x = b.conv(&x, spec);
        if passthrough {
            // both branches share the quantizer step
            let r = b.reorg(&prev, 2);
            x = b.concat(&[&r, &x]);
        }
        delta = next;
    }
    if rng.random_bool(0.3) {
        x = b.conv(&x, ConvSpec::new(3, 16).chain(Chain::Bn).quant(None));
    }
    let filters = rng.random_range(1..=10usize);
    x = b.conv(&x, ConvSpec::new(1, filters).f32().chain(Chain::Bias).quant(None));
    b.finish(&x)
}
