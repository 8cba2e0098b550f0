//! Wall-clock measurements: per-operation totals over whole-network runs and
//! packed binconv against the dense f32 convolution on equal shapes.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::engine::{binconv_packed, conv_f32, run_profiled, EngineError};
use crate::layout::bitpack;
use crate::model_ir::{BlobData, DType, Layout, Shape, TensorBlob, TensorDesc};
use crate::transform::{LOp, LoweredGraph};

/// Operation kinds reported by [`bench_ops`].
pub const OPS: [&str; 5] = ["binconv", "threshold", "maxpool", "conv_f32", "quantize"];

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

fn median(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        (s[n / 2 - 1] + s[n / 2]) / 2.0
    }
}

fn min(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.iter().copied().fold(f64::INFINITY, f64::min)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OpTiming {
    pub op: String,
    /// Lowered nodes of this kind.
    pub nodes: usize,
    pub median_ms: f64,
    pub min_ms: f64,
    /// Per-repeat totals over all nodes of this kind.
    pub samples_ms: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub repeats: usize,
    pub threads: usize,
    pub ops: Vec<OpTiming>,
    pub total_median_ms: f64,
    pub total_samples_ms: Vec<f64>,
}

impl BenchReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is serializable")
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{} repeats, {} threads\n", self.repeats, self.threads);
        let _ = writeln!(out, "{:<10} {:>6} {:>12} {:>12}", "op", "nodes", "median_ms", "min_ms");
        for r in &self.ops {
            let _ = writeln!(
                out,
                "{:<10} {:>6} {:>12.3} {:>12.3}",
                r.op, r.nodes, r.median_ms, r.min_ms
            );
        }
        let _ = write!(out, "network median {:.3} ms", self.total_median_ms);
        out
    }
}

fn op_row(op: &LOp) -> Option<usize> {
    let kind = match op {
        LOp::BinConv { .. } => "binconv",
        LOp::Threshold { .. } => "threshold",
        LOp::MaxPool { .. } => "maxpool",
        LOp::ConvF32 { .. } => "conv_f32",
        LOp::Quantize { .. } => "quantize",
        _ => return None,
    };
    OPS.iter().position(|k| *k == kind)
}

/// Runs the network `repeats` times and sums node times per operation kind.
pub fn bench_ops(
    lg: &LoweredGraph,
    image: &TensorBlob,
    repeats: usize,
    threads: usize,
) -> Result<BenchReport, EngineError> {
    let rows: Vec<Option<usize>> = lg.nodes.iter().map(|n| op_row(&n.op)).collect();
    let mut samples = vec![Vec::with_capacity(repeats); OPS.len()];
    let mut totals = Vec::with_capacity(repeats);
    for _ in 0..repeats.max(1) {
        let start = Instant::now();
        let (_, profile) = run_profiled(lg, image, threads)?;
        totals.push(ms(start.elapsed()));
        let mut per = vec![0.0; OPS.len()];
        for (t, row) in profile.node_times.iter().zip(&rows) {
            if let Some(r) = row {
                per[*r] += ms(*t);
            }
        }
        for (s, v) in samples.iter_mut().zip(per) {
            s.push(v);
        }
    }
    let ops = OPS
        .iter()
        .enumerate()
        .map(|(r, op)| OpTiming {
            op: op.to_string(),
            nodes: rows.iter().filter(|x| **x == Some(r)).count(),
            median_ms: median(&samples[r]),
            min_ms: min(&samples[r]),
            samples_ms: samples[r].clone(),
        })
        .collect();
    Ok(BenchReport {
        repeats: repeats.max(1),
        threads,
        ops,
        total_median_ms: median(&totals),
        total_samples_ms: totals,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerSpeed {
    pub node: String,
    pub input: Shape,
    pub kernel: [usize; 2],
    pub filters: usize,
    pub binconv_median_ms: f64,
    pub conv_f32_median_ms: f64,
    /// conv_f32 / binconv median.
    pub speedup: f64,
    pub binconv_samples_ms: Vec<f64>,
    pub conv_f32_samples_ms: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpeedComparison {
    pub repeats: usize,
    pub threads: usize,
    pub layers: Vec<LayerSpeed>,
    pub binconv_median_ms: f64,
    pub conv_f32_median_ms: f64,
    /// Ratio of the summed medians.
    pub speedup: f64,
}

impl SpeedComparison {
    pub fn to_text(&self) -> String {
        let mut out = format!("{} repeats, {} threads\n", self.repeats, self.threads);
        let _ = writeln!(
            out,
            "{:<12} {:>14} {:>12} {:>12} {:>9}",
            "layer", "shape", "binconv_ms", "conv_f32_ms", "speedup"
        );
        for l in &self.layers {
            let _ = writeln!(
                out,
                "{:<12} {:>14} {:>12.3} {:>12.3} {:>9.2}",
                l.node,
                format!("{}x{}x{}>{}", l.kernel[0], l.kernel[1], l.input.depth, l.filters),
                l.binconv_median_ms,
                l.conv_f32_median_ms,
                l.speedup
            );
        }
        let _ = write!(
            out,
            "total binconv {:.3} ms, conv_f32 {:.3} ms, speedup {:.2}x",
            self.binconv_median_ms, self.conv_f32_median_ms, self.speedup
        );
        out
    }
}

fn pool(threads: usize) -> Result<rayon::ThreadPool, EngineError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| EngineError::ThreadPool(e.to_string()))
}

/// Times every binarized layer of `lg` as packed binconv (activation packing
/// included) and as a dense f32 convolution of the same shape on the same
/// codes.
pub fn compare_binconv_f32(
    lg: &LoweredGraph,
    repeats: usize,
    threads: usize,
    seed: u64,
) -> Result<SpeedComparison, EngineError> {
    let pool = pool(threads)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let repeats = repeats.max(1);
    let mut layers = Vec::new();
    for (_, node) in lg.binconvs() {
        let LOp::BinConv {
            weights,
            kernel,
            filters,
            stride,
            pad,
        } = node.op
        else {
            continue;
        };
        let input = lg.nodes[node.inputs[0]].shape;
        let packed_w = lg.packed(weights).ok_or(EngineError::WrongDtype)?;
        let codes: Vec<u8> = (0..input.elements()).map(|_| rng.random_range(0..4u8)).collect();
        let acts = TensorBlob::single(input.desc(DType::U2, Layout::DepthInnermost), BlobData::U2(codes))?;
        let wdesc = TensorDesc::new(kernel[0], kernel[1], input.depth, DType::F32, Layout::DepthInnermost);
        let dense_w: Vec<f32> = (0..wdesc.elements() * filters)
            .map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 })
            .collect();
        let dense_w = TensorBlob::new(wdesc, filters, BlobData::F32(dense_w))?;

        let (mut b, mut f) = (Vec::with_capacity(repeats), Vec::with_capacity(repeats));
        for _ in 0..repeats {
            let t = pool.install(|| -> Result<Duration, EngineError> {
                let start = Instant::now();
                let packed = bitpack(&acts)?;
                std::hint::black_box(binconv_packed(&packed, packed_w, stride, pad)?);
                Ok(start.elapsed())
            })?;
            b.push(ms(t));
            let t = pool.install(|| -> Result<Duration, EngineError> {
                let start = Instant::now();
                std::hint::black_box(conv_f32(&acts, Some(0.5), &dense_w, None, stride, pad)?);
                Ok(start.elapsed())
            })?;
            f.push(ms(t));
        }
        let (bm, fm) = (median(&b), median(&f));
        layers.push(LayerSpeed {
            node: node.id.clone(),
            input,
            kernel,
            filters,
            binconv_median_ms: bm,
            conv_f32_median_ms: fm,
            speedup: fm / bm.max(1e-9),
            binconv_samples_ms: b,
            conv_f32_samples_ms: f,
        });
    }
    let bm: f64 = layers.iter().map(|l| l.binconv_median_ms).sum();
    let fm: f64 = layers.iter().map(|l| l.conv_f32_median_ms).sum();
    Ok(SpeedComparison {
        repeats,
        threads,
        layers,
        binconv_median_ms: bm,
        conv_f32_median_ms: fm,
        speedup: fm / bm.max(1e-9),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_and_min() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(min(&[3.0, 1.0, 2.0]), 1.0);
        assert_eq!(median(&[]), 0.0);
        assert_eq!(min(&[]), 0.0);
    }

    #[test]
    fn toy_bench_has_five_rows() {
        let g = crate::fixture::toy(1);
        let lg = crate::transform::lower_graph(&g).unwrap();
        let img = crate::fixture::random_image(g.input_shape(), 1);
        let r = bench_ops(&lg, &img, 3, 1).unwrap();
        assert_eq!(r.ops.len(), 5);
        assert!(r
            .ops
            .iter()
            .all(|o| o.nodes > 0 && o.median_ms > 0.0 && o.samples_ms.len() == 3));
    }
}
