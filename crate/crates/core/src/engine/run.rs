use std::time::{Duration, Instant};

use super::kernels::{
    apply_post, apply_thresholds, binconv_packed, concat, conv_f32, dequant, maxpool_f32, maxpool_u2, quantize, reorg,
};
use super::{AccumulatorMap, EngineError};
use crate::layout::{bitpack, to_depth_innermost};
use crate::model_ir::{BlobData, DType, Layout, TensorBlob};
use crate::transform::{dequantize, LOp, LoweredGraph};

/// Output of one lowered node.
#[derive(Debug, Clone, PartialEq)]
pub enum NodeValue {
    Real(TensorBlob),
    /// u2 codes with their quantizer step.
    Codes(TensorBlob, f32),
    Acc(AccumulatorMap),
}

impl NodeValue {
    fn blob(&self) -> Option<&TensorBlob> {
        match self {
            NodeValue::Real(t) | NodeValue::Codes(t, _) => Some(t),
            NodeValue::Acc(_) => None,
        }
    }

    /// Real-valued view; codes are dequantized.
    pub fn to_f32(&self) -> Option<TensorBlob> {
        match self {
            NodeValue::Real(t) => Some(t.clone()),
            NodeValue::Codes(t, delta) => {
                let v = t.as_u2()?.iter().map(|&c| dequantize(c, *delta) as f32).collect();
                Some(TensorBlob::single(t.desc.with_dtype(DType::F32), BlobData::F32(v)).ok()?)
            }
            NodeValue::Acc(_) => None,
        }
    }
}

/// Wall-clock time per lowered node.
#[derive(Debug, Clone, Default)]
pub struct Profile {
    pub node_times: Vec<Duration>,
}

fn pool(threads: usize) -> Result<rayon::ThreadPool, EngineError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| EngineError::ThreadPool(e.to_string()))
}

fn step(lg: &LoweredGraph, i: usize, vals: &[Option<NodeValue>], image: &TensorBlob) -> Result<NodeValue, EngineError> {
    let node = &lg.nodes[i];
    let arg = |k: usize| vals[node.inputs[k]].as_ref().expect("inputs are computed before use");
    let bad = || EngineError::ShapeMismatch(format!("node `{}` got an input of the wrong kind", node.id));
    let codes_delta = |v: &NodeValue| match v {
        NodeValue::Codes(_, d) => Some(*d),
        _ => None,
    };
    Ok(match &node.op {
        LOp::Input => NodeValue::Real(image.clone()),
        LOp::ConvF32 {
            weights,
            stride,
            pad,
            input_delta,
            post,
            ..
        } => {
            let src = arg(0).blob().ok_or_else(bad)?;
            let w = lg.dense(*weights).ok_or_else(bad)?;
            let mut out = conv_f32(src, *input_delta, w, None, *stride, *pad)?;
            apply_post(&mut out, post)?;
            NodeValue::Real(out)
        }
        LOp::Quantize { delta } => {
            let NodeValue::Real(t) = arg(0) else { return Err(bad()) };
            NodeValue::Codes(quantize(t, *delta)?, *delta)
        }
        LOp::BinConv {
            weights, stride, pad, ..
        } => {
            let NodeValue::Codes(t, _) = arg(0) else {
                return Err(bad());
            };
            let w = lg.packed(*weights).ok_or_else(bad)?;
            NodeValue::Acc(binconv_packed(&bitpack(t)?, w, *stride, *pad)?)
        }
        LOp::Threshold { unit, delta } => {
            let NodeValue::Acc(acc) = arg(0) else { return Err(bad()) };
            NodeValue::Codes(apply_thresholds(acc, unit)?, *delta)
        }
        LOp::Dequant { input_delta, post } => {
            let NodeValue::Acc(acc) = arg(0) else { return Err(bad()) };
            NodeValue::Real(dequant(acc, *input_delta, post))
        }
        LOp::MaxPool { size, stride } => match arg(0) {
            NodeValue::Real(t) => NodeValue::Real(maxpool_f32(t, *size, *stride)?),
            NodeValue::Codes(t, d) => NodeValue::Codes(maxpool_u2(t, *size, *stride)?, *d),
            NodeValue::Acc(_) => return Err(bad()),
        },
        LOp::Reorg { stride } => match arg(0) {
            NodeValue::Real(t) => NodeValue::Real(reorg(t, *stride)?),
            NodeValue::Codes(t, d) => NodeValue::Codes(reorg(t, *stride)?, *d),
            NodeValue::Acc(_) => return Err(bad()),
        },
        LOp::Concat => {
            let parts: Vec<&NodeValue> = (0..node.inputs.len()).map(arg).collect();
            let blobs: Option<Vec<&TensorBlob>> = parts.iter().map(|v| v.blob()).collect();
            let out = concat(&blobs.ok_or_else(bad)?)?;
            match codes_delta(parts[0]) {
                Some(d) => NodeValue::Codes(out, d),
                None => NodeValue::Real(out),
            }
        }
        LOp::Output => arg(0).clone(),
    })
}

fn prepare_image(lg: &LoweredGraph, image: &TensorBlob) -> Result<TensorBlob, EngineError> {
    let expected = lg.input_shape();
    if image.desc.shape() != expected || image.count != 1 || image.desc.dtype != DType::F32 {
        return Err(EngineError::InputShape {
            expected: format!("{expected} f32"),
            found: format!("{} {:?}", image.desc.shape(), image.desc.dtype),
        });
    }
    Ok(match image.desc.layout {
        Layout::DepthInnermost => image.clone(),
        Layout::HeightInnermost => to_depth_innermost(image)?,
    })
}

fn execute(
    lg: &LoweredGraph,
    image: &TensorBlob,
    threads: usize,
    keep_all: bool,
    mut on_node: impl FnMut(usize, Duration) + Send,
) -> Result<Vec<Option<NodeValue>>, EngineError> {
    let image = prepare_image(lg, image)?;
    let n = lg.nodes.len();
    let mut last_use = vec![0usize; n];
    for (i, node) in lg.nodes.iter().enumerate() {
        for &j in &node.inputs {
            last_use[j] = i;
        }
    }
    pool(threads)?.install(|| {
        let mut vals: Vec<Option<NodeValue>> = vec![None; n];
        for i in 0..n {
            let start = Instant::now();
            let v = step(lg, i, &vals, &image)?;
            on_node(i, start.elapsed());
            vals[i] = Some(v);
            if !keep_all {
                for &j in &lg.nodes[i].inputs {
                    if last_use[j] == i {
                        vals[j] = None;
                    }
                }
            }
        }
        Ok(vals)
    })
}

fn final_output(vals: &mut [Option<NodeValue>]) -> TensorBlob {
    let out = vals.last_mut().and_then(Option::take).expect("output node computed");
    out.to_f32().expect("output node yields real values or codes")
}

/// Runs the network on `threads` workers (0 = all cores) and returns the final
/// map as f32 (dequantized if the output is coded). Results do not depend on
/// `threads`.
pub fn run_network(lg: &LoweredGraph, image: &TensorBlob, threads: usize) -> Result<TensorBlob, EngineError> {
    let mut vals = execute(lg, image, threads, false, |_, _| {})?;
    Ok(final_output(&mut vals))
}

/// Runs the network and keeps every node's value, indexed like `lg.nodes`.
pub fn run_traced(lg: &LoweredGraph, image: &TensorBlob, threads: usize) -> Result<Vec<NodeValue>, EngineError> {
    let vals = execute(lg, image, threads, true, |_, _| {})?;
    Ok(vals.into_iter().map(|v| v.expect("all nodes computed")).collect())
}

/// Runs the network, timing each node.
pub fn run_profiled(
    lg: &LoweredGraph,
    image: &TensorBlob,
    threads: usize,
) -> Result<(TensorBlob, Profile), EngineError> {
    let mut profile = Profile {
        node_times: vec![Duration::ZERO; lg.nodes.len()],
    };
    let mut vals = execute(lg, image, threads, false, |i, d| profile.node_times[i] = d)?;
    Ok((final_output(&mut vals), profile))
}
