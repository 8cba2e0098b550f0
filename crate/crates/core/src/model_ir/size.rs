use serde::Serialize;

use super::graph::Graph;
use super::validate::conv_info;
use crate::transform::{channel_chain, LOp, LoweredGraph};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerSize {
    pub node: String,
    pub binarized: bool,
    /// f32 weights plus the per-channel vectors of the layer's chain.
    pub dense_bytes: usize,
    /// Packed weight words plus threshold tables for binarized layers;
    /// equal to `dense_bytes` for layers kept at f32.
    pub packed_bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SizeReport {
    pub layers: Vec<LayerSize>,
    pub dense_total: usize,
    pub packed_total: usize,
    pub ratio: f64,
}

impl SizeReport {
    pub fn dense_mib(&self) -> f64 {
        self.dense_total as f64 / (1u64 << 20) as f64
    }

    pub fn packed_mib(&self) -> f64 {
        self.packed_total as f64 / (1u64 << 20) as f64
    }
}

impl std::fmt::Display for SizeReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(
            f,
            "{:<24} {:>8} {:>14} {:>14}",
            "layer", "kind", "dense_bytes", "packed_bytes"
        )?;
        for l in &self.layers {
            let kind = if l.binarized { "binconv" } else { "conv_f32" };
            writeln!(
                f,
                "{:<24} {:>8} {:>14} {:>14}",
                l.node, kind, l.dense_bytes, l.packed_bytes
            )?;
        }
        write!(
            f,
            "total dense {} B ({:.2} MiB), packed {} B ({:.2} MiB), ratio {:.3}",
            self.dense_total,
            self.dense_mib(),
            self.packed_total,
            self.packed_mib(),
            self.ratio
        )
    }
}

/// Per-conv dense versus lowered byte counts. Scalar attributes (steps,
/// epsilons, slopes) are not counted on either side.
pub fn model_size_report(g: &Graph, lowered: &LoweredGraph) -> SizeReport {
    let consumers = g.consumer_map();
    let mut layers = Vec::new();
    for node in g.conv_nodes() {
        let Some(info) = conv_info(g, node) else { continue };
        let Some(weights) = info.weights else { continue };
        let weight_bytes = g.blob(weights).elements() * g.blob(weights).count * 4;
        let chain_bytes: usize = channel_chain(g, &consumers, &node.id)
            .iter()
            .map(|n| n.op.channel_params() * 4)
            .sum();
        let dense_bytes = weight_bytes + chain_bytes;

        let mut binarized = false;
        let mut packed_bytes = 0;
        for ln in lowered
            .nodes
            .iter()
            .filter(|n| n.layer.as_deref() == Some(node.id.as_str()))
        {
            match &ln.op {
                LOp::BinConv { weights, .. } => {
                    binarized = true;
                    packed_bytes += lowered.packed(*weights).map_or(0, |p| p.byte_len());
                }
                LOp::Threshold { unit, .. } => packed_bytes += unit.byte_len(),
                LOp::Dequant { post, .. } => packed_bytes += post.iter().map(|op| op.params() * 4).sum::<usize>(),
                _ => {}
            }
        }
        if !binarized {
            packed_bytes = dense_bytes;
        }
        layers.push(LayerSize {
            node: node.id.clone(),
            binarized,
            dense_bytes,
            packed_bytes,
        });
    }
    let dense_total = layers.iter().map(|l| l.dense_bytes).sum();
    let packed_total = layers.iter().map(|l| l.packed_bytes).sum::<usize>();
    SizeReport {
        layers,
        dense_total,
        packed_total,
        ratio: if packed_total == 0 {
            1.0
        } else {
            dense_total as f64 / packed_total as f64
        },
    }
}
