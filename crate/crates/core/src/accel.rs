//! Analytic PE/PEN accelerator model: engine sizing, compute cycles and
//! DRAM burst traffic under a given data ordering.
//!
//! A PE consumes one 32-bit packed word per cycle; a PEN runs `P` PEs against
//! the same input word with `P` different kernels. Memory traffic counts only
//! input activation reads, with no reuse between windows: every window fetches
//! the words it touches, contiguous words form bursts of at most `B` beats,
//! and each burst costs `L` issue cycles plus one cycle per beat.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::layout::{AddressOrder, Run, WindowGeometry};
use crate::model_ir::Shape;
use crate::transform::{LOp, LoweredGraph};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BurstConfig {
    pub issue_latency_cycles: u64,
    pub max_burst_beats: u64,
    pub bytes_per_beat: u64,
}

impl Default for BurstConfig {
    fn default() -> Self {
        Self {
            issue_latency_cycles: 20,
            max_burst_beats: 16,
            bytes_per_beat: 4,
        }
    }
}

/// Sizing inputs for [`choose_pen`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PenBudget {
    pub local_mem_budget: usize,
    pub burst: BurstConfig,
}

impl Default for PenBudget {
    fn default() -> Self {
        Self {
            local_mem_budget: 4 << 20,
            burst: BurstConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccelConfig {
    pub pe_word_bits: u32,
    /// PEN width `P`: kernels processed in parallel.
    pub num_parallel_kernels: usize,
    pub local_mem_budget: usize,
    pub burst: BurstConfig,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AccelError {
    #[error("local memory budget {budget} B cannot hold the P=16 working set ({needed} B)")]
    BudgetTooSmall { needed: usize, budget: usize },
    #[error("network has no binarized layers to size the engine for")]
    NoBinarizedLayers,
    #[error("node `{0}` is not a binarized convolution")]
    NotBinarizedLayer(String),
    #[error("burst length must be at least one beat")]
    ZeroBurst,
}

/// Geometry of one binarized convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvLayer {
    pub input: Shape,
    pub kernel: [usize; 2],
    pub filters: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvLayer {
    pub fn geometry(&self) -> WindowGeometry {
        WindowGeometry {
            input: self.input,
            kernel: self.kernel,
            stride: self.stride,
            pad: self.pad,
        }
    }

    fn words_per_dbar(&self) -> usize {
        self.input.depth.div_ceil(32)
    }

    /// Bytes of local RAM for one input stripe, `p` kernels and `p` accumulators.
    pub fn working_set(&self, p: usize) -> usize {
        let wpd = self.words_per_dbar();
        let stripe = self.kernel[0] * self.input.width * wpd * 2 * 4;
        let kernels = p * self.kernel[0] * self.kernel[1] * wpd * 4;
        stripe + kernels + p * 4
    }
}

/// Binarized convolutions of `lg` with their node ids.
pub fn binconv_layers(lg: &LoweredGraph) -> Vec<(String, ConvLayer)> {
    lg.nodes
        .iter()
        .filter_map(|n| match n.op {
            LOp::BinConv {
                kernel,
                filters,
                stride,
                pad,
                ..
            } => Some((
                n.id.clone(),
                ConvLayer {
                    input: lg.nodes[n.inputs[0]].shape,
                    kernel,
                    filters,
                    stride,
                    pad,
                },
            )),
            _ => None,
        })
        .collect()
}

/// Largest power-of-two PEN width in `[16, min input depth]` whose working
/// set fits the budget for every layer, preferring widths that divide every
/// layer's output depth.
pub fn choose_pen(lg: &LoweredGraph, budget: &PenBudget) -> Result<AccelConfig, AccelError> {
    choose_pen_for(
        &binconv_layers(lg).into_iter().map(|(_, l)| l).collect::<Vec<_>>(),
        budget,
    )
}

pub fn choose_pen_for(layers: &[ConvLayer], budget: &PenBudget) -> Result<AccelConfig, AccelError> {
    if budget.burst.max_burst_beats == 0 {
        return Err(AccelError::ZeroBurst);
    }
    let min_depth = layers
        .iter()
        .map(|l| l.input.depth)
        .min()
        .ok_or(AccelError::NoBinarizedLayers)?;
    let fits = |p: usize| layers.iter().map(|l| l.working_set(p)).max().unwrap_or(0) <= budget.local_mem_budget;
    let divides = |p: usize| layers.iter().all(|l| l.filters % p == 0);
    let mut candidates = vec![16usize];
    while candidates.last().unwrap() * 2 <= min_depth {
        candidates.push(candidates.last().unwrap() * 2);
    }
    let fitting: Vec<usize> = candidates.into_iter().filter(|&p| fits(p)).collect();
    let Some(&largest) = fitting.last() else {
        return Err(AccelError::BudgetTooSmall {
            needed: layers.iter().map(|l| l.working_set(16)).max().unwrap_or(0),
            budget: budget.local_mem_budget,
        });
    };
    let p = fitting.iter().rev().copied().find(|&p| divides(p)).unwrap_or(largest);
    Ok(AccelConfig {
        pe_word_bits: 32,
        num_parallel_kernels: p,
        local_mem_budget: budget.local_mem_budget,
        burst: budget.burst,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerEstimate {
    pub node: String,
    pub ordering: AddressOrder,
    pub compute_cycles: u64,
    pub mem_transactions: u64,
    pub mem_beats: u64,
    pub mem_cycles: u64,
    pub bound_cycles: u64,
}

/// Merges element runs into contiguous word intervals `(first, len)` of one plane.
pub fn word_runs(runs: &[Run], order: AddressOrder, s: Shape, out: &mut Vec<(usize, usize)>) {
    out.clear();
    for r in runs {
        let first = order.word_of(s, r.start);
        let last = order.word_of(s, r.start + r.len - 1);
        match out.last_mut() {
            Some((start, len)) if first <= *start + *len => {
                *len = (*len).max(last + 1 - *start);
            }
            _ => out.push((first, last - first + 1)),
        }
    }
}

/// Cycle and traffic estimate of one layer under `ordering`.
pub fn estimate_conv(node: &str, layer: &ConvLayer, cfg: &AccelConfig, ordering: AddressOrder) -> LayerEstimate {
    let geom = layer.geometry();
    let (oh, ow) = geom.output_hw();
    let p = cfg.num_parallel_kernels.max(1);
    let compute_cycles =
        (oh * ow * layer.filters.div_ceil(p) * layer.kernel[0] * layer.kernel[1] * layer.words_per_dbar()) as u64;

    let b = cfg.burst.max_burst_beats.max(1);
    let planes = 2u64;
    let (mut transactions, mut beats) = (0u64, 0u64);
    let mut words = Vec::new();
    geom.for_each_window(ordering, |runs| {
        word_runs(runs, ordering, layer.input, &mut words);
        for &(_, len) in &words {
            transactions += (len as u64).div_ceil(b);
            beats += len as u64;
        }
    });
    transactions *= planes;
    beats *= planes;
    let mem_cycles = transactions * cfg.burst.issue_latency_cycles + beats;
    LayerEstimate {
        node: node.to_string(),
        ordering,
        compute_cycles,
        mem_transactions: transactions,
        mem_beats: beats,
        mem_cycles,
        bound_cycles: compute_cycles.max(mem_cycles),
    }
}

/// Estimate for lowered node `node`, which must be a binarized convolution.
pub fn estimate_layer(
    lg: &LoweredGraph,
    node: usize,
    cfg: &AccelConfig,
    ordering: AddressOrder,
) -> Result<LayerEstimate, AccelError> {
    let n = &lg.nodes[node];
    let LOp::BinConv {
        kernel,
        filters,
        stride,
        pad,
        ..
    } = n.op
    else {
        return Err(AccelError::NotBinarizedLayer(n.id.clone()));
    };
    let layer = ConvLayer {
        input: lg.nodes[n.inputs[0]].shape,
        kernel,
        filters,
        stride,
        pad,
    };
    Ok(estimate_conv(&n.id, &layer, cfg, ordering))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerComparison {
    pub node: String,
    pub kernel: [usize; 2],
    pub input: Shape,
    pub filters: usize,
    pub depth_innermost: LayerEstimate,
    pub width_innermost: LayerEstimate,
    /// depth-innermost / width-innermost transactions.
    pub transaction_ratio: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Totals {
    pub compute_cycles: u64,
    pub mem_transactions: u64,
    pub mem_beats: u64,
    pub mem_cycles: u64,
    pub bound_cycles: u64,
}

impl Totals {
    fn add(&mut self, e: &LayerEstimate) {
        self.compute_cycles += e.compute_cycles;
        self.mem_transactions += e.mem_transactions;
        self.mem_beats += e.mem_beats;
        self.mem_cycles += e.mem_cycles;
        self.bound_cycles += e.bound_cycles;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderingReport {
    pub config: AccelConfig,
    pub layers: Vec<LayerComparison>,
    pub depth_innermost: Totals,
    pub width_innermost: Totals,
    pub transaction_ratio: f64,
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        1.0
    } else {
        a as f64 / b as f64
    }
}

/// Per-layer and total estimates under depth-innermost and width-innermost orderings.
pub fn compare_orderings(lg: &LoweredGraph, cfg: &AccelConfig) -> OrderingReport {
    let mut report = OrderingReport {
        config: *cfg,
        layers: Vec::new(),
        depth_innermost: Totals::default(),
        width_innermost: Totals::default(),
        transaction_ratio: 1.0,
    };
    for (node, layer) in binconv_layers(lg) {
        let d = estimate_conv(&node, &layer, cfg, AddressOrder::DepthInnermost);
        let w = estimate_conv(&node, &layer, cfg, AddressOrder::WidthInnermost);
        report.depth_innermost.add(&d);
        report.width_innermost.add(&w);
        report.layers.push(LayerComparison {
            node,
            kernel: layer.kernel,
            input: layer.input,
            filters: layer.filters,
            transaction_ratio: ratio(d.mem_transactions, w.mem_transactions),
            depth_innermost: d,
            width_innermost: w,
        });
    }
    report.transaction_ratio = ratio(
        report.depth_innermost.mem_transactions,
        report.width_innermost.mem_transactions,
    );
    report
}

impl OrderingReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is serializable")
    }

    /// One row per layer and ordering.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "node,ordering,kh,kw,ih,iw,id,od,compute_cycles,mem_transactions,mem_beats,mem_cycles,bound_cycles\n",
        );
        for l in &self.layers {
            for e in [&l.depth_innermost, &l.width_innermost] {
                let ordering = match e.ordering {
                    AddressOrder::DepthInnermost => "depth",
                    AddressOrder::WidthInnermost => "width",
                    AddressOrder::HeightInnermost => "height",
                };
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                    l.node,
                    ordering,
                    l.kernel[0],
                    l.kernel[1],
                    l.input.height,
                    l.input.width,
                    l.input.depth,
                    l.filters,
                    e.compute_cycles,
                    e.mem_transactions,
                    e.mem_beats,
                    e.mem_cycles,
                    e.bound_cycles
                );
            }
        }
        out
    }

    /// Human-readable table.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "PEN width P={}, burst <= {} beats, issue latency {} cycles\n",
            self.config.num_parallel_kernels, self.config.burst.max_burst_beats, self.config.burst.issue_latency_cycles
        );
        let _ = writeln!(
            out,
            "{:<20} {:>9} {:>14} {:>14} {:>14} {:>8}",
            "layer", "kernel", "compute", "txn(depth)", "txn(width)", "ratio"
        );
        for l in &self.layers {
            let _ = writeln!(
                out,
                "{:<20} {:>9} {:>14} {:>14} {:>14} {:>8.4}",
                l.node,
                format!("{}x{}x{}", l.kernel[0], l.kernel[1], l.input.depth),
                l.depth_innermost.compute_cycles,
                l.depth_innermost.mem_transactions,
                l.width_innermost.mem_transactions,
                l.transaction_ratio
            );
        }
        let _ = write!(
            out,
            "total transactions: depth {} / width {} (ratio {:.4})",
            self.depth_innermost.mem_transactions, self.width_innermost.mem_transactions, self.transaction_ratio
        );
        out
    }
}
