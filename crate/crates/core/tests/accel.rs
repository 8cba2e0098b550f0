use bqnn_core::accel::*;
use bqnn_core::fixture::{darknet19_320, toy};
use bqnn_core::layout::AddressOrder;
use bqnn_core::model_ir::Shape;
use bqnn_core::transform::lower_graph;
use bqnn_testkit::trace;
use proptest::prelude::*;

fn cfg(p: usize) -> AccelConfig {
    AccelConfig {
        pe_word_bits: 32,
        num_parallel_kernels: p,
        local_mem_budget: 4 << 20,
        burst: BurstConfig::default(),
    }
}

fn layer_strategy() -> impl Strategy<Value = ConvLayer> {
    (
        1usize..10,
        1usize..10,
        1usize..200,
        1usize..4,
        1usize..4,
        1usize..64,
        1usize..3,
        0usize..2,
    )
        .prop_filter("kernel fits", |&(h, w, _, kh, kw, _, _, pad)| {
            kh <= h + 2 * pad && kw <= w + 2 * pad
        })
        .prop_map(|(h, w, d, kh, kw, filters, stride, pad)| ConvLayer {
            input: Shape::new(h, w, d),
            kernel: [kh, kw],
            filters,
            stride,
            pad,
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn traffic_matches_brute_force_trace(l in layer_strategy(), b in 1u64..20) {
        let mut c = cfg(16);
        c.burst.max_burst_beats = b;
        for order in [AddressOrder::DepthInnermost, AddressOrder::WidthInnermost, AddressOrder::HeightInnermost] {
            let e = estimate_conv("l", &l, &c, order);
            let t = trace(l.input, l.kernel, order, l.stride, l.pad, b as usize);
            prop_assert_eq!(e.mem_transactions, 2 * t.bursts, "{:?}", order);
            prop_assert_eq!(e.mem_beats, 2 * t.beats, "{:?}", order);
            prop_assert_eq!(e.mem_cycles, e.mem_transactions * 20 + e.mem_beats);
            prop_assert_eq!(e.bound_cycles, e.compute_cycles.max(e.mem_cycles));
        }
    }

    #[test]
    fn compute_cycles_scale_with_pen_width(l in layer_strategy(), k in 0u32..4) {
        let p = 16usize << k;
        let one = estimate_conv("l", &l, &cfg(p), AddressOrder::DepthInnermost);
        let two = estimate_conv("l", &l, &cfg(2 * p), AddressOrder::DepthInnermost);
        let (oh, ow) = l.geometry().output_hw();
        let per = (oh * ow * l.kernel[0] * l.kernel[1] * l.input.depth.div_ceil(32)) as u64;
        prop_assert_eq!(one.compute_cycles, per * l.filters.div_ceil(p) as u64);
        if l.filters % (2 * p) == 0 {
            prop_assert_eq!(one.compute_cycles, 2 * two.compute_cycles);
        }
        prop_assert_eq!(one.mem_transactions, two.mem_transactions);
    }

    /// Depth-innermost never issues more bursts than the W-bar order once
    /// the input has at least one word of depth.
    #[test]
    fn depth_innermost_never_loses(l in layer_strategy()) {
        prop_assume!(l.input.depth >= 32);
        let d = estimate_conv("l", &l, &cfg(16), AddressOrder::DepthInnermost);
        let w = estimate_conv("l", &l, &cfg(16), AddressOrder::WidthInnermost);
        prop_assert!(d.mem_transactions <= w.mem_transactions, "{} > {}", d.mem_transactions, w.mem_transactions);
    }
}

#[test]
fn pointwise_single_channel_layer_ties() {
    let l = ConvLayer {
        input: Shape::new(8, 8, 1),
        kernel: [1, 1],
        filters: 16,
        stride: 1,
        pad: 0,
    };
    let d = estimate_conv("l", &l, &cfg(16), AddressOrder::DepthInnermost);
    let w = estimate_conv("l", &l, &cfg(16), AddressOrder::WidthInnermost);
    assert_eq!(d.mem_transactions, w.mem_transactions);
    assert_eq!(d.mem_transactions, 2 * 64);
}

#[test]
fn darknet_depth_innermost_dominates() {
    let lg = lower_graph(&darknet19_320(1)).unwrap();
    let c = choose_pen(&lg, &PenBudget::default()).unwrap();
    let r = compare_orderings(&lg, &c);
    assert_eq!(r.layers.len(), 17);
    for l in &r.layers {
        assert!(
            l.depth_innermost.mem_transactions <= l.width_innermost.mem_transactions,
            "{}",
            l.node
        );
        assert!(l.transaction_ratio <= 1.0);
    }
    let sum = |f: fn(&LayerComparison) -> u64| r.layers.iter().map(f).sum::<u64>();
    assert_eq!(
        r.depth_innermost.mem_transactions,
        sum(|l| l.depth_innermost.mem_transactions)
    );
    assert_eq!(r.width_innermost.bound_cycles, sum(|l| l.width_innermost.bound_cycles));
    assert_eq!(r.depth_innermost.compute_cycles, r.width_innermost.compute_cycles);
    assert!(r.transaction_ratio < 0.5, "ratio {}", r.transaction_ratio);
    assert_eq!(
        r.transaction_ratio,
        r.depth_innermost.mem_transactions as f64 / r.width_innermost.mem_transactions as f64
    );
}

#[test]
fn pen_width_selection() {
    let lg = lower_graph(&darknet19_320(1)).unwrap();
    let layers: Vec<ConvLayer> = binconv_layers(&lg).into_iter().map(|(_, l)| l).collect();
    let c = choose_pen_for(&layers, &PenBudget::default()).unwrap();
    let p = c.num_parallel_kernels;
    assert!(p.is_power_of_two() && p >= 16);
    assert!(layers.iter().all(|l| l.working_set(p) <= 4 << 20));
    assert!(layers.iter().all(|l| l.filters % p == 0));
    // the next width up either overflows the budget, the smallest depth, or divisibility
    let q = 2 * p;
    let min_depth = layers.iter().map(|l| l.input.depth).min().unwrap();
    assert!(q > min_depth || layers.iter().any(|l| l.working_set(q) > 4 << 20 || l.filters % q != 0));

    let tiny = PenBudget {
        local_mem_budget: 1024,
        ..PenBudget::default()
    };
    assert!(matches!(
        choose_pen_for(&layers, &tiny),
        Err(AccelError::BudgetTooSmall { budget: 1024, .. })
    ));
    assert_eq!(
        choose_pen_for(&[], &PenBudget::default()),
        Err(AccelError::NoBinarizedLayers)
    );
    let zero = PenBudget {
        burst: BurstConfig {
            max_burst_beats: 0,
            ..BurstConfig::default()
        },
        ..PenBudget::default()
    };
    assert_eq!(choose_pen_for(&layers, &zero), Err(AccelError::ZeroBurst));
}

#[test]
fn working_set_formula() {
    let l = ConvLayer {
        input: Shape::new(40, 40, 64),
        kernel: [3, 3],
        filters: 128,
        stride: 1,
        pad: 1,
    };
    // 3 input rows of 40 D-bars (2 words, 2 planes), 16 kernels of 9 D-bars, 16 outputs
    assert_eq!(l.working_set(16), 3 * 40 * 2 * 8 + 16 * 9 * 2 * 4 + 16 * 4);
}

#[test]
fn non_binarized_node_is_rejected() {
    let lg = lower_graph(&toy(1)).unwrap();
    let first_conv = lg.nodes.iter().position(|n| n.op.kind() == "conv_f32").unwrap();
    assert!(matches!(
        estimate_layer(&lg, first_conv, &cfg(16), AddressOrder::DepthInnermost),
        Err(AccelError::NotBinarizedLayer(_))
    ));
    let (i, _) = lg.binconvs().next().unwrap();
    assert!(estimate_layer(&lg, i, &cfg(16), AddressOrder::DepthInnermost).is_ok());
}

#[test]
fn report_formats() {
    let lg = lower_graph(&toy(1)).unwrap();
    let r = compare_orderings(&lg, &cfg(16));
    let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
    assert_eq!(v["layers"].as_array().unwrap().len(), r.layers.len());
    let csv = r.to_csv();
    assert_eq!(csv.lines().count(), 2 * r.layers.len() + 1);
    assert!(r.to_text().contains(&r.layers[0].node));
}
