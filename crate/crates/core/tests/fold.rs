use bqnn_core::transform::*;
use bqnn_core::BigRational;
use num_bigint::BigInt;
use num_traits::{One, Signed, Zero};
use proptest::prelude::*;

fn rat(n: i64, d: i64) -> BigRational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

/// Exact code of `quantize(leaky(s*y + b))`.
fn exact_code(s: &BigRational, b: &BigRational, delta: &BigRational, slope: Option<&BigRational>, y: i64) -> u8 {
    let mut r = s * BigRational::from_integer(BigInt::from(y)) + b;
    if let Some(k) = slope {
        if r.is_negative() {
            r *= k;
        }
    }
    let v = (r / delta + rat(1, 2)).floor();
    if v <= BigRational::zero() {
        0
    } else if v >= rat(3, 1) {
        3
    } else {
        v.to_integer().try_into().unwrap()
    }
}

/// Node-by-node chain with f32 storage between nodes.
fn chain_value(ops: &[ChannelOp], c: usize, x: f32) -> f32 {
    let mut x = x;
    for op in ops {
        let v = x as f64;
        x = match op {
            ChannelOp::BatchNorm {
                gamma,
                beta,
                mean,
                var,
                eps,
            } => {
                (gamma[c] as f64 * (v - mean[c] as f64) / (var[c] as f64 + *eps as f64).sqrt() + beta[c] as f64) as f32
            }
            ChannelOp::Scale { values } => (v * values[c] as f64) as f32,
            ChannelOp::Bias { values } => (v + values[c] as f64) as f32,
            ChannelOp::LeakyRelu { slope } => {
                if v >= 0.0 {
                    x
                } else {
                    (*slope as f64 * v) as f32
                }
            }
        };
    }
    x
}

fn quant(x: f32, delta: f32) -> u8 {
    ((x as f64 / delta as f64) + 0.5).floor().clamp(0.0, 3.0) as u8
}

#[test]
fn positive_scale_example() {
    // r = 0.25*y + 0.1, delta 1: codes change at y = 2 (0.6), 6 (1.6), 10 (2.6)
    let fold = AffineFold {
        scale: vec![rat(1, 4)],
        offset: vec![rat(1, 10)],
    };
    let u = affine_to_thresholds(&fold, &BigRational::one(), None).unwrap();
    assert_eq!(u.t, vec![[2, 6, 10]]);
    assert_eq!(u.direction, vec![Direction::Increasing]);
    assert_eq!((u.code(0, 1), u.code(0, 2), u.code(0, 9), u.code(0, 10)), (0, 1, 2, 3));
}

#[test]
fn negative_scale_flips_direction() {
    let fold = AffineFold {
        scale: vec![-0.5f64],
        offset: vec![0.0],
    };
    let u = affine_to_thresholds(&fold, &1.0, None).unwrap();
    assert_eq!(u.direction, vec![Direction::Decreasing]);
    // r = -y/2 >= 0.5 iff y <= -1
    assert_eq!(u.t, vec![[-1, -3, -5]]);
    assert!(u.is_ordered());
    assert_eq!((u.code(0, 0), u.code(0, -1), u.code(0, -5)), (0, 1, 3));
}

#[test]
fn leaky_does_not_move_positive_crossings() {
    let fold = AffineFold {
        scale: vec![1.0f64],
        offset: vec![-10.0],
    };
    let u = affine_to_thresholds(&fold, &2.0, Some(&0.1)).unwrap();
    assert_eq!(u.t, vec![[11, 13, 15]]);
}

#[test]
fn fold_errors() {
    let leaky_first = [
        ChannelOp::LeakyRelu { slope: 0.1 },
        ChannelOp::Bias { values: vec![0.0] },
    ];
    assert_eq!(
        fold_affine_chain::<f64>(&leaky_first, 1),
        Err(TransformError::NonAffineNodeInChain { position: 0 })
    );
    let zero = [ChannelOp::Scale { values: vec![1.0, 0.0] }];
    assert_eq!(
        fold_affine_chain::<f64>(&zero, 2),
        Err(TransformError::ZeroScaleChannel { channel: 1 })
    );
    let short = [ChannelOp::Bias { values: vec![1.0] }];
    assert_eq!(
        fold_affine_chain::<f64>(&short, 3),
        Err(TransformError::ChannelMismatch { expected: 3, found: 1 })
    );
    let id = AffineFold::<f64>::identity(1);
    assert_eq!(
        affine_to_thresholds(&id, &0.0, None),
        Err(TransformError::NonPositiveStep)
    );
    assert_eq!(
        affine_to_thresholds(&id, &1.0, Some(&-0.1)),
        Err(TransformError::NonMonotoneActivation)
    );
    assert_eq!(split_trailing_leaky(&leaky_first).1, None);
}

fn chain_strategy(channels: usize) -> impl Strategy<Value = Vec<ChannelOp>> {
    let ch = move || prop::collection::vec(-4.0f32..4.0, channels);
    let op = prop_oneof![
        (
            ch(),
            ch(),
            ch(),
            prop::collection::vec(0.01f32..4.0, channels),
            1e-5f32..1e-2
        )
            .prop_map(|(gamma, beta, mean, var, eps)| {
                let gamma = gamma
                    .into_iter()
                    .map(|g| if g.abs() < 0.05 { 0.5 } else { g })
                    .collect();
                ChannelOp::BatchNorm {
                    gamma,
                    beta,
                    mean,
                    var,
                    eps,
                }
            }),
        ch().prop_map(|v| ChannelOp::Scale {
            values: v.into_iter().map(|x| if x.abs() < 0.05 { -1.5 } else { x }).collect()
        }),
        ch().prop_map(|values| ChannelOp::Bias { values }),
    ];
    prop::collection::vec(op, 0..4)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    /// Dyadic parameters are exact in f64, so the float and rational
    /// derivations must agree, and both must match the exact quantizer.
    #[test]
    fn threshold_sweep_matches_exact_quantizer(
        sn in -256i64..256, bn in -4096i64..4096, dn in 1i64..256, kn in prop::option::of(1i64..64),
    ) {
        prop_assume!(sn != 0);
        let (s, b, d) = (rat(sn, 64), rat(bn, 64), rat(dn, 64));
        let k = kn.map(|k| rat(k, 64));
        let fold = AffineFold { scale: vec![s.clone()], offset: vec![b.clone()] };
        let exact = affine_to_thresholds(&fold, &d, k.as_ref()).unwrap();
        let ff = AffineFold { scale: vec![sn as f64 / 64.0], offset: vec![bn as f64 / 64.0] };
        let float = affine_to_thresholds(&ff, &(dn as f64 / 64.0), kn.map(|k| k as f64 / 64.0).as_ref()).unwrap();
        prop_assert_eq!(&float, &exact);
        prop_assert!(exact.is_ordered());
        for y in -1000i32..=1000 {
            prop_assert_eq!(exact.code(0, y), exact_code(&s, &b, &d, k.as_ref(), y as i64), "y = {}", y);
        }
    }

    #[test]
    fn folded_chain_matches_pointwise(chain in chain_strategy(3), x in -50.0f32..50.0) {
        prop_assume!(chain.iter().all(|op| match op {
            ChannelOp::BatchNorm { gamma, .. } => gamma.iter().all(|g| *g != 0.0),
            ChannelOp::Scale { values } => values.iter().all(|v| *v != 0.0),
            _ => true,
        }));
        let f = fold_affine_chain::<f64>(&chain, 3).unwrap();
        let exact = fold_affine_chain::<BigRational>(&chain, 3).unwrap();
        for c in 0..3 {
            let want = chain_value(&chain, c, x) as f64;
            let got = f.eval(c, &(x as f64));
            prop_assert!((got - want).abs() <= 1e-4 * (1.0 + want.abs()), "c={} got={} want={}", c, got, want);
            prop_assert_eq!(apply_chain(&chain, c, x), chain_value(&chain, c, x));
            let e = bqnn_core::Scalar::to_f64(&exact.eval(c, &BigRational::from_float(x as f64).unwrap()));
            prop_assert!((e - got).abs() <= 1e-6 * (1.0 + got.abs()));
            let sign = f.scale[c].signum();
            let dir = chain_direction(&chain, c);
            prop_assert_eq!(dir, Some(if sign > 0.0 { Direction::Increasing } else { Direction::Decreasing }));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    /// Lowered thresholds reproduce the node-by-node chain over the whole
    /// accumulator range of a 3x3x32 layer.
    #[test]
    fn lowered_threshold_matches_chain(chain in chain_strategy(8), leaky in prop::bool::ANY, seed in any::<u64>()) {
        use bqnn_core::fixture::{Chain, ConvSpec, NetBuilder};
        use bqnn_core::model_ir::{Op, Shape};
        let mut b = NetBuilder::new(seed, Shape::new(4, 4, 32));
        let x = b.quantize("input", 0.25);
        let y = b.conv(&x, ConvSpec::new(3, 8).chain(Chain::None).quant(None));
        // append the generated chain after the bare conv
        let (mut nodes, blobs) = b.finish(&y).into_parts();
        let out = nodes.pop().unwrap();
        let mut prev = y.clone();
        let mut ops = chain.clone();
        if leaky {
            ops.push(ChannelOp::LeakyRelu { slope: 0.1 });
        }
        for (i, op) in ops.iter().enumerate() {
            let id = format!("c{i}");
            let op = match op.clone() {
                ChannelOp::BatchNorm { gamma, beta, mean, var, eps } => Op::BatchNorm { gamma, beta, mean, var, eps },
                ChannelOp::Scale { values } => Op::Scale { values },
                ChannelOp::Bias { values } => Op::Bias { values },
                ChannelOp::LeakyRelu { slope } => Op::LeakyRelu { slope },
            };
            nodes.push(bqnn_core::model_ir::Node::new(id.clone(), op, &[&prev]));
            prev = id;
        }
        nodes.push(bqnn_core::model_ir::Node::new("q_out", Op::QuantizeAct { delta: 0.5 }, &[&prev]));
        nodes.push(bqnn_core::model_ir::Node::new(out.id.clone(), Op::Output {}, &["q_out"]));
        let g = bqnn_core::model_ir::Graph::new(nodes, blobs).unwrap();
        let lg = lower_graph(&g).unwrap();
        let unit = lg.nodes.iter().find_map(|n| match &n.op {
            LOp::Threshold { unit, .. } => Some(unit.clone()),
            _ => None,
        }).unwrap();
        let bound = 3 * 9 * 32;
        for c in 0..8 {
            for acc in -bound..=bound {
                let want = quant(chain_value(&ops, c, (0.25f64 * acc as f64) as f32), 0.5);
                prop_assert_eq!(unit.code(c, acc), want, "c={} acc={}", c, acc);
            }
        }
    }
}
