use bqnn_core::engine::*;
use bqnn_core::fixture::{random_image, toy};
use bqnn_core::layout::bitpack;
use bqnn_core::model_ir::{BlobData, DType, Layout, Shape, TensorBlob, TensorDesc};
use bqnn_core::transform::{lower_graph, Direction, ThresholdUnit};
use bqnn_testkit::{binconv_naive, random_graph};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn codes_blob(s: Shape, codes: Vec<u8>) -> TensorBlob {
    TensorBlob::single(s.desc(DType::U2, Layout::DepthInnermost), BlobData::U2(codes)).unwrap()
}

fn weights_blob(kernel: [usize; 2], depth: usize, filters: usize, w: Vec<i8>) -> TensorBlob {
    let desc = TensorDesc::new(kernel[0], kernel[1], depth, DType::Bin1, Layout::DepthInnermost);
    TensorBlob::new(desc, filters, BlobData::Bin1(w)).unwrap()
}

#[derive(Debug, Clone)]
struct Layer {
    input: Shape,
    kernel: [usize; 2],
    filters: usize,
    stride: usize,
    pad: usize,
    codes: Vec<u8>,
    weights: Vec<i8>,
}

fn layer_strategy() -> impl Strategy<Value = Layer> {
    (
        1usize..7,
        1usize..7,
        1usize..100,
        1usize..4,
        1usize..4,
        1usize..5,
        1usize..3,
        0usize..2,
        any::<u64>(),
    )
        .prop_filter("kernel fits", |&(h, w, _, kh, kw, _, _, pad, _)| {
            kh <= h + 2 * pad && kw <= w + 2 * pad
        })
        .prop_map(|(h, w, d, kh, kw, filters, stride, pad, seed)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let input = Shape::new(h, w, d);
            let codes = (0..input.elements()).map(|_| rng.random_range(0..4u8)).collect();
            let weights = (0..kh * kw * d * filters)
                .map(|_| if rng.random_bool(0.5) { 1 } else { -1 })
                .collect();
            Layer {
                input,
                kernel: [kh, kw],
                filters,
                stride,
                pad,
                codes,
                weights,
            }
        })
}

impl Layer {
    fn acts(&self) -> TensorBlob {
        codes_blob(self.input, self.codes.clone())
    }

    fn w(&self) -> TensorBlob {
        weights_blob(self.kernel, self.input.depth, self.filters, self.weights.clone())
    }

    fn naive(&self, codes: &[u8]) -> Vec<i32> {
        binconv_naive(
            codes,
            self.input,
            &self.weights,
            self.kernel,
            self.filters,
            self.stride,
            self.pad,
        )
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(250))]

    #[test]
    fn packed_matches_reference_and_naive(l in layer_strategy()) {
        let reference = binconv_reference(&l.acts(), &l.w(), l.stride, l.pad).unwrap();
        let packed = binconv_packed(&bitpack(&l.acts()).unwrap(), &bitpack(&l.w()).unwrap(), l.stride, l.pad).unwrap();
        prop_assert_eq!(&packed, &reference);
        prop_assert_eq!(&packed.data, &l.naive(&l.codes));
        let bound = 3 * (l.kernel[0] * l.kernel[1] * l.input.depth) as i32;
        prop_assert!(packed.max_abs() <= bound);
    }

    #[test]
    fn planes_combine_linearly(l in layer_strategy()) {
        let low: Vec<u8> = l.codes.iter().map(|c| c & 1).collect();
        let high: Vec<u8> = l.codes.iter().map(|c| c >> 1).collect();
        let (a0, a1, a) = (l.naive(&low), l.naive(&high), l.naive(&l.codes));
        let packed = binconv_packed(&bitpack(&l.acts()).unwrap(), &bitpack(&l.w()).unwrap(), l.stride, l.pad).unwrap();
        for i in 0..a.len() {
            prop_assert_eq!(packed.data[i], a0[i] + 2 * a1[i]);
            prop_assert_eq!(a[i], a0[i] + 2 * a1[i]);
        }
    }

    #[test]
    fn pad_bits_do_not_leak(l in layer_strategy(), junk in any::<u32>()) {
        prop_assume!(l.input.depth % 32 != 0);
        let (mut acts, mut w) = (bitpack(&l.acts()).unwrap(), bitpack(&l.w()).unwrap());
        let clean = binconv_packed(&acts, &w, l.stride, l.pad).unwrap();
        let pad = !acts.tail_mask() & junk;
        let wpd = acts.words_per_dbar;
        for plane in acts.planes.iter_mut().chain(w.planes.iter_mut()) {
            for word in (wpd - 1..plane.len()).step_by(wpd) {
                plane[word] |= pad;
            }
        }
        prop_assert_eq!(binconv_packed(&acts, &w, l.stride, l.pad).unwrap(), clean);
    }

    #[test]
    fn maxpool_commutes_with_quantize(h in 2usize..9, w in 2usize..9, d in 1usize..5, size in 1usize..3, seed in any::<u64>()) {
        prop_assume!(size <= h && size <= w);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = Shape::new(h, w, d);
        let v: Vec<f32> = (0..s.elements()).map(|_| rng.random_range(-1.0f32..2.5)).collect();
        let t = TensorBlob::single(s.desc(DType::F32, Layout::DepthInnermost), BlobData::F32(v)).unwrap();
        let a = maxpool_u2(&quantize(&t, 0.5).unwrap(), size, size).unwrap();
        let b = quantize(&maxpool_f32(&t, size, size).unwrap(), 0.5).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn conv_f32_matches_naive(l in layer_strategy(), delta in 0.1f32..1.0) {
        let (kh, kw, d) = (l.kernel[0], l.kernel[1], l.input.depth);
        let wf: Vec<f32> = l.weights.iter().enumerate().map(|(i, &s)| s as f32 * (1.0 + (i % 5) as f32 * 0.1)).collect();
        let desc = TensorDesc::new(kh, kw, d, DType::F32, Layout::DepthInnermost);
        let wt = TensorBlob::new(desc, l.filters, BlobData::F32(wf.clone())).unwrap();
        let got = conv_f32(&l.acts(), Some(delta), &wt, None, l.stride, l.pad).unwrap();
        let s = l.input;
        let oh = (s.height + 2 * l.pad - kh) / l.stride + 1;
        let ow = (s.width + 2 * l.pad - kw) / l.stride + 1;
        let mut want = Vec::new();
        for oy in 0..oh {
            for ox in 0..ow {
                for o in 0..l.filters {
                    let mut acc = 0f64;
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let (iy, ix) = ((oy * l.stride + ky) as i64 - l.pad as i64, (ox * l.stride + kx) as i64 - l.pad as i64);
                            if iy < 0 || ix < 0 || iy >= s.height as i64 || ix >= s.width as i64 {
                                continue;
                            }
                            for c in 0..d {
                                let a = delta as f64 * l.codes[((iy as usize) * s.width + ix as usize) * d + c] as f64;
                                acc += a * wf[((o * kh + ky) * kw + kx) * d + c] as f64;
                            }
                        }
                    }
                    want.push(acc as f32);
                }
            }
        }
        prop_assert_eq!(got.as_f32().unwrap(), &want[..]);
    }
}

#[test]
fn worked_popcount_example() {
    // codes [3, 0, 1, 2] against weights [+1, -1, -1, +1]: 3 - 0 - 1 + 2 = 4
    let l = Layer {
        input: Shape::new(1, 1, 4),
        kernel: [1, 1],
        filters: 1,
        stride: 1,
        pad: 0,
        codes: vec![3, 0, 1, 2],
        weights: vec![1, -1, -1, 1],
    };
    let acc = binconv_packed(&bitpack(&l.acts()).unwrap(), &bitpack(&l.w()).unwrap(), 1, 0).unwrap();
    assert_eq!(acc.data, vec![4]);
}

#[test]
fn saturated_layer_hits_the_bound() {
    let (k, d) = (3, 64);
    let l = Layer {
        input: Shape::new(3, 3, d),
        kernel: [k, k],
        filters: 2,
        stride: 1,
        pad: 0,
        codes: vec![3; 9 * d],
        weights: [vec![1; 9 * d], vec![-1; 9 * d]].concat(),
    };
    let acc = binconv_packed(&bitpack(&l.acts()).unwrap(), &bitpack(&l.w()).unwrap(), 1, 0).unwrap();
    assert_eq!(acc.data, vec![3 * 9 * 64, -3 * 9 * 64]);
}

#[test]
fn threshold_codes_follow_direction() {
    let desc = Shape::new(1, 2, 2).desc(DType::U2, Layout::DepthInnermost);
    let acc = AccumulatorMap {
        desc,
        data: vec![5, 5, -7, -7],
    };
    let unit = ThresholdUnit {
        t: vec![[0, 4, 8], [0, -4, -8]],
        direction: vec![Direction::Increasing, Direction::Decreasing],
    };
    let codes = apply_thresholds(&acc, &unit).unwrap();
    assert_eq!(codes.as_u2().unwrap(), &[2, 0, 0, 2]);
}

#[test]
fn reorg_and_concat_layouts() {
    // 2x2x1 -> 1x1x4 in (dy, dx) order
    let t = TensorBlob::single(
        Shape::new(2, 2, 1).desc(DType::F32, Layout::DepthInnermost),
        BlobData::F32(vec![1.0, 2.0, 3.0, 4.0]),
    )
    .unwrap();
    let r = reorg(&t, 2).unwrap();
    assert_eq!(r.desc.shape(), Shape::new(1, 1, 4));
    assert_eq!(r.as_f32().unwrap(), &[1.0, 2.0, 3.0, 4.0]);
    let c = concat(&[&r, &r]).unwrap();
    assert_eq!(c.desc.depth, 8);
    assert!(reorg(
        &TensorBlob::single(
            Shape::new(3, 2, 1).desc(DType::F32, Layout::DepthInnermost),
            BlobData::F32(vec![0.0; 6])
        )
        .unwrap(),
        2
    )
    .is_err());
}

#[test]
fn thread_count_does_not_change_results() {
    let mut graphs = vec![toy(4)];
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    graphs.extend((0..4).map(|_| random_graph(&mut rng)));
    for g in graphs {
        let lg = lower_graph(&g).unwrap();
        let img = random_image(g.input_shape(), 9);
        let one = run_traced(&lg, &img, 1).unwrap();
        for threads in [2, 3, 8] {
            assert_eq!(run_traced(&lg, &img, threads).unwrap(), one);
        }
        let out = run_network(&lg, &img, 4).unwrap();
        assert_eq!(Some(out), one.last().unwrap().to_f32());
    }
}

#[test]
fn wrong_image_shape_is_rejected() {
    let lg = lower_graph(&toy(1)).unwrap();
    let img = random_image(Shape::new(8, 8, 3), 1);
    assert!(matches!(run_network(&lg, &img, 1), Err(EngineError::InputShape { .. })));
}
