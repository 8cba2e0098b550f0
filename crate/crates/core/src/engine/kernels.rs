//! Layer kernels. Activations are depth-innermost; every output element is
//! produced by exactly one worker, so results do not depend on thread count.

use rayon::prelude::*;

use super::{AccumulatorMap, EngineError};
use crate::layout::{PackedTensor, WindowGeometry};
use crate::model_ir::{BlobData, DType, Layout, Shape, TensorBlob, TensorDesc};
use crate::transform::{apply_chain, dequantize, quantize_f32, ChannelOp, ThresholdUnit};

fn out_hw(input: Shape, kernel: [usize; 2], stride: usize, pad: usize) -> Result<(usize, usize), EngineError> {
    if stride == 0 {
        return Err(EngineError::ShapeMismatch("stride must be >= 1".into()));
    }
    let oh = (input.height + 2 * pad).checked_sub(kernel[0]).map(|v| v / stride + 1);
    let ow = (input.width + 2 * pad).checked_sub(kernel[1]).map(|v| v / stride + 1);
    match (oh, ow) {
        (Some(oh), Some(ow)) => Ok((oh, ow)),
        _ => Err(EngineError::ShapeMismatch(format!(
            "{kernel:?} kernel does not fit {input}"
        ))),
    }
}

/// Naive u2 x bin1 convolution; the oracle for [`binconv_packed`].
pub fn binconv_reference(
    acts: &TensorBlob,
    weights: &TensorBlob,
    stride: usize,
    pad: usize,
) -> Result<AccumulatorMap, EngineError> {
    let (Some(a), Some(w)) = (acts.as_u2(), weights.as_bin1()) else {
        return Err(EngineError::WrongDtype);
    };
    let (ad, wd) = (acts.desc, weights.desc);
    if ad.depth != wd.depth {
        return Err(EngineError::ShapeMismatch(format!(
            "kernel depth {} != input depth {}",
            wd.depth, ad.depth
        )));
    }
    let (oh, ow) = out_hw(ad.shape(), [wd.height, wd.width], stride, pad)?;
    let od = weights.count;
    let klen = wd.elements();
    let mut data = vec![0i32; oh * ow * od];
    for oy in 0..oh {
        for ox in 0..ow {
            for o in 0..od {
                let mut acc = 0i32;
                for ky in 0..wd.height {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= ad.height as isize {
                        continue;
                    }
                    for kx in 0..wd.width {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix < 0 || ix >= ad.width as isize {
                            continue;
                        }
                        for d in 0..wd.depth {
                            let x = a[ad.index(iy as usize, ix as usize, d)] as i32;
                            acc += w[o * klen + wd.index(ky, kx, d)] as i32 * x;
                        }
                    }
                }
                data[(oy * ow + ox) * od + o] = acc;
            }
        }
    }
    Ok(AccumulatorMap {
        desc: TensorDesc::new(oh, ow, od, DType::I32, Layout::DepthInnermost),
        data,
    })
}

#[inline(always)]
fn popcount_dot(a0: &[u32], a1: &[u32], w: &[u32]) -> (u32, u32) {
    let mut p0 = 0u32;
    let mut p1 = 0u32;
    for ((&x0, &x1), &wk) in a0.iter().zip(a1).zip(w) {
        p0 += (x0 & wk).count_ones();
        p1 += (x1 & wk).count_ones();
    }
    (p0, p1)
}

/// Window dot products against every kernel: `acc = 2*(pc(a0&w) + 2*pc(a1&w)) - (pc(a0) + 2*pc(a1))`.
#[inline(always)]
fn window_accumulate(a0: &[u32], a1: &[u32], weights: &[u32], klen: usize, out: &mut [i32]) {
    let s: u32 = a0.iter().map(|x| x.count_ones()).sum::<u32>() + 2 * a1.iter().map(|x| x.count_ones()).sum::<u32>();
    for (o, w) in weights.chunks_exact(klen).enumerate() {
        let (p0, p1) = popcount_dot(a0, a1, w);
        out[o] = 2 * (p0 + 2 * p1) as i32 - s as i32;
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "popcnt")]
unsafe fn window_accumulate_popcnt(a0: &[u32], a1: &[u32], weights: &[u32], klen: usize, out: &mut [i32]) {
    window_accumulate(a0, a1, weights, klen, out)
}

fn has_popcnt() -> bool {
    #[cfg(target_arch = "x86_64")]
    {
        std::is_x86_feature_detected!("popcnt")
    }
    #[cfg(not(target_arch = "x86_64"))]
    {
        false
    }
}

/// Packed XNOR/popcount convolution, bit-exact with [`binconv_reference`].
///
/// Padding taps are all-zero activation words (code 0), which the masked
/// popcount formula turns into zero contributions. Activation pad bits past
/// `depth` are masked off, so stray pad bits in either operand are ignored.
pub fn binconv_packed(
    acts: &PackedTensor,
    weights: &PackedTensor,
    stride: usize,
    pad: usize,
) -> Result<AccumulatorMap, EngineError> {
    if acts.desc.dtype != DType::U2 || weights.desc.dtype != DType::Bin1 {
        return Err(EngineError::WrongDtype);
    }
    if acts.planes.len() != 2 || weights.planes.len() != 1 || acts.count != 1 {
        return Err(EngineError::PlaneCountMismatch {
            acts: acts.planes.len(),
            weights: weights.planes.len(),
        });
    }
    if acts.desc.depth != weights.desc.depth || acts.words_per_dbar != weights.words_per_dbar {
        return Err(EngineError::LayoutMismatch(format!(
            "activation depth {} vs kernel depth {}",
            acts.desc.depth, weights.desc.depth
        )));
    }
    let input = acts.desc.shape();
    let (kh, kw) = (weights.desc.height, weights.desc.width);
    let (oh, ow) = out_hw(input, [kh, kw], stride, pad)?;
    let od = weights.count;
    let wpd = acts.words_per_dbar;
    let klen = kh * kw * wpd;
    let geom = WindowGeometry {
        input,
        kernel: [kh, kw],
        stride,
        pad,
    };
    let (a0, a1) = (&acts.planes[0], &acts.planes[1]);
    let wts = &weights.planes[0];
    let fast = has_popcnt();
    let tail = acts.tail_mask();

    let mut data = vec![0i32; oh * ow * od];
    data.par_chunks_mut(ow * od).enumerate().for_each(|(oy, row)| {
        let mut b0 = vec![0u32; klen];
        let mut b1 = vec![0u32; klen];
        for ox in 0..ow {
            b0.fill(0);
            b1.fill(0);
            let ((r0, r1), (c0, c1)) = geom.clip(oy, ox);
            let y0 = (oy * stride) as isize - pad as isize;
            let x0 = (ox * stride) as isize - pad as isize;
            for iy in r0..r1 {
                let ky = (iy as isize - y0) as usize;
                let kx0 = (c0 as isize - x0) as usize;
                let src = acts.dbar_offset(0, iy, c0);
                let len = (c1 - c0) * wpd;
                let dst = (ky * kw + kx0) * wpd;
                b0[dst..dst + len].copy_from_slice(&a0[src..src + len]);
                b1[dst..dst + len].copy_from_slice(&a1[src..src + len]);
                if tail != u32::MAX {
                    for last in (dst + wpd - 1..dst + len).step_by(wpd) {
                        b0[last] &= tail;
                        b1[last] &= tail;
                    }
                }
            }
            let out = &mut row[ox * od..(ox + 1) * od];
            #[cfg(target_arch = "x86_64")]
            if fast {
                // SAFETY: popcnt support was checked at runtime
                unsafe { window_accumulate_popcnt(&b0, &b1, wts, klen, out) };
                continue;
            }
            let _ = fast;
            window_accumulate(&b0, &b1, wts, klen, out);
        }
    });
    Ok(AccumulatorMap {
        desc: TensorDesc::new(oh, ow, od, DType::I32, Layout::DepthInnermost),
        data,
    })
}

/// Codes from accumulators: `#{j: acc >= t_j}` or `#{j: acc <= t_j}` per channel.
pub fn apply_thresholds(acc: &AccumulatorMap, th: &ThresholdUnit) -> Result<TensorBlob, EngineError> {
    let d = acc.desc.depth;
    if th.channels() != d || th.direction.len() != d {
        return Err(EngineError::ChannelMismatch {
            expected: d,
            found: th.channels(),
        });
    }
    let mut codes = vec![0u8; acc.data.len()];
    codes
        .par_chunks_mut(d * 64)
        .zip(acc.data.par_chunks(d * 64))
        .for_each(|(out, acc)| {
            for (i, (o, &a)) in out.iter_mut().zip(acc).enumerate() {
                *o = th.code(i % d, a);
            }
        });
    Ok(TensorBlob::single(acc.desc.with_dtype(DType::U2), BlobData::U2(codes))?)
}

/// Accumulators to f32: `chain(f32(input_delta * acc))` per channel.
pub fn dequant(acc: &AccumulatorMap, input_delta: f32, post: &[ChannelOp]) -> TensorBlob {
    let d = acc.desc.depth;
    let mut out = vec![0f32; acc.data.len()];
    out.par_chunks_mut(d * 64)
        .zip(acc.data.par_chunks(d * 64))
        .for_each(|(out, acc)| {
            for (i, (o, &a)) in out.iter_mut().zip(acc).enumerate() {
                *o = apply_chain(post, i % d, (input_delta as f64 * a as f64) as f32);
            }
        });
    TensorBlob::single(acc.desc.with_dtype(DType::F32), BlobData::F32(out)).expect("shape preserved")
}

fn require_depth_innermost(t: &TensorBlob) -> Result<(), EngineError> {
    if t.desc.layout != Layout::DepthInnermost || t.count != 1 {
        return Err(EngineError::LayoutMismatch(
            "expected a single depth-innermost tensor".into(),
        ));
    }
    Ok(())
}

fn maxpool_generic<T: Copy + PartialOrd + Send + Sync>(
    src: &[T],
    s: Shape,
    size: usize,
    stride: usize,
) -> Result<(Shape, Vec<T>), EngineError> {
    if size == 0 || stride == 0 || size > s.height || size > s.width {
        return Err(EngineError::ShapeMismatch(format!("{size}x{size} pool over {s}")));
    }
    let oh = (s.height - size) / stride + 1;
    let ow = (s.width - size) / stride + 1;
    let d = s.depth;
    let mut out = vec![src[0]; oh * ow * d];
    out.par_chunks_mut(ow * d).enumerate().for_each(|(oy, row)| {
        for ox in 0..ow {
            let dst = &mut row[ox * d..(ox + 1) * d];
            let first = ((oy * stride) * s.width + ox * stride) * d;
            dst.copy_from_slice(&src[first..first + d]);
            for ky in 0..size {
                for kx in 0..size {
                    let base = ((oy * stride + ky) * s.width + ox * stride + kx) * d;
                    for (o, &v) in dst.iter_mut().zip(&src[base..base + d]) {
                        if v > *o {
                            *o = v;
                        }
                    }
                }
            }
        }
    });
    Ok((Shape::new(oh, ow, d), out))
}

/// Per-channel max over `size x size` windows of codes (no padding).
pub fn maxpool_u2(t: &TensorBlob, size: usize, stride: usize) -> Result<TensorBlob, EngineError> {
    require_depth_innermost(t)?;
    let codes = t.as_u2().ok_or(EngineError::WrongDtype)?;
    let (s, out) = maxpool_generic(codes, t.desc.shape(), size, stride)?;
    Ok(TensorBlob::single(
        s.desc(DType::U2, Layout::DepthInnermost),
        BlobData::U2(out),
    )?)
}

/// Per-channel max over `size x size` windows of f32 values (no padding).
pub fn maxpool_f32(t: &TensorBlob, size: usize, stride: usize) -> Result<TensorBlob, EngineError> {
    require_depth_innermost(t)?;
    let v = t.as_f32().ok_or(EngineError::WrongDtype)?;
    let (s, out) = maxpool_generic(v, t.desc.shape(), size, stride)?;
    Ok(TensorBlob::single(
        s.desc(DType::F32, Layout::DepthInnermost),
        BlobData::F32(out),
    )?)
}

/// Dense convolution, accumulated in f64 in `(ky, kx, kd)` order and rounded
/// to f32 once. A u2 input is dequantized as `input_delta * code`; `bias`,
/// when given, is added before the rounding.
pub fn conv_f32(
    acts: &TensorBlob,
    input_delta: Option<f32>,
    weights: &TensorBlob,
    bias: Option<&[f32]>,
    stride: usize,
    pad: usize,
) -> Result<TensorBlob, EngineError> {
    require_depth_innermost(acts)?;
    let w = weights.as_f32().ok_or(EngineError::WrongDtype)?;
    let (ad, wd) = (acts.desc, weights.desc);
    if ad.depth != wd.depth {
        return Err(EngineError::ShapeMismatch(format!(
            "kernel depth {} != input depth {}",
            wd.depth, ad.depth
        )));
    }
    let od = weights.count;
    if bias.is_some_and(|b| b.len() != od) {
        return Err(EngineError::ChannelMismatch {
            expected: od,
            found: bias.map_or(0, <[f32]>::len),
        });
    }
    let input: Vec<f64> = match (&acts.data, input_delta) {
        (BlobData::F32(v), None) => v.iter().map(|&x| x as f64).collect(),
        (BlobData::U2(v), Some(delta)) => v.iter().map(|&c| dequantize(c, delta)).collect(),
        _ => return Err(EngineError::WrongDtype),
    };
    // kernels re-laid depth-innermost so the inner loop is contiguous
    let klen = wd.elements();
    let kernels: Vec<f64> = if wd.layout == Layout::DepthInnermost {
        w.iter().map(|&x| x as f64).collect()
    } else {
        let mut k = Vec::with_capacity(w.len());
        for o in 0..od {
            for ky in 0..wd.height {
                for kx in 0..wd.width {
                    for d in 0..wd.depth {
                        k.push(w[o * klen + wd.index(ky, kx, d)] as f64);
                    }
                }
            }
        }
        k
    };
    let (kh, kw, kd) = (wd.height, wd.width, wd.depth);
    let (oh, ow) = out_hw(ad.shape(), [kh, kw], stride, pad)?;
    let mut out = vec![0f32; oh * ow * od];
    out.par_chunks_mut(ow * od).enumerate().for_each(|(oy, row)| {
        for ox in 0..ow {
            for o in 0..od {
                let k = &kernels[o * klen..(o + 1) * klen];
                let mut acc = 0f64;
                for ky in 0..kh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= ad.height as isize {
                        continue;
                    }
                    for kx in 0..kw {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix < 0 || ix >= ad.width as isize {
                            continue;
                        }
                        let a = &input[(iy as usize * ad.width + ix as usize) * kd..][..kd];
                        let kk = &k[(ky * kw + kx) * kd..][..kd];
                        for (x, wv) in a.iter().zip(kk) {
                            acc += x * wv;
                        }
                    }
                }
                if let Some(b) = bias {
                    acc += b[o] as f64;
                }
                row[ox * od + o] = acc as f32;
            }
        }
    });
    Ok(TensorBlob::single(
        TensorDesc::new(oh, ow, od, DType::F32, Layout::DepthInnermost),
        BlobData::F32(out),
    )?)
}

/// Per-channel chain on an f32 map.
pub fn apply_post(t: &mut TensorBlob, post: &[ChannelOp]) -> Result<(), EngineError> {
    if post.is_empty() {
        return Ok(());
    }
    require_depth_innermost(t)?;
    let d = t.desc.depth;
    let BlobData::F32(v) = &mut t.data else {
        return Err(EngineError::WrongDtype);
    };
    v.par_chunks_mut(d * 64).for_each(|chunk| {
        for (i, x) in chunk.iter_mut().enumerate() {
            *x = apply_chain(post, i % d, *x);
        }
    });
    Ok(())
}

/// Activation quantizer applied elementwise.
pub fn quantize(t: &TensorBlob, delta: f32) -> Result<TensorBlob, EngineError> {
    let v = t.as_f32().ok_or(EngineError::WrongDtype)?;
    let codes = v.par_iter().map(|&x| quantize_f32(x, delta)).collect();
    Ok(TensorBlob::new(
        t.desc.with_dtype(DType::U2),
        t.count,
        BlobData::U2(codes),
    )?)
}

/// Space-to-depth: `out[y, x, (dy*s + dx)*D + d] = in[y*s + dy, x*s + dx, d]`.
pub fn reorg(t: &TensorBlob, stride: usize) -> Result<TensorBlob, EngineError> {
    require_depth_innermost(t)?;
    let s = t.desc.shape();
    if stride == 0 || s.height % stride != 0 || s.width % stride != 0 {
        return Err(EngineError::ShapeMismatch(format!("reorg stride {stride} over {s}")));
    }
    let out_shape = Shape::new(s.height / stride, s.width / stride, s.depth * stride * stride);
    fn go<T: Copy>(src: &[T], s: Shape, stride: usize) -> Vec<T> {
        let mut out = Vec::with_capacity(src.len());
        for y in 0..s.height / stride {
            for x in 0..s.width / stride {
                for dy in 0..stride {
                    for dx in 0..stride {
                        let base = ((y * stride + dy) * s.width + x * stride + dx) * s.depth;
                        out.extend_from_slice(&src[base..base + s.depth]);
                    }
                }
            }
        }
        out
    }
    let data = match &t.data {
        BlobData::F32(v) => BlobData::F32(go(v, s, stride)),
        BlobData::U2(v) => BlobData::U2(go(v, s, stride)),
        _ => return Err(EngineError::WrongDtype),
    };
    Ok(TensorBlob::single(
        out_shape.desc(t.desc.dtype, Layout::DepthInnermost),
        data,
    )?)
}

/// Depth-wise concatenation in argument order.
pub fn concat(parts: &[&TensorBlob]) -> Result<TensorBlob, EngineError> {
    let first = parts
        .first()
        .ok_or_else(|| EngineError::ShapeMismatch("concat of nothing".into()))?;
    for p in parts {
        require_depth_innermost(p)?;
        if p.desc.height != first.desc.height || p.desc.width != first.desc.width || p.desc.dtype != first.desc.dtype {
            return Err(EngineError::ShapeMismatch("concat inputs differ".into()));
        }
    }
    let (h, w) = (first.desc.height, first.desc.width);
    let depth: usize = parts.iter().map(|p| p.desc.depth).sum();
    fn go<T: Copy>(parts: &[(&[T], usize)], positions: usize, depth: usize) -> Vec<T> {
        let mut out = Vec::with_capacity(positions * depth);
        for i in 0..positions {
            for (v, d) in parts {
                out.extend_from_slice(&v[i * d..(i + 1) * d]);
            }
        }
        out
    }
    let data = match first.desc.dtype {
        DType::F32 => {
            let p: Vec<(&[f32], usize)> = parts.iter().map(|p| (p.as_f32().unwrap(), p.desc.depth)).collect();
            BlobData::F32(go(&p, h * w, depth))
        }
        DType::U2 => {
            let p: Vec<(&[u8], usize)> = parts.iter().map(|p| (p.as_u2().unwrap(), p.desc.depth)).collect();
            BlobData::U2(go(&p, h * w, depth))
        }
        _ => return Err(EngineError::WrongDtype),
    };
    Ok(TensorBlob::single(
        TensorDesc::new(h, w, depth, first.desc.dtype, Layout::DepthInnermost),
        data,
    )?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::bitpack;
    use crate::transform::Direction;

    fn codes(h: usize, w: usize, d: usize, v: Vec<u8>) -> TensorBlob {
        TensorBlob::single(
            TensorDesc::new(h, w, d, DType::U2, Layout::DepthInnermost),
            BlobData::U2(v),
        )
        .unwrap()
    }

    fn bits(kh: usize, kw: usize, kd: usize, count: usize, v: Vec<i8>) -> TensorBlob {
        TensorBlob::new(
            TensorDesc::new(kh, kw, kd, DType::Bin1, Layout::DepthInnermost),
            count,
            BlobData::Bin1(v),
        )
        .unwrap()
    }

    #[test]
    fn reference_sign_examples() {
        let a = codes(3, 3, 1, vec![2; 9]);
        let acc = binconv_reference(&a, &bits(1, 1, 1, 1, vec![1]), 1, 0).unwrap();
        assert!(acc.data.iter().all(|&v| v == 2));
        let acc = binconv_reference(&a, &bits(1, 1, 1, 1, vec![-1]), 1, 0).unwrap();
        assert!(acc.data.iter().all(|&v| v == -2));
    }

    #[test]
    fn packed_closed_forms() {
        let a = bitpack(&codes(1, 1, 32, vec![3; 32])).unwrap();
        let plus = bitpack(&bits(1, 1, 32, 1, vec![1; 32])).unwrap();
        let minus = bitpack(&bits(1, 1, 32, 1, vec![-1; 32])).unwrap();
        assert_eq!(binconv_packed(&a, &plus, 1, 0).unwrap().data, vec![96]);
        assert_eq!(binconv_packed(&a, &minus, 1, 0).unwrap().data, vec![-96]);
    }

    #[test]
    fn packed_matches_reference_with_padding() {
        let d = 48;
        let a: Vec<u8> = (0..5 * 4 * d).map(|i| ((i * 7 + i / 5) % 4) as u8).collect();
        let a = codes(5, 4, d, a);
        let w: Vec<i8> = (0..9 * d * 3)
            .map(|i| if (i * 13 + i / 7) % 3 == 0 { -1 } else { 1 })
            .collect();
        let w = bits(3, 3, d, 3, w);
        for (stride, pad) in [(1, 1), (2, 1), (1, 0), (2, 0)] {
            let r = binconv_reference(&a, &w, stride, pad).unwrap();
            let p = binconv_packed(&bitpack(&a).unwrap(), &bitpack(&w).unwrap(), stride, pad).unwrap();
            assert_eq!(r, p);
        }
    }

    #[test]
    fn threshold_examples() {
        let acc = AccumulatorMap {
            desc: TensorDesc::new(1, 3, 1, DType::I32, Layout::DepthInnermost),
            data: vec![-10, 0, 7],
        };
        let inc = ThresholdUnit {
            t: vec![[-5, 0, 5]],
            direction: vec![Direction::Increasing],
        };
        assert_eq!(apply_thresholds(&acc, &inc).unwrap().data, BlobData::U2(vec![0, 2, 3]));
        let dec = ThresholdUnit {
            t: vec![[5, 0, -5]],
            direction: vec![Direction::Decreasing],
        };
        assert_eq!(apply_thresholds(&acc, &dec).unwrap().data, BlobData::U2(vec![3, 2, 0]));
        let two = ThresholdUnit {
            t: vec![[0, 0, 0]; 2],
            direction: vec![Direction::Increasing; 2],
        };
        assert!(matches!(
            apply_thresholds(&acc, &two),
            Err(EngineError::ChannelMismatch { .. })
        ));
    }

    #[test]
    fn pooling() {
        let t = codes(2, 2, 1, vec![0, 3, 1, 2]);
        assert_eq!(maxpool_u2(&t, 2, 2).unwrap().data, BlobData::U2(vec![3]));
        let c = codes(4, 4, 2, vec![1; 32]);
        let p = maxpool_u2(&c, 2, 2).unwrap();
        assert_eq!(p.desc.shape(), Shape::new(2, 2, 2));
        assert_eq!(p.data, BlobData::U2(vec![1; 8]));
    }

    #[test]
    fn conv_identity_and_bias() {
        let x: Vec<f32> = (0..18).map(|i| i as f32 * 0.25 - 1.0).collect();
        let t = TensorBlob::single(
            TensorDesc::new(3, 3, 2, DType::F32, Layout::DepthInnermost),
            BlobData::F32(x.clone()),
        )
        .unwrap();
        let id = TensorBlob::new(
            TensorDesc::new(1, 1, 2, DType::F32, Layout::DepthInnermost),
            2,
            BlobData::F32(vec![1.0, 0.0, 0.0, 1.0]),
        )
        .unwrap();
        assert_eq!(conv_f32(&t, None, &id, None, 1, 0).unwrap().data, BlobData::F32(x));
        let zero = TensorBlob::new(id.desc, 2, BlobData::F32(vec![0.0; 4])).unwrap();
        let out = conv_f32(&t, None, &zero, Some(&[0.5, -2.0]), 1, 0).unwrap();
        assert_eq!(out.as_f32().unwrap()[..4], [0.5, -2.0, 0.5, -2.0]);
    }

    #[test]
    fn reorg_and_concat() {
        let t = codes(2, 2, 1, vec![0, 1, 2, 3]);
        let r = reorg(&t, 2).unwrap();
        assert_eq!(r.desc.shape(), Shape::new(1, 1, 4));
        assert_eq!(r.data, BlobData::U2(vec![0, 1, 2, 3]));
        let a = codes(1, 2, 1, vec![1, 2]);
        let b = codes(1, 2, 2, vec![3, 3, 0, 0]);
        assert_eq!(concat(&[&a, &b]).unwrap().data, BlobData::U2(vec![1, 3, 3, 2, 0, 0]));
    }
}
