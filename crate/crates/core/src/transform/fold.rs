//! Per-channel chains, affine folding and threshold units.

use serde::{Deserialize, Serialize};

use super::TransformError;
use crate::model_ir::Op;
use crate::scalar::{leaky, quantize_code, Scalar};

/// A per-channel node between a convolution and the next quantizer.
///
/// `apply` is the reference semantics shared by the engine, the threshold
/// search and the emitted C: inputs and outputs are f32, arithmetic is f64.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ChannelOp {
    #[serde(rename = "batchnorm")]
    BatchNorm {
        gamma: Vec<f32>,
        beta: Vec<f32>,
        mean: Vec<f32>,
        var: Vec<f32>,
        eps: f32,
    },
    Scale {
        values: Vec<f32>,
    },
    Bias {
        values: Vec<f32>,
    },
    LeakyRelu {
        slope: f32,
    },
}

impl ChannelOp {
    pub fn from_op(op: &Op) -> Option<Self> {
        Some(match op {
            Op::BatchNorm {
                gamma,
                beta,
                mean,
                var,
                eps,
            } => ChannelOp::BatchNorm {
                gamma: gamma.clone(),
                beta: beta.clone(),
                mean: mean.clone(),
                var: var.clone(),
                eps: *eps,
            },
            Op::Scale { values } => ChannelOp::Scale { values: values.clone() },
            Op::Bias { values } => ChannelOp::Bias { values: values.clone() },
            Op::LeakyRelu { slope } => ChannelOp::LeakyRelu { slope: *slope },
            _ => return None,
        })
    }

    #[inline]
    pub fn apply(&self, c: usize, x: f32) -> f32 {
        let x = x as f64;
        match self {
            ChannelOp::BatchNorm {
                gamma,
                beta,
                mean,
                var,
                eps,
            } => {
                let g = gamma[c] as f64;
                let sd = (var[c] as f64 + *eps as f64).sqrt();
                (g * (x - mean[c] as f64) / sd + beta[c] as f64) as f32
            }
            ChannelOp::Scale { values } => (x * values[c] as f64) as f32,
            ChannelOp::Bias { values } => (x + values[c] as f64) as f32,
            ChannelOp::LeakyRelu { slope } => {
                if x >= 0.0 {
                    x as f32
                } else {
                    (*slope as f64 * x) as f32
                }
            }
        }
    }

    /// Per-channel vector parameters (f32 each).
    pub fn params(&self) -> usize {
        match self {
            ChannelOp::BatchNorm { gamma, .. } => 4 * gamma.len(),
            ChannelOp::Scale { values } | ChannelOp::Bias { values } => values.len(),
            ChannelOp::LeakyRelu { .. } => 0,
        }
    }

    /// Sign of the channel's slope: +1, -1, or 0 for a flat channel.
    fn slope_sign(&self, c: usize) -> i32 {
        let sign = |v: f32| {
            if v > 0.0 {
                1
            } else if v < 0.0 {
                -1
            } else {
                0
            }
        };
        match self {
            ChannelOp::BatchNorm { gamma, .. } => sign(gamma[c]),
            ChannelOp::Scale { values } => sign(values[c]),
            ChannelOp::Bias { .. } => 1,
            ChannelOp::LeakyRelu { slope } => sign(*slope),
        }
    }
}

/// Runs `x` through `ops` for channel `c`.
#[inline]
pub fn apply_chain(ops: &[ChannelOp], c: usize, x: f32) -> f32 {
    ops.iter().fold(x, |x, op| op.apply(c, x))
}

/// Activation quantizer on an f32 value: `clamp(floor(x/delta + 1/2), 0, 3)` in f64.
#[inline]
pub fn quantize_f32(x: f32, delta: f32) -> u8 {
    quantize_code(&(x as f64), &(delta as f64))
}

/// Real value of a code, exact in f64.
#[inline]
pub fn dequantize(code: u8, delta: f32) -> f64 {
    delta as f64 * code as f64
}

/// Splits a trailing leaky rectifier off a chain.
pub fn split_trailing_leaky(ops: &[ChannelOp]) -> (&[ChannelOp], Option<f32>) {
    match ops.split_last() {
        Some((ChannelOp::LeakyRelu { slope }, rest)) => (rest, Some(*slope)),
        _ => (ops, None),
    }
}

/// Composed per-channel map `r = scale[c] * y + offset[c]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineFold<T> {
    pub scale: Vec<T>,
    pub offset: Vec<T>,
}

impl<T: Scalar> AffineFold<T> {
    pub fn identity(channels: usize) -> Self {
        Self {
            scale: vec![T::one(); channels],
            offset: vec![T::zero(); channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.scale.len()
    }

    pub fn eval(&self, c: usize, y: &T) -> T {
        self.scale[c].clone() * y.clone() + self.offset[c].clone()
    }
}

fn lift<T: Scalar>(v: f32) -> Result<T, TransformError> {
    T::from_f64(v as f64).ok_or(TransformError::NonFiniteParameter)
}

/// Composes a chain of batchnorm/scale/bias ops, in order, over `channels` channels.
pub fn fold_affine_chain<T: Scalar>(chain: &[ChannelOp], channels: usize) -> Result<AffineFold<T>, TransformError> {
    let mut fold = AffineFold::<T>::identity(channels);
    for (pos, op) in chain.iter().enumerate() {
        let len = match op {
            ChannelOp::BatchNorm { gamma, .. } => gamma.len(),
            ChannelOp::Scale { values } | ChannelOp::Bias { values } => values.len(),
            ChannelOp::LeakyRelu { .. } => return Err(TransformError::NonAffineNodeInChain { position: pos }),
        };
        if len != channels {
            return Err(TransformError::ChannelMismatch {
                expected: channels,
                found: len,
            });
        }
        for c in 0..channels {
            let (s, b) = (&mut fold.scale[c], &mut fold.offset[c]);
            match op {
                ChannelOp::BatchNorm {
                    gamma,
                    beta,
                    mean,
                    var,
                    eps,
                } => {
                    let sd = (lift::<T>(var[c])? + lift::<T>(*eps)?).sqrt();
                    let k = lift::<T>(gamma[c])? / sd;
                    *s = k.clone() * s.clone();
                    *b = k * (b.clone() - lift::<T>(mean[c])?) + lift::<T>(beta[c])?;
                }
                ChannelOp::Scale { values } => {
                    let k = lift::<T>(values[c])?;
                    *s = k.clone() * s.clone();
                    *b = k * b.clone();
                }
                ChannelOp::Bias { values } => {
                    *b = b.clone() + lift::<T>(values[c])?;
                }
                ChannelOp::LeakyRelu { .. } => unreachable!(),
            }
        }
    }
    if let Some(channel) = fold.scale.iter().position(|s| s.is_zero()) {
        return Err(TransformError::ZeroScaleChannel { channel });
    }
    Ok(fold)
}

/// Product of slope signs along the chain for channel `c`.
pub fn chain_direction(ops: &[ChannelOp], c: usize) -> Option<Direction> {
    match ops.iter().map(|op| op.slope_sign(c)).product::<i32>() {
        1 => Some(Direction::Increasing),
        -1 => Some(Direction::Decreasing),
        _ => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// code = #{j : acc >= t_j}
    Increasing,
    /// code = #{j : acc <= t_j}
    Decreasing,
}

/// Integer cut-points replacing a folded chain plus quantizer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdUnit {
    pub t: Vec<[i32; 3]>,
    pub direction: Vec<Direction>,
}

impl ThresholdUnit {
    pub fn channels(&self) -> usize {
        self.t.len()
    }

    #[inline]
    pub fn code(&self, c: usize, acc: i32) -> u8 {
        let t = &self.t[c];
        match self.direction[c] {
            Direction::Increasing => (acc >= t[0]) as u8 + (acc >= t[1]) as u8 + (acc >= t[2]) as u8,
            Direction::Decreasing => (acc <= t[0]) as u8 + (acc <= t[1]) as u8 + (acc <= t[2]) as u8,
        }
    }

    /// Storage size: three i32 cut-points per channel plus one direction bit.
    pub fn byte_len(&self) -> usize {
        12 * self.channels() + self.channels().div_ceil(8)
    }

    pub fn is_ordered(&self) -> bool {
        self.t.iter().zip(&self.direction).all(|(t, d)| match d {
            Direction::Increasing => t[0] <= t[1] && t[1] <= t[2],
            Direction::Decreasing => t[0] >= t[1] && t[1] >= t[2],
        })
    }
}

/// Smallest `y` in `[lo, hi]` with `pred(y)`, or `hi + 1`. `pred` must be
/// monotone false -> true. Gallops outward from `hint`, then bisects.
pub(crate) fn first_true(lo: i64, hi: i64, hint: i64, pred: impl Fn(i64) -> bool) -> i64 {
    let hint = hint.clamp(lo, hi);
    let (mut below, mut above);
    if pred(hint) {
        above = hint;
        let mut step = 1i64;
        loop {
            if above == lo {
                return lo;
            }
            let probe = above.saturating_sub(step).max(lo);
            if pred(probe) {
                above = probe;
                step = step.saturating_mul(2);
            } else {
                below = probe;
                break;
            }
        }
    } else {
        below = hint;
        let mut step = 1i64;
        loop {
            if below == hi {
                return hi + 1;
            }
            let probe = below.saturating_add(step).min(hi);
            if pred(probe) {
                above = probe;
                break;
            }
            below = probe;
            step = step.saturating_mul(2);
        }
    }
    while above - below > 1 {
        let mid = below + (above - below) / 2;
        if pred(mid) {
            above = mid;
        } else {
            below = mid;
        }
    }
    above
}

/// Cut-point `j` (1-based) for a monotone integer-to-code map.
pub(crate) fn cut_point(direction: Direction, j: u8, lo: i64, hi: i64, hint: i64, code: impl Fn(i64) -> u8) -> i64 {
    match direction {
        Direction::Increasing => first_true(lo, hi, hint, |y| code(y) >= j),
        Direction::Decreasing => -first_true(-hi, -lo, -hint, |z| code(-z) >= j),
    }
}

/// Derives the threshold unit of `quantize(leaky(s*y + b))` with step `delta`.
///
/// Closed form per channel: `t_j = ceil((c_j - b)/s)` for `s > 0` and
/// `floor(...)` for `s < 0`, with `c_j = (j - 1/2) * delta`; each cut-point
/// is then checked against the quantizer evaluated in `T` and moved to the
/// exact crossing, which absorbs rounding in the closed form.
pub fn affine_to_thresholds<T: Scalar>(
    fold: &AffineFold<T>,
    delta: &T,
    slope: Option<&T>,
) -> Result<ThresholdUnit, TransformError> {
    if !delta.is_positive() {
        return Err(TransformError::NonPositiveStep);
    }
    if let Some(slope) = slope {
        if !slope.is_positive() {
            return Err(TransformError::NonMonotoneActivation);
        }
    }
    let lo = i32::MIN as i64 + 1;
    let hi = i32::MAX as i64 - 1;
    let mut unit = ThresholdUnit {
        t: Vec::with_capacity(fold.channels()),
        direction: Vec::with_capacity(fold.channels()),
    };
    for c in 0..fold.channels() {
        let s = &fold.scale[c];
        let b = &fold.offset[c];
        if s.is_zero() {
            return Err(TransformError::ZeroScaleChannel { channel: c });
        }
        let direction = if s.is_positive() {
            Direction::Increasing
        } else {
            Direction::Decreasing
        };
        let code = |y: i64| {
            let r = fold.eval(c, &T::from_i64(y));
            let r = match slope {
                Some(slope) => leaky(r, slope),
                None => r,
            };
            quantize_code(&r, delta)
        };
        let mut t = [0i32; 3];
        for j in 1..=3u8 {
            let cj = (T::from_i64(j as i64) - T::half()) * delta.clone();
            let cross = match slope {
                Some(slope) if cj < T::zero() => cj / slope.clone(),
                _ => cj,
            };
            let x = (cross - b.clone()) / s.clone();
            let closed = match direction {
                Direction::Increasing => x.ceil(),
                Direction::Decreasing => x.floor(),
            };
            let hint = closed.to_i64_saturating().clamp(lo, hi);
            let exact = cut_point(direction, j, lo, hi, hint, code);
            t[j as usize - 1] = exact.clamp(i32::MIN as i64, i32::MAX as i64) as i32;
        }
        unit.t.push(t);
        unit.direction.push(direction);
    }
    Ok(unit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_rational::BigRational;

    fn fold1(s: f64, b: f64) -> AffineFold<f64> {
        AffineFold {
            scale: vec![s],
            offset: vec![b],
        }
    }

    fn real_code(s: f64, b: f64, delta: f64, y: i64) -> u8 {
        let r = s * y as f64 + b;
        (r / delta + 0.5).floor().clamp(0.0, 3.0) as u8
    }

    #[test]
    fn batchnorm_alone() {
        let chain = [ChannelOp::BatchNorm {
            gamma: vec![2.0],
            beta: vec![1.0],
            mean: vec![0.0],
            var: vec![1.0],
            eps: 0.0,
        }];
        let f = fold_affine_chain::<f64>(&chain, 1).unwrap();
        assert_eq!((f.scale[0], f.offset[0]), (2.0, 1.0));
    }

    #[test]
    fn bias_then_scale() {
        let chain = [
            ChannelOp::Bias { values: vec![3.0] },
            ChannelOp::Scale { values: vec![0.5] },
        ];
        let f = fold_affine_chain::<f64>(&chain, 1).unwrap();
        assert_eq!((f.scale[0], f.offset[0]), (0.5, 1.5));
        let exact = fold_affine_chain::<BigRational>(&chain, 1).unwrap();
        assert_eq!(exact.offset[0], BigRational::new(3.into(), 2.into()));
    }

    #[test]
    fn fold_errors() {
        let zero = [ChannelOp::Scale { values: vec![1.0, 0.0] }];
        assert_eq!(
            fold_affine_chain::<f64>(&zero, 2),
            Err(TransformError::ZeroScaleChannel { channel: 1 })
        );
        let leaky = [
            ChannelOp::LeakyRelu { slope: 0.1 },
            ChannelOp::Bias { values: vec![1.0] },
        ];
        assert_eq!(
            fold_affine_chain::<f64>(&leaky, 1),
            Err(TransformError::NonAffineNodeInChain { position: 0 })
        );
    }

    #[test]
    fn threshold_examples() {
        let u = affine_to_thresholds(&fold1(2.0, 1.0), &1.0, None).unwrap();
        assert_eq!(u.t[0], [0, 1, 1]);
        assert_eq!(u.direction[0], Direction::Increasing);
        assert_eq!(u.code(0, 0), 1);
        assert_eq!(u.code(0, 1), 3);

        let u = affine_to_thresholds(&fold1(1.0, 0.0), &1.0, None).unwrap();
        assert_eq!(u.t[0], [1, 2, 3]);

        let u = affine_to_thresholds(&fold1(-1.0, 0.0), &1.0, None).unwrap();
        assert_eq!(u.t[0], [-1, -2, -3]);
        assert_eq!(u.direction[0], Direction::Decreasing);
        assert_eq!(u.code(0, -2), 2);
    }

    #[test]
    fn thresholds_match_real_pipeline_sweep() {
        for (s, b) in [(2.0, 1.0), (-1.0, 0.0), (0.37, -2.2), (-3.5, 7.25), (1e-3, 0.4)] {
            let u = affine_to_thresholds(&fold1(s, b), &1.0, None).unwrap();
            for y in -1000..=1000 {
                assert_eq!(u.code(0, y as i32), real_code(s, b, 1.0, y), "s={s} b={b} y={y}");
            }
        }
    }

    #[test]
    fn leaky_slope_must_be_positive() {
        assert_eq!(
            affine_to_thresholds(&fold1(1.0, 0.0), &1.0, Some(&0.0)),
            Err(TransformError::NonMonotoneActivation)
        );
        assert_eq!(
            affine_to_thresholds(&fold1(1.0, 0.0), &0.0, None),
            Err(TransformError::NonPositiveStep)
        );
        let u = affine_to_thresholds(&fold1(1.0, 0.0), &1.0, Some(&0.1)).unwrap();
        assert_eq!(u.t[0], [1, 2, 3]);
    }

    #[test]
    fn first_true_brackets() {
        for target in [-50i64, -1, 0, 3, 77] {
            for hint in [-100i64, 0, 5, 100] {
                assert_eq!(first_true(-100, 100, hint, |y| y >= target), target);
            }
        }
        assert_eq!(first_true(-10, 10, 0, |_| false), 11);
        assert_eq!(first_true(-10, 10, 0, |_| true), -10);
    }

    #[test]
    fn chain_semantics() {
        let bn = ChannelOp::BatchNorm {
            gamma: vec![2.0],
            beta: vec![0.5],
            mean: vec![1.0],
            var: vec![3.0],
            eps: 1.0,
        };
        assert_eq!(bn.apply(0, 3.0), 2.5);
        let lk = ChannelOp::LeakyRelu { slope: 0.5 };
        assert_eq!(lk.apply(0, -2.0), -1.0);
        assert_eq!(quantize_f32(0.5, 1.0), 1);
        assert_eq!(quantize_f32(0.4999, 1.0), 0);
        assert_eq!(dequantize(3, 0.1), 0.1f32 as f64 * 3.0);
    }
}
