//! Scalar abstraction for the real-valued side of lowering.
//!
//! Threshold derivation only needs ordered field arithmetic plus floor/ceil,
//! so it runs unchanged on `f32`, `f64` and exact `BigRational`.

use std::fmt::Debug;
use std::ops::Neg;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Num, ToPrimitive};

pub trait Scalar: Clone + PartialOrd + Debug + Num + Neg<Output = Self> {
    /// Exact for `BigRational`, rounding for floats. `None` for non-finite input.
    fn from_f64(v: f64) -> Option<Self>;
    fn from_i64(v: i64) -> Self;
    fn to_f64(&self) -> f64;
    fn floor(&self) -> Self;
    fn ceil(&self) -> Self;
    /// Square root; rounded through `f64` for `BigRational`.
    fn sqrt(&self) -> Self;
    /// Integral value as `i64`, saturating at the bounds.
    fn to_i64_saturating(&self) -> i64;

    fn half() -> Self {
        Self::one() / (Self::one() + Self::one())
    }

    fn is_positive(&self) -> bool {
        *self > Self::zero()
    }
}

macro_rules! float_scalar {
    ($($t:ty)*) => ($(
        impl Scalar for $t {
            fn from_f64(v: f64) -> Option<Self> {
                v.is_finite().then_some(v as $t)
            }
            fn from_i64(v: i64) -> Self {
                v as $t
            }
            fn to_f64(&self) -> f64 {
                *self as f64
            }
            fn floor(&self) -> Self {
                <$t>::floor(*self)
            }
            fn ceil(&self) -> Self {
                <$t>::ceil(*self)
            }
            fn sqrt(&self) -> Self {
                <$t>::sqrt(*self)
            }
            fn to_i64_saturating(&self) -> i64 {
                // `as` saturates for floats
                *self as i64
            }
        }
    )*)
}

float_scalar!(f32 f64);

impl Scalar for BigRational {
    fn from_f64(v: f64) -> Option<Self> {
        BigRational::from_float(v)
    }
    fn from_i64(v: i64) -> Self {
        BigRational::from_integer(BigInt::from(v))
    }
    fn to_f64(&self) -> f64 {
        ToPrimitive::to_f64(self).unwrap_or(f64::NAN)
    }
    fn floor(&self) -> Self {
        BigRational::floor(self)
    }
    fn ceil(&self) -> Self {
        BigRational::ceil(self)
    }
    fn sqrt(&self) -> Self {
        let r = Scalar::to_f64(self).sqrt();
        BigRational::from_float(r).unwrap_or_else(|| BigRational::from_integer(BigInt::from(0)))
    }
    fn to_i64_saturating(&self) -> i64 {
        let int = self.to_integer();
        match int.to_i64() {
            Some(v) => v,
            None if int > BigInt::from(0) => i64::MAX,
            None => i64::MIN,
        }
    }
}

/// 2-bit unsigned activation code: `clamp(floor(a/delta + 1/2), 0, 3)`.
pub fn quantize_code<T: Scalar>(a: &T, delta: &T) -> u8 {
    let v = (a.clone() / delta.clone() + T::half()).floor();
    if v <= T::zero() {
        0
    } else if v >= T::from_i64(3) {
        3
    } else {
        v.to_i64_saturating() as u8
    }
}

/// Leaky rectifier, identity on the non-negative half-line.
pub fn leaky<T: Scalar>(r: T, slope: &T) -> T {
    if r >= T::zero() {
        r
    } else {
        slope.clone() * r
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rat(n: i64, d: i64) -> BigRational {
        BigRational::new(BigInt::from(n), BigInt::from(d))
    }

    #[test]
    fn quantizer_rounds_half_up_and_clamps() {
        assert_eq!(quantize_code(&0.49f64, &1.0), 0);
        assert_eq!(quantize_code(&0.5f64, &1.0), 1);
        assert_eq!(quantize_code(&2.5f64, &1.0), 3);
        assert_eq!(quantize_code(&-7.0f64, &1.0), 0);
        assert_eq!(quantize_code(&100.0f32, &0.5), 3);
        assert_eq!(quantize_code(&rat(3, 4), &rat(1, 2)), 2);
        assert_eq!(quantize_code(&rat(1, 4), &rat(1, 2)), 1);
    }

    #[test]
    fn rational_floor_ceil_and_saturation() {
        assert_eq!(Scalar::floor(&rat(-1, 4)), rat(-1, 1));
        assert_eq!(Scalar::ceil(&rat(-1, 4)), rat(0, 1));
        assert_eq!(rat(7, 2).ceil().to_i64_saturating(), 4);
        let huge = <BigRational as Scalar>::from_f64(1e300).unwrap();
        assert_eq!(huge.to_i64_saturating(), i64::MAX);
        assert!(<BigRational as Scalar>::from_f64(f64::NAN).is_none());
    }

    #[test]
    fn leaky_is_identity_on_positive_side() {
        assert_eq!(leaky(2.0f64, &0.1), 2.0);
        assert_eq!(leaky(-2.0f64, &0.5), -1.0);
    }
}
