//! Floating point abstraction shared by the numerical kernels.

use std::fmt::{Debug, Display};

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// Real scalar used by every kernel: `f32` or `f64`.
pub trait Scalar:
    Float + FloatConst + FromPrimitive + ToPrimitive + Debug + Display + Default + Send + Sync + 'static
{
    /// Converts an `f64` literal. Every literal used in this crate is representable.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable in scalar type")
    }

    #[inline]
    fn from_usize_lossy(n: usize) -> Self {
        Self::from_usize(n).expect("count representable in scalar type")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// A fixed exponent, evaluated with `powi` when it is a small integer.
///
/// Monitors evaluate `x^e` for every node at every step; most model exponents
/// are integers, and `powi` is several times cheaper than `powf`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Power<T> {
    exponent: T,
    integer: Option<i32>,
}

impl<T: Scalar> Power<T> {
    pub fn new(exponent: T) -> Self {
        let rounded = exponent.round();
        let integer = if (exponent - rounded).abs() == T::zero() && rounded.abs() <= T::lit(64.0) {
            rounded.to_i32()
        } else {
            None
        };
        Self { exponent, integer }
    }

    pub fn exponent(&self) -> T {
        self.exponent
    }

    #[inline]
    pub fn apply(&self, x: T) -> T {
        match self.integer {
            Some(0) => T::one(),
            Some(1) => x,
            Some(2) => x * x,
            Some(n) => x.powi(n),
            None => x.powf(self.exponent),
        }
    }
}

/// `num / gamma^beta` evaluated in log space so that tiny `gamma` does not
/// underflow the denominator before the quotient is formed.
#[inline]
pub(crate) fn quotient_power<T: Scalar>(num: T, gamma: T, beta: T) -> T {
    if num == T::zero() {
        T::zero()
    } else if beta == T::zero() {
        num
    } else {
        (num.ln() - beta * gamma.ln()).exp()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integer_powers_match_powf() {
        for e in [0.0, 1.0, 2.0, 3.0, 6.0, 18.0] {
            let p = Power::new(e);
            for x in [0.0, 0.3, 1.0, 2.5] {
                let want: f64 = if e == 0.0 { 1.0 } else { f64::powf(x, e) };
                assert!((p.apply(x) - want).abs() <= 1e-12 * want.abs().max(1.0));
            }
        }
        let p = Power::new(2.5f64);
        assert_eq!(p.apply(4.0), 32.0);
    }

    #[test]
    fn quotient_power_survives_tiny_gamma() {
        let g = 1e-20f64;
        let v = quotient_power(1e-100, g, 18.0);
        assert!(v.is_finite());
        assert!((v.ln() - (-100.0 * 10f64.ln() + 360.0 * 10f64.ln())).abs() < 1e-9);
        assert_eq!(quotient_power(0.0, g, 18.0), 0.0);
    }
}
