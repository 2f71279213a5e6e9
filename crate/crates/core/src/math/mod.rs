//! Scalar abstraction so the model code can run on plain values or on
//! forward-mode dual numbers when Jacobians are needed.

mod dual;

pub use dual::DualN;

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub, SubAssign};

/// Differentiable scalar: implemented by `f64` and by [`DualN`].
pub trait Real:
    Copy
    + Debug
    + PartialOrd
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
{
    fn from_f64(v: f64) -> Self;
    /// Value part (derivatives dropped).
    fn value(self) -> f64;

    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn tan(self) -> Self;
    fn atan2(self, other: Self) -> Self;
    fn sqrt(self) -> Self;
    fn abs(self) -> Self;
    fn exp(self) -> Self;
    fn powi(self, n: i32) -> Self;
    /// Real exponent power; defined for non-negative bases.
    fn powf(self, e: f64) -> Self;
    /// Sign of the value part as a constant (zero derivative).
    fn signum_const(self) -> Self;

    fn max_by_value(self, other: Self) -> Self {
        if self.value() >= other.value() {
            self
        } else {
            other
        }
    }
    fn min_by_value(self, other: Self) -> Self {
        if self.value() <= other.value() {
            self
        } else {
            other
        }
    }
    fn clamp_by_value(self, lo: Self, hi: Self) -> Self {
        self.max_by_value(lo).min_by_value(hi)
    }
}

impl Real for f64 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn value(self) -> f64 {
        self
    }
    #[inline]
    fn sin(self) -> Self {
        f64::sin(self)
    }
    #[inline]
    fn cos(self) -> Self {
        f64::cos(self)
    }
    #[inline]
    fn tan(self) -> Self {
        f64::tan(self)
    }
    #[inline]
    fn atan2(self, other: Self) -> Self {
        f64::atan2(self, other)
    }
    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    #[inline]
    fn abs(self) -> Self {
        f64::abs(self)
    }
    #[inline]
    fn exp(self) -> Self {
        f64::exp(self)
    }
    #[inline]
    fn powi(self, n: i32) -> Self {
        f64::powi(self, n)
    }
    #[inline]
    fn powf(self, e: f64) -> Self {
        f64::powf(self, e)
    }
    #[inline]
    fn signum_const(self) -> Self {
        if self > 0.0 {
            1.0
        } else if self < 0.0 {
            -1.0
        } else {
            0.0
        }
    }
}

/// One explicit-midpoint step of x' = f(x) for a fixed-size state.
pub fn rk2_step_generic<const N: usize, R: Real>(
    x: &[R; N],
    dt: R,
    f: impl Fn(&[R; N]) -> [R; N],
) -> [R; N] {
    let half = R::from_f64(0.5);
    let k1 = f(x);
    let mut mid = *x;
    for i in 0..N {
        mid[i] += half * dt * k1[i];
    }
    let k2 = f(&mid);
    let mut out = *x;
    for i in 0..N {
        out[i] += dt * k2[i];
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rk2_exact_for_constant_field() {
        let x = [1.0, -2.0];
        let out = rk2_step_generic(&x, 0.1, |_| [3.0, 0.5]);
        assert_eq!(out, [1.3, -1.95]);
    }

    #[test]
    fn rk2_third_order_local_error_on_exponential() {
        // x' = lambda x has exact solution exp(lambda dt); one midpoint step
        // reproduces the Taylor series through dt^2.
        let lambda = -1.7;
        let dt = 1e-3;
        let out = rk2_step_generic(&[1.0], dt, |x| [lambda * x[0]]);
        let exact = (lambda * dt).exp();
        let err = (out[0] - exact).abs();
        let dt3_term = (lambda * dt).powi(3).abs() / 6.0;
        assert!(err < 2.0 * dt3_term, "err {err} vs dt^3 scale {dt3_term}");
        assert!(err > 0.1 * dt3_term);
    }

    #[test]
    fn rk2_second_order_global_convergence() {
        // Integrate x' = sin(x) over [0,1]; halving dt must cut the error ~4x.
        let run = |steps: usize| -> f64 {
            let dt = 1.0 / steps as f64;
            let mut x = [0.8];
            for _ in 0..steps {
                x = rk2_step_generic(&x, dt, |x| [x[0].sin()]);
            }
            x[0]
        };
        let reference = run(1 << 16);
        let e1 = (run(64) - reference).abs();
        let e2 = (run(128) - reference).abs();
        let ratio = e1 / e2;
        assert!((3.5..4.5).contains(&ratio), "ratio {ratio}");
    }
}
