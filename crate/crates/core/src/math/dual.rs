//! Forward-mode dual numbers with a fixed number of derivative directions.

use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub, SubAssign};

use super::Real;

/// Value plus W partial derivatives, propagated through arithmetic.
#[derive(Clone, Copy, Debug)]
pub struct DualN<const W: usize> {
    pub re: f64,
    pub eps: [f64; W],
}

impl<const W: usize> DualN<W> {
    pub fn constant(v: f64) -> Self {
        DualN { re: v, eps: [0.0; W] }
    }

    /// Variable seeded with derivative 1 in direction `dir`.
    pub fn variable(v: f64, dir: usize) -> Self {
        let mut eps = [0.0; W];
        eps[dir] = 1.0;
        DualN { re: v, eps }
    }

    fn map(self, v: f64, dv: f64) -> Self {
        let mut eps = self.eps;
        for e in eps.iter_mut() {
            *e *= dv;
        }
        DualN { re: v, eps }
    }
}

impl<const W: usize> PartialEq for DualN<W> {
    fn eq(&self, other: &Self) -> bool {
        self.re == other.re
    }
}

impl<const W: usize> PartialOrd for DualN<W> {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        self.re.partial_cmp(&other.re)
    }
}

impl<const W: usize> Add for DualN<W> {
    type Output = Self;
    fn add(mut self, rhs: Self) -> Self {
        self.re += rhs.re;
        for i in 0..W {
            self.eps[i] += rhs.eps[i];
        }
        self
    }
}

impl<const W: usize> Sub for DualN<W> {
    type Output = Self;
    fn sub(mut self, rhs: Self) -> Self {
        self.re -= rhs.re;
        for i in 0..W {
            self.eps[i] -= rhs.eps[i];
        }
        self
    }
}

impl<const W: usize> Mul for DualN<W> {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        let mut eps = [0.0; W];
        for i in 0..W {
            eps[i] = self.eps[i] * rhs.re + self.re * rhs.eps[i];
        }
        DualN {
            re: self.re * rhs.re,
            eps,
        }
    }
}

impl<const W: usize> Div for DualN<W> {
    type Output = Self;
    fn div(self, rhs: Self) -> Self {
        let inv = 1.0 / rhs.re;
        let v = self.re * inv;
        let mut eps = [0.0; W];
        for i in 0..W {
            eps[i] = (self.eps[i] - v * rhs.eps[i]) * inv;
        }
        DualN { re: v, eps }
    }
}

impl<const W: usize> Neg for DualN<W> {
    type Output = Self;
    fn neg(mut self) -> Self {
        self.re = -self.re;
        for e in self.eps.iter_mut() {
            *e = -*e;
        }
        self
    }
}

impl<const W: usize> AddAssign for DualN<W> {
    fn add_assign(&mut self, rhs: Self) {
        *self = *self + rhs;
    }
}

impl<const W: usize> SubAssign for DualN<W> {
    fn sub_assign(&mut self, rhs: Self) {
        *self = *self - rhs;
    }
}

impl<const W: usize> Real for DualN<W> {
    fn from_f64(v: f64) -> Self {
        Self::constant(v)
    }
    fn value(self) -> f64 {
        self.re
    }

    fn sin(self) -> Self {
        self.map(self.re.sin(), self.re.cos())
    }
    fn cos(self) -> Self {
        self.map(self.re.cos(), -self.re.sin())
    }
    fn tan(self) -> Self {
        let c = self.re.cos();
        self.map(self.re.tan(), 1.0 / (c * c))
    }
    fn atan2(self, other: Self) -> Self {
        // d atan2(y, x) = (x dy - y dx) / (x^2 + y^2)
        let (y, x) = (self.re, other.re);
        let denom = x * x + y * y;
        let v = y.atan2(x);
        let mut eps = [0.0; W];
        for i in 0..W {
            eps[i] = (x * self.eps[i] - y * other.eps[i]) / denom;
        }
        DualN { re: v, eps }
    }
    fn sqrt(self) -> Self {
        let v = self.re.sqrt();
        let dv = if v > 0.0 { 0.5 / v } else { 0.0 };
        self.map(v, dv)
    }
    fn abs(self) -> Self {
        if self.re >= 0.0 {
            self
        } else {
            -self
        }
    }
    fn exp(self) -> Self {
        let v = self.re.exp();
        self.map(v, v)
    }
    fn powi(self, n: i32) -> Self {
        let v = self.re.powi(n);
        self.map(v, n as f64 * self.re.powi(n - 1))
    }
    fn powf(self, e: f64) -> Self {
        let v = self.re.powf(e);
        let dv = if self.re > 0.0 {
            e * self.re.powf(e - 1.0)
        } else {
            0.0
        };
        self.map(v, dv)
    }
    fn signum_const(self) -> Self {
        Self::constant(if self.re > 0.0 {
            1.0
        } else if self.re < 0.0 {
            -1.0
        } else {
            0.0
        })
    }
}
