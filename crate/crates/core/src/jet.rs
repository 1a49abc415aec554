//! Truncated second-order Taylor arithmetic.
//!
//! A [`Jet`] carries the value, gradient and Hessian of a scalar function at
//! a base point. Products and quotients follow the Leibniz rule truncated at
//! order two, so composing jets reproduces the exact 2-jet of the composed
//! function. Every jet tracks the highest order it is valid for: taking a
//! partial derivative lowers it by one, and mixed-order arithmetic keeps the
//! minimum.

use std::fmt;
use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};

use crate::tensor::Scalar;

/// Largest coordinate dimension a jet can carry.
pub const MAX_DIM: usize = 8;
const PACKED: usize = MAX_DIM * (MAX_DIM + 1) / 2;
const MAX_ORDER: u8 = 2;

#[inline]
fn packed(i: usize, j: usize) -> usize {
    let (a, b) = if i <= j { (i, j) } else { (j, i) };
    b * (b + 1) / 2 + a
}

#[derive(Clone, Copy, PartialEq)]
pub struct Jet {
    n: u8,
    order: u8,
    v: f64,
    d: [f64; MAX_DIM],
    h: [f64; PACKED],
}

impl Jet {
    /// A constant; exact at every order and compatible with any dimension.
    pub const fn constant(v: f64) -> Self {
        Jet {
            n: 0,
            order: MAX_ORDER,
            v,
            d: [0.0; MAX_DIM],
            h: [0.0; PACKED],
        }
    }

    /// Builds an order-2 jet from value, gradient and a full (symmetric)
    /// `n x n` row-major Hessian. Only the upper triangle is read.
    pub fn new(v: f64, grad: &[f64], hess: &[f64]) -> Self {
        let n = grad.len();
        assert!(n <= MAX_DIM, "jet dimension {n} exceeds {MAX_DIM}");
        assert_eq!(hess.len(), n * n, "hessian must be n x n");
        let mut jet = Jet {
            n: n as u8,
            order: 2,
            v,
            d: [0.0; MAX_DIM],
            h: [0.0; PACKED],
        };
        jet.d[..n].copy_from_slice(grad);
        for b in 0..n {
            for a in 0..=b {
                jet.h[packed(a, b)] = hess[a * n + b];
            }
        }
        jet
    }

    /// Order-1 jet (value and gradient only).
    pub fn first_order(v: f64, grad: &[f64]) -> Self {
        let n = grad.len();
        assert!(n <= MAX_DIM);
        let mut d = [0.0; MAX_DIM];
        d[..n].copy_from_slice(grad);
        Jet {
            n: n as u8,
            order: 1,
            v,
            d,
            h: [0.0; PACKED],
        }
    }

    /// The coordinate function `x_i` in dimension `n`.
    pub fn coordinate(n: usize, i: usize) -> Self {
        let mut grad = vec![0.0; n];
        grad[i] = 1.0;
        Jet::new(0.0, &grad, &vec![0.0; n * n])
    }

    pub fn value(&self) -> f64 {
        self.v
    }

    pub fn dim(&self) -> usize {
        self.n as usize
    }

    pub fn order(&self) -> u8 {
        self.order
    }

    pub fn grad(&self, i: usize) -> f64 {
        debug_assert!(self.order >= 1, "gradient of an order-0 jet");
        self.d[i]
    }

    pub fn hess(&self, i: usize, j: usize) -> f64 {
        debug_assert!(self.order >= 2, "hessian of a jet below order 2");
        self.h[packed(i, j)]
    }

    /// Partial derivative in direction `i`; the result is valid one order lower.
    pub fn partial(&self, i: usize) -> Self {
        assert!(self.order >= 1, "cannot differentiate an order-0 jet");
        let n = self.n as usize;
        let mut out = Jet {
            n: self.n,
            order: self.order - 1,
            v: if i < n { self.d[i] } else { 0.0 },
            d: [0.0; MAX_DIM],
            h: [0.0; PACKED],
        };
        if out.order >= 1 && i < n {
            for j in 0..n {
                out.d[j] = self.h[packed(i, j)];
            }
        }
        out
    }

    /// Drops information above `order`.
    pub fn truncate(mut self, order: u8) -> Self {
        if order < self.order {
            self.order = order;
            if order < 2 {
                self.h = [0.0; PACKED];
            }
            if order < 1 {
                self.d = [0.0; MAX_DIM];
            }
        }
        self
    }

    pub fn recip(&self) -> Self {
        let x0 = self.v;
        let inv = 1.0 / x0;
        let n = self.n as usize;
        let mut out = Jet {
            n: self.n,
            order: self.order,
            v: inv,
            d: [0.0; MAX_DIM],
            h: [0.0; PACKED],
        };
        if self.order >= 1 {
            let inv2 = inv * inv;
            for i in 0..n {
                out.d[i] = -self.d[i] * inv2;
            }
            if self.order >= 2 {
                let inv3 = inv2 * inv;
                for b in 0..n {
                    for a in 0..=b {
                        let k = packed(a, b);
                        out.h[k] = 2.0 * self.d[a] * self.d[b] * inv3 - self.h[k] * inv2;
                    }
                }
            }
        }
        out
    }

    #[inline]
    fn combine(&self, other: &Jet) -> (u8, u8) {
        (self.n.max(other.n), self.order.min(other.order))
    }
}

impl Default for Jet {
    fn default() -> Self {
        Jet::constant(0.0)
    }
}

impl fmt::Debug for Jet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let n = self.n as usize;
        let mut s = f.debug_struct("Jet");
        s.field("order", &self.order).field("v", &self.v);
        if self.order >= 1 {
            s.field("d", &&self.d[..n]);
        }
        if self.order >= 2 {
            s.field("h", &&self.h[..n * (n + 1) / 2]);
        }
        s.finish()
    }
}

impl Add for Jet {
    type Output = Jet;
    #[inline]
    fn add(mut self, rhs: Jet) -> Jet {
        let (n, order) = self.combine(&rhs);
        let m = n as usize;
        self.v += rhs.v;
        if order >= 1 {
            for i in 0..m {
                self.d[i] += rhs.d[i];
            }
            if order >= 2 {
                for k in 0..m * (m + 1) / 2 {
                    self.h[k] += rhs.h[k];
                }
            }
        }
        self.n = n;
        self.truncate(order)
    }
}

impl Sub for Jet {
    type Output = Jet;
    #[inline]
    fn sub(mut self, rhs: Jet) -> Jet {
        let (n, order) = self.combine(&rhs);
        let m = n as usize;
        self.v -= rhs.v;
        if order >= 1 {
            for i in 0..m {
                self.d[i] -= rhs.d[i];
            }
            if order >= 2 {
                for k in 0..m * (m + 1) / 2 {
                    self.h[k] -= rhs.h[k];
                }
            }
        }
        self.n = n;
        self.truncate(order)
    }
}

impl AddAssign for Jet {
    #[inline]
    fn add_assign(&mut self, rhs: Jet) {
        *self = *self + rhs;
    }
}

impl SubAssign for Jet {
    #[inline]
    fn sub_assign(&mut self, rhs: Jet) {
        *self = *self - rhs;
    }
}

impl Neg for Jet {
    type Output = Jet;
    #[inline]
    fn neg(self) -> Jet {
        self * -1.0
    }
}

impl Mul<f64> for Jet {
    type Output = Jet;
    #[inline]
    fn mul(mut self, s: f64) -> Jet {
        let m = self.n as usize;
        self.v *= s;
        if self.order >= 1 {
            for i in 0..m {
                self.d[i] *= s;
            }
            if self.order >= 2 {
                for k in 0..m * (m + 1) / 2 {
                    self.h[k] *= s;
                }
            }
        }
        self
    }
}

impl Mul for Jet {
    type Output = Jet;
    #[inline]
    fn mul(self, rhs: Jet) -> Jet {
        let (n, order) = self.combine(&rhs);
        let m = n as usize;
        let mut out = Jet {
            n,
            order,
            v: self.v * rhs.v,
            d: [0.0; MAX_DIM],
            h: [0.0; PACKED],
        };
        if order >= 1 {
            for i in 0..m {
                out.d[i] = self.v * rhs.d[i] + self.d[i] * rhs.v;
            }
            if order >= 2 {
                for b in 0..m {
                    for a in 0..=b {
                        let k = packed(a, b);
                        out.h[k] = self.v * rhs.h[k]
                            + self.h[k] * rhs.v
                            + self.d[a] * rhs.d[b]
                            + self.d[b] * rhs.d[a];
                    }
                }
            }
        }
        out
    }
}

impl Scalar for Jet {
    fn zero() -> Self {
        Jet::constant(0.0)
    }
    fn from_f64(v: f64) -> Self {
        Jet::constant(v)
    }
    fn value(&self) -> f64 {
        self.v
    }
    fn recip(&self) -> Self {
        Jet::recip(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // f(x, y) = x^2 y + 3 y at (1, 2): grad (4, 4), hess [[4, 2], [2, 0]]
    fn sample() -> Jet {
        let x = Jet::coordinate(2, 0) + Jet::constant(1.0);
        let y = Jet::coordinate(2, 1) + Jet::constant(2.0);
        x * x * y + y * 3.0
    }

    #[test]
    fn product_rule_matches_hand_derivatives() {
        let f = sample();
        assert_eq!(f.value(), 8.0);
        assert_eq!((f.grad(0), f.grad(1)), (4.0, 4.0));
        assert_eq!((f.hess(0, 0), f.hess(0, 1), f.hess(1, 1)), (4.0, 2.0, 0.0));
    }

    #[test]
    fn partial_lowers_order() {
        let f = sample();
        let fx = f.partial(0);
        assert_eq!(fx.order(), 1);
        assert_eq!(fx.value(), 4.0);
        assert_eq!((fx.grad(0), fx.grad(1)), (4.0, 2.0));
        let fxy = fx.partial(1);
        assert_eq!(fxy.order(), 0);
        assert_eq!(fxy.value(), 2.0);
    }

    #[test]
    fn reciprocal_of_quadratic() {
        // 1/(1 + x + x^2) at 0: 1, -1, hess 2*1 - 2 = 0
        let x = Jet::coordinate(1, 0);
        let q = Jet::constant(1.0) + x + x * x;
        let r = q.recip();
        assert!((r.value() - 1.0).abs() < 1e-15);
        assert!((r.grad(0) + 1.0).abs() < 1e-15);
        assert!(r.hess(0, 0).abs() < 1e-15);
        let one = q * r;
        assert!((one.value() - 1.0).abs() < 1e-15);
        assert!(one.grad(0).abs() < 1e-15 && one.hess(0, 0).abs() < 1e-15);
    }

    #[test]
    fn mixed_order_arithmetic_keeps_minimum() {
        let f = sample();
        let g = f.partial(0);
        assert_eq!((f * g).order(), 1);
        assert_eq!((f + Jet::constant(1.0)).order(), 2);
    }
}
