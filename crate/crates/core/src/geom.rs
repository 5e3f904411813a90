//! Small fixed-size vector and matrix types for the plane.

use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use crate::scalar::Scalar;

/// A point or displacement in the plane.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Vec2<S> {
    pub x: S,
    pub y: S,
}

impl<S: Scalar> Vec2<S> {
    #[inline]
    pub fn new(x: S, y: S) -> Self {
        Self { x, y }
    }

    #[inline]
    pub fn zero() -> Self {
        Self { x: S::zero(), y: S::zero() }
    }

    #[inline]
    pub fn dot(self, other: Self) -> S {
        self.x * other.x + self.y * other.y
    }

    /// Counterclockwise rotation by 90 degrees: `(x, y) -> (-y, x)`.
    #[inline]
    pub fn perp(self) -> Self {
        Self { x: -self.y, y: self.x }
    }

    /// z-component of the cross product `self x other`.
    #[inline]
    pub fn cross(self, other: Self) -> S {
        self.x * other.y - self.y * other.x
    }

    #[inline]
    pub fn norm2(self) -> S {
        self.dot(self)
    }

    #[inline]
    pub fn norm(self) -> S {
        self.norm2().sqrt()
    }

    #[inline]
    pub fn scale(self, k: S) -> Self {
        Self { x: self.x * k, y: self.y * k }
    }

    /// Componentwise reduction modulo the period lengths, into `[0, p)`.
    #[inline]
    pub fn rem_euclid(self, period: Self) -> Self {
        fn rem1<S: Scalar>(v: S, p: S) -> S {
            let r = v - (v / p).floor() * p;
            if r >= p {
                r - p
            } else {
                r
            }
        }
        Self { x: rem1(self.x, period.x), y: rem1(self.y, period.y) }
    }

    /// Nearest-image difference `self - other` on the torus with the given periods.
    #[inline]
    pub fn torus_sub(self, other: Self, period: Self) -> Self {
        fn wrap<S: Scalar>(d: S, p: S) -> S {
            let half = p / S::of(2.0);
            let mut d = d - (d / p).round() * p;
            if d > half {
                d -= p;
            } else if d < -half {
                d += p;
            }
            d
        }
        Self { x: wrap(self.x - other.x, period.x), y: wrap(self.y - other.y, period.y) }
    }
}

impl<S: Scalar> Add for Vec2<S> {
    type Output = Self;
    #[inline]
    fn add(self, rhs: Self) -> Self {
        Self { x: self.x + rhs.x, y: self.y + rhs.y }
    }
}

impl<S: Scalar> Sub for Vec2<S> {
    type Output = Self;
    #[inline]
    fn sub(self, rhs: Self) -> Self {
        Self { x: self.x - rhs.x, y: self.y - rhs.y }
    }
}

impl<S: Scalar> Neg for Vec2<S> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Self { x: -self.x, y: -self.y }
    }
}

impl<S: Scalar> AddAssign for Vec2<S> {
    #[inline]
    fn add_assign(&mut self, rhs: Self) {
        self.x += rhs.x;
        self.y += rhs.y;
    }
}

impl<S: Scalar> Mul<S> for Vec2<S> {
    type Output = Self;
    #[inline]
    fn mul(self, k: S) -> Self {
        self.scale(k)
    }
}

/// A 2x2 matrix, row major.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mat2<S> {
    pub xx: S,
    pub xy: S,
    pub yx: S,
    pub yy: S,
}

impl<S: Scalar> Mat2<S> {
    #[inline]
    pub fn new(xx: S, xy: S, yx: S, yy: S) -> Self {
        Self { xx, xy, yx, yy }
    }

    #[inline]
    pub fn identity() -> Self {
        Self::new(S::one(), S::zero(), S::zero(), S::one())
    }

    #[inline]
    pub fn diag(a: S, b: S) -> Self {
        Self::new(a, S::zero(), S::zero(), b)
    }

    #[inline]
    pub fn det(self) -> S {
        self.xx * self.yy - self.xy * self.yx
    }

    #[inline]
    pub fn trace(self) -> S {
        self.xx + self.yy
    }

    #[inline]
    pub fn mul_vec(self, v: Vec2<S>) -> Vec2<S> {
        Vec2::new(self.xx * v.x + self.xy * v.y, self.yx * v.x + self.yy * v.y)
    }

    #[inline]
    pub fn scale(self, k: S) -> Self {
        Self::new(self.xx * k, self.xy * k, self.yx * k, self.yy * k)
    }

    #[inline]
    pub fn add(self, o: Self) -> Self {
        Self::new(self.xx + o.xx, self.xy + o.xy, self.yx + o.yx, self.yy + o.yy)
    }

    #[inline]
    pub fn sub(self, o: Self) -> Self {
        Self::new(self.xx - o.xx, self.xy - o.xy, self.yx - o.yx, self.yy - o.yy)
    }

    /// Lower-triangular Cholesky factor of a symmetric positive definite
    /// matrix, `None` if the matrix is not SPD.
    pub fn cholesky(self) -> Option<Self> {
        if self.xx <= S::zero() {
            return None;
        }
        let l11 = self.xx.sqrt();
        let l21 = self.yx / l11;
        let rest = self.yy - l21 * l21;
        if rest <= S::zero() {
            return None;
        }
        Some(Self::new(l11, S::zero(), l21, rest.sqrt()))
    }

    /// Eigenvalues of a symmetric matrix, descending.
    pub fn sym_eigenvalues(self) -> (S, S) {
        let half = S::of(0.5);
        let m = (self.xx + self.yy) * half;
        let d = (self.xx - self.yy) * half;
        let r = (d * d + self.xy * self.yx).sqrt();
        (m + r, m - r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn perp_is_orthogonal() {
        let v = Vec2::new(1.3f64, -0.4);
        assert_relative_eq!(v.dot(v.perp()), 0.0);
    }

    #[test]
    fn torus_sub_wraps() {
        let p = Vec2::new(2.0f64 * std::f64::consts::PI, 2.0 * std::f64::consts::PI);
        let a = Vec2::new(0.1, 0.1);
        let b = Vec2::new(2.0 * std::f64::consts::PI - 0.1, 0.2);
        let d = a.torus_sub(b, p);
        assert_relative_eq!(d.x, 0.2, epsilon = 1e-12);
        assert_relative_eq!(d.y, -0.1, epsilon = 1e-12);
    }

    #[test]
    fn cholesky_roundtrip() {
        let m = Mat2::new(2.0f64, 0.3, 0.3, 1.5);
        let l = m.cholesky().unwrap();
        let back = Mat2::new(
            l.xx * l.xx,
            l.xx * l.yx,
            l.yx * l.xx,
            l.yx * l.yx + l.yy * l.yy,
        );
        assert_relative_eq!(back.xx, m.xx, epsilon = 1e-12);
        assert_relative_eq!(back.yy, m.yy, epsilon = 1e-12);
        assert_relative_eq!(back.xy, m.xy, epsilon = 1e-12);
        assert!(Mat2::new(1.0f64, 2.0, 2.0, 1.0).cholesky().is_none());
    }
}
