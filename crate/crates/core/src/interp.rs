//! Monotone cubic (Fritsch-Carlson) interpolation on an irregular grid.

use crate::scalar::Scalar;

/// Shape-preserving piecewise cubic Hermite interpolant.
///
/// Node derivatives follow the Fritsch-Carlson weighted harmonic mean, which
/// keeps the interpolant monotone wherever the data are monotone.
#[derive(Clone, Debug)]
pub struct Pchip<S> {
    xs: Vec<S>,
    ys: Vec<S>,
    ds: Vec<S>,
}

impl<S: Scalar> Pchip<S> {
    /// Build from strictly increasing abscissae. Panics on fewer than two
    /// points or non-increasing `xs`.
    pub fn new(xs: Vec<S>, ys: Vec<S>) -> Self {
        assert!(xs.len() >= 2 && xs.len() == ys.len());
        assert!(xs.windows(2).all(|w| w[1] > w[0]), "abscissae must increase");
        let n = xs.len();
        let h: Vec<S> = (0..n - 1).map(|i| xs[i + 1] - xs[i]).collect();
        let sec: Vec<S> = (0..n - 1).map(|i| (ys[i + 1] - ys[i]) / h[i]).collect();

        let mut ds = vec![S::zero(); n];
        for i in 1..n - 1 {
            if sec[i - 1] * sec[i] <= S::zero() {
                ds[i] = S::zero();
            } else {
                let w1 = S::of(2.0) * h[i] + h[i - 1];
                let w2 = h[i] + S::of(2.0) * h[i - 1];
                ds[i] = (w1 + w2) / (w1 / sec[i - 1] + w2 / sec[i]);
            }
        }
        ds[0] = endpoint_slope(h[0], if n > 2 { h[1] } else { h[0] }, sec[0], if n > 2 { sec[1] } else { sec[0] });
        ds[n - 1] = endpoint_slope(
            h[n - 2],
            if n > 2 { h[n - 3] } else { h[n - 2] },
            sec[n - 2],
            if n > 2 { sec[n - 3] } else { sec[n - 2] },
        );

        Self { xs, ys, ds }
    }

    pub fn x_min(&self) -> S {
        self.xs[0]
    }

    pub fn x_max(&self) -> S {
        *self.xs.last().unwrap()
    }

    /// Evaluate at `x`, which must lie within the grid range.
    pub fn eval(&self, x: S) -> S {
        let i = match self.xs.binary_search_by(|p| p.partial_cmp(&x).unwrap()) {
            Ok(i) => return self.ys[i],
            Err(0) => 0,
            Err(i) if i >= self.xs.len() => self.xs.len() - 2,
            Err(i) => i - 1,
        };
        let h = self.xs[i + 1] - self.xs[i];
        let t = (x - self.xs[i]) / h;
        let t2 = t * t;
        let t3 = t2 * t;
        let two = S::of(2.0);
        let three = S::of(3.0);
        let h00 = two * t3 - three * t2 + S::one();
        let h10 = t3 - two * t2 + t;
        let h01 = three * t2 - two * t3;
        let h11 = t3 - t2;
        h00 * self.ys[i] + h10 * h * self.ds[i] + h01 * self.ys[i + 1] + h11 * h * self.ds[i + 1]
    }

    /// Evaluate with clamping to the grid range.
    pub fn eval_clamped(&self, x: S) -> S {
        let x = x.max(self.x_min()).min(self.x_max());
        self.eval(x)
    }
}

fn endpoint_slope<S: Scalar>(h0: S, h1: S, s0: S, s1: S) -> S {
    // Three-point end slope, clipped to preserve shape.
    let d = ((S::of(2.0) * h0 + h1) * s0 - h0 * s1) / (h0 + h1);
    if d * s0 <= S::zero() {
        S::zero()
    } else if s0 * s1 <= S::zero() && d.abs() > S::of(3.0) * s0.abs() {
        S::of(3.0) * s0
    } else {
        d
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn reproduces_nodes_and_stays_monotone() {
        let xs: Vec<f64> = (0..20).map(|i| (i as f64).exp() / 1e3).collect();
        let ys: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
        let p = Pchip::new(xs.clone(), ys.clone());
        for (x, y) in xs.iter().zip(&ys) {
            assert_relative_eq!(p.eval(*x), *y, epsilon = 1e-12);
        }
        let mut prev = f64::NEG_INFINITY;
        let lo = xs[0];
        let hi = *xs.last().unwrap();
        for k in 0..=1000 {
            let x = lo + (hi - lo) * k as f64 / 1000.0;
            let v = p.eval(x);
            assert!(v >= prev - 1e-12, "not monotone at {x}");
            prev = v;
        }
    }

    #[test]
    fn accurate_on_smooth_data() {
        let xs: Vec<f64> = (0..=64).map(|i| i as f64 / 64.0).collect();
        let ys: Vec<f64> = xs.iter().map(|x| (2.5 * x).sin()).collect();
        let p = Pchip::new(xs, ys);
        for k in 0..200 {
            let x = 0.3 + 0.4 * k as f64 / 200.0;
            assert_relative_eq!(p.eval(x), (2.5 * x).sin(), epsilon = 2e-4);
        }
    }
}
