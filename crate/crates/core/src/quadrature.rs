//! One-dimensional adaptive quadrature.

use crate::scalar::Scalar;

/// Adaptive Simpson integration of `f` over `[a, b]`.
///
/// Subdivides until the local Richardson error estimate is below
/// `rel_tol * |integral|` (with `abs_floor` guarding the zero-integral case)
/// or the depth limit is reached.
pub fn adaptive_simpson<S: Scalar>(
    f: &impl Fn(S) -> S,
    a: S,
    b: S,
    rel_tol: S,
    abs_floor: S,
    max_depth: u32,
) -> S {
    let c = (a + b) / S::of(2.0);
    let fa = f(a);
    let fb = f(b);
    let fc = f(c);
    let whole = simpson(a, b, fa, fc, fb);
    // Crude scale for the relative tolerance; refined panels use the local value.
    let scale = whole.abs().max(abs_floor);
    rec(f, a, b, fa, fc, fb, whole, rel_tol * scale, max_depth)
}

fn simpson<S: Scalar>(a: S, b: S, fa: S, fc: S, fb: S) -> S {
    (b - a) / S::of(6.0) * (fa + S::of(4.0) * fc + fb)
}

#[allow(clippy::too_many_arguments)]
fn rec<S: Scalar>(
    f: &impl Fn(S) -> S,
    a: S,
    b: S,
    fa: S,
    fc: S,
    fb: S,
    whole: S,
    tol: S,
    depth: u32,
) -> S {
    let c = (a + b) / S::of(2.0);
    let d = (a + c) / S::of(2.0);
    let e = (c + b) / S::of(2.0);
    let fd = f(d);
    let fe = f(e);
    let left = simpson(a, c, fa, fd, fc);
    let right = simpson(c, b, fc, fe, fb);
    let err = left + right - whole;
    if depth == 0 || err.abs() <= S::of(15.0) * tol {
        return left + right + err / S::of(15.0);
    }
    let half = S::of(0.5);
    rec(f, a, c, fa, fd, fc, left, tol * half, depth - 1)
        + rec(f, c, b, fc, fe, fb, right, tol * half, depth - 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn integrates_smooth_functions() {
        let v = adaptive_simpson(&|x: f64| x.sin(), 0.0, std::f64::consts::PI, 1e-10, 1e-12, 40);
        assert_relative_eq!(v, 2.0, epsilon = 1e-9);
        let v = adaptive_simpson(&|x: f64| (-x).exp(), 0.0, 30.0, 1e-10, 1e-12, 48);
        assert_relative_eq!(v, 1.0, epsilon = 1e-8);
    }

    #[test]
    fn handles_integrable_log_singularity() {
        // int_0^1 ln(1/x) dx = 1
        let v = adaptive_simpson(&|x: f64| (1.0 / (x + 1e-300)).ln(), 1e-12, 1.0, 1e-9, 1e-12, 52);
        assert_relative_eq!(v, 1.0, epsilon = 1e-5);
    }
}
