//! Periodic cellular stream functions and their critical-point structure.
//!
//! A stream function `H` on a periodicity cell defines the incompressible
//! velocity `v = grad^perp H = (-dH/dx2, dH/dx1)`. The level set `{H = 0}`
//! (the separatrix) is required to contain all saddles and to divide the
//! cell into bounded components, each holding exactly one extremum.

use std::sync::Arc;

use thiserror::Error;

use crate::geom::{Mat2, Vec2};
use crate::scalar::Scalar;
use crate::separatrix;

/// User-supplied stream function with analytic derivatives.
///
/// Derivatives are part of the contract: the stiff-drift integrator evaluates
/// them in hot loops and numerical differentiation there would dominate the
/// error budget.
pub trait StreamFunction<S: Scalar>: Send + Sync {
    /// Period lengths per axis.
    fn period(&self) -> Vec2<S>;
    fn h(&self, x: Vec2<S>) -> S;
    fn grad(&self, x: Vec2<S>) -> Vec2<S>;
    fn laplacian(&self, x: Vec2<S>) -> S;

    /// Hessian of `H`; the default central-difference fallback is only used
    /// during setup (critical-point classification).
    fn hessian(&self, x: Vec2<S>) -> Mat2<S> {
        let h = S::of(1e-5);
        let gxp = self.grad(Vec2::new(x.x + h, x.y));
        let gxm = self.grad(Vec2::new(x.x - h, x.y));
        let gyp = self.grad(Vec2::new(x.x, x.y + h));
        let gym = self.grad(Vec2::new(x.x, x.y - h));
        let two_h = S::of(2.0) * h;
        Mat2::new(
            (gxp.x - gxm.x) / two_h,
            (gyp.x - gym.x) / two_h,
            (gxp.y - gxm.y) / two_h,
            (gyp.y - gym.y) / two_h,
        )
    }

    /// Optional fast cell classification for points off the separatrix.
    /// Must be consistent with the ordering of the field's extrema.
    fn cell_hint(&self, _x: Vec2<S>) -> Option<usize> {
        None
    }
}

/// The canonical cellular flow `H = sin(x1) sin(x2)` on the 2pi-torus.
#[derive(Clone, Copy, Debug, Default)]
pub struct CanonicalFlow;

impl<S: Scalar> StreamFunction<S> for CanonicalFlow {
    fn period(&self) -> Vec2<S> {
        let two_pi = S::of(2.0) * S::PI();
        Vec2::new(two_pi, two_pi)
    }

    #[inline]
    fn h(&self, x: Vec2<S>) -> S {
        x.x.sin() * x.y.sin()
    }

    #[inline]
    fn grad(&self, x: Vec2<S>) -> Vec2<S> {
        Vec2::new(x.x.cos() * x.y.sin(), x.x.sin() * x.y.cos())
    }

    #[inline]
    fn laplacian(&self, x: Vec2<S>) -> S {
        -S::of(2.0) * self.h(x)
    }

    fn hessian(&self, x: Vec2<S>) -> Mat2<S> {
        let s1 = x.x.sin();
        let c1 = x.x.cos();
        let s2 = x.y.sin();
        let c2 = x.y.cos();
        Mat2::new(-s1 * s2, c1 * c2, c1 * c2, -s1 * s2)
    }

    fn cell_hint(&self, x: Vec2<S>) -> Option<usize> {
        let pi = S::PI();
        let i = if x.x < pi { 0usize } else { 1 };
        let j = if x.y < pi { 0usize } else { 1 };
        Some(2 * i + j)
    }
}

/// Index of a connected component of the cell complement of the separatrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CellId(pub usize);

/// Result of classifying a point.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Location {
    Cell(CellId),
    Separatrix,
}

/// `H`, its gradient, and its Laplacian at a point.
#[derive(Clone, Copy, Debug)]
pub struct Eval<S> {
    pub h: S,
    pub grad: Vec2<S>,
    pub laplacian: S,
}

/// A nondegenerate critical point.
#[derive(Clone, Copy, Debug)]
pub struct CriticalPoint<S> {
    pub pos: Vec2<S>,
    pub value: S,
    pub hessian: Mat2<S>,
}

/// An extremum together with the cell it identifies.
#[derive(Clone, Copy, Debug)]
pub struct Extremum<S> {
    pub pos: Vec2<S>,
    pub value: S,
    pub cell: CellId,
}

#[derive(Debug, Error)]
pub enum FieldError {
    #[error("structure violation: {0}")]
    StructureViolation(String),
}

/// A validated stream-function field: periodic, nondegenerate critical
/// points, separatrix at level zero, one extremum per cell, no loops with a
/// single saddle. Immutable after construction and freely shareable.
#[derive(Clone)]
pub struct HamiltonianField<S: Scalar> {
    f: Arc<dyn StreamFunction<S>>,
    saddles: Vec<CriticalPoint<S>>,
    extrema: Vec<Extremum<S>>,
    sup_velocity: S,
    separatrix_tol: S,
}

impl<S: Scalar> HamiltonianField<S> {
    /// The canonical flow, with its critical points given in closed form.
    pub fn canonical() -> Self {
        let f: Arc<dyn StreamFunction<S>> = Arc::new(CanonicalFlow);
        let pi = S::PI();
        let zero = S::zero();
        let half_pi = pi / S::of(2.0);
        let three_half_pi = S::of(3.0) * half_pi;

        let saddle_positions = [
            Vec2::new(zero, zero),
            Vec2::new(zero, pi),
            Vec2::new(pi, zero),
            Vec2::new(pi, pi),
        ];
        let saddles = saddle_positions
            .into_iter()
            .map(|pos| CriticalPoint { pos, value: zero, hessian: f.hessian(pos) })
            .collect();

        let extremum_positions = [
            Vec2::new(half_pi, half_pi),
            Vec2::new(half_pi, three_half_pi),
            Vec2::new(three_half_pi, half_pi),
            Vec2::new(three_half_pi, three_half_pi),
        ];
        let extrema = extremum_positions
            .into_iter()
            .enumerate()
            .map(|(i, pos)| Extremum { pos, value: f.h(pos), cell: CellId(i) })
            .collect();

        let sup_velocity = sample_sup_velocity(f.as_ref());
        let field = Self { f, saddles, extrema, sup_velocity, separatrix_tol: S::of(1e-12) };
        debug_assert!(separatrix::single_saddle_loop(&field).is_none());
        field
    }

    /// Build and validate a user field. Critical points are located by
    /// Newton iteration from a `seed_grid x seed_grid` lattice of starting
    /// points and deduplicated at torus distance `1e-6`.
    pub fn from_stream(f: Arc<dyn StreamFunction<S>>, seed_grid: usize) -> Result<Self, FieldError> {
        let (saddles, raw_extrema) = find_critical_points(f.as_ref(), seed_grid)?;
        if saddles.len() != raw_extrema.len() || saddles.is_empty() {
            return Err(FieldError::StructureViolation(format!(
                "cell count must equal saddle count on the torus, found {} extrema and {} saddles",
                raw_extrema.len(),
                saddles.len()
            )));
        }

        let mut extrema: Vec<Extremum<S>> = raw_extrema
            .into_iter()
            .map(|cp| Extremum { pos: cp.pos, value: cp.value, cell: CellId(0) })
            .collect();
        extrema.sort_by(|a, b| {
            (a.pos.x, a.pos.y).partial_cmp(&(b.pos.x, b.pos.y)).unwrap()
        });
        for (i, e) in extrema.iter_mut().enumerate() {
            e.cell = CellId(i);
        }

        let sup_velocity = sample_sup_velocity(f.as_ref());
        let field = Self { f, saddles, extrema, sup_velocity, separatrix_tol: S::of(1e-12) };

        for e in &field.extrema {
            if let Some(hint) = field.f.cell_hint(e.pos) {
                if hint != e.cell.0 {
                    return Err(FieldError::StructureViolation(
                        "cell_hint inconsistent with extremum ordering".into(),
                    ));
                }
            }
        }
        if let Some(saddle) = separatrix::single_saddle_loop(&field) {
            return Err(FieldError::StructureViolation(format!(
                "separatrix loop through a single saddle at ({}, {})",
                saddle.x, saddle.y
            )));
        }
        Ok(field)
    }

    pub fn period(&self) -> Vec2<S> {
        self.f.period()
    }

    /// Reduce a point into the periodicity cell `[0, L1) x [0, L2)`.
    #[inline]
    pub fn reduce(&self, x: Vec2<S>) -> Vec2<S> {
        x.rem_euclid(self.f.period())
    }

    #[inline]
    pub fn eval(&self, x: Vec2<S>) -> Eval<S> {
        let r = self.reduce(x);
        Eval { h: self.f.h(r), grad: self.f.grad(r), laplacian: self.f.laplacian(r) }
    }

    #[inline]
    pub fn h(&self, x: Vec2<S>) -> S {
        self.f.h(self.reduce(x))
    }

    #[inline]
    pub fn grad(&self, x: Vec2<S>) -> Vec2<S> {
        self.f.grad(self.reduce(x))
    }

    /// The incompressible velocity `v = grad^perp H`.
    #[inline]
    pub fn velocity(&self, x: Vec2<S>) -> Vec2<S> {
        self.grad(x).perp()
    }

    pub fn hessian(&self, x: Vec2<S>) -> Mat2<S> {
        self.f.hessian(self.reduce(x))
    }

    pub fn saddles(&self) -> &[CriticalPoint<S>] {
        &self.saddles
    }

    pub fn extrema(&self) -> &[Extremum<S>] {
        &self.extrema
    }

    pub fn n_cells(&self) -> usize {
        self.extrema.len()
    }

    pub fn extremum_of(&self, cell: CellId) -> &Extremum<S> {
        &self.extrema[cell.0]
    }

    /// `|H|` at the extremum of the cell.
    pub fn h_max(&self, cell: CellId) -> S {
        self.extrema[cell.0].value.abs()
    }

    pub fn min_h_max(&self) -> S {
        self.extrema
            .iter()
            .map(|e| e.value.abs())
            .fold(S::infinity(), |a, b| a.min(b))
    }

    pub fn sup_velocity(&self) -> S {
        self.sup_velocity
    }

    pub fn separatrix_tol(&self) -> S {
        self.separatrix_tol
    }

    /// Classify a point as belonging to a cell or to the separatrix.
    ///
    /// Points with `|H| <= separatrix_tol` map to the separatrix; everything
    /// else is assigned the cell of the extremum its gradient-ascent orbit
    /// converges to (or directly via the stream function's `cell_hint`).
    pub fn cell_of(&self, x: Vec2<S>) -> Location {
        let r = self.reduce(x);
        if self.f.h(r).abs() <= self.separatrix_tol {
            return Location::Separatrix;
        }
        if let Some(hint) = self.f.cell_hint(r) {
            return Location::Cell(CellId(hint));
        }
        Location::Cell(self.classify_by_ascent(r))
    }

    fn classify_by_ascent(&self, start: Vec2<S>) -> CellId {
        let period = self.period();
        let scale = period.x.min(period.y);
        let ds = scale * S::of(0.02);
        let mut p = start;
        for _ in 0..4000 {
            let h = self.f.h(p);
            let g = self.f.grad(p);
            let gn = g.norm();
            if gn < S::of(1e-6) {
                break;
            }
            // Ascend |H|: follow +grad where H > 0, -grad where H < 0.
            let dir = if h >= S::zero() { g } else { -g };
            p = self.reduce(p + dir.scale(ds / gn));
            if let Some((cell, _)) = self.nearest_extremum_within(p, scale * S::of(0.05)) {
                return cell;
            }
        }
        self.nearest_extremum_within(p, S::infinity())
            .map(|(c, _)| c)
            .expect("field has at least one extremum")
    }

    fn nearest_extremum_within(&self, p: Vec2<S>, radius: S) -> Option<(CellId, S)> {
        let period = self.period();
        let mut best: Option<(CellId, S)> = None;
        for e in &self.extrema {
            let d = p.torus_sub(e.pos, period).norm();
            if d <= radius && best.map_or(true, |(_, bd)| d < bd) {
                best = Some((e.cell, d));
            }
        }
        best
    }

    /// Torus distance to the nearest saddle.
    pub fn saddle_distance(&self, x: Vec2<S>) -> S {
        let period = self.period();
        self.saddles
            .iter()
            .map(|s| x.torus_sub(s.pos, period).norm())
            .fold(S::infinity(), |a, b| a.min(b))
    }
}

fn sample_sup_velocity<S: Scalar>(f: &dyn StreamFunction<S>) -> S {
    let period = f.period();
    let n = 128;
    let mut sup = S::zero();
    for i in 0..n {
        for j in 0..n {
            let x = Vec2::new(
                period.x * S::from_usize(i).unwrap() / S::from_usize(n).unwrap(),
                period.y * S::from_usize(j).unwrap() / S::from_usize(n).unwrap(),
            );
            sup = sup.max(f.grad(x).norm());
        }
    }
    sup
}

fn find_critical_points<S: Scalar>(
    f: &dyn StreamFunction<S>,
    seed_grid: usize,
) -> Result<(Vec<CriticalPoint<S>>, Vec<CriticalPoint<S>>), FieldError> {
    let period = f.period();
    let dedupe_tol = S::of(1e-6);
    let mut found: Vec<CriticalPoint<S>> = Vec::new();

    for i in 0..seed_grid {
        for j in 0..seed_grid {
            let mut x = Vec2::new(
                period.x * (S::from_usize(i).unwrap() + S::of(0.5)) / S::from_usize(seed_grid).unwrap(),
                period.y * (S::from_usize(j).unwrap() + S::of(0.5)) / S::from_usize(seed_grid).unwrap(),
            );
            let mut ok = false;
            for _ in 0..60 {
                let g = f.grad(x);
                if g.norm() < S::of(1e-13) {
                    ok = true;
                    break;
                }
                let hess = f.hessian(x);
                let det = hess.det();
                if det.abs() < S::of(1e-12) {
                    break;
                }
                // Newton step: x <- x - Hess^{-1} grad.
                let dx = Vec2::new(
                    (hess.yy * g.x - hess.xy * g.y) / det,
                    (-hess.yx * g.x + hess.xx * g.y) / det,
                );
                x = x - dx;
                if dx.norm() < S::of(1e-14) * (S::one() + x.norm()) {
                    ok = f.grad(x).norm() < S::of(1e-10);
                    break;
                }
            }
            if !ok {
                continue;
            }
            let x = x.rem_euclid(period);
            if found
                .iter()
                .any(|c| c.pos.torus_sub(x, period).norm() < dedupe_tol)
            {
                continue;
            }
            found.push(CriticalPoint { pos: x, value: f.h(x), hessian: f.hessian(x) });
        }
    }

    let mut saddles = Vec::new();
    let mut extrema = Vec::new();
    for cp in found {
        let det = cp.hessian.det();
        if det.abs() <= S::of(1e-8) {
            return Err(FieldError::StructureViolation(format!(
                "degenerate critical point at ({}, {}), |det Hessian| = {:e}",
                cp.pos.x,
                cp.pos.y,
                det.abs()
            )));
        }
        if det < S::zero() {
            if cp.value.abs() > S::of(1e-10) {
                return Err(FieldError::StructureViolation(format!(
                    "saddle at ({}, {}) lies on level {:e}, not on the zero separatrix",
                    cp.pos.x, cp.pos.y, cp.value
                )));
            }
            saddles.push(cp);
        } else {
            extrema.push(cp);
        }
    }
    Ok((saddles, extrema))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn canonical() -> HamiltonianField<f64> {
        HamiltonianField::canonical()
    }

    #[test]
    fn eval_at_maximum() {
        let f = canonical();
        let e = f.eval(Vec2::new(PI / 2.0, PI / 2.0));
        assert_relative_eq!(e.h, 1.0, epsilon = 1e-15);
        assert!(e.grad.norm() < 1e-15);
    }

    #[test]
    fn eval_gradient_matches_finite_differences() {
        let f = canonical();
        let x = Vec2::new(PI / 2.0, 0.0);
        let e = f.eval(x);
        assert_relative_eq!(e.h, 0.0, epsilon = 1e-15);
        // Central differences at step 1e-6 agree to 1e-8.
        let h = 1e-6;
        let fd = Vec2::new(
            (f.h(Vec2::new(x.x + h, x.y)) - f.h(Vec2::new(x.x - h, x.y))) / (2.0 * h),
            (f.h(Vec2::new(x.x, x.y + h)) - f.h(Vec2::new(x.x, x.y - h))) / (2.0 * h),
        );
        assert!((e.grad - fd).norm() < 1e-8);
        assert_relative_eq!(e.grad.x, 0.0, epsilon = 1e-12);
        assert_relative_eq!(e.grad.y, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn laplacian_identity_and_finite_differences() {
        let f = canonical();
        let mut rng = crate::rng::path_rng(3, 0);
        for _ in 0..50 {
            let x = Vec2::new(
                f64::unit_uniform(&mut rng) * 2.0 * PI,
                f64::unit_uniform(&mut rng) * 2.0 * PI,
            );
            let e = f.eval(x);
            assert_relative_eq!(e.laplacian, -2.0 * e.h, epsilon = 1e-13);
            let h = 1e-4;
            let fd = (f.h(Vec2::new(x.x + h, x.y))
                + f.h(Vec2::new(x.x - h, x.y))
                + f.h(Vec2::new(x.x, x.y + h))
                + f.h(Vec2::new(x.x, x.y - h))
                - 4.0 * e.h)
                / (h * h);
            assert_relative_eq!(e.laplacian, fd, epsilon = 1e-6);
        }
    }

    #[test]
    fn velocity_examples_and_orthogonality() {
        let f = canonical();
        let v0 = f.velocity(Vec2::new(PI / 2.0, PI / 2.0));
        assert!(v0.norm() < 1e-15);
        let v1 = f.velocity(Vec2::new(PI / 2.0, 0.0));
        assert_relative_eq!(v1.x, -1.0, epsilon = 1e-12);
        assert_relative_eq!(v1.y, 0.0, epsilon = 1e-12);

        let mut rng = crate::rng::path_rng(4, 0);
        for _ in 0..200 {
            let x = Vec2::new(
                f64::unit_uniform(&mut rng) * 2.0 * PI,
                f64::unit_uniform(&mut rng) * 2.0 * PI,
            );
            let dot = f.velocity(x).dot(f.grad(x));
            assert!(dot.abs() < 1e-12, "v . grad H = {dot}");
        }
    }

    #[test]
    fn incompressibility_by_finite_differences() {
        let f = canonical();
        let mut rng = crate::rng::path_rng(5, 0);
        let h = 1e-5;
        for _ in 0..100 {
            let x = Vec2::new(
                f64::unit_uniform(&mut rng) * 2.0 * PI,
                f64::unit_uniform(&mut rng) * 2.0 * PI,
            );
            let div = (f.velocity(Vec2::new(x.x + h, x.y)).x - f.velocity(Vec2::new(x.x - h, x.y)).x
                + f.velocity(Vec2::new(x.x, x.y + h)).y
                - f.velocity(Vec2::new(x.x, x.y - h)).y)
                / (2.0 * h);
            assert!(div.abs() < 1e-6, "div v = {div}");
        }
    }

    #[test]
    fn cell_classification() {
        let f = canonical();
        let c0 = f.cell_of(Vec2::new(PI / 2.0, PI / 2.0));
        assert!(matches!(c0, Location::Cell(_)));
        assert_eq!(f.cell_of(Vec2::new(PI, 0.3)), Location::Separatrix);
        let shifted = f.cell_of(Vec2::new(PI / 2.0 + 2.0 * PI, PI / 2.0));
        assert_eq!(c0, shifted);
        // All four cells are distinguished.
        let ids: Vec<Location> = f
            .extrema()
            .iter()
            .map(|e| f.cell_of(e.pos))
            .collect();
        for (i, id) in ids.iter().enumerate() {
            assert_eq!(*id, Location::Cell(CellId(i)));
        }
    }

    #[test]
    fn canonical_critical_points() {
        let f = canonical();
        assert_eq!(f.saddles().len(), 4);
        assert_eq!(f.extrema().len(), 4);
        assert_eq!(f.n_cells(), 4);
        for s in f.saddles() {
            assert!(s.value.abs() < 1e-10);
            assert!(f.grad(s.pos).norm() < 1e-10);
            assert_relative_eq!(s.hessian.det(), -1.0, epsilon = 1e-12);
        }
        for e in f.extrema() {
            assert_relative_eq!(e.value.abs(), 1.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn newton_search_recovers_canonical_structure() {
        // Run the generic critical-point machinery on the canonical flow as
        // if it were a user field.
        struct Plain;
        impl StreamFunction<f64> for Plain {
            fn period(&self) -> Vec2<f64> {
                CanonicalFlow.period()
            }
            fn h(&self, x: Vec2<f64>) -> f64 {
                CanonicalFlow.h(x)
            }
            fn grad(&self, x: Vec2<f64>) -> Vec2<f64> {
                CanonicalFlow.grad(x)
            }
            fn laplacian(&self, x: Vec2<f64>) -> f64 {
                CanonicalFlow.laplacian(x)
            }
        }
        let f = HamiltonianField::from_stream(Arc::new(Plain), 32).unwrap();
        assert_eq!(f.saddles().len(), 4);
        assert_eq!(f.n_cells(), 4);
        let reference = canonical();
        for e in f.extrema() {
            let d = reference
                .extrema()
                .iter()
                .map(|r| r.pos.torus_sub(e.pos, f.period()).norm())
                .fold(f64::INFINITY, f64::min);
            assert!(d < 1e-8);
        }
    }

    #[test]
    fn degenerate_field_is_rejected() {
        // H = sin(x1) sin(x2) + 0.5 sin(2 x1) sin(2 x2)? Instead use a field
        // with a genuinely degenerate critical point: H = sin(x1)^2 sin(x2)
        // has a degenerate line; simpler: H = sin(x1) sin(x2)^2 is degenerate
        // at x2 = 0.
        struct Degenerate;
        impl StreamFunction<f64> for Degenerate {
            fn period(&self) -> Vec2<f64> {
                Vec2::new(2.0 * PI, 2.0 * PI)
            }
            fn h(&self, x: Vec2<f64>) -> f64 {
                x.x.sin() * x.y.sin() * x.y.sin()
            }
            fn grad(&self, x: Vec2<f64>) -> Vec2<f64> {
                Vec2::new(
                    x.x.cos() * x.y.sin() * x.y.sin(),
                    2.0 * x.x.sin() * x.y.sin() * x.y.cos(),
                )
            }
            fn laplacian(&self, x: Vec2<f64>) -> f64 {
                -x.x.sin() * x.y.sin() * x.y.sin()
                    + 2.0 * x.x.sin() * (x.y.cos() * x.y.cos() - x.y.sin() * x.y.sin())
            }
        }
        assert!(HamiltonianField::from_stream(Arc::new(Degenerate), 16).is_err());
    }

    #[test]
    fn periodic_consistency() {
        let f = canonical();
        let mut rng = crate::rng::path_rng(6, 0);
        let period = f.period();
        for _ in 0..100 {
            let x = Vec2::new(
                f64::unit_uniform(&mut rng) * 2.0 * PI,
                f64::unit_uniform(&mut rng) * 2.0 * PI,
            );
            let a = f.eval(x);
            let b = f.eval(x + period);
            assert!((a.h - b.h).abs() < 1e-12);
            assert!((a.grad - b.grad).norm() < 1e-12);
            assert!((a.laplacian - b.laplacian).abs() < 1e-12);
        }
    }
}
