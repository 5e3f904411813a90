//! Separatrix geometry: branch tracing from saddles, single-saddle loop
//! detection, and the gate curves used to decide when a trajectory passes a
//! saddle.
//!
//! At a nondegenerate saddle the zero level set leaves along the null
//! directions of the Hessian quadratic form, while the gradient lines leave
//! along its eigendirections. Gates are the gradient-line segments through a
//! saddle truncated at `|H| = delta`; in the orthogonal `(H, theta)` chart
//! near the separatrix they are exactly the `theta = theta(saddle)` sets.

use crate::geom::{Mat2, Vec2};
use crate::hamiltonian::HamiltonianField;
use crate::scalar::Scalar;

/// Eigenpairs of a symmetric 2x2 matrix, eigenvalues descending.
fn sym_eigenpairs<S: Scalar>(m: Mat2<S>) -> ((S, Vec2<S>), (S, Vec2<S>)) {
    let (l1, l2) = m.sym_eigenvalues();
    let e1 = eigvec(m, l1);
    let e2 = e1.perp();
    ((l1, e1), (l2, e2))
}

fn eigvec<S: Scalar>(m: Mat2<S>, lambda: S) -> Vec2<S> {
    // (m - lambda I) e = 0; pick the better-conditioned row.
    let r1 = Vec2::new(m.xx - lambda, m.xy);
    let r2 = Vec2::new(m.yx, m.yy - lambda);
    let r = if r1.norm2() > r2.norm2() { r1 } else { r2 };
    if r.norm() < S::of(1e-30) {
        return Vec2::new(S::one(), S::zero());
    }
    let e = r.perp();
    e.scale(S::one() / e.norm())
}

/// The four unit directions along which the zero level set leaves a saddle.
fn branch_directions<S: Scalar>(hessian: Mat2<S>) -> [Vec2<S>; 4] {
    let ((l1, e1), (l2, e2)) = sym_eigenpairs(hessian);
    debug_assert!(l1 > S::zero() && l2 < S::zero());
    let a = (-l2).sqrt();
    let b = l1.sqrt();
    let d1 = e1.scale(a) + e2.scale(b);
    let d2 = e1.scale(a) - e2.scale(b);
    let d1 = d1.scale(S::one() / d1.norm());
    let d2 = d2.scale(S::one() / d2.norm());
    [d1, -d1, d2, -d2]
}

/// The four unit gradient-line directions at a saddle (Hessian eigenvectors).
fn gate_directions<S: Scalar>(hessian: Mat2<S>) -> [Vec2<S>; 4] {
    let ((_, e1), (_, e2)) = sym_eigenpairs(hessian);
    [e1, -e1, e2, -e2]
}

fn nearest_saddle<S: Scalar>(field: &HamiltonianField<S>, x: Vec2<S>) -> (usize, S) {
    let period = field.period();
    let mut best = (0usize, S::infinity());
    for (i, s) in field.saddles().iter().enumerate() {
        let d = x.torus_sub(s.pos, period).norm();
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

fn project_to_separatrix<S: Scalar>(field: &HamiltonianField<S>, x: &mut Vec2<S>) {
    for _ in 0..3 {
        let e = field.eval(*x);
        let g2 = e.grad.norm2();
        if g2 < S::of(1e-12) || e.h.abs() < S::of(1e-15) {
            return;
        }
        *x = *x - e.grad.scale(e.h / g2);
    }
}

/// Follow the unit-speed flow `dx/dl = sign * v/|v|` with classic RK4.
fn unit_flow_step<S: Scalar>(field: &HamiltonianField<S>, x: Vec2<S>, ds: S, sign: S) -> Vec2<S> {
    let f = |p: Vec2<S>| {
        let v = field.velocity(p);
        let n = v.norm();
        v.scale(sign / n.max(S::of(1e-300)))
    };
    let k1 = f(x);
    let k2 = f(x + k1.scale(ds / S::of(2.0)));
    let k3 = f(x + k2.scale(ds / S::of(2.0)));
    let k4 = f(x + k3.scale(ds));
    x + (k1 + k2.scale(S::of(2.0)) + k3.scale(S::of(2.0)) + k4).scale(ds / S::of(6.0))
}

/// Trace every outgoing separatrix branch; returns the position of a saddle
/// whose branch returns to itself, if any.
pub fn single_saddle_loop<S: Scalar>(field: &HamiltonianField<S>) -> Option<Vec2<S>> {
    let period = field.period();
    let scale = period.x.min(period.y);
    let r0 = scale * S::of(1e-4);
    let r_stop = scale * S::of(5e-3);
    let ds = scale * S::of(2e-3);
    let max_len = scale * S::of(40.0);

    for (i, saddle) in field.saddles().iter().enumerate() {
        for d in branch_directions(saddle.hessian) {
            let mut x = saddle.pos + d.scale(r0);
            project_to_separatrix(field, &mut x);
            if field.velocity(x).dot(d) <= S::zero() {
                continue; // incoming branch, traced from its source saddle
            }
            let mut travelled = S::zero();
            let mut steps = 0u32;
            loop {
                x = unit_flow_step(field, x, ds, S::one());
                steps += 1;
                if steps % 16 == 0 {
                    project_to_separatrix(field, &mut x);
                }
                travelled += ds;
                if travelled > r_stop * S::of(3.0) {
                    let (j, dist) = nearest_saddle(field, x);
                    if dist < r_stop {
                        if j == i {
                            return Some(saddle.pos);
                        }
                        break;
                    }
                }
                if travelled > max_len {
                    // Could not close the branch; treat as a structural loop
                    // failure so broken fields do not pass silently.
                    return Some(saddle.pos);
                }
            }
        }
    }
    None
}

/// The saddle "behind" a separatrix point: the one the backward flow
/// converges to.
pub fn behind_saddle<S: Scalar>(field: &HamiltonianField<S>, p: Vec2<S>) -> usize {
    let period = field.period();
    let scale = period.x.min(period.y);
    let r_stop = scale * S::of(5e-3);
    let ds = scale * S::of(2e-3);
    let max_len = scale * S::of(40.0);

    let mut x = field.reduce(p);
    project_to_separatrix(field, &mut x);
    let mut travelled = S::zero();
    let mut steps = 0u32;
    loop {
        let (j, dist) = nearest_saddle(field, x);
        if dist < r_stop {
            return j;
        }
        x = unit_flow_step(field, x, ds, -S::one());
        steps += 1;
        if steps % 16 == 0 {
            project_to_separatrix(field, &mut x);
        }
        travelled += ds;
        if travelled > max_len {
            // Should be unreachable for validated fields; fall back to the
            // nearest saddle so instrumentation keeps going.
            return nearest_saddle(field, x).0;
        }
    }
}

/// One gradient-line gate branch from a saddle into one adjacent quadrant.
#[derive(Clone, Debug)]
pub struct GateBranch<S> {
    pub saddle: usize,
    pub points: Vec<Vec2<S>>,
}

/// All gate curves of a field, truncated at `|H| = delta`.
#[derive(Clone, Debug)]
pub struct GateSystem<S> {
    pub delta: S,
    branches: Vec<GateBranch<S>>,
    period: Vec2<S>,
}

/// A detected gate passage.
#[derive(Clone, Copy, Debug)]
pub struct GateCrossing<S> {
    pub saddle: usize,
    /// Fraction along the query segment where the gate is crossed.
    pub fraction: S,
}

impl<S: Scalar> GateSystem<S> {
    pub fn build(field: &HamiltonianField<S>, delta: S) -> Self {
        let period = field.period();
        let scale = period.x.min(period.y);
        let r0 = scale * S::of(1e-5);
        let ds = scale * S::of(2e-3);
        let mut branches = Vec::new();

        for (i, saddle) in field.saddles().iter().enumerate() {
            for d in gate_directions(saddle.hessian) {
                let mut pts = vec![saddle.pos];
                let mut x = saddle.pos + d.scale(r0);
                let sign = if field.h(x) >= S::zero() { S::one() } else { -S::one() };
                let mut guard = 0u32;
                loop {
                    // Gradient ascent of |H| with unit speed.
                    let g = field.grad(x);
                    let gn = g.norm().max(S::of(1e-300));
                    let step = g.scale(sign * ds / gn);
                    let next = x + step;
                    let h_next = field.h(next).abs();
                    if h_next >= delta {
                        // Land exactly on |H| = delta by bisection along the step.
                        let mut lo = S::zero();
                        let mut hi = S::one();
                        for _ in 0..60 {
                            let mid = (lo + hi) / S::of(2.0);
                            if field.h(x + step.scale(mid)).abs() >= delta {
                                hi = mid;
                            } else {
                                lo = mid;
                            }
                        }
                        pts.push(x + step.scale(hi));
                        break;
                    }
                    x = next;
                    pts.push(x);
                    guard += 1;
                    if guard > 100_000 {
                        break;
                    }
                }
                branches.push(GateBranch { saddle: i, points: pts });
            }
        }
        Self { delta, branches, period }
    }

    /// Earliest crossing of any gate (except the excluded saddle's) by the
    /// segment from `a` to `b`, in unreduced plane coordinates.
    pub fn crossing(&self, a: Vec2<S>, b: Vec2<S>, excluded: Option<usize>) -> Option<GateCrossing<S>> {
        let ar = a.rem_euclid(self.period);
        let shift = a - ar;
        let b_local = b - shift;
        let mid = (ar + b_local).scale(S::of(0.5));

        let mut best: Option<GateCrossing<S>> = None;
        for branch in &self.branches {
            if excluded == Some(branch.saddle) {
                continue;
            }
            // Pick the periodic copy of the branch nearest the segment.
            let anchor = branch.points[0];
            let offs = Vec2::new(
                ((mid.x - anchor.x) / self.period.x).round() * self.period.x,
                ((mid.y - anchor.y) / self.period.y).round() * self.period.y,
            );
            for w in branch.points.windows(2) {
                let p = w[0] + offs;
                let q = w[1] + offs;
                if let Some(t) = segment_intersection(ar, b_local, p, q) {
                    if best.map_or(true, |c| t < c.fraction) {
                        best = Some(GateCrossing { saddle: branch.saddle, fraction: t });
                    }
                }
            }
        }
        best
    }

    pub fn branches(&self) -> &[GateBranch<S>] {
        &self.branches
    }
}

/// Parameter along `[a, b]` of its intersection with `[p, q]`, if any.
fn segment_intersection<S: Scalar>(a: Vec2<S>, b: Vec2<S>, p: Vec2<S>, q: Vec2<S>) -> Option<S> {
    let r = b - a;
    let s = q - p;
    let denom = r.cross(s);
    if denom.abs() < S::of(1e-300) {
        return None;
    }
    let t = (p - a).cross(s) / denom;
    let u = (p - a).cross(r) / denom;
    let lo = S::zero();
    let hi = S::one();
    if t >= lo && t <= hi && u >= lo && u <= hi {
        Some(t)
    } else {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn canonical_has_no_single_saddle_loops() {
        let field = HamiltonianField::<f64>::canonical();
        assert!(single_saddle_loop(&field).is_none());
    }

    #[test]
    fn behind_saddle_respects_flow_direction() {
        let field = HamiltonianField::<f64>::canonical();
        // On the edge x2 = 0 the flow moves toward decreasing x1, so a point
        // at (pi/2, 0) came from the saddle at (pi, 0).
        let b = behind_saddle(&field, Vec2::new(PI / 2.0, 0.0));
        let pos = field.saddles()[b].pos;
        assert!((pos.x - PI).abs() < 1e-9 && pos.y.abs() < 1e-9);
        // On x1 = 0 the flow moves upward: (0, pi/2) came from (0, 0).
        let b2 = behind_saddle(&field, Vec2::new(0.0, PI / 2.0));
        let pos2 = field.saddles()[b2].pos;
        assert!(pos2.x.abs() < 1e-9 && pos2.y.abs() < 1e-9);
    }

    #[test]
    fn canonical_gates_are_diagonals() {
        let field = HamiltonianField::<f64>::canonical();
        let delta = 0.2;
        let gates = GateSystem::build(&field, delta);
        assert_eq!(gates.branches().len(), 16);
        // Gate branches at the origin lie on |x2| = |x1| and end at |H| = delta.
        for branch in gates.branches().iter().filter(|b| b.saddle == 0) {
            let end = *branch.points.last().unwrap();
            assert!((field.h(end).abs() - delta).abs() < 1e-9);
            for p in &branch.points {
                assert!((p.x.abs() - p.y.abs()).abs() < 1e-6, "gate point off diagonal: {p:?}");
            }
        }
    }

    #[test]
    fn gate_crossing_detects_diagonal_passage() {
        let field = HamiltonianField::<f64>::canonical();
        let gates = GateSystem::build(&field, 0.2);
        // A short horizontal segment crossing the diagonal near the origin.
        let a = Vec2::new(0.10, 0.06);
        let b = Vec2::new(0.02, 0.06);
        let hit = gates.crossing(a, b, None).expect("crossing expected");
        assert_eq!(hit.saddle, 0);
        let exp = (0.10 - 0.06) / 0.08;
        assert!((hit.fraction - exp).abs() < 0.05, "fraction {}", hit.fraction);
        // Excluding that saddle suppresses the event.
        assert!(gates.crossing(a, b, Some(0)).is_none());
        // A periodic copy is also detected.
        let shift = 2.0 * PI * 3.0;
        assert!(gates.crossing(Vec2::new(a.x + shift, a.y), Vec2::new(b.x + shift, b.y), None).is_some());
    }
}
