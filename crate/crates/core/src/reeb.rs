//! The Reeb graph of a cellular stream function.
//!
//! Each cell maps to an edge parameterized by `y = |H|`, the separatrix to
//! the interior vertex `O`. The averaged diffusion on an edge has generator
//! `(a^2/2) d^2/dy^2 + b d/dy` with
//!
//! ```text
//! T(y)   = contour integral of dl/|grad H|        (the flow period)
//! a^2(y) = (contour integral of |grad H| dl) / T
//! b(y)   = (contour integral of (lap H)/|grad H| dl) / (2 T),  signed so
//!          that y increases toward the extremum
//! ```
//!
//! all computed by tracing the Hamiltonian flow for one revolution: along
//! the flow `dl = |grad H| dt`, so `dl/|grad H| = dt` and each contour
//! integral is a plain time integral over one period.

use thiserror::Error;

use crate::geom::Vec2;
use crate::hamiltonian::{CellId, HamiltonianField, Location};
use crate::interp::Pchip;
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum ReebError {
    #[error("contour at level {level:e} in cell {cell} failed to close within tolerance after {steps} steps")]
    NoClosure { cell: usize, level: f64, steps: usize },
    #[error("level {y:e} outside [0, {h_max:e}] on edge {edge}")]
    CoefficientRange { edge: usize, y: f64, h_max: f64 },
}

/// A point of the graph: edge index and level `y = |H| >= 0`.
/// `y = 0` is the interior vertex regardless of the edge index.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GraphPoint<S> {
    pub edge: usize,
    pub y: S,
}

impl<S: Scalar> GraphPoint<S> {
    pub fn vertex() -> Self {
        Self { edge: 0, y: S::zero() }
    }

    pub fn is_vertex(&self) -> bool {
        self.y == S::zero()
    }
}

/// Projection onto the graph: `x -> (cell index, |H(x)|)`, separatrix to `O`.
pub fn gamma_project<S: Scalar>(field: &HamiltonianField<S>, x: Vec2<S>) -> GraphPoint<S> {
    match field.cell_of(x) {
        Location::Separatrix => GraphPoint::vertex(),
        Location::Cell(c) => {
            let y = field.h(x).abs().min(field.h_max(c));
            GraphPoint { edge: c.0, y }
        }
    }
}

/// Accumulated integrals over one closed revolution of the flow.
#[derive(Clone, Copy, Debug)]
struct ContourIntegrals<S> {
    period: S,
    grad2: S,
    laplacian: S,
    extra: S,
}

/// Trace the level contour `{H = h_signed}` of a cell for one revolution,
/// accumulating the standard integrands plus an optional extra one.
fn trace_contour<S: Scalar>(
    field: &HamiltonianField<S>,
    cell: CellId,
    y: S,
    ds_target: S,
    extra: Option<&dyn Fn(Vec2<S>) -> S>,
) -> Result<ContourIntegrals<S>, ReebError> {
    let extremum = field.extremum_of(cell);
    let sign = if extremum.value >= S::zero() { S::one() } else { -S::one() };
    let h_signed = sign * y;

    let start = level_point(field, cell, y);
    let v0 = field.velocity(start);
    let section_normal = v0.scale(S::one() / v0.norm());

    let mut x = start;
    let mut acc = ContourIntegrals { period: S::zero(), grad2: S::zero(), laplacian: S::zero(), extra: S::zero() };
    let mut travelled = S::zero();
    let mut prev_s = S::zero();
    let max_steps = 4_000_000usize;
    let h_tol = S::of(1e-11) * (S::one() + y.abs());

    let mut steps = 0usize;
    loop {
        steps += 1;
        if steps > max_steps {
            return Err(ReebError::NoClosure { cell: cell.0, level: h_signed.f64(), steps });
        }
        // Arc-length step, shrunk near critical points where the contour bends.
        let r_crit = field
            .saddle_distance(x)
            .min(x.torus_sub(extremum.pos, field.period()).norm());
        let ds = ds_target.min(r_crit * S::of(0.2)).max(ds_target * S::of(1e-4));
        let speed = field.grad(x).norm();
        let dt = ds / speed.max(S::of(1e-300));

        let (x_new, d_acc) = rk4_flow_step(field, x, dt, extra);

        // Keep the trace on the level set.
        let h_err = (field.h(x_new) - h_signed).abs();
        if h_err > h_tol && steps % 16 == 0 {
            // handled by projection below
        }
        let mut x_proj = x_new;
        if steps % 16 == 0 || h_err > h_tol {
            project_to_level(field, &mut x_proj, h_signed);
        }

        let s_now = (x_proj - start).dot(section_normal);
        let dist = (x_proj - start).norm();
        travelled += ds;
        if travelled > ds * S::of(10.0)
            && prev_s < S::zero()
            && s_now >= S::zero()
            && dist < ds * S::of(4.0)
        {
            // Crossed the start section: bisect the final partial step.
            let mut lo = S::zero();
            let mut hi = S::one();
            for _ in 0..40 {
                let mid = (lo + hi) / S::of(2.0);
                let (xm, _) = rk4_flow_step_frac(field, x, dt, mid, extra);
                if (xm - start).dot(section_normal) >= S::zero() {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            let (_, d_fin) = rk4_flow_step_frac(field, x, dt, hi, extra);
            acc.period += d_fin.period;
            acc.grad2 += d_fin.grad2;
            acc.laplacian += d_fin.laplacian;
            acc.extra += d_fin.extra;
            return Ok(acc);
        }

        acc.period += d_acc.period;
        acc.grad2 += d_acc.grad2;
        acc.laplacian += d_acc.laplacian;
        acc.extra += d_acc.extra;
        prev_s = s_now;
        x = x_proj;
    }
}

/// One RK4 step of the augmented system (position plus integrals).
fn rk4_flow_step<S: Scalar>(
    field: &HamiltonianField<S>,
    x: Vec2<S>,
    dt: S,
    extra: Option<&dyn Fn(Vec2<S>) -> S>,
) -> (Vec2<S>, ContourIntegrals<S>) {
    #[derive(Clone, Copy)]
    struct K<S> {
        v: Vec2<S>,
        g2: S,
        lap: S,
        ex: S,
    }
    let eval = |p: Vec2<S>| {
        let e = field.eval(p);
        K {
            v: e.grad.perp(),
            g2: e.grad.norm2(),
            lap: e.laplacian,
            ex: extra.map_or(S::zero(), |f| f(p)),
        }
    };
    let half = dt / S::of(2.0);
    let k1 = eval(x);
    let k2 = eval(x + k1.v.scale(half));
    let k3 = eval(x + k2.v.scale(half));
    let k4 = eval(x + k3.v.scale(dt));
    let sixth = dt / S::of(6.0);
    let two = S::of(2.0);
    let x_new = x + (k1.v + k2.v.scale(two) + k3.v.scale(two) + k4.v).scale(sixth);
    let acc = ContourIntegrals {
        period: dt,
        grad2: (k1.g2 + two * k2.g2 + two * k3.g2 + k4.g2) * sixth,
        laplacian: (k1.lap + two * k2.lap + two * k3.lap + k4.lap) * sixth,
        extra: (k1.ex + two * k2.ex + two * k3.ex + k4.ex) * sixth,
    };
    (x_new, acc)
}

fn rk4_flow_step_frac<S: Scalar>(
    field: &HamiltonianField<S>,
    x: Vec2<S>,
    dt: S,
    frac: S,
    extra: Option<&dyn Fn(Vec2<S>) -> S>,
) -> (Vec2<S>, ContourIntegrals<S>) {
    rk4_flow_step(field, x, dt * frac, extra)
}

fn project_to_level<S: Scalar>(field: &HamiltonianField<S>, x: &mut Vec2<S>, h_signed: S) {
    for _ in 0..3 {
        let e = field.eval(*x);
        let g2 = e.grad.norm2();
        if g2 < S::of(1e-16) {
            return;
        }
        let err = e.h - h_signed;
        if err.abs() < S::of(1e-14) * (S::one() + h_signed.abs()) {
            return;
        }
        *x = *x - e.grad.scale(err / g2);
    }
}

/// A point on `{|H| = y}` inside the cell, found by bisection along the
/// segment from the cell's extremum toward its nearest saddle.
fn level_point<S: Scalar>(field: &HamiltonianField<S>, cell: CellId, y: S) -> Vec2<S> {
    let extremum = field.extremum_of(cell);
    let period = field.period();
    let saddle = field
        .saddles()
        .iter()
        .map(|s| extremum.pos + s.pos.torus_sub(extremum.pos, period))
        .min_by(|a, b| {
            (*a - extremum.pos)
                .norm()
                .partial_cmp(&(*b - extremum.pos).norm())
                .unwrap()
        })
        .expect("field has saddles");
    let dir = saddle - extremum.pos;
    let mut lo = S::zero(); // |H| = h_max at the extremum
    let mut hi = S::one(); // |H| = 0 at the saddle
    for _ in 0..200 {
        let mid = (lo + hi) / S::of(2.0);
        if field.h(extremum.pos + dir.scale(mid)).abs() > y {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    extremum.pos + dir.scale((lo + hi) / S::of(2.0))
}

/// Contour integral `int f dl/|grad H|` over `{|H| = y}` in a cell, i.e. the
/// time integral of `f` along one flow revolution. Step-halving controls the
/// relative error to about `quad_tol`.
pub fn contour_quadrature<S: Scalar>(
    field: &HamiltonianField<S>,
    cell: CellId,
    y: S,
    integrand: &dyn Fn(Vec2<S>) -> S,
) -> Result<S, ReebError> {
    let (c, _, _) = refined_trace(field, cell, y, Some(integrand), S::of(1e-8))?;
    Ok(c)
}

/// Trace at `ds` and `ds/2`, Richardson-extrapolate, refining until the two
/// runs agree to `tol` (relative).
fn refined_trace<S: Scalar>(
    field: &HamiltonianField<S>,
    cell: CellId,
    y: S,
    extra: Option<&dyn Fn(Vec2<S>) -> S>,
    tol: S,
) -> Result<(S, ContourIntegrals<S>, ContourIntegrals<S>), ReebError> {
    let scale = field.period().x.min(field.period().y);
    let mut ds = scale * S::of(4e-3);
    let mut coarse = trace_contour(field, cell, y, ds, extra)?;
    for _ in 0..3 {
        ds = ds / S::of(2.0);
        let fine = trace_contour(field, cell, y, ds, extra)?;
        let close = |a: S, b: S| (a - b).abs() <= tol * S::of(15.0) * b.abs().max(S::of(1e-30));
        if close(coarse.period, fine.period)
            && close(coarse.grad2, fine.grad2)
            && close(coarse.extra, fine.extra)
        {
            let sixteen = S::of(16.0);
            let fifteen = S::of(15.0);
            let extrap = |c: S, f: S| (sixteen * f - c) / fifteen;
            let best = ContourIntegrals {
                period: extrap(coarse.period, fine.period),
                grad2: extrap(coarse.grad2, fine.grad2),
                laplacian: extrap(coarse.laplacian, fine.laplacian),
                extra: extrap(coarse.extra, fine.extra),
            };
            return Ok((best.extra, best, fine));
        }
        coarse = fine;
    }
    // Last refinement level is the best available.
    Ok((coarse.extra, coarse, coarse))
}

/// Averaged edge coefficients `(a^2, b, T)` at level `y` of a cell, by
/// direct quadrature.
pub fn edge_coefficients<S: Scalar>(
    field: &HamiltonianField<S>,
    cell: CellId,
    y: S,
) -> Result<(S, S, S), ReebError> {
    let h_max = field.h_max(cell);
    if y <= S::zero() || y >= h_max {
        return Err(ReebError::CoefficientRange { edge: cell.0, y: y.f64(), h_max: h_max.f64() });
    }
    let (_, best, _) = refined_trace(field, cell, y, None, S::of(1e-9))?;
    let sign = if field.extremum_of(cell).value >= S::zero() { S::one() } else { -S::one() };
    let t = best.period;
    let a2 = best.grad2 / t;
    let b = sign * best.laplacian / (S::of(2.0) * t);
    Ok((a2, b, t))
}

/// Gluing weights `alpha_i`, proportional to the separatrix boundary
/// integrals `int |grad H| dl` of each cell, obtained as the `h -> 0` limit
/// of `a^2 T` by iterated Richardson extrapolation over three levels.
pub fn gluing_weights<S: Scalar>(field: &HamiltonianField<S>) -> Result<Vec<S>, ReebError> {
    let raw = unnormalized_weights(field)?;
    let total: S = raw.iter().copied().sum();
    Ok(raw.into_iter().map(|w| w / total).collect())
}

/// The per-cell boundary integrals themselves (unnormalized weights).
pub fn unnormalized_weights<S: Scalar>(field: &HamiltonianField<S>) -> Result<Vec<S>, ReebError> {
    let mut out = Vec::with_capacity(field.n_cells());
    for cell_idx in 0..field.n_cells() {
        let cell = CellId(cell_idx);
        let h_max = field.h_max(cell);
        let mut vals = [S::zero(); 3];
        for (k, rel) in [1e-3, 5e-4, 2.5e-4].into_iter().enumerate() {
            let y = h_max * S::of(rel);
            let (a2, _, t) = edge_coefficients(field, cell, y)?;
            vals[k] = a2 * t;
        }
        let two = S::of(2.0);
        let r1 = two * vals[1] - vals[0];
        let r2 = two * vals[2] - vals[1];
        out.push((S::of(4.0) * r2 - r1) / S::of(3.0));
    }
    Ok(out)
}

/// Precomputed coefficient tables for one edge.
#[derive(Clone, Debug)]
pub struct EdgeTable<S> {
    pub cell: CellId,
    pub h_max: S,
    ys: Vec<S>,
    a2s: Vec<S>,
    bs: Vec<S>,
    ts: Vec<S>,
    a2: Pchip<S>,
    b: Pchip<S>,
    t: Pchip<S>,
    // Below-grid tail: T ~ c_log ln(1/y) + d_log, a^2 ~ (a^2 T)(y_lo)/T,
    // b proportional to y.
    c_log: S,
    d_log: S,
    a2t_lo: S,
    b_lo_slope: S,
    // Above-grid sliver: a^2 ~ c_top (h_max - y), b ~ b_top.
    c_top: S,
    b_top: S,
}

impl<S: Scalar> EdgeTable<S> {
    pub fn from_samples(cell: CellId, h_max: S, ys: Vec<S>, a2s: Vec<S>, bs: Vec<S>, ts: Vec<S>) -> Self {
        let a2 = Pchip::new(ys.clone(), a2s.clone());
        let b = Pchip::new(ys.clone(), bs.clone());
        let t = Pchip::new(ys.clone(), ts.clone());

        // Fit T = c ln(1/y) + d over the lowest decade by least squares.
        let y_lo = ys[0];
        let decade: Vec<(S, S)> = ys
            .iter()
            .zip(&ts)
            .filter(|(y, _)| **y <= y_lo * S::of(10.0))
            .map(|(y, t)| ((S::one() / *y).ln(), *t))
            .collect();
        let n = S::from_usize(decade.len()).unwrap();
        let mx = decade.iter().map(|(x, _)| *x).sum::<S>() / n;
        let my = decade.iter().map(|(_, v)| *v).sum::<S>() / n;
        let mut num = S::zero();
        let mut den = S::zero();
        for (x, v) in &decade {
            num += (*x - mx) * (*v - my);
            den += (*x - mx) * (*x - mx);
        }
        let c_log = if den > S::zero() { num / den } else { S::zero() };
        let d_log = my - c_log * mx;

        let y_hi = *ys.last().unwrap();
        let c_top = a2s.last().copied().unwrap() / (h_max - y_hi);
        let b_top = bs.last().copied().unwrap();

        Self {
            cell,
            h_max,
            a2t_lo: a2s[0] * ts[0],
            b_lo_slope: bs[0] / ys[0],
            c_log,
            d_log,
            c_top,
            b_top,
            ys,
            a2s,
            bs,
            ts,
            a2,
            b,
            t,
        }
    }

    pub fn grid(&self) -> (&[S], &[S], &[S], &[S]) {
        (&self.ys, &self.a2s, &self.bs, &self.ts)
    }

    pub fn y_lo(&self) -> S {
        self.ys[0]
    }

    pub fn y_hi(&self) -> S {
        *self.ys.last().unwrap()
    }

    /// Interpolated `(a^2, b, T)`, valid on `[0, h_max]`.
    pub fn coefficients(&self, y: S) -> Result<(S, S, S), ReebError> {
        if y < S::zero() || y > self.h_max || !y.is_finite() {
            return Err(ReebError::CoefficientRange {
                edge: self.cell.0,
                y: y.f64(),
                h_max: self.h_max.f64(),
            });
        }
        if y < self.y_lo() {
            let t = self.tail_t(y);
            return Ok((self.a2t_lo / t, self.b_lo_slope * y, t));
        }
        if y > self.y_hi() {
            let a2 = (self.c_top * (self.h_max - y)).max(S::of(1e-300));
            return Ok((a2, self.b_top, *self.ts.last().unwrap()));
        }
        Ok((self.a2.eval(y), self.b.eval(y), self.t.eval(y)))
    }

    fn tail_t(&self, y: S) -> S {
        let y = y.max(S::of(1e-280));
        let t = self.c_log * (S::one() / y).ln() + self.d_log;
        t.max(self.ts[0])
    }
}

/// The Reeb graph: edge tables plus gluing weights. Immutable and shareable.
#[derive(Clone, Debug)]
pub struct ReebGraph<S> {
    edges: Vec<EdgeTable<S>>,
    alphas: Vec<S>,
}

impl<S: Scalar> ReebGraph<S> {
    /// Build tables on a grid of `levels` points per edge, clustered
    /// geometrically at both ends of `[1e-4 h_max, (1 - 1e-4) h_max]`.
    pub fn build(field: &HamiltonianField<S>, levels: usize) -> Result<Self, ReebError> {
        assert!(levels >= 8);
        let mut edges = Vec::with_capacity(field.n_cells());
        for cell_idx in 0..field.n_cells() {
            let cell = CellId(cell_idx);
            let h_max = field.h_max(cell);
            let ys = level_grid(h_max, levels);
            let mut a2s = Vec::with_capacity(levels);
            let mut bs = Vec::with_capacity(levels);
            let mut ts = Vec::with_capacity(levels);
            for &y in &ys {
                let (a2, b, t) = edge_coefficients(field, cell, y)?;
                a2s.push(a2);
                bs.push(b);
                ts.push(t);
            }
            edges.push(EdgeTable::from_samples(cell, h_max, ys, a2s, bs, ts));
        }
        let alphas = gluing_weights(field)?;
        Ok(Self { edges, alphas })
    }

    /// A synthetic graph from explicit tables (testing and toy models).
    pub fn from_tables(edges: Vec<EdgeTable<S>>, alphas: Vec<S>) -> Self {
        assert_eq!(edges.len(), alphas.len());
        Self { edges, alphas }
    }

    /// Single edge with `a^2 = 1`, `b = 0`: the reflected unit diffusion.
    pub fn unit_edge(h_max: S) -> Self {
        Self::uniform_unit(1, h_max)
    }

    /// `n` identical unit-coefficient edges with equal gluing weights.
    pub fn uniform_unit(n: usize, h_max: S) -> Self {
        let lo = h_max * S::of(1e-4);
        let hi = h_max * S::of(1.0 - 1e-4);
        let m = 32;
        let ys: Vec<S> = (0..m)
            .map(|i| lo + (hi - lo) * S::from_usize(i).unwrap() / S::from_usize(m - 1).unwrap())
            .collect();
        let ones = vec![S::one(); m];
        let zeros = vec![S::zero(); m];
        let edges = (0..n)
            .map(|i| EdgeTable::from_samples(CellId(i), h_max, ys.clone(), ones.clone(), zeros.clone(), ones.clone()))
            .collect();
        let w = S::one() / S::from_usize(n).unwrap();
        Self { edges, alphas: vec![w; n] }
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edge(&self, i: usize) -> &EdgeTable<S> {
        &self.edges[i]
    }

    pub fn weights(&self) -> &[S] {
        &self.alphas
    }

    pub fn h_max(&self, edge: usize) -> S {
        self.edges[edge].h_max
    }

    pub fn min_h_max(&self) -> S {
        self.edges
            .iter()
            .map(|e| e.h_max)
            .fold(S::infinity(), |a, b| a.min(b))
    }

    pub fn coefficients(&self, edge: usize, y: S) -> Result<(S, S, S), ReebError> {
        self.edges[edge].coefficients(y)
    }
}

/// Grid on `[1e-4 h, (1-1e-4) h]` refined geometrically toward both ends.
fn level_grid<S: Scalar>(h_max: S, levels: usize) -> Vec<S> {
    let lo = S::of(1e-4) * h_max;
    let hi = (S::one() - S::of(1e-4)) * h_max;
    let mid = h_max / S::of(2.0);
    let n_lo = levels / 2;
    let n_hi = levels - n_lo;
    let mut ys = Vec::with_capacity(levels);
    // lo..mid geometric in y
    let ratio = (mid / lo).powf(S::one() / S::from_usize(n_lo).unwrap());
    let mut y = lo;
    for _ in 0..n_lo {
        ys.push(y);
        y = y * ratio;
    }
    // mid..hi geometric in (h_max - y)
    let glo = h_max - mid;
    let ghi = h_max - hi;
    let ratio2 = (ghi / glo).powf(S::one() / S::from_usize(n_hi - 1).unwrap().max(S::one()));
    let mut g = glo;
    for _ in 0..n_hi {
        ys.push(h_max - g);
        g = g * ratio2;
    }
    ys.dedup_by(|a, b| *a <= *b);
    ys
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn field() -> HamiltonianField<f64> {
        HamiltonianField::canonical()
    }

    #[test]
    fn gamma_project_examples() {
        let f = field();
        let p = gamma_project(&f, Vec2::new(PI / 2.0, PI / 2.0));
        assert_relative_eq!(p.y, 1.0, epsilon = 1e-12);
        let o = gamma_project(&f, Vec2::new(PI, 0.3));
        assert!(o.is_vertex());
        let a = gamma_project(&f, Vec2::new(1.0, 1.3));
        let b = gamma_project(&f, Vec2::new(1.0 + 2.0 * PI, 1.3 + 2.0 * PI));
        assert_eq!(a.edge, b.edge);
        assert_relative_eq!(a.y, b.y, epsilon = 1e-12);
    }

    #[test]
    fn period_approaches_harmonic_limit_at_the_extremum() {
        // Near a nondegenerate extremum with Hessian -I the flow is a unit
        // harmonic oscillator: T -> 2 pi.
        let f = field();
        let t = contour_quadrature(&f, CellId(0), 1.0 - 1e-6, &|_| 1.0).unwrap();
        assert_relative_eq!(t, 2.0 * PI, epsilon = 1e-3);
    }

    #[test]
    fn boundary_gradient_integral_approaches_eight() {
        // int_{dU} |grad H| dl = 4 int_0^pi sin = 8 in the separatrix limit.
        let f = field();
        let g = |x: Vec2<f64>| f.grad(x).norm2();
        let mut prev_err = f64::INFINITY;
        for y in [1e-2, 1e-3, 1e-4] {
            let v = contour_quadrature(&f, CellId(0), y, &g).unwrap();
            let err = (v - 8.0).abs();
            assert!(err < prev_err, "no monotone approach: {err} !< {prev_err}");
            prev_err = err;
        }
        assert!(prev_err < 0.01, "last error {prev_err}");
    }

    #[test]
    fn quadrature_is_linear() {
        let f = field();
        let a = |x: Vec2<f64>| x.x.sin();
        let b = |x: Vec2<f64>| (x.y * 2.0).cos();
        let ia = contour_quadrature(&f, CellId(0), 0.4, &a).unwrap();
        let ib = contour_quadrature(&f, CellId(0), 0.4, &b).unwrap();
        let iab = contour_quadrature(&f, CellId(0), 0.4, &|x| a(x) + b(x)).unwrap();
        assert_relative_eq!(iab, ia + ib, epsilon = 1e-10 * (ia.abs() + ib.abs()).max(1.0));
    }

    #[test]
    fn coefficient_identities() {
        let f = field();
        // Definition consistency: a^2 T from the coefficients equals the
        // direct quadrature of |grad H|^2 dt.
        for y in [0.3, 0.7] {
            let (a2, _, t) = edge_coefficients(&f, CellId(0), y).unwrap();
            let direct = contour_quadrature(&f, CellId(0), y, &|x| f.grad(x).norm2()).unwrap();
            assert_relative_eq!(a2 * t / direct, 1.0, epsilon = 1e-6);
        }
    }

    #[test]
    fn drift_coefficient_is_minus_y_for_canonical() {
        // lap H = -2H makes the oriented drift exactly -y on every edge.
        let f = field();
        for edge in 0..4 {
            for y in [0.1, 0.5, 0.9] {
                let (_, b, _) = edge_coefficients(&f, CellId(edge), y).unwrap();
                assert!(
                    (b + y).abs() <= 1e-6 * y,
                    "edge {edge}, y {y}: b = {b}"
                );
            }
        }
    }

    #[test]
    fn a2_t_limit_at_the_vertex() {
        let f = field();
        for y in [1e-3, 5e-4, 2.5e-4] {
            let (a2, _, t) = edge_coefficients(&f, CellId(0), y).unwrap();
            assert_relative_eq!(a2 * t, 8.0, epsilon = 0.05);
        }
    }

    #[test]
    fn gluing_weights_canonical() {
        let f = field();
        let raw = unnormalized_weights(&f).unwrap();
        for w in &raw {
            assert!((w - 8.0).abs() < 1e-3, "unnormalized weight {w}");
        }
        let alphas = gluing_weights(&f).unwrap();
        let sum: f64 = alphas.iter().sum();
        assert_relative_eq!(sum, 1.0, epsilon = 1e-14);
        for a in alphas {
            assert_relative_eq!(a, 0.25, epsilon = 1e-4);
        }
    }

    #[test]
    fn period_diverges_logarithmically() {
        let f = field();
        // T(y)/ln(1/y) settles within 5% over two decades.
        let mut ratios = Vec::new();
        for y in [1e-2, 1e-3, 1e-4] {
            let (_, _, t) = edge_coefficients(&f, CellId(0), y).unwrap();
            ratios.push(t / (1.0f64 / y).ln());
        }
        assert!(ratios.windows(2).all(|w| w[1] > 0.0));
        let last = ratios[2];
        assert!(
            (ratios[1] - last).abs() / last < 0.05,
            "ratios {ratios:?}"
        );
        // T increases toward the vertex.
        assert!(ratios[0] * (1e2f64).ln() < ratios[2] * (1e4f64).ln());
    }

    #[test]
    fn inverse_a2_is_integrable_near_the_vertex() {
        let f = field();
        let graph = ReebGraph::build(&f, 64).unwrap();
        let integral = |n: usize| {
            let lo = 1e-6f64;
            let hi = 0.1;
            let mut acc = 0.0;
            // log-spaced trapezoid
            let mut prev_y = lo;
            let mut prev_v = 1.0 / graph.coefficients(0, lo).unwrap().0;
            for i in 1..=n {
                let y = lo * (hi / lo).powf(i as f64 / n as f64);
                let v = 1.0 / graph.coefficients(0, y).unwrap().0;
                acc += 0.5 * (v + prev_v) * (y - prev_y);
                prev_y = y;
                prev_v = v;
            }
            acc
        };
        let coarse = integral(400);
        let fine = integral(800);
        assert!(fine.is_finite() && fine > 0.0);
        assert!((coarse - fine).abs() / fine < 0.01, "{coarse} vs {fine}");
    }

    #[test]
    fn table_matches_direct_quadrature_off_grid() {
        let f = field();
        let graph = ReebGraph::build(&f, 96).unwrap();
        for y in [3.3e-4, 0.1234, 0.5, 0.87, 0.9991] {
            let (a2i, bi, ti) = graph.coefficients(0, y).unwrap();
            let (a2d, bd, td) = edge_coefficients(&f, CellId(0), y).unwrap();
            assert!((a2i - a2d).abs() <= 1e-4 * a2d, "a2 at {y}: {a2i} vs {a2d}");
            assert!((ti - td).abs() <= 1e-4 * td, "T at {y}: {ti} vs {td}");
            assert!((bi - bd).abs() <= 1e-4 * bd.abs().max(1e-3), "b at {y}: {bi} vs {bd}");
        }
    }

    #[test]
    fn edges_are_congruent_for_canonical() {
        let f = field();
        let graph = ReebGraph::build(&f, 32).unwrap();
        let (ys0, a20, b0, t0) = graph.edge(0).grid();
        for e in 1..4 {
            let (ys, a2, b, t) = graph.edge(e).grid();
            for k in 0..ys0.len() {
                assert_relative_eq!(ys[k], ys0[k], epsilon = 1e-12);
                assert!((a2[k] - a20[k]).abs() <= 1e-8 * a20[k]);
                assert!((t[k] - t0[k]).abs() <= 1e-8 * t0[k]);
                assert!((b[k] - b0[k]).abs() <= 1e-8 * b0[k].abs().max(1e-8));
            }
        }
    }

    #[test]
    fn coefficient_range_is_enforced() {
        let graph = ReebGraph::<f64>::unit_edge(1.0);
        assert!(graph.coefficients(0, -0.1).is_err());
        assert!(graph.coefficients(0, 1.1).is_err());
        assert!(graph.coefficients(0, 0.5).is_ok());
    }
}
