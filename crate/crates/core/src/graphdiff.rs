//! Diffusion on the Reeb graph, vertex local time, and the subordinated
//! Brownian limit.
//!
//! The edge dynamics are Euler-Maruyama with the tabulated coefficients. The
//! interior vertex is realized by shell rounding: on reaching
//! `[0, vertex_shell)` the path is placed at `O`, an edge is drawn with the
//! gluing weights, and the path re-enters at `vertex_shell` after an exact
//! first-passage overshoot time. Level crossings that a discrete step can
//! jump over are recovered with Brownian-bridge touch probabilities, which
//! keeps downcrossing counts (and hence the local time estimate
//! `delta * D_t`) unbiased at coarse steps.

use std::sync::OnceLock;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::geom::{Mat2, Vec2};
use crate::reeb::{EdgeTable, GraphPoint, ReebError, ReebGraph};
use crate::rng::path_rng;
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error(transparent)]
    Coefficients(#[from] ReebError),
    #[error("covariance matrix is not symmetric positive definite")]
    NotSpd,
}

/// Downcrossing ledger relative to one level `delta`.
///
/// `tau[0]` is the first vertex hit; `theta[n]` is the completion of the
/// `n+1`-th upcrossing to `delta` after `tau[n]`, and `tau[n+1]` the vertex
/// return completing the matching downcrossing.
#[derive(Clone, Debug)]
pub struct CrossingLedger<S> {
    pub delta: S,
    pub theta: Vec<S>,
    pub tau: Vec<S>,
}

impl<S: Scalar> CrossingLedger<S> {
    fn new(delta: S) -> Self {
        Self { delta, theta: Vec::new(), tau: Vec::new() }
    }

    /// Number of completed downcrossings by time `t` (the initial approach
    /// to the vertex does not count).
    pub fn downcrossings_before(&self, t: S) -> usize {
        self.tau.iter().skip(1).take_while(|&&x| x <= t).count()
    }

    /// `delta * D_t`, the downcrossing local-time estimate.
    pub fn local_time(&self, t: S) -> S {
        self.delta * S::from_usize(self.downcrossings_before(t)).unwrap()
    }

    /// The special clock: wall time elapsed when the time spent outside
    /// upcrossing excursions reaches `t`, and the number of completed
    /// upcrossings before that wall time.
    ///
    /// The clock runs on `[0, tau_0]` and on every downcrossing interval
    /// `[theta_n, tau_n]`; it is stopped from each vertex visit until the
    /// next return to level `delta`.
    pub fn special_clock(&self, t: S, final_time: S) -> (S, usize) {
        let mut clock = S::zero();
        let mut e = final_time.max(t);
        let mut segments: Vec<(S, S)> = Vec::with_capacity(self.theta.len() + 1);
        if let Some(&tau0) = self.tau.first() {
            segments.push((S::zero(), tau0));
            for n in 0..self.theta.len() {
                let end = self.tau.get(n + 1).copied().unwrap_or(final_time);
                segments.push((self.theta[n], end));
            }
        } else {
            segments.push((S::zero(), final_time));
        }
        for (start, end) in segments {
            let len = (end - start).max(S::zero());
            if clock + len >= t {
                e = start + (t - clock);
                break;
            }
            clock += len;
        }
        let n_up = self.theta.iter().take_while(|&&th| th <= e).count();
        (e, n_up)
    }
}

/// Why a path terminated.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopCause {
    Horizon,
    Vertex,
    Level,
}

/// Interior-level downcrossing counter: completed passages from
/// `y + window` down to `y` on one edge estimate `L_t(y)` as
/// `window * count`.
#[derive(Clone, Copy, Debug)]
pub struct InteriorLevel<S> {
    pub edge: usize,
    pub y: S,
    pub window: S,
}

/// Occupation probe for a band `[y1, y2]` of one edge, accumulating
/// `int 1_band(Y_s) a^2(Y_s) ds`.
#[derive(Clone, Copy, Debug)]
pub struct BandProbe<S> {
    pub edge: usize,
    pub y1: S,
    pub y2: S,
}

#[derive(Clone, Debug)]
pub struct GraphSimConfig<S> {
    pub dt: S,
    pub horizon: S,
    /// Ledger levels for downcrossing counting.
    pub deltas: Vec<S>,
    /// Vertex shell; defaults to `1e-3 * min h_max`.
    pub vertex_shell: Option<S>,
    /// Stop at the first vertex hit (hitting-time sampling).
    pub stop_at_vertex: bool,
    /// Stop when the level reaches this value.
    pub stop_at_level: Option<S>,
    /// Floor of the near-vertex step scaling `dt * clamp(y^2/a^2, floor, 1)`.
    pub dt_floor: S,
    pub band: Option<BandProbe<S>>,
    pub interior_levels: Vec<InteriorLevel<S>>,
    /// Record `(t, edge, y)` samples at roughly this wall-time spacing.
    pub record_dt: Option<S>,
}

impl<S: Scalar> GraphSimConfig<S> {
    pub fn new(dt: S, horizon: S) -> Self {
        Self {
            dt,
            horizon,
            deltas: Vec::new(),
            vertex_shell: None,
            stop_at_vertex: false,
            stop_at_level: None,
            dt_floor: S::of(0.04),
            band: None,
            interior_levels: Vec::new(),
            record_dt: None,
        }
    }
}

/// One simulated graph path with its ledgers and probes.
#[derive(Clone, Debug)]
pub struct GraphPath<S> {
    pub final_state: GraphPoint<S>,
    pub final_time: S,
    pub stop: StopCause,
    pub ledgers: Vec<CrossingLedger<S>>,
    pub vertex_visits: u64,
    /// Edge drawn at each vertex resolution, as counts.
    pub vertex_edge_counts: Vec<u64>,
    /// Time spent per edge.
    pub occupancy: Vec<S>,
    pub band_occupation: S,
    pub interior_down_counts: Vec<u64>,
    /// First hitting time of the vertex, if any.
    pub first_vertex_hit: Option<S>,
    /// `(t, edge, y)` samples when `record_dt` is set.
    pub samples: Vec<(S, usize, S)>,
}

#[derive(Clone, Copy)]
enum LedgerPhase {
    WaitingFirstVertex,
    Below,
    Above,
}

/// Simulate one path of the graph diffusion from `y0`.
pub fn simulate_graph<S: Scalar>(
    graph: &ReebGraph<S>,
    y0: GraphPoint<S>,
    cfg: &GraphSimConfig<S>,
    rng: &mut ChaCha8Rng,
) -> Result<GraphPath<S>, GraphError> {
    let shell = cfg.vertex_shell.unwrap_or(S::of(1e-3) * graph.min_h_max());
    let n_edges = graph.n_edges();
    let mut path = GraphPath {
        final_state: y0,
        final_time: S::zero(),
        stop: StopCause::Horizon,
        ledgers: cfg.deltas.iter().map(|&d| CrossingLedger::new(d)).collect(),
        vertex_visits: 0,
        vertex_edge_counts: vec![0; n_edges],
        occupancy: vec![S::zero(); n_edges],
        band_occupation: S::zero(),
        interior_down_counts: vec![0; cfg.interior_levels.len()],
        first_vertex_hit: None,
        samples: Vec::new(),
    };
    let mut phases: Vec<LedgerPhase> =
        cfg.deltas.iter().map(|_| LedgerPhase::WaitingFirstVertex).collect();
    let mut interior_armed = vec![false; cfg.interior_levels.len()];

    let mut t = S::zero();
    let mut edge = y0.edge;
    let mut y = y0.y;

    // Starting at the vertex is a vertex resolution at time zero.
    if y <= shell {
        path.first_vertex_hit = Some(S::zero());
        for (ledger, phase) in path.ledgers.iter_mut().zip(phases.iter_mut()) {
            ledger.tau.push(S::zero());
            *phase = LedgerPhase::Below;
        }
        if cfg.stop_at_vertex {
            path.final_state = GraphPoint::vertex();
            path.stop = StopCause::Vertex;
            return Ok(path);
        }
        let (new_edge, dt_over) = vertex_resolution(graph, shell, rng, &mut path)?;
        edge = new_edge;
        y = shell;
        t = dt_over;
    }

    while t < cfg.horizon {
        let (a2, b, _) = graph.coefficients(edge, y)?;
        let scaling = (y * y / a2).min(S::one()).max(cfg.dt_floor);
        let dt_loc = (cfg.dt * scaling).min(cfg.horizon - t).max(cfg.dt * S::of(1e-9));
        let sigma = (a2 * dt_loc).sqrt();
        let y_start = y;
        let t_start = t;
        let mut y_new = y_start + b * dt_loc + sigma * S::std_normal(rng);

        // Reflect at the exterior vertex.
        let h_max = graph.h_max(edge);
        if y_new > h_max {
            y_new = (S::of(2.0) * h_max - y_new).min(h_max * (S::one() - S::of(1e-12)));
        }

        let hit_vertex = y_new <= shell;
        let t_vertex = if hit_vertex {
            let denom = (y_start - y_new).max(S::of(1e-300));
            t_start + dt_loc * ((y_start - shell).max(S::zero()) / denom).min(S::one())
        } else {
            t_start + dt_loc
        };

        // Upcrossing detection per ledger level.
        for (k, ledger) in path.ledgers.iter_mut().enumerate() {
            if !matches!(phases[k], LedgerPhase::Below) {
                continue;
            }
            let delta = ledger.delta;
            let mut reached: Option<S> = None;
            if y_start >= delta {
                reached = Some(t_start);
            } else if y_new >= delta {
                let frac = (delta - y_start) / (y_new - y_start);
                reached = Some(t_start + dt_loc * frac);
            } else if !hit_vertex {
                // Sub-step touch of delta.
                let p = (-S::of(2.0) * (delta - y_start) * (delta - y_new) / (a2 * dt_loc)).exp();
                if S::unit_uniform(rng) < p {
                    reached = Some(t_start + dt_loc / S::of(2.0));
                }
            }
            if let Some(t_up) = reached {
                ledger.theta.push(t_up);
                phases[k] = LedgerPhase::Above;
            }
        }

        // Sub-step vertex touches when the endpoint stays above the shell.
        let mut bridged_vertex = false;
        if !hit_vertex {
            let p = (-S::of(2.0) * y_start * y_new / (a2 * dt_loc)).exp();
            if S::unit_uniform(rng) < p {
                bridged_vertex = true;
            }
        }

        // Probes.
        if let Some(band) = &cfg.band {
            if edge == band.edge && y_start >= band.y1 && y_start <= band.y2 {
                path.band_occupation += a2 * dt_loc;
            }
        }
        for (j, lvl) in cfg.interior_levels.iter().enumerate() {
            if edge != lvl.edge {
                interior_armed[j] = false;
                continue;
            }
            if y_new >= lvl.y + lvl.window {
                interior_armed[j] = true;
            } else if interior_armed[j] && y_new <= lvl.y {
                path.interior_down_counts[j] += 1;
                interior_armed[j] = false;
            }
        }
        path.occupancy[edge] += dt_loc;
        if let Some(rec) = cfg.record_dt {
            let due = S::from_usize(path.samples.len()).unwrap() * rec;
            if t_start >= due {
                path.samples.push((t_start, edge, y_start));
            }
        }

        if hit_vertex || bridged_vertex {
            let t_v = if hit_vertex { t_vertex } else { t_start + dt_loc / S::of(2.0) };
            if path.first_vertex_hit.is_none() {
                path.first_vertex_hit = Some(t_v);
            }
            for (k, ledger) in path.ledgers.iter_mut().enumerate() {
                match phases[k] {
                    LedgerPhase::WaitingFirstVertex | LedgerPhase::Above => {
                        ledger.tau.push(t_v);
                        phases[k] = LedgerPhase::Below;
                    }
                    LedgerPhase::Below => {}
                }
            }
            if cfg.stop_at_vertex {
                path.final_state = GraphPoint::vertex();
                path.final_time = t_v;
                path.stop = StopCause::Vertex;
                return Ok(path);
            }
            let (new_edge, dt_over) = vertex_resolution(graph, shell, rng, &mut path)?;
            edge = new_edge;
            if hit_vertex {
                y = shell;
                t = t_v + dt_over;
            } else {
                // Touched the vertex inside the step and came back: continue
                // from the endpoint on the freshly drawn edge.
                y = y_new.min(graph.h_max(new_edge) * (S::one() - S::of(1e-12)));
                t = t_start + dt_loc;
            }
            continue;
        }

        y = y_new.max(S::of(1e-300));
        t = t_start + dt_loc;

        if let Some(level) = cfg.stop_at_level {
            if y >= level {
                path.final_state = GraphPoint { edge, y };
                path.final_time = t;
                path.stop = StopCause::Level;
                return Ok(path);
            }
        }
    }

    path.final_state = GraphPoint { edge, y };
    path.final_time = cfg.horizon;
    path.stop = StopCause::Horizon;
    Ok(path)
}

fn vertex_resolution<S: Scalar>(
    graph: &ReebGraph<S>,
    shell: S,
    rng: &mut ChaCha8Rng,
    path: &mut GraphPath<S>,
) -> Result<(usize, S), GraphError> {
    path.vertex_visits += 1;
    let u = S::unit_uniform(rng);
    let mut acc = S::zero();
    let mut edge = graph.n_edges() - 1;
    for (i, &w) in graph.weights().iter().enumerate() {
        acc += w;
        if u < acc {
            edge = i;
            break;
        }
    }
    path.vertex_edge_counts[edge] += 1;
    let (a2, _, _) = graph.coefficients(edge, shell)?;
    let dt_over = S::of(sample_exit_time_std(rng)) * shell * shell / a2;
    Ok((edge, dt_over))
}

/// Sample the exit time of a standard Brownian motion from `(-1, 1)` started
/// at the center, by inverse CDF over a precomputed table. This is the law
/// of the first passage of `|B|` from 0 to 1; its mean is exactly 1.
fn sample_exit_time_std<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    static TABLE: OnceLock<Vec<f64>> = OnceLock::new();
    let table = TABLE.get_or_init(|| {
        let n = 4096;
        (0..n).map(|i| invert_exit_cdf((i as f64 + 0.5) / n as f64)).collect()
    });
    let u: f64 = rng.random();
    let pos = u * table.len() as f64 - 0.5;
    let i = pos.floor().max(0.0) as usize;
    if i + 1 >= table.len() {
        return table[table.len() - 1];
    }
    let w = pos - i as f64;
    table[i] * (1.0 - w) + table[i + 1] * w
}

/// `P(tau <= t)` for the two-sided unit exit, by the eigenfunction series
/// `P(tau > t) = (4/pi) sum_k (-1)^k/(2k+1) exp(-(2k+1)^2 pi^2 t/8)`.
fn exit_cdf(t: f64) -> f64 {
    if t <= 1e-3 {
        return 0.0;
    }
    let mut s = 0.0;
    for k in 0..400 {
        let m = (2 * k + 1) as f64;
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        let term = sign / m * (-m * m * std::f64::consts::PI.powi(2) * t / 8.0).exp();
        s += term;
        if term.abs() < 1e-16 {
            break;
        }
    }
    (1.0 - 4.0 / std::f64::consts::PI * s).clamp(0.0, 1.0)
}

fn invert_exit_cdf(u: f64) -> f64 {
    let mut lo = 1e-3;
    let mut hi = 60.0;
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if exit_cdf(mid) < u {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Simulate `paths` independent graph paths in parallel, reproducibly.
pub fn simulate_many<S: Scalar>(
    graph: &ReebGraph<S>,
    y0: GraphPoint<S>,
    cfg: &GraphSimConfig<S>,
    seed: u64,
    paths: usize,
) -> Result<Vec<GraphPath<S>>, GraphError> {
    (0..paths)
        .into_par_iter()
        .map(|i| {
            let mut rng = path_rng(seed, i as u64);
            simulate_graph(graph, y0, cfg, &mut rng)
        })
        .collect()
}

/// Aggregated downcrossing local-time estimate at `(t, delta)`.
#[derive(Clone, Copy, Debug)]
pub struct LocalTimeEstimate<S> {
    pub t: S,
    pub delta: S,
    pub value: S,
    pub paths: usize,
    pub se: S,
}

/// Mean of `delta * D_t` over paths, using ledger `ledger_idx`.
pub fn local_time_estimate<S: Scalar>(
    paths: &[GraphPath<S>],
    ledger_idx: usize,
    t: S,
) -> LocalTimeEstimate<S> {
    let vals: Vec<f64> = paths
        .iter()
        .map(|p| p.ledgers[ledger_idx].local_time(t).f64())
        .collect();
    LocalTimeEstimate {
        t,
        delta: paths[0].ledgers[ledger_idx].delta,
        value: S::of(crate::stats::mean(&vals)),
        paths: paths.len(),
        se: S::of(crate::stats::se_mean(&vals)),
    }
}

/// How the edge coefficients behave in the unsampled sliver at the exterior
/// vertex: either `a^2` decays linearly (averaged Hamiltonian edges) or is
/// effectively constant (synthetic tables).
enum TopModel<S> {
    Clamped { a2: S },
    Decay { c_top: S, kappa: S },
}

fn top_model<S: Scalar>(table: &EdgeTable<S>) -> TopModel<S> {
    let y_hi = table.y_hi();
    let h_max = table.h_max;
    let w_hi = h_max - y_hi;
    let (a2_hi, b_top, _) = table.coefficients(y_hi).unwrap();
    let y_probe = y_hi - w_hi;
    let (a2_probe, _, _) = table.coefficients(y_probe).unwrap();
    // Power of the decay a^2 ~ (h_max - y)^p between the last two probes.
    let p = (a2_hi / a2_probe).ln() / (w_hi / (h_max - y_probe)).ln();
    let kappa = -S::of(2.0) * b_top / (a2_hi / w_hi);
    if p < S::of(0.5) || kappa <= S::of(1e-6) {
        TopModel::Clamped { a2: a2_hi }
    } else {
        TopModel::Decay { c_top: a2_hi / w_hi, kappa }
    }
}

/// Deterministic mean hitting time of the interior vertex from `y0`, by the
/// scale/speed quadrature
/// `m(y0) = 2 int_0^{y0} exp(-B(z)) int_z^{h_max} exp(B(u))/a^2(u) du dz`,
/// `B' = 2b/a^2`, `B(0) = 0`: absorbing at `O`, no flux at the exterior
/// vertex.
pub fn mean_hitting_time<S: Scalar>(graph: &ReebGraph<S>, y0: GraphPoint<S>) -> Result<S, GraphError> {
    if y0.is_vertex() {
        return Ok(S::zero());
    }
    let table = graph.edge(y0.edge);
    let h_max = table.h_max;
    if y0.y > h_max || y0.y < S::zero() || !y0.y.is_finite() {
        return Err(GraphError::Coefficients(ReebError::CoefficientRange {
            edge: y0.edge,
            y: y0.y.f64(),
            h_max: h_max.f64(),
        }));
    }

    // Refined node set over the tabulated range.
    let (ys_grid, _, _, _) = table.grid();
    let mut nodes: Vec<S> = Vec::with_capacity(4 * ys_grid.len());
    for w in ys_grid.windows(2) {
        for k in 0..4 {
            nodes.push(w[0] + (w[1] - w[0]) * S::from_usize(k).unwrap() / S::of(4.0));
        }
    }
    nodes.push(*ys_grid.last().unwrap());
    let n = nodes.len();
    let y_hi = nodes[n - 1];

    let f = |u: S| {
        let (a2, b, _) = table.coefficients(u).unwrap();
        S::of(2.0) * b / a2
    };

    // B on the nodes: analytic tail below the grid, Simpson per interval.
    let mut b_vals = Vec::with_capacity(n);
    b_vals.push(tail_b(table, nodes[0]));
    for i in 1..n {
        let (a, b) = (nodes[i - 1], nodes[i]);
        let mid = (a + b) / S::of(2.0);
        let inc = (b - a) / S::of(6.0) * (f(a) + S::of(4.0) * f(mid) + f(b));
        let prev = *b_vals.last().unwrap();
        b_vals.push(prev + inc);
    }

    let b_of = |z: S| -> S {
        if z <= nodes[0] {
            return tail_b(table, z);
        }
        match nodes.binary_search_by(|p| p.partial_cmp(&z).unwrap()) {
            Ok(i) => b_vals[i],
            Err(i) => {
                let i = (i - 1).min(n - 2);
                let a = nodes[i];
                let mid = (a + z) / S::of(2.0);
                b_vals[i] + (z - a) / S::of(6.0) * (f(a) + S::of(4.0) * f(mid) + f(z))
            }
        }
    };

    let g = |u: S| {
        let (a2, _, _) = table.coefficients(u).unwrap();
        b_of(u).exp() / a2
    };

    // Inner integral I(z) = int_z^{h_max} e^B / a^2 du, from the top down.
    let b_hi = b_vals[n - 1];
    let top = match top_model(table) {
        TopModel::Clamped { a2 } => b_hi.exp() / a2 * (h_max - y_hi),
        TopModel::Decay { c_top, kappa } => b_hi.exp() / (c_top * kappa),
    };
    let mut i_vals = vec![S::zero(); n];
    i_vals[n - 1] = top;
    for i in (0..n - 1).rev() {
        let (a, b) = (nodes[i], nodes[i + 1]);
        let mid = (a + b) / S::of(2.0);
        i_vals[i] = i_vals[i + 1] + (b - a) / S::of(6.0) * (g(a) + S::of(4.0) * g(mid) + g(b));
    }

    let i_of = |z: S| -> S {
        if z <= nodes[0] {
            // Below the grid: a^2 = (a^2 T)(lo)/T(u) and e^B ~ 1, so the
            // integrand has the closed primitive of T/a2t.
            let (c, d, a2t) = tail_t_params(table);
            let prim = |u: S| {
                let u = u.max(S::of(1e-280));
                c * (u * (S::one() / u).ln() + u) + d * u
            };
            return i_vals[0] + (prim(nodes[0]) - prim(z)) / a2t;
        }
        match nodes.binary_search_by(|p| p.partial_cmp(&z).unwrap()) {
            Ok(i) => i_vals[i],
            Err(i) => {
                let i = (i - 1).min(n - 2);
                let b = nodes[i + 1];
                let mid = (z + b) / S::of(2.0);
                i_vals[i + 1] + (b - z) / S::of(6.0) * (g(z) + S::of(4.0) * g(mid) + g(b))
            }
        }
    };

    // Outer integral by composite Simpson; the integrand is smooth.
    let outer = |z: S| (-b_of(z)).exp() * i_of(z);
    let y_top = y0.y.min(y_hi);
    let n_panels = 800;
    let mut acc = S::zero();
    let h = y_top / S::from_usize(n_panels).unwrap();
    for k in 0..n_panels {
        let a = h * S::from_usize(k).unwrap();
        let b = a + h;
        let mid = (a + b) / S::of(2.0);
        acc += h / S::of(6.0) * (outer(a) + S::of(4.0) * outer(mid) + outer(b));
    }
    if y0.y > y_hi {
        acc += match top_model(table) {
            // e^{-B(z)} I(z) is constant in the decaying sliver.
            TopModel::Decay { c_top, kappa } => (y0.y - y_hi) / (c_top * kappa),
            TopModel::Clamped { a2 } => {
                let w_hi = h_max - y_hi;
                let w0 = h_max - y0.y;
                (w_hi * w_hi - w0 * w0) / (S::of(2.0) * a2)
            }
        };
    }
    Ok(S::of(2.0) * acc)
}

fn tail_t_params<S: Scalar>(table: &EdgeTable<S>) -> (S, S, S) {
    // T = c ln(1/y) + d through two points of the tabulated tail.
    let y_lo = table.y_lo();
    let (a2_lo, _, t_lo) = table.coefficients(y_lo).unwrap();
    let y2 = y_lo / S::of(2.0);
    let (_, _, t2) = table.coefficients(y2).unwrap();
    let x1 = (S::one() / y_lo).ln();
    let x2 = (S::one() / y2).ln();
    let c = (t2 - t_lo) / (x2 - x1);
    let d = t_lo - c * x1;
    (c, d, a2_lo * t_lo)
}

fn tail_b<S: Scalar>(table: &EdgeTable<S>, z: S) -> S {
    // B(z) = int_0^z 2b/a^2 with b = slope*u, a^2 = a2t/T(u):
    // int u T(u) du in closed form for T = c ln(1/u) + d.
    let y_lo = table.y_lo();
    let (_, b_lo, _) = table.coefficients(y_lo).unwrap();
    let slope = b_lo / y_lo;
    let (c, d, a2t) = tail_t_params(table);
    let z = z.min(y_lo).max(S::of(1e-280));
    let half = S::of(0.5);
    let integral = c * (z * z * half * (S::one() / z).ln() + S::of(0.25) * z * z) + d * half * z * z;
    S::of(2.0) * slope * integral / a2t
}

/// Brownian motion with covariance `Q` evaluated along a nondecreasing
/// clock: increments over `[t_i, t_{i+1}]` are `N(0, (L_{i+1} - L_i) Q)`.
pub fn subordinated_brownian<S: Scalar>(
    q: Mat2<S>,
    clock: &[(S, S)],
    rng: &mut ChaCha8Rng,
) -> Result<Vec<(S, Vec2<S>)>, GraphError> {
    let chol = q.cholesky().ok_or(GraphError::NotSpd)?;
    let mut out = Vec::with_capacity(clock.len());
    let mut w = Vec2::zero();
    let mut prev_l = clock.first().map(|&(_, l)| l).unwrap_or(S::zero());
    for &(t, l) in clock {
        let dl = (l - prev_l).max(S::zero());
        if dl > S::zero() {
            let z = Vec2::new(S::std_normal(rng), S::std_normal(rng));
            w += chol.mul_vec(z).scale(dl.sqrt());
        }
        prev_l = l;
        out.push((t, w));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats;
    use approx::assert_relative_eq;

    #[test]
    fn exit_time_table_has_unit_mean() {
        let mut rng = path_rng(21, 0);
        let n = 100_000;
        let mean: f64 = (0..n).map(|_| sample_exit_time_std(&mut rng)).sum::<f64>() / n as f64;
        assert!((mean - 1.0).abs() < 0.02, "mean {mean}");
    }

    #[test]
    fn reflected_unit_edge_mean_abs() {
        // E|Y_1| = sqrt(2/pi) for the reflected unit diffusion started at 0.
        let graph = ReebGraph::<f64>::unit_edge(8.0);
        let cfg = GraphSimConfig::new(2e-4, 1.0);
        let paths = simulate_many(&graph, GraphPoint::vertex(), &cfg, 42, 10_000).unwrap();
        let vals: Vec<f64> = paths.iter().map(|p| p.final_state.y).collect();
        let m = stats::mean(&vals);
        let se = stats::se_mean(&vals);
        let target = (2.0 / std::f64::consts::PI).sqrt();
        assert!((m - target).abs() < 3.0 * se + 0.01, "m {m} target {target} se {se}");
    }

    #[test]
    fn gamblers_ruin_on_unit_edge() {
        // From y0 = delta, P(hit 0 before delta') = 1 - delta/delta'.
        let graph = ReebGraph::<f64>::unit_edge(2.0);
        let delta = 0.3;
        let delta_prime = 1.0;
        let mut cfg = GraphSimConfig::new(1e-4, 1e9);
        cfg.stop_at_vertex = true;
        cfg.stop_at_level = Some(delta_prime);
        let paths = simulate_many(&graph, GraphPoint { edge: 0, y: delta }, &cfg, 7, 20_000).unwrap();
        let hits = paths.iter().filter(|p| p.stop == StopCause::Vertex).count();
        let p_hat = hits as f64 / paths.len() as f64;
        let target = 1.0 - delta / delta_prime;
        let se = (target * (1.0 - target) / paths.len() as f64).sqrt();
        assert!((p_hat - target).abs() < 3.0 * se + 0.005, "p {p_hat} target {target}");
    }

    #[test]
    fn local_time_zero_without_vertex_visits() {
        let graph = ReebGraph::<f64>::unit_edge(50.0);
        let mut cfg = GraphSimConfig::new(1e-3, 0.5);
        cfg.deltas = vec![0.2];
        let mut rng = path_rng(3, 0);
        let path = simulate_graph(&graph, GraphPoint { edge: 0, y: 40.0 }, &cfg, &mut rng).unwrap();
        assert_eq!(path.ledgers[0].downcrossings_before(0.5), 0);
        assert_eq!(path.ledgers[0].local_time(0.5), 0.0);
        let (e, n) = path.ledgers[0].special_clock(0.3, path.final_time);
        assert_relative_eq!(e, 0.3);
        assert_eq!(n, 0);
    }

    #[test]
    fn mean_hitting_time_unit_edge_closed_form() {
        // a^2 = 1, b = 0, h_max = 1: m(y0) = 2 int_0^{y0} (1 - z) dz.
        let graph = ReebGraph::<f64>::unit_edge(1.0);
        let m1 = mean_hitting_time(&graph, GraphPoint { edge: 0, y: 1.0 }).unwrap();
        assert_relative_eq!(m1, 1.0, epsilon = 1e-6);
        let m_half = mean_hitting_time(&graph, GraphPoint { edge: 0, y: 0.5 }).unwrap();
        assert_relative_eq!(m_half, 0.75, epsilon = 1e-6);
        assert_eq!(mean_hitting_time(&graph, GraphPoint::vertex()).unwrap(), 0.0);
    }

    #[test]
    fn mean_hitting_time_matches_monte_carlo_on_unit_edge() {
        let graph = ReebGraph::<f64>::unit_edge(1.0);
        let mut cfg = GraphSimConfig::new(1e-4, 1e9);
        cfg.stop_at_vertex = true;
        let paths = simulate_many(&graph, GraphPoint { edge: 0, y: 1.0 }, &cfg, 99, 10_000).unwrap();
        let times: Vec<f64> = paths.iter().map(|p| p.final_time).collect();
        let m = stats::mean(&times);
        let se = stats::se_mean(&times);
        assert!((m - 1.0).abs() < 3.0 * se + 0.01, "m {m} se {se}");
    }

    #[test]
    fn subordinated_covariance_and_frozen_clock() {
        let q = Mat2::new(2.0f64, 0.6, 0.6, 1.0);
        let clock: Vec<(f64, f64)> =
            (0..=100).map(|i| (i as f64 / 100.0, i as f64 / 100.0)).collect();
        let mut incs = Vec::new();
        for i in 0..4000 {
            let mut rng = path_rng(5, i);
            let path = subordinated_brownian(q, &clock, &mut rng).unwrap();
            incs.push(path.last().unwrap().1);
        }
        let cov = stats::cov2(&incs);
        assert!((cov.xx - q.xx).abs() < 0.15, "{cov:?}");
        assert!((cov.yy - q.yy).abs() < 0.08, "{cov:?}");
        assert!((cov.xy - q.xy).abs() < 0.11, "{cov:?}");

        let frozen: Vec<(f64, f64)> = (0..=10).map(|i| (i as f64, 0.0)).collect();
        let mut rng = path_rng(6, 0);
        let path = subordinated_brownian(q, &frozen, &mut rng).unwrap();
        assert!(path.iter().all(|(_, w)| w.norm() == 0.0));

        assert!(matches!(
            subordinated_brownian(Mat2::new(1.0, 2.0, 2.0, 1.0), &clock, &mut rng),
            Err(GraphError::NotSpd)
        ));
    }
}
