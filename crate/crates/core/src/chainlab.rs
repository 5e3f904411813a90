//! Finite-state testbed for killed Markov chains.
//!
//! A base chain `P0` on `m` states leaks probability `sqrt(eps) h_i(x)` per
//! step into terminal labels `i = 1..n`. Because the state space is finite,
//! every parameter of the limit law of the scaled additive functional
//! `eps^{1/4} sum g(Z_k)` is exactly computable by linear algebra: the
//! stationary measure, the CLT covariance via the fundamental matrix, the
//! label probabilities and the mean kill time. Monte Carlo runs are then
//! compared against these exact values.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{Mat2, Vec2};
use crate::linalg;
use crate::rng::stream_rng;
use crate::scalar::Scalar;
use crate::stats;

#[derive(Debug, Error)]
pub enum ChainError {
    #[error("transition matrix fails the Doeblin condition: no power up to m has a strictly positive column")]
    DoeblinFail,
    #[error("Poisson equation is singular on the centered subspace: {0}")]
    SingularPoisson(String),
    #[error("invalid chain spec: {0}")]
    Invalid(String),
}

/// Serializable chain description (`chain-verify --spec` file format).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RawChainSpec {
    /// Row-stochastic base transition matrix.
    pub p0: Vec<Vec<f64>>,
    /// Two-component observable per state.
    pub g: Vec<[f64; 2]>,
    /// One nonnegative intensity table per terminal label.
    pub h: Vec<Vec<f64>>,
}

/// A validated killed-chain specification.
///
/// `g` is centered under the `eps = 0` stationary measure at construction；
/// the killed kernel is `P_eps(x, .) = (1 - sqrt(eps) J(x)) P0(x, .)` plus
/// mass `sqrt(eps) h_i(x)` to label `i`, which realizes the scaling limit of
/// the kill intensities without an error term.
#[derive(Clone, Debug)]
pub struct KilledChainSpec<S> {
    p0: Vec<Vec<S>>,
    g: Vec<Vec2<S>>,
    h: Vec<Vec<S>>,
    lambda0: Vec<S>,
}

impl<S: Scalar> KilledChainSpec<S> {
    pub fn new(p0: Vec<Vec<S>>, g_raw: Vec<Vec2<S>>, h: Vec<Vec<S>>) -> Result<Self, ChainError> {
        let m = p0.len();
        if m == 0 || g_raw.len() != m {
            return Err(ChainError::Invalid("empty chain or mismatched g".into()));
        }
        for row in &p0 {
            if row.len() != m {
                return Err(ChainError::Invalid("P0 is not square".into()));
            }
            let s: S = row.iter().copied().sum();
            if (s - S::one()).abs() > S::of(1e-12) || row.iter().any(|&p| p < S::zero()) {
                return Err(ChainError::Invalid("P0 rows must be nonnegative and sum to 1".into()));
            }
        }
        if h.is_empty() || h.iter().any(|hi| hi.len() != m) {
            return Err(ChainError::Invalid("h tables must match the state count".into()));
        }
        for x in 0..m {
            let j: S = h.iter().map(|hi| hi[x]).sum();
            if j <= S::zero() || h.iter().any(|hi| hi[x] < S::zero()) {
                return Err(ChainError::Invalid(format!("J(x) must be positive, state {x}")));
            }
        }
        let lambda0 = invariant_measure(&p0)?;
        // Center g under lambda0.
        let mean = g_raw
            .iter()
            .zip(&lambda0)
            .fold(Vec2::zero(), |acc, (g, &w)| acc + g.scale(w));
        let g = g_raw.iter().map(|v| *v - mean).collect();
        Ok(Self { p0, g, h, lambda0 })
    }

    pub fn from_raw(raw: &RawChainSpec) -> Result<Self, ChainError> {
        let p0 = raw.p0.iter().map(|r| r.iter().map(|&x| S::of(x)).collect()).collect();
        let g = raw.g.iter().map(|v| Vec2::new(S::of(v[0]), S::of(v[1]))).collect();
        let h = raw.h.iter().map(|r| r.iter().map(|&x| S::of(x)).collect()).collect();
        Self::new(p0, g, h)
    }

    /// Lazy symmetric four-cycle with two labels; the standard test fixture.
    pub fn four_cycle() -> Self {
        let stay = 0.25;
        let hop = 0.375;
        let mut p0 = vec![vec![S::zero(); 4]; 4];
        for i in 0..4 {
            p0[i][i] = S::of(stay);
            p0[i][(i + 1) % 4] = S::of(hop);
            p0[i][(i + 3) % 4] = S::of(hop);
        }
        let g = (0..4)
            .map(|x| {
                Vec2::new(
                    S::of(if x % 2 == 0 { 1.0 } else { -1.0 }),
                    S::of(if x < 2 { 0.5 } else { -0.5 }),
                )
            })
            .collect();
        let h = vec![
            vec![S::of(0.5), S::of(1.0), S::of(0.5), S::of(1.0)],
            vec![S::of(1.5), S::of(0.25), S::of(0.5), S::of(0.25)],
        ];
        Self::new(p0, g, h).expect("fixture is valid")
    }

    pub fn states(&self) -> usize {
        self.p0.len()
    }

    pub fn labels(&self) -> usize {
        self.h.len()
    }

    pub fn stationary(&self) -> &[S] {
        &self.lambda0
    }

    pub fn g(&self) -> &[Vec2<S>] {
        &self.g
    }

    pub fn p0(&self) -> &[Vec<S>] {
        &self.p0
    }

    pub fn j(&self, x: usize) -> S {
        self.h.iter().map(|hi| hi[x]).sum()
    }

    pub fn max_j(&self) -> S {
        (0..self.states()).map(|x| self.j(x)).fold(S::zero(), |a, b| a.max(b))
    }

    /// Exact limit-law parameters `(J0, label probabilities, CLT covariance)`.
    pub fn limit_params(&self) -> Result<LimitLawParams<S>, ChainError> {
        let j0: S = (0..self.states()).map(|x| self.j(x) * self.lambda0[x]).sum();
        let mut label_probs = Vec::with_capacity(self.labels());
        for hi in &self.h {
            let num: S = hi.iter().zip(&self.lambda0).map(|(&h, &w)| h * w).sum();
            label_probs.push(num / j0);
        }
        let qbar = clt_covariance(self)?;
        Ok(LimitLawParams { j0, label_probs, qbar })
    }
}

/// Exactly computable parameters of the killed-chain limit law.
#[derive(Clone, Debug)]
pub struct LimitLawParams<S> {
    /// `int J d lambda0`.
    pub j0: S,
    /// `p_i = int h_i d lambda0 / J0`.
    pub label_probs: Vec<S>,
    /// CLT covariance of `sum g / sqrt(k)` under the base chain.
    pub qbar: Mat2<S>,
}

/// Stationary distribution of a row-stochastic matrix, after verifying the
/// Doeblin condition (some power up to `m` has a strictly positive column).
pub fn invariant_measure<S: Scalar>(p: &[Vec<S>]) -> Result<Vec<S>, ChainError> {
    let m = p.len();
    let mut reach: Vec<Vec<bool>> = p
        .iter()
        .map(|row| row.iter().map(|&x| x > S::zero()).collect())
        .collect();
    let positive_column =
        |r: &Vec<Vec<bool>>| (0..m).any(|j| (0..m).all(|i| r[i][j]));
    let mut ok = positive_column(&reach);
    for _ in 1..m {
        if ok {
            break;
        }
        // Boolean product with the one-step support.
        let mut next = vec![vec![false; m]; m];
        for i in 0..m {
            for k in 0..m {
                if reach[i][k] {
                    for j in 0..m {
                        if p[k][j] > S::zero() {
                            next[i][j] = true;
                        }
                    }
                }
            }
        }
        reach = next;
        ok = positive_column(&reach);
    }
    if !ok {
        return Err(ChainError::DoeblinFail);
    }
    let lambda = linalg::stationary_distribution(p)
        .map_err(|e| ChainError::SingularPoisson(e.to_string()))?;
    // Residual check of the balance equations.
    for j in 0..m {
        let bal: S = (0..m).map(|i| lambda[i] * p[i][j]).sum();
        if (bal - lambda[j]).abs() > S::of(1e-12) {
            return Err(ChainError::SingularPoisson(format!(
                "balance residual {:e} at state {j}",
                (bal - lambda[j]).f64()
            )));
        }
    }
    Ok(lambda)
}

/// Markov-chain CLT covariance of the centered observable via the
/// fundamental matrix: solve `(I - P0 + 1 lambda^T) G = g` per component,
/// then `Q = E[g g^T] + E[g (P G)^T] + E[(P G) g^T]` under `lambda`.
pub fn clt_covariance<S: Scalar>(spec: &KilledChainSpec<S>) -> Result<Mat2<S>, ChainError> {
    let m = spec.states();
    let p = spec.p0();
    let lambda = spec.stationary();
    let mut a = vec![vec![S::zero(); m]; m];
    for i in 0..m {
        for j in 0..m {
            let id = if i == j { S::one() } else { S::zero() };
            a[i][j] = id - p[i][j] + lambda[j];
        }
    }
    let gx: Vec<S> = spec.g().iter().map(|v| v.x).collect();
    let gy: Vec<S> = spec.g().iter().map(|v| v.y).collect();
    let sol_x = linalg::solve(&a, &gx).map_err(|e| ChainError::SingularPoisson(e.to_string()))?;
    let sol_y = linalg::solve(&a, &gy).map_err(|e| ChainError::SingularPoisson(e.to_string()))?;

    let pg = |sol: &[S], i: usize| -> S { (0..m).map(|j| p[i][j] * sol[j]).sum() };
    let mut q = Mat2::new(S::zero(), S::zero(), S::zero(), S::zero());
    for i in 0..m {
        let w = lambda[i];
        let g = spec.g()[i];
        let pgx = pg(&sol_x, i);
        let pgy = pg(&sol_y, i);
        q.xx += w * (g.x * g.x + S::of(2.0) * g.x * pgx);
        q.yy += w * (g.y * g.y + S::of(2.0) * g.y * pgy);
        q.xy += w * (g.x * g.y + g.x * pgy + g.y * pgx);
    }
    q.yx = q.xy;
    Ok(q)
}

/// Outcome of one killed run.
#[derive(Clone, Copy, Debug)]
pub struct KilledRun<S> {
    /// Raw (unscaled) sum of `g` along the path.
    pub sum_g: Vec2<S>,
    pub label: usize,
    pub steps: u64,
}

/// Simulate the killed chain from a stationary start until the kill.
pub fn run_killed_chain<S: Scalar>(
    spec: &KilledChainSpec<S>,
    epsilon: S,
    rng: &mut ChaCha8Rng,
) -> KilledRun<S> {
    let sqrt_eps = epsilon.sqrt();
    debug_assert!(sqrt_eps * spec.max_j() <= S::one());
    let mut x = draw_discrete(spec.stationary(), rng);
    let mut sum = Vec2::zero();
    let mut steps = 0u64;
    loop {
        let j = spec.j(x);
        if S::unit_uniform(rng) < sqrt_eps * j {
            // Killed: pick the label with shares h_i(x)/J(x).
            let shares: Vec<S> = spec.h.iter().map(|hi| hi[x] / j).collect();
            let label = draw_discrete(&shares, rng);
            return KilledRun { sum_g: sum, label, steps };
        }
        x = draw_discrete(&spec.p0[x], rng);
        sum += spec.g[x];
        steps += 1;
    }
}

fn draw_discrete<S: Scalar, R: Rng + ?Sized>(weights: &[S], rng: &mut R) -> usize {
    let u = S::unit_uniform(rng);
    let mut acc = S::zero();
    for (i, &w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    weights.len() - 1
}

/// Parallel batch of killed runs, reproducible by seed.
pub fn sample_killed_runs<S: Scalar>(
    spec: &KilledChainSpec<S>,
    epsilon: S,
    samples: usize,
    seed: u64,
) -> Vec<KilledRun<S>> {
    (0..samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, 3, i as u64);
            run_killed_chain(spec, epsilon, &mut rng)
        })
        .collect()
}

/// Everything `chain-verify` reports for one `epsilon`.
#[derive(Clone, Debug, Serialize)]
pub struct LimitLawReport {
    pub epsilon: f64,
    pub samples: usize,
    /// Anderson-Darling p-value of each scaled-sum component against the
    /// exact Laplace marginal.
    pub ad_p: [f64; 2],
    /// Chi-square p-value of label frequencies against the exact ones.
    pub label_chi2_p: f64,
    pub label_freqs: Vec<f64>,
    pub label_probs_exact: Vec<f64>,
    /// Pairwise KS p-values of the first component conditioned on labels.
    pub independence_ks_p: Vec<f64>,
    pub mean_steps: f64,
    pub var_scaled_sum: [f64; 2],
    /// Exact `Qbar / J0` diagonal for comparison.
    pub var_exact: [f64; 2],
}

/// Sample the killed chain and test the limit law against the exact
/// linear-algebra parameters.
pub fn limit_law_test<S: Scalar>(
    spec: &KilledChainSpec<S>,
    epsilon: S,
    samples: usize,
    seed: u64,
) -> Result<LimitLawReport, ChainError> {
    let params = spec.limit_params()?;
    let runs = sample_killed_runs(spec, epsilon, samples, seed);
    let quarter = S::of(0.25);
    let scale = epsilon.powf(quarter);

    let comp: [Vec<f64>; 2] = [
        runs.iter().map(|r| (r.sum_g.x * scale).f64()).collect(),
        runs.iter().map(|r| (r.sum_g.y * scale).f64()).collect(),
    ];
    // The limit marginal sqrt(xi) N(0, Qbar_aa / J0) is Laplace with
    // b = sqrt(Qbar_aa / (2 J0)).
    let j0 = params.j0.f64();
    let var_exact = [params.qbar.xx.f64() / j0, params.qbar.yy.f64() / j0];
    let mut ad_p = [0.0; 2];
    for a in 0..2 {
        let b = (var_exact[a] / 2.0).sqrt();
        let (_, p) = stats::anderson_darling(&comp[a], |x| stats::laplace_cdf(x, b));
        ad_p[a] = p;
    }

    let mut counts = vec![0u64; spec.labels()];
    for r in &runs {
        counts[r.label] += 1;
    }
    let probs_exact: Vec<f64> = params.label_probs.iter().map(|p| p.f64()).collect();
    let (_, label_chi2_p) = stats::chi_square_gof(&counts, &probs_exact);

    // Independence of the scaled sum and the label: compare the first
    // component's conditional distributions across label pairs.
    let mut independence_ks_p = Vec::new();
    for i in 0..spec.labels() {
        for j in i + 1..spec.labels() {
            let xi: Vec<f64> = runs
                .iter()
                .filter(|r| r.label == i)
                .map(|r| (r.sum_g.x * scale).f64())
                .collect();
            let xj: Vec<f64> = runs
                .iter()
                .filter(|r| r.label == j)
                .map(|r| (r.sum_g.x * scale).f64())
                .collect();
            if xi.len() > 20 && xj.len() > 20 {
                let (_, p) = stats::ks_two_sample(&xi, &xj);
                independence_ks_p.push(p);
            }
        }
    }

    let steps: Vec<f64> = runs.iter().map(|r| r.steps as f64).collect();
    Ok(LimitLawReport {
        epsilon: epsilon.f64(),
        samples,
        ad_p,
        label_chi2_p,
        label_freqs: counts.iter().map(|&c| c as f64 / samples as f64).collect(),
        label_probs_exact: probs_exact,
        independence_ks_p,
        mean_steps: stats::mean(&steps),
        var_scaled_sum: [stats::variance(&comp[0]), stats::variance(&comp[1])],
        var_exact,
    })
}

/// Mean of `g` along killed paths pooled over samples; the survival tilt
/// makes this O(sqrt(eps)) even though `g` is centered under `lambda0`.
pub fn surviving_mean_g<S: Scalar>(
    spec: &KilledChainSpec<S>,
    epsilon: S,
    samples: usize,
    seed: u64,
) -> Vec2<f64> {
    let runs = sample_killed_runs(spec, epsilon, samples, seed);
    let total_steps: f64 = runs.iter().map(|r| r.steps as f64).sum();
    let sum = runs
        .iter()
        .fold(Vec2::<f64>::zero(), |acc, r| acc + Vec2::new(r.sum_g.x.f64(), r.sum_g.y.f64()));
    sum.scale(1.0 / total_steps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn uniform_chain(m: usize) -> KilledChainSpec<f64> {
        let p0 = vec![vec![1.0 / m as f64; m]; m];
        let g = (0..m)
            .map(|x| Vec2::new((x as f64) - (m as f64 - 1.0) / 2.0, if x == 0 { 1.0 } else { 0.0 }))
            .collect();
        let h = vec![vec![1.0; m], vec![2.0; m]];
        KilledChainSpec::new(p0, g, h).unwrap()
    }

    #[test]
    fn uniform_rows_give_uniform_stationary() {
        let spec = uniform_chain(5);
        for &w in spec.stationary() {
            assert_relative_eq!(w, 0.2, epsilon = 1e-13);
        }
    }

    #[test]
    fn stationary_is_invariant_under_powers() {
        let spec = KilledChainSpec::<f64>::four_cycle();
        let p = spec.p0();
        let m = p.len();
        let mut p2 = vec![vec![0.0; m]; m];
        for i in 0..m {
            for j in 0..m {
                p2[i][j] = (0..m).map(|k| p[i][k] * p[k][j]).sum();
            }
        }
        let l1 = invariant_measure(p).unwrap();
        let l2 = invariant_measure(&p2).unwrap();
        for (a, b) in l1.iter().zip(&l2) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn doeblin_rejects_pure_cycle() {
        // A deterministic cycle is periodic: no power has a positive column.
        let m = 4;
        let mut p0 = vec![vec![0.0; m]; m];
        for i in 0..m {
            p0[i][(i + 1) % m] = 1.0;
        }
        assert!(matches!(invariant_measure(&p0), Err(ChainError::DoeblinFail)));
    }

    #[test]
    fn iid_sampling_has_no_serial_term() {
        // Uniform rows: Qbar reduces to the stationary covariance of g.
        let spec = uniform_chain(4);
        let q = clt_covariance(&spec).unwrap();
        let lambda = spec.stationary();
        let mut direct = Mat2::new(0.0, 0.0, 0.0, 0.0);
        for (g, &w) in spec.g().iter().zip(lambda) {
            direct.xx += w * g.x * g.x;
            direct.yy += w * g.y * g.y;
            direct.xy += w * g.x * g.y;
        }
        assert_relative_eq!(q.xx, direct.xx, epsilon = 1e-10);
        assert_relative_eq!(q.yy, direct.yy, epsilon = 1e-10);
        assert_relative_eq!(q.xy, direct.xy, epsilon = 1e-10);
    }

    #[test]
    fn four_cycle_qbar_first_component_closed_form() {
        // g1 = (-1)^x flips with probability 3/4 per step: autocovariance
        // (-1/2)^k, so Q = 1 + 2 sum_k (-1/2)^k = 1/3.
        let spec = KilledChainSpec::<f64>::four_cycle();
        let q = clt_covariance(&spec).unwrap();
        assert_relative_eq!(q.xx, 1.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn qbar_scales_quadratically() {
        let base = KilledChainSpec::<f64>::four_cycle();
        let doubled = KilledChainSpec::new(
            base.p0().to_vec(),
            base.g().iter().map(|v| v.scale(2.0)).collect(),
            base.h.clone(),
        )
        .unwrap();
        let q1 = clt_covariance(&base).unwrap();
        let q2 = clt_covariance(&doubled).unwrap();
        assert_relative_eq!(q2.xx, 4.0 * q1.xx, epsilon = 1e-12);
        assert_relative_eq!(q2.yy, 4.0 * q1.yy, epsilon = 1e-12);
        assert_relative_eq!(q2.xy, 4.0 * q1.xy, epsilon = 1e-12);
    }

    #[test]
    fn qbar_matches_direct_simulation() {
        // Long-run variance of (sum g1)/sqrt(k) by direct batching, within 2%.
        let spec = KilledChainSpec::<f64>::four_cycle();
        let q = clt_covariance(&spec).unwrap();
        let k = 1000;
        let reps = 10_000;
        let sums: Vec<f64> = (0..reps)
            .into_par_iter()
            .map(|r| {
                let mut rng = stream_rng(1234, 4, r as u64);
                let mut x = draw_discrete(spec.stationary(), &mut rng);
                let mut s = 0.0;
                for _ in 0..k {
                    x = draw_discrete(&spec.p0[x], &mut rng);
                    s += spec.g()[x].x;
                }
                s / (k as f64).sqrt()
            })
            .collect();
        let v = stats::variance(&sums);
        assert!((v - q.xx).abs() / q.xx < 0.02, "v {v} vs q {0}", q.xx);
    }

    #[test]
    fn constant_intensities_give_constant_label_probs() {
        // h1 = 1, h2 = 2 everywhere: P(label 0) = 1/3 at any epsilon.
        let spec = uniform_chain(3);
        for eps in [1e-2, 1e-4] {
            let runs = sample_killed_runs(&spec, eps, 20_000, 55);
            let p0 = runs.iter().filter(|r| r.label == 0).count() as f64 / runs.len() as f64;
            let se = (2.0f64 / 9.0 / runs.len() as f64).sqrt();
            assert!((p0 - 1.0 / 3.0).abs() < 3.0 * se, "eps {eps}: p0 {p0}");
        }
    }

    #[test]
    fn mean_steps_scales_like_inverse_sqrt_eps() {
        let spec = KilledChainSpec::<f64>::four_cycle();
        let j0 = spec.limit_params().unwrap().j0;
        let eps = 1e-4;
        let runs = sample_killed_runs(&spec, eps, 20_000, 56);
        let mean_steps = stats::mean(&runs.iter().map(|r| r.steps as f64).collect::<Vec<_>>());
        let expected = 1.0 / (eps.sqrt() * j0);
        assert!(
            (mean_steps - expected).abs() / expected < 0.05,
            "steps {mean_steps} vs {expected}"
        );
        // 1/sqrt(eps) scaling across two epsilon values.
        let runs2 = sample_killed_runs(&spec, eps * 100.0, 20_000, 57);
        let mean2 = stats::mean(&runs2.iter().map(|r| r.steps as f64).collect::<Vec<_>>());
        assert!((mean_steps / mean2 - 10.0).abs() < 1.0, "ratio {}", mean_steps / mean2);
    }

    #[test]
    fn scaled_sum_variance_matches_qbar_over_j0() {
        let spec = KilledChainSpec::<f64>::four_cycle();
        let params = spec.limit_params().unwrap();
        let eps = 1e-5;
        let runs = sample_killed_runs(&spec, eps, 30_000, 58);
        let scale = eps.powf(0.25);
        let xs: Vec<f64> = runs.iter().map(|r| r.sum_g.x * scale).collect();
        let v = stats::variance(&xs);
        let target = params.qbar.xx / params.j0;
        // SE of a variance estimate of a heavy-ish mixture: bootstrap-free
        // bound var * sqrt((kurtosis+2)/n); the Laplace limit has kurtosis 3.
        let se = target * (5.0f64 / runs.len() as f64).sqrt();
        assert!((v - target).abs() < 3.0 * se + 0.02 * target, "v {v} target {target}");
    }

    #[test]
    fn limit_law_holds_at_small_epsilon() {
        let spec = KilledChainSpec::<f64>::four_cycle();
        let report = limit_law_test(&spec, 1e-5, 10_000, 59).unwrap();
        assert!(report.ad_p[0] > 0.01, "AD p {:?}", report.ad_p);
        assert!(report.ad_p[1] > 0.01, "AD p {:?}", report.ad_p);
        assert!(report.label_chi2_p > 0.01, "chi2 p {}", report.label_chi2_p);
        for p in &report.independence_ks_p {
            assert!(*p > 0.01, "KS p {p}");
        }
        // Label marginals within 3 SE of the exact probabilities.
        for (f, p) in report.label_freqs.iter().zip(&report.label_probs_exact) {
            let se = (p * (1.0 - p) / report.samples as f64).sqrt();
            assert!((f - p).abs() < 3.0 * se, "freq {f} vs {p}");
        }
    }

    #[test]
    fn report_generated_far_from_the_limit() {
        let spec = KilledChainSpec::<f64>::four_cycle();
        let report = limit_law_test(&spec, 1e-1, 2_000, 60).unwrap();
        assert_eq!(report.samples, 2_000);
        assert!(report.mean_steps > 0.0);
    }

    #[test]
    fn survival_tilt_decays_with_epsilon() {
        // The pooled path-mean of g decays like sqrt(eps): ratio at least
        // sqrt(10) per decade within a factor-2 tolerance.
        let spec = KilledChainSpec::<f64>::four_cycle();
        let m_coarse = surviving_mean_g(&spec, 1e-2, 200_000, 61);
        let m_fine = surviving_mean_g(&spec, 1e-4, 200_000, 62);
        let pick = if m_coarse.x.abs() > m_coarse.y.abs() { (m_coarse.x, m_fine.x) } else { (m_coarse.y, m_fine.y) };
        let ratio = pick.0.abs() / pick.1.abs().max(1e-12);
        assert!(ratio > 5.0, "tilt ratio {ratio} (coarse {:?}, fine {:?})", m_coarse, m_fine);
    }
}
