//! Statistical estimators and goodness-of-fit tests.
//!
//! Everything here works on `f64` summaries; the generic simulation code
//! converts through [`crate::scalar::Scalar::f64`] before testing.

use rand::Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::geom::{Mat2, Vec2};

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Standard error of the sample mean.
pub fn se_mean(xs: &[f64]) -> f64 {
    (variance(xs) / xs.len() as f64).sqrt()
}

/// Sample skewness and its null standard error `sqrt(6/n)`.
pub fn skewness(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = mean(xs);
    let m2 = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    let m3 = xs.iter().map(|x| (x - m).powi(3)).sum::<f64>() / n;
    (m3 / m2.powf(1.5), (6.0 / n).sqrt())
}

/// Sample covariance matrix of planar samples.
pub fn cov2(samples: &[Vec2<f64>]) -> Mat2<f64> {
    let n = samples.len() as f64;
    let mx = samples.iter().map(|s| s.x).sum::<f64>() / n;
    let my = samples.iter().map(|s| s.y).sum::<f64>() / n;
    let mut cxx = 0.0;
    let mut cxy = 0.0;
    let mut cyy = 0.0;
    for s in samples {
        cxx += (s.x - mx) * (s.x - mx);
        cxy += (s.x - mx) * (s.y - my);
        cyy += (s.y - my) * (s.y - my);
    }
    let d = n - 1.0;
    Mat2::new(cxx / d, cxy / d, cxy / d, cyy / d)
}

/// Elementwise 95% bootstrap half-widths for [`cov2`].
pub fn bootstrap_cov_ci<R: Rng>(samples: &[Vec2<f64>], resamples: usize, rng: &mut R) -> Mat2<f64> {
    let n = samples.len();
    let mut xx = Vec::with_capacity(resamples);
    let mut xy = Vec::with_capacity(resamples);
    let mut yy = Vec::with_capacity(resamples);
    let mut buf = vec![Vec2::zero(); n];
    for _ in 0..resamples {
        for slot in buf.iter_mut() {
            *slot = samples[rng.random_range(0..n)];
        }
        let c = cov2(&buf);
        xx.push(c.xx);
        xy.push(c.xy);
        yy.push(c.yy);
    }
    let half = |v: &mut Vec<f64>| {
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let lo = v[(0.025 * (v.len() - 1) as f64).round() as usize];
        let hi = v[(0.975 * (v.len() - 1) as f64).round() as usize];
        (hi - lo) / 2.0
    };
    let (hxx, hxy, hyy) = (half(&mut xx), half(&mut xy), half(&mut yy));
    Mat2::new(hxx, hxy, hxy, hyy)
}

/// Centered Laplace CDF with scale `b` (variance `2 b^2`).
pub fn laplace_cdf(x: f64, b: f64) -> f64 {
    if x < 0.0 {
        0.5 * (x / b).exp()
    } else {
        1.0 - 0.5 * (-x / b).exp()
    }
}

/// Anderson-Darling statistic and asymptotic p-value of `data` against the
/// fully specified continuous CDF `cdf`.
pub fn anderson_darling(data: &[f64], cdf: impl Fn(f64) -> f64) -> (f64, f64) {
    let mut z: Vec<f64> = data.iter().map(|&x| cdf(x).clamp(1e-14, 1.0 - 1e-14)).collect();
    z.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = z.len();
    let nf = n as f64;
    let mut s = 0.0;
    for i in 0..n {
        let w = (2 * i + 1) as f64;
        s += w * (z[i].ln() + (1.0 - z[n - 1 - i]).ln());
    }
    let a2 = -nf - s / nf;
    (a2, 1.0 - ad_asymptotic_cdf(a2))
}

/// Asymptotic CDF of the Anderson-Darling statistic (Marsaglia's
/// approximation, accurate to a few units in the fourth decimal).
fn ad_asymptotic_cdf(z: f64) -> f64 {
    if z <= 0.0 {
        return 0.0;
    }
    if z < 2.0 {
        (-1.2337141 / z).exp() / z.sqrt()
            * (2.00012 + (0.247105 - (0.0649821 - (0.0347962 - (0.011672 - 0.00168691 * z) * z) * z) * z) * z)
    } else {
        (-(1.0776 - (2.30695 - (0.43424 - (0.082433 - (0.008056 - 0.0003146 * z) * z) * z) * z) * z).exp()).exp()
    }
}

/// Asymptotic Kolmogorov survival function `Q(lambda)`.
fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for j in 1..=100 {
        let term = sign * (-2.0 * (j as f64).powi(2) * lambda * lambda).exp();
        sum += term;
        sign = -sign;
        if term.abs() < 1e-12 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Two-sample Kolmogorov-Smirnov test; returns `(D, p)`.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> (f64, f64) {
    let mut xs = a.to_vec();
    let mut ys = b.to_vec();
    xs.sort_by(|p, q| p.partial_cmp(q).unwrap());
    ys.sort_by(|p, q| p.partial_cmp(q).unwrap());
    let (n, m) = (xs.len(), ys.len());
    let mut i = 0;
    let mut j = 0;
    let mut d: f64 = 0.0;
    while i < n && j < m {
        let x = xs[i];
        let y = ys[j];
        if x <= y {
            i += 1;
        }
        if y <= x {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let ne = (n * m) as f64 / (n + m) as f64;
    let sqrt_ne = ne.sqrt();
    (d, kolmogorov_q((sqrt_ne + 0.12 + 0.11 / sqrt_ne) * d))
}

/// One-sample KS test against the uniform distribution on `[0, 1]`.
pub fn ks_uniform(ps: &[f64]) -> (f64, f64) {
    let mut z = ps.to_vec();
    z.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = z.len() as f64;
    let mut d: f64 = 0.0;
    for (i, x) in z.iter().enumerate() {
        d = d.max((i as f64 / n - x).abs()).max(((i + 1) as f64 / n - x).abs());
    }
    let sn = n.sqrt();
    (d, kolmogorov_q((sn + 0.12 + 0.11 / sn) * d))
}

/// Chi-square goodness of fit of observed counts against expected
/// probabilities; returns `(statistic, p)`.
pub fn chi_square_gof(observed: &[u64], expected_probs: &[f64]) -> (f64, f64) {
    assert_eq!(observed.len(), expected_probs.len());
    let n: u64 = observed.iter().sum();
    let mut stat = 0.0;
    for (o, p) in observed.iter().zip(expected_probs) {
        let e = p * n as f64;
        stat += (*o as f64 - e) * (*o as f64 - e) / e;
    }
    let df = (observed.len() - 1) as f64;
    let p = 1.0 - ChiSquared::new(df).unwrap().cdf(stat);
    (stat, p)
}

/// Distance correlation between two samples of (possibly vector-valued)
/// observations, given as rows.
pub struct DistanceCorrelation {
    a: Vec<f64>, // doubly centered distance matrix of x, row major
    b: Vec<f64>,
    n: usize,
}

impl DistanceCorrelation {
    pub fn new(xs: &[&[f64]], ys: &[&[f64]]) -> Self {
        assert_eq!(xs.len(), ys.len());
        let n = xs.len();
        Self { a: centered_distances(xs, n), b: centered_distances(ys, n), n }
    }

    /// dCor of the original pairing.
    pub fn dcor(&self) -> f64 {
        self.dcor_permuted(None)
    }

    fn dcor_permuted(&self, perm: Option<&[usize]>) -> f64 {
        let n = self.n;
        let mut vxy = 0.0;
        for j in 0..n {
            for k in 0..n {
                let bjk = match perm {
                    Some(p) => self.b[p[j] * n + p[k]],
                    None => self.b[j * n + k],
                };
                vxy += self.a[j * n + k] * bjk;
            }
        }
        let n2 = (n * n) as f64;
        let vx = self.a.iter().map(|v| v * v).sum::<f64>() / n2;
        let vy = self.b.iter().map(|v| v * v).sum::<f64>() / n2;
        let denom = (vx * vy).sqrt();
        if denom <= 0.0 {
            0.0
        } else {
            ((vxy / n2) / denom).max(0.0).sqrt()
        }
    }

    /// Permutation p-value for independence; larger dCor is more dependent.
    pub fn permutation_p<R: Rng>(&self, permutations: usize, rng: &mut R) -> f64 {
        let observed = self.dcor();
        let mut perm: Vec<usize> = (0..self.n).collect();
        let mut exceed = 0usize;
        for _ in 0..permutations {
            shuffle(&mut perm, rng);
            if self.dcor_permuted(Some(&perm)) >= observed {
                exceed += 1;
            }
        }
        (exceed + 1) as f64 / (permutations + 1) as f64
    }
}

fn centered_distances(pts: &[&[f64]], n: usize) -> Vec<f64> {
    let mut d = vec![0.0; n * n];
    for j in 0..n {
        for k in j + 1..n {
            let dist = pts[j]
                .iter()
                .zip(pts[k])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            d[j * n + k] = dist;
            d[k * n + j] = dist;
        }
    }
    let mut row_mean = vec![0.0; n];
    for j in 0..n {
        row_mean[j] = d[j * n..(j + 1) * n].iter().sum::<f64>() / n as f64;
    }
    let grand = row_mean.iter().sum::<f64>() / n as f64;
    for j in 0..n {
        for k in 0..n {
            d[j * n + k] += grand - row_mean[j] - row_mean[k];
        }
    }
    d
}

fn shuffle<R: Rng>(v: &mut [usize], rng: &mut R) {
    for i in (1..v.len()).rev() {
        let j = rng.random_range(0..=i);
        v.swap(i, j);
    }
}

/// Least-squares slope of `y` against `x`.
pub fn regression_slope(x: &[f64], y: &[f64]) -> f64 {
    let mx = mean(x);
    let my = mean(y);
    let num: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let den: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    num / den
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use approx::assert_relative_eq;

    #[test]
    fn ad_asymptotic_matches_known_quantiles() {
        // Classical upper-tail points of the asymptotic AD distribution.
        assert_relative_eq!(ad_asymptotic_cdf(2.492), 0.95, epsilon = 2e-3);
        assert_relative_eq!(ad_asymptotic_cdf(3.857), 0.99, epsilon = 2e-3);
        assert_relative_eq!(ad_asymptotic_cdf(1.933), 0.90, epsilon = 2e-3);
    }

    #[test]
    fn ad_accepts_its_own_distribution() {
        let mut rng = stream_rng(11, 0, 0);
        let data: Vec<f64> = (0..5000).map(|_| rng.random::<f64>()).collect();
        let (_, p) = anderson_darling(&data, |x| x.clamp(0.0, 1.0));
        assert!(p > 0.01, "p = {p}");
        // A shifted sample must be rejected decisively.
        let shifted: Vec<f64> = data.iter().map(|x| (x + 0.05).min(1.0)).collect();
        let (_, p_bad) = anderson_darling(&shifted, |x| x.clamp(0.0, 1.0));
        assert!(p_bad < 1e-4, "p_bad = {p_bad}");
    }

    #[test]
    fn ks_two_sample_behaves() {
        let mut rng = stream_rng(12, 0, 0);
        let a: Vec<f64> = (0..3000).map(|_| rng.random::<f64>()).collect();
        let b: Vec<f64> = (0..2500).map(|_| rng.random::<f64>()).collect();
        let (_, p) = ks_two_sample(&a, &b);
        assert!(p > 0.01, "p = {p}");
        let c: Vec<f64> = b.iter().map(|x| x * 0.9).collect();
        let (_, p_bad) = ks_two_sample(&a, &c);
        assert!(p_bad < 1e-6);
    }

    #[test]
    fn chi_square_gof_calibrates() {
        let (stat, p) = chi_square_gof(&[250, 260, 245, 245], &[0.25; 4]);
        assert!(p > 0.5, "stat {stat} p {p}");
        let (_, p_bad) = chi_square_gof(&[400, 200, 200, 200], &[0.25; 4]);
        assert!(p_bad < 1e-6);
    }

    #[test]
    fn dcor_detects_dependence_and_respects_null() {
        let mut rng = stream_rng(13, 0, 0);
        let n = 300;
        let x: Vec<[f64; 1]> = (0..n).map(|_| [rng.random::<f64>() - 0.5]).collect();
        let y_dep: Vec<[f64; 1]> = x.iter().map(|v| [v[0] * v[0]]).collect();
        let y_ind: Vec<[f64; 1]> = (0..n).map(|_| [rng.random::<f64>() - 0.5]).collect();
        let xs: Vec<&[f64]> = x.iter().map(|v| v.as_slice()).collect();
        let yd: Vec<&[f64]> = y_dep.iter().map(|v| v.as_slice()).collect();
        let yi: Vec<&[f64]> = y_ind.iter().map(|v| v.as_slice()).collect();

        let dep = DistanceCorrelation::new(&xs, &yd);
        let p_dep = dep.permutation_p(199, &mut rng);
        assert!(p_dep < 0.01, "dependent columns not detected, p = {p_dep}");

        let ind = DistanceCorrelation::new(&xs, &yi);
        let p_ind = ind.permutation_p(199, &mut rng);
        assert!(p_ind > 0.01, "independent columns rejected, p = {p_ind}");
    }

    #[test]
    fn laplace_cdf_symmetry() {
        assert_relative_eq!(laplace_cdf(0.0, 1.3), 0.5);
        assert_relative_eq!(laplace_cdf(1.0, 0.5) + laplace_cdf(-1.0, 0.5), 1.0, epsilon = 1e-14);
    }
}
