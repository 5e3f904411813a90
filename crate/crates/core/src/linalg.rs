//! Dense linear algebra for small systems (chain testbeds, extrapolation fits).

use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("matrix is singular to working precision (pivot {pivot:e} at column {col})")]
    Singular { col: usize, pivot: f64 },
}

/// Solve `A x = b` by LU with partial pivoting, overwriting nothing.
pub fn solve<S: Scalar>(a: &[Vec<S>], b: &[S]) -> Result<Vec<S>, LinalgError> {
    let n = a.len();
    assert!(a.iter().all(|r| r.len() == n) && b.len() == n);
    let mut m: Vec<Vec<S>> = a.to_vec();
    let mut x: Vec<S> = b.to_vec();

    for col in 0..n {
        let (piv_row, piv) = (col..n)
            .map(|r| (r, m[r][col].abs()))
            .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
            .unwrap();
        if piv < S::of(1e-300) {
            return Err(LinalgError::Singular { col, pivot: piv.f64() });
        }
        m.swap(col, piv_row);
        x.swap(col, piv_row);
        for row in col + 1..n {
            let factor = m[row][col] / m[col][col];
            if factor == S::zero() {
                continue;
            }
            for k in col..n {
                let v = m[col][k];
                m[row][k] = m[row][k] - factor * v;
            }
            let v = x[col];
            x[row] = x[row] - factor * v;
        }
    }
    for col in (0..n).rev() {
        let mut acc = x[col];
        for k in col + 1..n {
            acc = acc - m[col][k] * x[k];
        }
        x[col] = acc / m[col][col];
    }
    Ok(x)
}

/// Stationary distribution of a row-stochastic matrix: solves
/// `lambda P = lambda` with the normalization `sum lambda = 1`.
pub fn stationary_distribution<S: Scalar>(p: &[Vec<S>]) -> Result<Vec<S>, LinalgError> {
    let n = p.len();
    // (P^T - I) lambda = 0 with the last balance equation replaced by the
    // normalization row.
    let mut a = vec![vec![S::zero(); n]; n];
    for i in 0..n - 1 {
        for j in 0..n {
            a[i][j] = p[j][i] - if i == j { S::one() } else { S::zero() };
        }
    }
    for j in 0..n {
        a[n - 1][j] = S::one();
    }
    let mut b = vec![S::zero(); n];
    b[n - 1] = S::one();
    solve(&a, &b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn solves_small_system() {
        let a = vec![vec![2.0f64, 1.0], vec![1.0, 3.0]];
        let x = solve(&a, &[3.0, 5.0]).unwrap();
        assert_relative_eq!(x[0], 0.8, epsilon = 1e-12);
        assert_relative_eq!(x[1], 1.4, epsilon = 1e-12);
    }

    #[test]
    fn stationary_two_state() {
        // Balance by hand: l1 * 0.1 = l2 * 0.2 => l = (2/3, 1/3).
        let p = vec![vec![0.9f64, 0.1], vec![0.2, 0.8]];
        let l = stationary_distribution(&p).unwrap();
        assert_relative_eq!(l[0], 2.0 / 3.0, epsilon = 1e-12);
        assert_relative_eq!(l[1], 1.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn rejects_singular() {
        let a = vec![vec![1.0f64, 2.0], vec![2.0, 4.0]];
        assert!(solve(&a, &[1.0, 2.0]).is_err());
    }
}
