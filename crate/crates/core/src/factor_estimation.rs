//! Latent factors from a residual matrix, in the `sqrt(n) U D V^T` scaling
//! where `D = diag(sqrt(mu_k))` and `mu_k` are eigenvalues of `M^T M / n`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{ensure_finite, singular_values, truncated_svd, Matrix};
use crate::model_fit::TestDirection;

#[derive(Debug, Clone, PartialEq)]
pub struct FactorEstimate {
    pub u_hat: Matrix,
    pub mu_hat: Vec<f64>,
    pub v_hat: Matrix,
    pub r_hat: usize,
    pub n: usize,
}

impl FactorEstimate {
    /// No factors; adjusted residuals equal the input.
    pub fn empty(rows: usize, cols: usize, n: usize) -> Self {
        Self {
            u_hat: Matrix::zeros(rows, 0),
            mu_hat: Vec::new(),
            v_hat: Matrix::zeros(cols, 0),
            r_hat: 0,
            n,
        }
    }

    /// `sqrt(n) U D V^T`.
    pub fn signal(&self) -> Matrix {
        let mut scaled = self.u_hat.clone();
        for (k, mu) in self.mu_hat.iter().enumerate() {
            scaled.column_mut(k).scale_mut((self.n as f64 * mu).sqrt());
        }
        scaled * self.v_hat.transpose()
    }

    /// `(v_k^T s)^2 / (s^T s)` for each estimated factor.
    pub fn loading_projections(&self, s: &TestDirection) -> Vec<f64> {
        (0..self.r_hat)
            .map(|k| s.projection_sq(self.v_hat.column(k).as_slice()))
            .collect()
    }

    /// Same as `loading_projections` for `s = (I - H_Z) e_j`: since every
    /// `v_k` is orthogonal to `Z`, `v_k^T s = v_k[j]`.
    pub fn loading_projections_at(&self, j: usize, norm_sq: f64) -> Vec<f64> {
        (0..self.r_hat).map(|k| self.v_hat[(j, k)].powi(2) / norm_sq).collect()
    }
}

/// Generating factor structure `sqrt(n) U D V^T`.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorModelTruth {
    pub u: Matrix,
    pub mu: Vec<f64>,
    pub v: Matrix,
}

impl FactorModelTruth {
    pub fn r(&self) -> usize {
        self.mu.len()
    }

    pub fn signal(&self, n: usize) -> Matrix {
        let mut scaled = self.u.clone();
        for (k, mu) in self.mu.iter().enumerate() {
            scaled.column_mut(k).scale_mut((n as f64 * mu).sqrt());
        }
        scaled * self.v.transpose()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreeRow {
    pub component: usize,
    pub variance_pct: f64,
    pub residual_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreeTable {
    pub rows: Vec<ScreeRow>,
}

/// Leading `r_hat` factors of `m` with `mu_k = sigma_k^2 / n`, where `n` is
/// the number of rows.
pub fn extract_factors(m: &Matrix, r_hat: usize) -> Result<FactorEstimate> {
    extract_factors_scaled(m, r_hat, m.nrows())
}

/// Like `extract_factors` but with an explicit scale `n`. A residual matrix
/// with `N` rows from a fit with `p` row covariates has scale `N - p`.
pub fn extract_factors_scaled(m: &Matrix, r_hat: usize, n: usize) -> Result<FactorEstimate> {
    let limit = m.nrows().min(m.ncols());
    if r_hat == 0 || r_hat > limit {
        return Err(Error::InvalidArgument(format!(
            "number of factors {r_hat} outside 1..={limit}"
        )));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("factor scale n must be positive".into()));
    }
    ensure_finite(m)?;
    if m.iter().all(|v| *v == 0.0) {
        return Err(Error::ZeroMatrix);
    }
    let svd = truncated_svd(m, r_hat)?;
    let mu_hat = svd.singular_values.iter().map(|s| s * s / n as f64).collect();
    Ok(FactorEstimate {
        u_hat: svd.left_vectors,
        mu_hat,
        v_hat: svd.right_vectors,
        r_hat,
        n,
    })
}

/// `M - sqrt(n) U D V^T`.
pub fn adjusted_residuals(m: &Matrix, f: &FactorEstimate) -> Result<Matrix> {
    if f.u_hat.nrows() != m.nrows() || f.v_hat.nrows() != m.ncols() {
        return Err(Error::DimMismatch(format!(
            "factors fit a {}x{} matrix, got {}x{}",
            f.u_hat.nrows(),
            f.v_hat.nrows(),
            m.nrows(),
            m.ncols()
        )));
    }
    if f.r_hat == 0 {
        return Ok(m.clone());
    }
    Ok(m - f.signal())
}

/// `|M s|^2`.
pub fn rss(adjusted: &Matrix, s: &TestDirection) -> Result<f64> {
    if adjusted.ncols() != s.len() {
        return Err(Error::DimMismatch(format!(
            "matrix has {} columns, direction has length {}",
            adjusted.ncols(),
            s.len()
        )));
    }
    Ok((adjusted * s.as_vector()).norm_squared())
}

/// Right-hand side of the RSS expansion
/// `s'E'Es + 2 sqrt(n) s'V D U'E s + n (sum mu_k (v_k's)^2 - sum mu_hat_k (v_hat_k's)^2)`
/// for `Y = sqrt(n) U D V^T + E`, with factors re-estimated from `Y`.
/// Exists as an independent check on `rss`.
pub fn rss_expansion_oracle(truth: &FactorModelTruth, e: &Matrix, s: &TestDirection, r_hat: usize) -> Result<f64> {
    let n = e.nrows();
    let sv = s.as_vector();
    let es = e * &sv;
    let mut total = es.norm_squared();
    if truth.r() > 0 {
        let mut d_vts = truth.v.transpose() * &sv;
        for (k, mu) in truth.mu.iter().enumerate() {
            d_vts[k] *= mu.sqrt();
        }
        let ut_es = truth.u.transpose() * &es;
        total += 2.0 * (n as f64).sqrt() * d_vts.dot(&ut_es);
        for (k, mu) in truth.mu.iter().enumerate() {
            total += n as f64 * mu * truth.v.column(k).dot(&sv).powi(2);
        }
    }
    if r_hat > 0 {
        let y = truth.signal(n) + e;
        let est = extract_factors(&y, r_hat)?;
        for (k, mu) in est.mu_hat.iter().enumerate() {
            total -= n as f64 * mu * est.v_hat.column(k).dot(&sv).powi(2);
        }
    }
    Ok(total)
}

pub fn variance_explained(m: &Matrix) -> Result<ScreeTable> {
    let values = singular_values(m)?;
    let energy: Vec<f64> = values.iter().map(|s| s * s).collect();
    let total: f64 = energy.iter().sum();
    if total == 0.0 {
        return Err(Error::ZeroMatrix);
    }
    let mut cumulative = 0.0;
    let rows = energy
        .iter()
        .enumerate()
        .map(|(k, e)| {
            let pct = 100.0 * e / total;
            cumulative += pct;
            ScreeRow {
                component: k + 1,
                variance_pct: pct,
                residual_pct: (100.0 - cumulative).max(0.0),
            }
        })
        .collect();
    Ok(ScreeTable { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{orthonormalize_columns, symmetric_eigenvalues_desc, Vector};
    use crate::testutil::random_matrix;
    use proptest::prelude::*;

    fn unit(v: Vector) -> Vector {
        let n = v.norm();
        v / n
    }

    fn truth(n: usize, m: usize, mu: Vec<f64>, seed: u64) -> FactorModelTruth {
        let r = mu.len();
        FactorModelTruth {
            u: orthonormalize_columns(&random_matrix(n, r, seed)).unwrap(),
            v: orthonormalize_columns(&random_matrix(m, r, seed + 1)).unwrap(),
            mu,
        }
    }

    #[test]
    fn exact_rank_one() {
        let n = 6;
        let u = unit(Vector::from_fn(n, |i, _| i as f64 + 1.0));
        let v = unit(Vector::from_fn(9, |i, _| (i as f64 - 4.0).powi(2) + 0.5));
        let m = &u * v.transpose() * (n as f64 * 2.5).sqrt();
        let f = extract_factors(&m, 1).unwrap();
        assert!((f.mu_hat[0] - 2.5).abs() < 1e-12);
        assert!((f.v_hat.column(0) - &v).amax() < 1e-12);
        assert!(adjusted_residuals(&m, &f).unwrap().amax() < 1e-9);
    }

    #[test]
    fn zero_matrix_is_an_error() {
        assert_eq!(extract_factors(&Matrix::zeros(3, 4), 1), Err(Error::ZeroMatrix));
        assert_eq!(variance_explained(&Matrix::zeros(3, 4)), Err(Error::ZeroMatrix));
    }

    #[test]
    fn factor_count_checked() {
        let m = random_matrix(3, 5, 1);
        assert!(extract_factors(&m, 0).is_err());
        assert!(extract_factors(&m, 4).is_err());
    }

    #[test]
    fn mu_hat_matches_gram_eigenvalues() {
        let m = random_matrix(10, 50, 3);
        let f = extract_factors(&m, 3).unwrap();
        let eig = symmetric_eigenvalues_desc(&(m.transpose() * &m / 10.0));
        for k in 0..3 {
            assert!((f.mu_hat[k] - eig[k]).abs() < 1e-8 * eig[0]);
        }
        assert!(f.mu_hat.windows(2).all(|w| w[0] >= w[1]));
        let rebuilt = f.signal();
        let svd = truncated_svd(&m, 3).unwrap();
        assert!((rebuilt - svd.reconstruct()).amax() < 1e-8);
    }

    #[test]
    fn adjusted_residual_tail_energy() {
        let m = random_matrix(8, 20, 5);
        let f = extract_factors(&m, 2).unwrap();
        let adj = adjusted_residuals(&m, &f).unwrap();
        let sv = singular_values(&m).unwrap();
        let tail: f64 = sv[2..].iter().map(|s| s * s).sum();
        assert!((adj.norm_squared() - tail).abs() < 1e-8 * tail);
        assert!((adj.transpose() * &f.u_hat).amax() < 1e-8);
        assert!((&adj * &f.v_hat).amax() < 1e-8);
    }

    #[test]
    fn full_truncation_leaves_nothing() {
        let m = random_matrix(5, 7, 6);
        let f = extract_factors(&m, 5).unwrap();
        assert!(adjusted_residuals(&m, &f).unwrap().amax() < 1e-9);
    }

    #[test]
    fn adjusted_shape_checked() {
        let m = random_matrix(5, 7, 6);
        let f = extract_factors(&m, 1).unwrap();
        assert!(adjusted_residuals(&random_matrix(5, 6, 1), &f).is_err());
    }

    #[test]
    fn rss_basics() {
        let s = TestDirection::basis(3, 0).unwrap();
        assert_eq!(rss(&Matrix::zeros(3, 3), &s).unwrap(), 0.0);
        assert_eq!(rss(&Matrix::identity(3, 3), &s).unwrap(), 1.0);
        let m = random_matrix(4, 6, 2);
        let s = TestDirection::new(random_matrix(6, 1, 3).iter().copied().collect()).unwrap();
        let mut direct = 0.0;
        for i in 0..4 {
            let row: f64 = (0..6).map(|j| m[(i, j)] * s.s[j]).sum();
            direct += row * row;
        }
        assert!((rss(&m, &s).unwrap() - direct).abs() < 1e-10 * direct);
        assert!(rss(&m, &TestDirection::basis(5, 0).unwrap()).is_err());
    }

    #[test]
    fn expansion_without_factors_is_plain_quadratic_form() {
        let e = random_matrix(5, 7, 2);
        let t = FactorModelTruth {
            u: Matrix::zeros(5, 0),
            mu: vec![],
            v: Matrix::zeros(7, 0),
        };
        let s = TestDirection::basis(7, 1).unwrap();
        assert_eq!(rss_expansion_oracle(&t, &e, &s, 0).unwrap(), rss(&e, &s).unwrap());
    }

    #[test]
    fn expansion_noiseless_is_zero() {
        let t = truth(6, 9, vec![2.0], 4);
        let s = TestDirection::basis(9, 0).unwrap();
        let v = rss_expansion_oracle(&t, &Matrix::zeros(6, 9), &s, 1).unwrap();
        assert!(v.abs() < 1e-9, "{v}");
    }

    #[test]
    fn expansion_matches_direct_rss() {
        let t = truth(6, 9, vec![3.0], 8);
        let e = random_matrix(6, 9, 10);
        let y = t.signal(6) + &e;
        let s = TestDirection::basis(9, 2).unwrap();
        let f = extract_factors(&y, 1).unwrap();
        let direct = rss(&adjusted_residuals(&y, &f).unwrap(), &s).unwrap();
        let expansion = rss_expansion_oracle(&t, &e, &s, 1).unwrap();
        assert!((direct - expansion).abs() < 1e-8 * direct.abs().max(1.0));
    }

    #[test]
    fn scree_cases() {
        let u = unit(Vector::from_fn(4, |i, _| i as f64 + 1.0));
        let v = unit(Vector::from_fn(6, |i, _| 1.0 + i as f64 * 0.1));
        let t = variance_explained(&(&u * v.transpose())).unwrap();
        assert!((t.rows[0].variance_pct - 100.0).abs() < 1e-9);
        assert!(t.rows[0].residual_pct.abs() < 1e-9);
        assert_eq!(t.rows.len(), 4);

        let q = orthonormalize_columns(&random_matrix(5, 5, 3)).unwrap();
        for row in variance_explained(&q).unwrap().rows {
            assert!((row.variance_pct - 20.0).abs() < 1e-9);
        }

        let m = random_matrix(10, 40, 4);
        let t = variance_explained(&m).unwrap();
        let total: f64 = t.rows.iter().map(|r| r.variance_pct).sum();
        assert!((total - 100.0).abs() < 1e-8);
        let sv = singular_values(&m).unwrap();
        let energy: f64 = sv.iter().map(|s| s * s).sum();
        for (row, s) in t.rows.iter().zip(&sv) {
            assert!((row.variance_pct - 100.0 * s * s / energy).abs() < 1e-8);
        }
        assert!(t.rows.windows(2).all(|w| w[1].residual_pct <= w[0].residual_pct));
    }

    #[test]
    fn scaling_equivariance() {
        let m = random_matrix(7, 12, 9);
        let f = extract_factors(&m, 2).unwrap();
        let g = extract_factors(&(&m * 3.0), 2).unwrap();
        for k in 0..2 {
            assert!((g.mu_hat[k] - 9.0 * f.mu_hat[k]).abs() < 1e-9 * g.mu_hat[k]);
        }
        assert!((&g.v_hat - &f.v_hat).amax() < 1e-10);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn expansion_identity_holds(seed in 0u64..1_000_000, r in 0usize..3, extra in 0usize..3) {
            let (n, m) = (7, 11);
            let mu: Vec<f64> = (0..r).map(|k| 6.0 / (k as f64 + 1.0)).collect();
            let t = truth(n, m, mu, seed);
            let e = random_matrix(n, m, seed + 17);
            let s = TestDirection::new(random_matrix(m, 1, seed + 31).iter().copied().collect()).unwrap();
            let r_hat = (r + extra).min(n);
            let y = t.signal(n) + &e;
            let direct = if r_hat == 0 {
                rss(&y, &s).unwrap()
            } else {
                let f = extract_factors(&y, r_hat).unwrap();
                rss(&adjusted_residuals(&y, &f).unwrap(), &s).unwrap()
            };
            let expansion = rss_expansion_oracle(&t, &e, &s, r_hat).unwrap();
            let scale = s.norm_sq * (e.norm_squared() + y.norm_squared());
            prop_assert!((direct - expansion).abs() <= 1e-8 * direct.abs().max(1e-3 * scale));
        }
    }
}
