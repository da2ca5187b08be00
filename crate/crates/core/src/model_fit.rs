//! Two-sided least-squares fit of `Y = A Z^T + X B^T + U V^T + E` and the
//! reduction of a model with covariates to the covariate-free form.
//!
//! Covariates are handled through their polar factors `X = Q1 R` and
//! `Z = P1 S`, so projections cost `O(N M (p + q))` and `I - H` is never
//! formed for the long dimension.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{ensure_finite, orthonormal_complement, polar_factors, spd_inverse, Matrix, Vector};

/// Response matrix with optional row (`X`) and column (`Z`) covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetBundle {
    y: Matrix,
    x: Option<Matrix>,
    z: Option<Matrix>,
}

impl DatasetBundle {
    /// Validates shapes and finiteness. Rank is checked when the model is fit.
    pub fn new(y: Matrix, x: Option<Matrix>, z: Option<Matrix>) -> Result<Self> {
        let (rows, cols) = y.shape();
        if rows == 0 || cols == 0 {
            return Err(Error::DimMismatch("response matrix is empty".into()));
        }
        ensure_finite(&y)?;
        let x = x.filter(|x| x.ncols() > 0);
        let z = z.filter(|z| z.ncols() > 0);
        if let Some(x) = &x {
            if x.nrows() != rows {
                return Err(Error::DimMismatch(format!("X has {} rows but Y has {rows}", x.nrows())));
            }
            if x.ncols() >= rows {
                return Err(Error::DimMismatch(format!(
                    "need p < N, got p = {} and N = {rows}",
                    x.ncols()
                )));
            }
            ensure_finite(x)?;
        }
        if let Some(z) = &z {
            if z.nrows() != cols {
                return Err(Error::DimMismatch(format!(
                    "Z has {} rows but Y has {cols} columns",
                    z.nrows()
                )));
            }
            if z.ncols() >= cols {
                return Err(Error::DimMismatch(format!(
                    "need q < M, got q = {} and M = {cols}",
                    z.ncols()
                )));
            }
            ensure_finite(z)?;
        }
        Ok(Self { y, x, z })
    }

    pub fn y(&self) -> &Matrix {
        &self.y
    }

    pub fn x(&self) -> Option<&Matrix> {
        self.x.as_ref()
    }

    pub fn z(&self) -> Option<&Matrix> {
        self.z.as_ref()
    }

    /// Number of rows `N`.
    pub fn n_rows(&self) -> usize {
        self.y.nrows()
    }

    /// Number of responses `M`.
    pub fn n_cols(&self) -> usize {
        self.y.ncols()
    }

    pub fn p(&self) -> usize {
        self.x.as_ref().map_or(0, |x| x.ncols())
    }

    pub fn q(&self) -> usize {
        self.z.as_ref().map_or(0, |z| z.ncols())
    }

    /// Residual row dimension `n = N - p`.
    pub fn n(&self) -> usize {
        self.n_rows() - self.p()
    }

    /// Residual column dimension `m = M - q`.
    pub fn m(&self) -> usize {
        self.n_cols() - self.q()
    }

    pub fn with_response(&self, y: Matrix) -> Result<Self> {
        Self::new(y, self.x.clone(), self.z.clone())
    }
}

/// Least-squares coefficients.
///
/// `b_hat = Y^T X (X^T X)^{-1}`, so `H_Z B = H_Z Y^T X (X^T X)^{-1}`, and
/// `a_hat = (I - H_X) Y Z (Z^T Z)^{-1}`, so `H_X A = 0`. The interaction block
/// satisfies `Z gamma_hat^T = H_Z b_hat`; it is already contained in `b_hat`
/// and the fitted values are `a_hat Z^T + X b_hat^T`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientEstimates {
    pub a_hat: Matrix,
    pub b_hat: Matrix,
    pub gamma_hat: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualMatrix {
    pub e_hat: Matrix,
}

/// A vector orthogonal to the column covariates, with its squared norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestDirection {
    pub s: Vec<f64>,
    pub norm_sq: f64,
}

impl TestDirection {
    pub fn new(s: Vec<f64>) -> Result<Self> {
        if s.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("test direction has non-finite entries".into()));
        }
        let norm_sq: f64 = s.iter().map(|v| v * v).sum();
        if norm_sq <= 0.0 {
            return Err(Error::InvalidArgument("test direction is zero".into()));
        }
        Ok(Self { s, norm_sq })
    }

    pub fn basis(len: usize, index: usize) -> Result<Self> {
        if index >= len {
            return Err(Error::IndexOutOfRange { index, len });
        }
        let mut s = vec![0.0; len];
        s[index] = 1.0;
        Self::new(s)
    }

    pub fn len(&self) -> usize {
        self.s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s.is_empty()
    }

    pub fn as_vector(&self) -> Vector {
        Vector::from_column_slice(&self.s)
    }

    /// `(w^T s)^2 / (s^T s)`.
    pub fn projection_sq(&self, w: &[f64]) -> f64 {
        let dot: f64 = w.iter().zip(&self.s).map(|(a, b)| a * b).sum();
        dot * dot / self.norm_sq
    }
}

/// Covariate-free form `Y22 = Q2^T Y P2` of a fitted model.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedModel {
    pub q2: Matrix,
    pub p2: Matrix,
    pub y22: Matrix,
    pub n: usize,
    pub m: usize,
}

/// Everything downstream code needs from the regression part of the fit.
#[derive(Debug, Clone)]
pub struct FittedModel {
    pub coefficients: CoefficientEstimates,
    pub residuals: ResidualMatrix,
    /// Orthonormal basis of `span(X)`, `N x p`.
    pub q1: Matrix,
    /// Orthonormal basis of `span(Z)`, `M x q`.
    pub p1: Matrix,
    /// `(X^T X)^{-1}`, `p x p`.
    pub xtx_inv: Matrix,
    pub n: usize,
    pub m: usize,
}

impl FittedModel {
    pub fn n_rows(&self) -> usize {
        self.residuals.e_hat.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.residuals.e_hat.ncols()
    }

    pub fn p(&self) -> usize {
        self.q1.ncols()
    }

    pub fn q(&self) -> usize {
        self.p1.ncols()
    }

    /// `s_j = (I - H_Z) e_j` for a zero-based response index.
    pub fn test_direction(&self, j: usize) -> Result<TestDirection> {
        let len = self.n_cols();
        if j >= len {
            return Err(Error::IndexOutOfRange { index: j, len });
        }
        let mut s = vec![0.0; len];
        s[j] = 1.0;
        if self.q() > 0 {
            let row = self.p1.row(j);
            for (i, v) in s.iter_mut().enumerate() {
                *v -= self.p1.row(i).dot(&row);
            }
        }
        TestDirection::new(s)
    }

    /// Squared norm of `s_j` without forming the vector: `1 - |P1[j, :]|^2`.
    pub fn direction_norm_sq(&self, j: usize) -> f64 {
        if self.q() == 0 {
            1.0
        } else {
            1.0 - self.p1.row(j).norm_squared()
        }
    }

    /// `t^T (X^T X)^{-1} t` for the coordinate contrast `t = e_c`.
    pub fn contrast_variance(&self, coef_index: usize) -> Result<f64> {
        let p = self.p();
        if coef_index >= p {
            return Err(Error::IndexOutOfRange {
                index: coef_index,
                len: p,
            });
        }
        Ok(self.xtx_inv[(coef_index, coef_index)])
    }

    /// `[B^T s]_c`, the identifiable component of coefficient `c` along `s`.
    pub fn coefficient_along(&self, s: &TestDirection, coef_index: usize) -> Result<f64> {
        let b = &self.coefficients.b_hat;
        if coef_index >= b.ncols() {
            return Err(Error::IndexOutOfRange {
                index: coef_index,
                len: b.ncols(),
            });
        }
        if s.len() != b.nrows() {
            return Err(Error::DimMismatch(format!(
                "direction has length {} but there are {} responses",
                s.len(),
                b.nrows()
            )));
        }
        Ok(b.column(coef_index).iter().zip(&s.s).map(|(a, c)| a * c).sum())
    }
}

/// Fits the regression part and keeps the covariate bases for later use.
pub fn fit(bundle: &DatasetBundle) -> Result<FittedModel> {
    let y = bundle.y();
    let (rows, cols) = y.shape();

    let (q1, r) = match bundle.x() {
        Some(x) => polar_factors(x).map_err(|e| covariate_error(e, "X"))?,
        None => (Matrix::zeros(rows, 0), Matrix::zeros(0, 0)),
    };
    let (p1, s) = match bundle.z() {
        Some(z) => polar_factors(z).map_err(|e| covariate_error(e, "Z"))?,
        None => (Matrix::zeros(cols, 0), Matrix::zeros(0, 0)),
    };
    let r_inv = if r.nrows() > 0 { spd_inverse(&r)? } else { r.clone() };
    let s_inv = if s.nrows() > 0 { spd_inverse(&s)? } else { s.clone() };

    // Y P1 and (I - H_X) Y
    let q1t_y = q1.transpose() * y;
    let y_resid_rows = y - &q1 * &q1t_y;
    let y_p1 = y * &p1;
    let q1t_y_p1 = &q1t_y * &p1;

    let e_hat = &y_resid_rows - (&y_resid_rows * &p1) * p1.transpose();

    let b_hat = q1t_y.transpose() * &r_inv;
    let a_hat = (&y_p1 - &q1 * &q1t_y_p1) * &s_inv;
    let gamma_hat = &r_inv * &q1t_y_p1 * &s_inv;
    let xtx_inv = &r_inv * &r_inv;

    Ok(FittedModel {
        coefficients: CoefficientEstimates {
            a_hat,
            b_hat,
            gamma_hat,
        },
        residuals: ResidualMatrix { e_hat },
        q1,
        p1,
        xtx_inv,
        n: bundle.n(),
        m: bundle.m(),
    })
}

fn covariate_error(e: Error, name: &str) -> Error {
    match e {
        Error::RankDeficient(msg) => Error::RankDeficient(format!("{name}: {msg}")),
        other => other,
    }
}

pub fn fit_two_sided(bundle: &DatasetBundle) -> Result<(CoefficientEstimates, ResidualMatrix)> {
    let fitted = fit(bundle)?;
    Ok((fitted.coefficients, fitted.residuals))
}

/// `s_j = (I - H_Z) e_j` for a zero-based response index.
pub fn test_direction(bundle: &DatasetBundle, j: usize) -> Result<TestDirection> {
    let len = bundle.n_cols();
    if j >= len {
        return Err(Error::IndexOutOfRange { index: j, len });
    }
    let mut s = Vector::zeros(len);
    s[j] = 1.0;
    if let Some(z) = bundle.z() {
        let (p1, _) = polar_factors(z).map_err(|e| covariate_error(e, "Z"))?;
        s -= &p1 * p1.row(j).transpose();
    }
    TestDirection::new(s.iter().copied().collect())
}

/// Largest `|Z^T s|` entry, scaled by `|s|`.
pub fn covariate_leakage(z: &Matrix, s: &TestDirection) -> f64 {
    let v = z.transpose() * s.as_vector();
    v.amax() / s.norm_sq.sqrt()
}

/// Rotates to the covariate-free model. Forms the dense complements `Q2` and
/// `P2`, so it is meant for moderate sizes; the production path works on
/// the residual matrix directly and gives the same answers.
pub fn reduce_to_covariate_free(bundle: &DatasetBundle, s: &TestDirection) -> Result<(ReducedModel, TestDirection)> {
    if s.len() != bundle.n_cols() {
        return Err(Error::DimMismatch(format!(
            "direction has length {} but there are {} responses",
            s.len(),
            bundle.n_cols()
        )));
    }
    if let Some(z) = bundle.z() {
        let scale = z.column_iter().map(|c| c.norm()).fold(0.0, f64::max).max(1.0);
        let leak = covariate_leakage(z, s) / scale;
        if leak > 1e-8 {
            return Err(Error::NotOrthogonal(leak));
        }
    }
    let q1 = match bundle.x() {
        Some(x) => polar_factors(x).map_err(|e| covariate_error(e, "X"))?.0,
        None => Matrix::zeros(bundle.n_rows(), 0),
    };
    let p1 = match bundle.z() {
        Some(z) => polar_factors(z).map_err(|e| covariate_error(e, "Z"))?.0,
        None => Matrix::zeros(bundle.n_cols(), 0),
    };
    let q2 = orthonormal_complement(&q1)?;
    let p2 = orthonormal_complement(&p1)?;
    let y22 = q2.transpose() * bundle.y() * &p2;
    let s2 = p2.transpose() * s.as_vector();
    let reduced = ReducedModel {
        n: q2.ncols(),
        m: p2.ncols(),
        q2,
        p2,
        y22,
    };
    Ok((reduced, TestDirection::new(s2.iter().copied().collect())?))
}
