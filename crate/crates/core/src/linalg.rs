//! Dense linear-algebra kernels with fixed sign conventions.
//!
//! Every routine here is a pure function of its input. Singular vectors and
//! completed bases are sign-normalised so that the entry of largest absolute
//! value is positive (lowest index wins a tie), which makes all downstream
//! quantities reproducible bit for bit.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Relative threshold on the smallest singular value below which a matrix is
/// treated as rank deficient.
pub const RANK_TOL: f64 = 1e-10;

/// Tolerance used when checking that supplied columns are orthonormal.
pub const ORTHONORMAL_TOL: f64 = 1e-8;

/// Leading `k` terms of a singular value decomposition.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdTruncation {
    pub left_vectors: Matrix,
    pub singular_values: Vec<f64>,
    pub right_vectors: Matrix,
}

impl SvdTruncation {
    pub fn rank(&self) -> usize {
        self.singular_values.len()
    }

    /// `U diag(s) V^T`.
    pub fn reconstruct(&self) -> Matrix {
        let mut scaled = self.left_vectors.clone();
        for (k, s) in self.singular_values.iter().enumerate() {
            scaled.column_mut(k).scale_mut(*s);
        }
        scaled * self.right_vectors.transpose()
    }
}

pub fn ensure_finite(a: &Matrix) -> Result<()> {
    for col in 0..a.ncols() {
        for row in 0..a.nrows() {
            if !a[(row, col)].is_finite() {
                return Err(Error::NonFinite { row, col });
            }
        }
    }
    Ok(())
}

/// Index of the entry of largest magnitude; the lowest index wins ties.
fn dominant_index(values: impl Iterator<Item = f64>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values.enumerate() {
        let a = v.abs();
        match best {
            Some((_, b)) if a <= b => {}
            _ => best = Some((i, a)),
        }
    }
    best.map(|(i, _)| i)
}

/// Flip the sign of column `col` of `primary` (and of `partner`, when given)
/// so that the largest-magnitude entry of `primary`'s column is positive.
fn normalize_sign(primary: &mut Matrix, partner: Option<&mut Matrix>, col: usize) {
    let idx = match dominant_index(primary.column(col).iter().copied()) {
        Some(i) => i,
        None => return,
    };
    if primary[(idx, col)] < 0.0 {
        primary.column_mut(col).neg_mut();
        if let Some(p) = partner {
            p.column_mut(col).neg_mut();
        }
    }
}

/// Singular value decomposition of a tall matrix (`rows >= cols`) by
/// Householder QR followed by one-sided Jacobi on the triangular factor.
/// Returns unsorted `(U, sigma, V)` with `A = U diag(sigma) V^T`.
fn jacobi_svd(a: Matrix, want_vectors: bool) -> Result<(Matrix, Vec<f64>, Matrix)> {
    let (rows, cols) = a.shape();
    debug_assert!(rows >= cols);
    let qr = a.qr();
    let mut w = qr.r();
    let q = if want_vectors { qr.q() } else { Matrix::zeros(0, 0) };
    let mut v = Matrix::identity(cols, cols);

    const MAX_SWEEPS: usize = 80;
    // columns below this norm are rounding noise and count as zero
    let negligible = f64::EPSILON * w.norm();
    let threshold = (cols as f64).sqrt() * f64::EPSILON;
    let mut converged = cols < 2;
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for i in 0..cols {
            for j in (i + 1)..cols {
                let alpha = w.column(i).norm_squared();
                let beta = w.column(j).norm_squared();
                let gamma = w.column(i).dot(&w.column(j));
                if alpha.min(beta) <= negligible * negligible || gamma.abs() <= threshold * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let sn = c * t;
                rotate_columns(&mut w, i, j, c, sn);
                if want_vectors {
                    rotate_columns(&mut v, i, j, c, sn);
                }
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::InvalidArgument("SVD failed to converge".into()));
    }

    let sigma: Vec<f64> = (0..cols)
        .map(|k| {
            let norm = w.column(k).norm();
            if norm <= negligible {
                0.0
            } else {
                norm
            }
        })
        .collect();
    if !want_vectors {
        return Ok((Matrix::zeros(0, 0), sigma, Matrix::zeros(0, 0)));
    }
    // left vectors of the triangular factor; complete where sigma is zero
    let mut ur = Matrix::zeros(cols, cols);
    let mut missing = Vec::new();
    for k in 0..cols {
        if sigma[k] > 0.0 {
            ur.set_column(k, &(w.column(k) / sigma[k]));
        } else {
            missing.push(k);
        }
    }
    for k in missing {
        let mut best: Option<Vector> = None;
        for e in 0..cols {
            let mut x = Vector::zeros(cols);
            x[e] = 1.0;
            for _ in 0..2 {
                // unfilled columns are still zero and drop out
                for other in 0..cols {
                    let c = ur.column(other).dot(&x);
                    x.axpy(-c, &ur.column(other).into_owned(), 1.0);
                }
            }
            if best.as_ref().is_none_or(|b| x.norm() > b.norm()) {
                best = Some(x);
            }
        }
        let x = best.expect("nonempty basis");
        let norm = x.norm();
        ur.set_column(k, &(x / norm));
    }
    Ok((q * ur, sigma, v))
}

fn rotate_columns(a: &mut Matrix, i: usize, j: usize, c: f64, s: f64) {
    for r in 0..a.nrows() {
        let x = a[(r, i)];
        let y = a[(r, j)];
        a[(r, i)] = c * x - s * y;
        a[(r, j)] = s * x + c * y;
    }
}

/// Full thin SVD with descending singular values and the sign convention
/// applied to the right singular vectors.
fn thin_svd(a: &Matrix) -> Result<SvdTruncation> {
    let (rows, cols) = a.shape();
    let transpose = rows < cols;
    let work = if transpose { a.transpose() } else { a.clone() };
    let (u, values, v) = jacobi_svd(work, true)?;
    // A = U S V^T; for the transposed problem A^T = U' S V'^T, so A = V' S U'^T.
    let (left, right) = if transpose { (v, u) } else { (u, v) };

    let mut order: Vec<usize> = (0..values.len()).collect();
    // stable: equal singular values keep their original relative order
    order.sort_by(|&i, &j| values[j].partial_cmp(&values[i]).expect("NaN singular value"));

    let mut left_sorted = Matrix::zeros(rows, order.len());
    let mut right_sorted = Matrix::zeros(cols, order.len());
    let mut sorted = Vec::with_capacity(order.len());
    for (dst, &src) in order.iter().enumerate() {
        left_sorted.set_column(dst, &left.column(src));
        right_sorted.set_column(dst, &right.column(src));
        sorted.push(values[src]);
    }
    for k in 0..sorted.len() {
        normalize_sign(&mut right_sorted, Some(&mut left_sorted), k);
    }
    Ok(SvdTruncation {
        left_vectors: left_sorted,
        singular_values: sorted,
        right_vectors: right_sorted,
    })
}

/// Best rank-`k` approximation factors of `a`.
pub fn truncated_svd(a: &Matrix, k: usize) -> Result<SvdTruncation> {
    let limit = a.nrows().min(a.ncols());
    if k == 0 || k > limit {
        return Err(Error::InvalidArgument(format!(
            "truncation rank {k} outside 1..={limit}"
        )));
    }
    ensure_finite(a)?;
    let full = thin_svd(a)?;
    Ok(SvdTruncation {
        left_vectors: full.left_vectors.columns(0, k).into_owned(),
        singular_values: full.singular_values[..k].to_vec(),
        right_vectors: full.right_vectors.columns(0, k).into_owned(),
    })
}

/// All `min(rows, cols)` singular values in descending order.
pub fn singular_values(a: &Matrix) -> Result<Vec<f64>> {
    ensure_finite(a)?;
    if a.nrows() == 0 || a.ncols() == 0 {
        return Ok(Vec::new());
    }
    let work = if a.nrows() < a.ncols() {
        a.transpose()
    } else {
        a.clone()
    };
    let (_, mut values, _) = jacobi_svd(work, false)?;
    values.sort_by(|a, b| b.partial_cmp(a).expect("NaN singular value"));
    Ok(values)
}

/// Polar decomposition `X = Q R` computed from the SVD `X = U S V^T`:
/// `Q = U V^T` has orthonormal columns and `R = V S V^T` is symmetric
/// positive definite.
pub fn polar_factors(x: &Matrix) -> Result<(Matrix, Matrix)> {
    let (rows, cols) = x.shape();
    if cols == 0 {
        return Ok((Matrix::zeros(rows, 0), Matrix::zeros(0, 0)));
    }
    if cols > rows {
        return Err(Error::RankDeficient(format!(
            "{rows}x{cols} matrix cannot have full column rank"
        )));
    }
    ensure_finite(x)?;
    let svd = thin_svd(x)?;
    check_rank(&svd.singular_values)?;
    let u = &svd.left_vectors;
    let v = &svd.right_vectors;
    let q = u * v.transpose();
    let mut vs = v.clone();
    for (k, s) in svd.singular_values.iter().enumerate() {
        vs.column_mut(k).scale_mut(*s);
    }
    let mut r = &vs * v.transpose();
    symmetrize(&mut r);
    Ok((q, r))
}

fn check_rank(values: &[f64]) -> Result<()> {
    let largest = values.first().copied().unwrap_or(0.0);
    let smallest = values.last().copied().unwrap_or(0.0);
    if largest == 0.0 || smallest <= RANK_TOL * largest {
        return Err(Error::RankDeficient(format!(
            "smallest singular value {smallest:.3e} vs largest {largest:.3e}"
        )));
    }
    Ok(())
}

fn symmetrize(a: &mut Matrix) {
    let n = a.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = avg;
            a[(j, i)] = avg;
        }
    }
}

/// Largest absolute entry of `Q^T Q - I`.
pub fn orthonormality_error(q: &Matrix) -> f64 {
    let gram = q.transpose() * q;
    let mut worst = 0.0_f64;
    for i in 0..gram.nrows() {
        for j in 0..gram.ncols() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((gram[(i, j)] - target).abs());
        }
    }
    worst
}

/// Complete the orthonormal columns of `q1` to an orthogonal matrix
/// `[q1 q2]` and return `q2`.
///
/// Identity columns are projected against the current basis (twice); at each
/// step the column with the largest remaining residual is taken, lowest index
/// first on ties, and the new vector is sign-normalised.
pub fn orthonormal_complement(q1: &Matrix) -> Result<Matrix> {
    let (n, k) = q1.shape();
    if k > n {
        return Err(Error::DimMismatch(format!("{k} columns in dimension {n}")));
    }
    ensure_finite(q1)?;
    let err = orthonormality_error(q1);
    if err > ORTHONORMAL_TOL {
        return Err(Error::NotOrthonormal(err));
    }

    let needed = n - k;
    let mut basis: Vec<Vector> = (0..k).map(|j| q1.column(j).into_owned()).collect();
    // squared norm of the residual of e_i against the current basis
    let mut residual: Vec<f64> = (0..n)
        .map(|i| 1.0 - q1.row(i).iter().map(|v| v * v).sum::<f64>())
        .collect();
    let mut out = Matrix::zeros(n, needed);

    for col in 0..needed {
        let mut pick = 0;
        for i in 1..n {
            if residual[i] > residual[pick] {
                pick = i;
            }
        }
        let mut v = Vector::zeros(n);
        v[pick] = 1.0;
        for _ in 0..2 {
            for b in &basis {
                let c = b.dot(&v);
                v.axpy(-c, b, 1.0);
            }
        }
        let norm = v.norm();
        if norm < 1e-8 {
            return Err(Error::RankDeficient("basis completion stalled".into()));
        }
        v /= norm;
        if let Some(idx) = dominant_index(v.iter().copied()) {
            if v[idx] < 0.0 {
                v.neg_mut();
            }
        }
        for i in 0..n {
            residual[i] -= v[i] * v[i];
        }
        residual[pick] = f64::NEG_INFINITY;
        out.set_column(col, &v);
        basis.push(v);
    }
    Ok(out)
}

/// Orthogonal projector `X (X^T X)^{-1} X^T` onto the column space of `x`.
pub fn hat_matrix(x: &Matrix) -> Result<Matrix> {
    let (q, _) = polar_factors(x)?;
    let mut h = &q * q.transpose();
    symmetrize(&mut h);
    Ok(h)
}

/// Inverse of a symmetric positive-definite matrix via its eigendecomposition.
pub fn spd_inverse(a: &Matrix) -> Result<Matrix> {
    if a.nrows() == 0 {
        return Ok(Matrix::zeros(0, 0));
    }
    let eig = SymmetricEigen::new(a.clone());
    let max = eig.eigenvalues.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let mut scaled = eig.eigenvectors.clone();
    for (k, lambda) in eig.eigenvalues.iter().enumerate() {
        if *lambda <= RANK_TOL * max {
            return Err(Error::RankDeficient("matrix is not positive definite".into()));
        }
        scaled.column_mut(k).scale_mut(1.0 / lambda);
    }
    let mut inv = scaled * eig.eigenvectors.transpose();
    symmetrize(&mut inv);
    Ok(inv)
}

/// Eigendecomposition of a symmetric matrix with eigenvalues in descending
/// order and sign-normalised eigenvectors.
pub fn symmetric_eigen_desc(a: &Matrix) -> (Vec<f64>, Matrix) {
    let eig = SymmetricEigen::new(a.clone());
    let n = a.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        eig.eigenvalues[j]
            .partial_cmp(&eig.eigenvalues[i])
            .expect("NaN eigenvalue")
    });
    let mut vectors = Matrix::zeros(n, n);
    let mut values = Vec::with_capacity(n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
        values.push(eig.eigenvalues[src]);
        normalize_sign(&mut vectors, None, dst);
    }
    (values, vectors)
}

/// Eigenvalues of a symmetric matrix in descending order.
pub fn symmetric_eigenvalues_desc(a: &Matrix) -> Vec<f64> {
    let mut values: Vec<f64> = a.clone().symmetric_eigenvalues().iter().copied().collect();
    values.sort_by(|a, b| b.partial_cmp(a).expect("NaN eigenvalue"));
    values
}

/// Orthonormalise the columns of a tall matrix by Householder QR, with the
/// signs chosen so that `R` has a positive diagonal. Applied to a Gaussian
/// matrix this yields a Haar-distributed frame.
pub fn orthonormalize_columns(a: &Matrix) -> Result<Matrix> {
    let (rows, cols) = a.shape();
    if cols > rows {
        return Err(Error::DimMismatch(format!("{rows}x{cols} frame")));
    }
    if cols == 0 {
        return Ok(Matrix::zeros(rows, 0));
    }
    let qr = a.clone().qr();
    let r = qr.r();
    let mut q = qr.q();
    for k in 0..cols {
        if r[(k, k)] == 0.0 {
            return Err(Error::RankDeficient("zero pivot in QR".into()));
        }
        if r[(k, k)] < 0.0 {
            q.column_mut(k).neg_mut();
        }
    }
    Ok(q)
}
