//! C interface to `bilinear-dof`.
//!
//! Matrices cross the boundary as row-major `double` buffers. Every call
//! returns a `BdStatus`; on failure the message is available from
//! `bd_last_error_message` on the same thread. Handles are opaque and must
//! be released with their matching `*_free` function.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::c_char;
use std::panic::{catch_unwind, AssertUnwindSafe};

use bilinear_dof::dof::{self, DofMethod, WishartSampler};
use bilinear_dof::inference::{DfAssigner, LatentFit, TestOptions};
use bilinear_dof::linalg::Matrix;
use bilinear_dof::model_fit::DatasetBundle;
use bilinear_dof::Error;

/// Result codes. Values are stable.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BdStatus {
    Ok = 0,
    DimMismatch = 1,
    NonFinite = 2,
    RankDeficient = 3,
    NotOrthonormal = 4,
    ZeroMatrix = 5,
    DfExhausted = 6,
    IndexOutOfRange = 7,
    InvalidArgument = 8,
    NotOrthogonal = 9,
    ParseError = 10,
    DuplicateId = 11,
    IdMismatch = 12,
    IoError = 13,
    NullPointer = 100,
    Panic = 101,
}

/// df method used by `bd_test_all`. `BD_METHOD_NONE` tests without factor adjustment.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BdMethod {
    Proposed = 0,
    Gollob = 1,
    Mandel = 2,
    Naive = 3,
    None = 4,
}

/// Response matrix with optional row and column covariates.
pub struct BdDataset {
    inner: DatasetBundle,
}

/// Model fitted with a fixed number of latent factors.
pub struct BdFit {
    inner: LatentFit,
}

thread_local! {
    static LAST_ERROR: RefCell<Vec<u8>> = const { RefCell::new(Vec::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| {
        let mut v = msg.into_bytes();
        v.retain(|b| *b != 0);
        *e.borrow_mut() = v;
    });
}

fn status_of(e: &Error) -> BdStatus {
    match e {
        Error::DimMismatch(_) => BdStatus::DimMismatch,
        Error::NonFinite { .. } => BdStatus::NonFinite,
        Error::RankDeficient(_) => BdStatus::RankDeficient,
        Error::NotOrthonormal(_) => BdStatus::NotOrthonormal,
        Error::ZeroMatrix => BdStatus::ZeroMatrix,
        Error::DfExhausted(_) => BdStatus::DfExhausted,
        Error::IndexOutOfRange { .. } => BdStatus::IndexOutOfRange,
        Error::InvalidArgument(_) => BdStatus::InvalidArgument,
        Error::NotOrthogonal(_) => BdStatus::NotOrthogonal,
        Error::Parse(_) => BdStatus::ParseError,
        Error::DuplicateId(_) => BdStatus::DuplicateId,
        Error::IdMismatch(_) => BdStatus::IdMismatch,
        Error::Io(_) => BdStatus::IoError,
    }
}

enum Fail {
    Core(Error),
    Null(&'static str),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Core(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> BdStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => BdStatus::Ok,
        Ok(Err(Fail::Core(e))) => {
            set_error(format!("{}: {e}", e.code()));
            status_of(&e)
        }
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("NULL_POINTER: {what} is null"));
            BdStatus::NullPointer
        }
        Err(_) => {
            set_error("PANIC: internal error".into());
            BdStatus::Panic
        }
    }
}

fn nonnull<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Fail> {
    unsafe { p.as_ref() }.ok_or(Fail::Null(what))
}

fn out<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Fail> {
    unsafe { p.as_mut() }.ok_or(Fail::Null(what))
}

fn slice<'a>(p: *const f64, len: usize, what: &'static str) -> Result<&'a [f64], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(unsafe { std::slice::from_raw_parts(p, len) })
}

fn slice_mut<'a>(p: *mut f64, len: usize, what: &'static str) -> Result<&'a mut [f64], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(unsafe { std::slice::from_raw_parts_mut(p, len) })
}

fn matrix(p: *const f64, rows: usize, cols: usize, what: &'static str) -> Result<Matrix, Fail> {
    let len = rows
        .checked_mul(cols)
        .ok_or_else(|| Fail::Core(Error::InvalidArgument(format!("{what} is too large"))))?;
    Ok(Matrix::from_row_slice(rows, cols, slice(p, len, what)?))
}

/// Copies the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len - 1` bytes) and returns the full message length.
#[no_mangle]
pub unsafe extern "C" fn bd_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr(), buf as *mut u8, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn bd_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds a dataset from an `n x m` response `y`, an optional `n x p` row
/// covariate matrix `x` and an optional `m x q` column covariate matrix `z`.
/// Pass a null pointer or zero width to omit a covariate matrix.
#[no_mangle]
pub unsafe extern "C" fn bd_dataset_new(
    y: *const f64,
    n: usize,
    m: usize,
    x: *const f64,
    p: usize,
    z: *const f64,
    q: usize,
    out_dataset: *mut *mut BdDataset,
) -> BdStatus {
    guard(|| {
        let slot = out(out_dataset, "out_dataset")?;
        *slot = std::ptr::null_mut();
        let y = matrix(y, n, m, "y")?;
        let x = if x.is_null() || p == 0 {
            None
        } else {
            Some(matrix(x, n, p, "x")?)
        };
        let z = if z.is_null() || q == 0 {
            None
        } else {
            Some(matrix(z, m, q, "z")?)
        };
        let inner = DatasetBundle::new(y, x, z)?;
        *slot = Box::into_raw(Box::new(BdDataset { inner }));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn bd_dataset_free(dataset: *mut BdDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Fits the regression part and removes `r_hat` latent factors.
#[no_mangle]
pub unsafe extern "C" fn bd_fit_new(dataset: *const BdDataset, r_hat: usize, out_fit: *mut *mut BdFit) -> BdStatus {
    guard(|| {
        let slot = out(out_fit, "out_fit")?;
        *slot = std::ptr::null_mut();
        let ds = nonnull(dataset, "dataset")?;
        let inner = LatentFit::new(&ds.inner, r_hat)?;
        *slot = Box::into_raw(Box::new(BdFit { inner }));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn bd_fit_free(fit: *mut BdFit) {
    if !fit.is_null() {
        drop(Box::from_raw(fit));
    }
}

/// Number of responses (columns of `y`).
#[no_mangle]
pub unsafe extern "C" fn bd_fit_responses(fit: *const BdFit, out_m: *mut usize) -> BdStatus {
    guard(|| {
        *out(out_m, "out_m")? = nonnull(fit, "fit")?.inner.model.n_cols();
        Ok(())
    })
}

/// Residual sum of squares of response `j` after factor adjustment.
#[no_mangle]
pub unsafe extern "C" fn bd_fit_rss(fit: *const BdFit, j: usize, out_rss: *mut f64) -> BdStatus {
    guard(|| {
        let f = &nonnull(fit, "fit")?.inner;
        let m = f.model.n_cols();
        if j >= m {
            return Err(Error::IndexOutOfRange { index: j, len: m }.into());
        }
        *out(out_rss, "out_rss")? = f.rss_at(j);
        Ok(())
    })
}

/// Writes the `r_hat` estimated factor strengths into `buf` (length `len >= r_hat`).
#[no_mangle]
pub unsafe extern "C" fn bd_fit_mu_hat(fit: *const BdFit, buf: *mut f64, len: usize) -> BdStatus {
    guard(|| {
        let f = &nonnull(fit, "fit")?.inner;
        let mu = &f.factors.mu_hat;
        if len < mu.len() {
            return Err(Error::DimMismatch(format!("buffer holds {len} values, need {}", mu.len())).into());
        }
        slice_mut(buf, mu.len(), "buf")?.copy_from_slice(mu);
        Ok(())
    })
}

/// Tests row-covariate `coef` for every response. Each output buffer must
/// hold `m` values; outputs are in response order. `mandel_reps` and `seed`
/// are used only by `BD_METHOD_MANDEL`. With `BD_METHOD_NONE` the fit must
/// have `r_hat = 0`.
#[no_mangle]
pub unsafe extern "C" fn bd_test_all(
    fit: *const BdFit,
    coef: usize,
    method: BdMethod,
    mandel_reps: usize,
    seed: u64,
    estimate: *mut f64,
    std_error: *mut f64,
    t_stat: *mut f64,
    df_resid: *mut f64,
    p_value: *mut f64,
    len: usize,
) -> BdStatus {
    guard(|| {
        let f = &nonnull(fit, "fit")?.inner;
        let m = f.model.n_cols();
        if len != m {
            return Err(Error::DimMismatch(format!("output length {len} but {m} responses")).into());
        }
        let method = match method {
            BdMethod::Proposed => DofMethod::Proposed,
            BdMethod::Gollob => DofMethod::Gollob,
            BdMethod::Mandel => DofMethod::Mandel,
            BdMethod::Naive => DofMethod::Naive,
            BdMethod::None => {
                if f.r_hat() != 0 {
                    return Err(Error::InvalidArgument("BD_METHOD_NONE needs a fit with r_hat = 0".into()).into());
                }
                DofMethod::Naive
            }
        };
        let opts = TestOptions {
            mandel_reps,
            mandel_seed: seed,
            mandel_sampler: WishartSampler::Bidiagonal,
        };
        let assigner = DfAssigner::new(method, f.n(), f.m(), f.r_hat(), &opts)?;
        let results = f.test_all(coef, &assigner, None)?;
        let est = slice_mut(estimate, m, "estimate")?;
        let se = slice_mut(std_error, m, "std_error")?;
        let t = slice_mut(t_stat, m, "t_stat")?;
        let df = slice_mut(df_resid, m, "df_resid")?;
        let p = slice_mut(p_value, m, "p_value")?;
        for (j, r) in results.iter().enumerate() {
            est[j] = r.estimate;
            se[j] = r.std_error;
            t[j] = r.t_stat;
            df[j] = r.df_resid;
            p[j] = r.p_value;
        }
        Ok(())
    })
}

/// Total df of `r_hat` factors fitted to pure noise.
#[no_mangle]
pub unsafe extern "C" fn bd_df_noise(n: usize, m: usize, r_hat: usize, out_df: *mut f64) -> BdStatus {
    guard(|| {
        *out(out_df, "out_df")? = dof::df_noise(n, m, r_hat)?.total;
        Ok(())
    })
}

/// df of one factor of strength `mu` with squared loading projection
/// `proj_sq`. `out_conjectural` (may be null) is set to 1 on or below the
/// phase transition.
#[no_mangle]
pub unsafe extern "C" fn bd_df_signal(
    n: usize,
    m: usize,
    mu: f64,
    sigma_sq: f64,
    proj_sq: f64,
    out_df: *mut f64,
    out_conjectural: *mut i32,
) -> BdStatus {
    guard(|| {
        let f = dof::df_signal_k(n, m, mu, sigma_sq, proj_sq)?;
        *out(out_df, "out_df")? = f.df;
        if let Some(c) = out_conjectural.as_mut() {
            *c = i32::from(f.conjectural);
        }
        Ok(())
    })
}

/// Data-driven df from squared projections of the estimated loadings.
#[no_mangle]
pub unsafe extern "C" fn bd_df_conservative(
    n: usize,
    m: usize,
    proj_sqs: *const f64,
    r_hat: usize,
    out_df: *mut f64,
) -> BdStatus {
    guard(|| {
        let p = slice(proj_sqs, r_hat, "proj_sqs")?;
        *out(out_df, "out_df")? = dof::df_conservative(n, m, p)?.total;
        Ok(())
    })
}

/// Parameter-counting df, spread evenly over responses.
#[no_mangle]
pub unsafe extern "C" fn bd_df_gollob(n: usize, m: usize, r_hat: usize, out_df: *mut f64) -> BdStatus {
    guard(|| {
        *out(out_df, "out_df")? = dof::df_gollob(n, m, r_hat)?.total;
        Ok(())
    })
}

/// Monte-Carlo Wishart-eigenvalue df. `out_se` (may be null) receives its
/// standard error.
#[no_mangle]
pub unsafe extern "C" fn bd_df_mandel(
    n: usize,
    m: usize,
    r_hat: usize,
    reps: usize,
    seed: u64,
    out_df: *mut f64,
    out_se: *mut f64,
) -> BdStatus {
    guard(|| {
        let est = dof::df_mandel(n, m, r_hat, reps, seed, WishartSampler::Bidiagonal)?;
        *out(out_df, "out_df")? = est.total;
        if let Some(se) = out_se.as_mut() {
            *se = est.std_error.unwrap_or(f64::NAN);
        }
        Ok(())
    })
}
