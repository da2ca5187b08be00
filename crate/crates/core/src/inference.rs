//! Per-response tests of a coefficient component `[B^T s_j]_c` after
//! adjusting for `r_hat` estimated latent factors.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distributions::t_two_sided_p;
use crate::dof::{
    df_conservative, df_gollob, df_mandel, df_naive, df_noise, DofEstimate, DofMethod, WishartSampler,
    MANDEL_DEFAULT_REPS,
};
use crate::error::{Error, Result};
use crate::factor_estimation::{adjusted_residuals, extract_factors_scaled, FactorEstimate};
use crate::linalg::Matrix;
use crate::model_fit::{fit, DatasetBundle, FittedModel, TestDirection};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceEstimate {
    pub sigma_sq_hat: f64,
    pub rss: f64,
    pub df_used: f64,
    /// `n - df_used`.
    pub df_resid: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub response_id: String,
    pub estimate: f64,
    pub std_error: f64,
    pub t_stat: f64,
    pub df_resid: f64,
    pub p_value: f64,
    /// `None` when no factors were adjusted for.
    pub df_method: Option<DofMethod>,
}

impl TestResult {
    pub fn method_name(&self) -> &'static str {
        self.df_method.map_or("none", |m| m.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestOptions {
    pub mandel_reps: usize,
    pub mandel_seed: u64,
    pub mandel_sampler: WishartSampler,
}

impl Default for TestOptions {
    fn default() -> Self {
        Self {
            mandel_reps: MANDEL_DEFAULT_REPS,
            mandel_seed: 0,
            mandel_sampler: WishartSampler::Bidiagonal,
        }
    }
}

/// `sigma_hat^2(s) = RSS(s) / (n - df)`.
pub fn variance_estimate(rss: f64, n: usize, dof: &DofEstimate) -> Result<VarianceEstimate> {
    if !(rss >= 0.0) {
        return Err(Error::InvalidArgument(format!("RSS must be nonnegative, got {rss}")));
    }
    let df_resid = n as f64 - dof.total;
    if !(df_resid > 0.0) {
        return Err(Error::DfExhausted(df_resid));
    }
    Ok(VarianceEstimate {
        sigma_sq_hat: rss / df_resid,
        rss,
        df_used: dof.total,
        df_resid,
    })
}

/// `t = coef / sqrt(sigma_hat^2 * t^T (X^T X)^{-1} t)`, returned with its df.
pub fn t_statistic(coef: f64, contrast_var: f64, var: &VarianceEstimate) -> Result<(f64, f64)> {
    if !(contrast_var > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "contrast variance must be positive, got {contrast_var}"
        )));
    }
    let se = (var.sigma_sq_hat * contrast_var).sqrt();
    let t = if coef == 0.0 { 0.0 } else { coef / se };
    Ok((t, var.df_resid))
}

/// Assigns df to directions for one method, caching whatever does not
/// depend on the direction (Mandel's Monte Carlo in particular).
#[derive(Debug, Clone)]
pub struct DfAssigner {
    method: DofMethod,
    n: usize,
    m: usize,
    r_hat: usize,
    fixed: Option<DofEstimate>,
}

impl DfAssigner {
    pub fn new(method: DofMethod, n: usize, m: usize, r_hat: usize, opts: &TestOptions) -> Result<Self> {
        let fixed = if r_hat == 0 {
            Some(df_naive(0))
        } else {
            match method {
                DofMethod::Proposed => None,
                DofMethod::Gollob => Some(df_gollob(n, m, r_hat)?),
                DofMethod::Mandel => Some(df_mandel(
                    n,
                    m,
                    r_hat,
                    opts.mandel_reps,
                    opts.mandel_seed,
                    opts.mandel_sampler,
                )?),
                DofMethod::Naive => Some(df_naive(r_hat)),
                DofMethod::TheoreticalNoise => Some(df_noise(n, m, r_hat)?),
                DofMethod::TheoreticalSignal => {
                    return Err(Error::InvalidArgument(
                        "the theoretical signal df needs the true factors and is not available for data".into(),
                    ))
                }
            }
        };
        Ok(Self {
            method,
            n,
            m,
            r_hat,
            fixed,
        })
    }

    pub fn method(&self) -> DofMethod {
        self.method
    }

    pub fn r_hat(&self) -> usize {
        self.r_hat
    }

    /// df for a direction with squared loading projections `vhat_proj_sqs`.
    pub fn assign(&self, vhat_proj_sqs: &[f64]) -> Result<DofEstimate> {
        match &self.fixed {
            Some(d) => Ok(d.clone()),
            None => df_conservative(self.n, self.m, vhat_proj_sqs),
        }
    }
}

/// Regression fit plus `r_hat` factors extracted from its residuals.
#[derive(Debug, Clone)]
pub struct LatentFit {
    pub model: FittedModel,
    pub factors: FactorEstimate,
    /// `E_hat - sqrt(n) U_hat D_hat V_hat^T`.
    pub adjusted: Matrix,
}

impl LatentFit {
    pub fn new(bundle: &DatasetBundle, r_hat: usize) -> Result<Self> {
        let model = fit(bundle)?;
        Self::from_model(model, r_hat)
    }

    pub fn from_model(model: FittedModel, r_hat: usize) -> Result<Self> {
        let e = &model.residuals.e_hat;
        let limit = model.n.min(model.m);
        if r_hat > limit {
            return Err(Error::InvalidArgument(format!(
                "r_hat = {r_hat} exceeds min(N - p, M - q) = {limit}"
            )));
        }
        let factors = if r_hat == 0 {
            FactorEstimate::empty(e.nrows(), e.ncols(), model.n)
        } else {
            extract_factors_scaled(e, r_hat, model.n)?
        };
        let adjusted = adjusted_residuals(e, &factors)?;
        Ok(Self {
            model,
            factors,
            adjusted,
        })
    }

    pub fn r_hat(&self) -> usize {
        self.factors.r_hat
    }

    pub fn n(&self) -> usize {
        self.model.n
    }

    pub fn m(&self) -> usize {
        self.model.m
    }

    /// `RSS(s_j) = |E_1 s_j|^2`, which is the squared norm of column `j`
    /// because `E_1 Z = 0`.
    pub fn rss_at(&self, j: usize) -> f64 {
        self.adjusted.column(j).norm_squared()
    }

    /// RSS along an arbitrary direction.
    pub fn rss_along(&self, s: &TestDirection) -> Result<f64> {
        crate::factor_estimation::rss(&self.adjusted, s)
    }

    /// Test of `[B^T s]_c` along an arbitrary direction orthogonal to `Z`.
    pub fn test_direction(
        &self,
        s: &TestDirection,
        coef_index: usize,
        assigner: &DfAssigner,
        response_id: &str,
    ) -> Result<TestResult> {
        let estimate = self.model.coefficient_along(s, coef_index)?;
        let rss = self.rss_along(s)?;
        let proj = self.factors.loading_projections(s);
        self.finish(estimate, rss, &proj, coef_index, assigner, response_id)
    }

    /// Test of `[B^T s_j]_c` for `s_j = (I - H_Z) e_j`, without forming `s_j`.
    pub fn test_response(
        &self,
        j: usize,
        coef_index: usize,
        assigner: &DfAssigner,
        response_id: &str,
    ) -> Result<TestResult> {
        let len = self.model.n_cols();
        if j >= len {
            return Err(Error::IndexOutOfRange { index: j, len });
        }
        let b = &self.model.coefficients.b_hat;
        if coef_index >= b.ncols() {
            return Err(Error::IndexOutOfRange {
                index: coef_index,
                len: b.ncols(),
            });
        }
        // B^T s_j = B^T e_j - B^T P1 P1^T e_j
        let mut estimate = b[(j, coef_index)];
        if self.model.q() > 0 {
            let p1 = &self.model.p1;
            let row = p1.row(j);
            let col = b.column(coef_index);
            estimate -= (0..len).map(|i| col[i] * p1.row(i).dot(&row)).sum::<f64>();
        }
        let norm_sq = self.model.direction_norm_sq(j);
        let proj = self.factors.loading_projections_at(j, norm_sq);
        self.finish(estimate, self.rss_at(j), &proj, coef_index, assigner, response_id)
    }

    fn finish(
        &self,
        estimate: f64,
        rss: f64,
        proj: &[f64],
        coef_index: usize,
        assigner: &DfAssigner,
        response_id: &str,
    ) -> Result<TestResult> {
        if assigner.r_hat() != self.r_hat() {
            return Err(Error::InvalidArgument(format!(
                "df assigner built for {} factors, fit has {}",
                assigner.r_hat(),
                self.r_hat()
            )));
        }
        let dof = assigner.assign(proj)?;
        let var = variance_estimate(rss, self.n(), &dof)?;
        let contrast = self.model.contrast_variance(coef_index)?;
        let (t, df) = t_statistic(estimate, contrast, &var)?;
        Ok(TestResult {
            response_id: response_id.to_string(),
            estimate,
            std_error: (var.sigma_sq_hat * contrast).sqrt(),
            t_stat: t,
            df_resid: df,
            p_value: t_two_sided_p(t, df),
            df_method: (self.r_hat() > 0).then_some(assigner.method()),
        })
    }

    /// Tests every response, in index order. Ids default to the index.
    pub fn test_all(
        &self,
        coef_index: usize,
        assigner: &DfAssigner,
        ids: Option<&[String]>,
    ) -> Result<Vec<TestResult>> {
        let m = self.model.n_cols();
        if let Some(ids) = ids {
            if ids.len() != m {
                return Err(Error::DimMismatch(format!("{} ids for {m} responses", ids.len())));
            }
        }
        // B^T P1 is shared by all responses
        let correction = if self.model.q() > 0 {
            let b = self.model.coefficients.b_hat.column(coef_index).into_owned();
            Some(self.model.p1.transpose() * b)
        } else {
            None
        };
        if coef_index >= self.model.coefficients.b_hat.ncols() {
            return Err(Error::IndexOutOfRange {
                index: coef_index,
                len: self.model.coefficients.b_hat.ncols(),
            });
        }
        (0..m)
            .into_par_iter()
            .map(|j| {
                let id = ids.map_or_else(|| j.to_string(), |ids| ids[j].clone());
                let mut estimate = self.model.coefficients.b_hat[(j, coef_index)];
                if let Some(c) = &correction {
                    estimate -= self.model.p1.row(j).transpose().dot(c);
                }
                let norm_sq = self.model.direction_norm_sq(j);
                let proj = self.factors.loading_projections_at(j, norm_sq);
                self.finish(estimate, self.rss_at(j), &proj, coef_index, assigner, &id)
            })
            .collect()
    }
}

/// Full pipeline for one response: fit, extract factors, assign df, test.
/// `method = None` or `r_hat = 0` gives the classical regression t test.
pub fn test_response(
    bundle: &DatasetBundle,
    j: usize,
    coef_index: usize,
    r_hat: usize,
    method: DofMethod,
    opts: &TestOptions,
) -> Result<TestResult> {
    let fit = LatentFit::new(bundle, r_hat)?;
    let assigner = DfAssigner::new(method, fit.n(), fit.m(), r_hat, opts)?;
    fit.test_response(j, coef_index, &assigner, &j.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::t_cdf;
    use crate::testutil::random_matrix;

    fn bundle(n: usize, m: usize, seed: u64) -> DatasetBundle {
        let mut x = random_matrix(n, 3, seed + 1);
        for i in 0..n {
            x[(i, 0)] = 1.0;
        }
        let z = Matrix::from_fn(m, 2, |i, c| if c == 0 || i % 3 == 0 { 1.0 } else { -1.0 });
        DatasetBundle::new(random_matrix(n, m, seed), Some(x), Some(z)).unwrap()
    }

    #[test]
    fn variance_estimate_cases() {
        let v = variance_estimate(34.0, 36, &df_naive(2)).unwrap();
        assert!((v.sigma_sq_hat - 1.0).abs() < 1e-15);
        assert!(matches!(
            variance_estimate(34.0, 2, &df_naive(2)),
            Err(Error::DfExhausted(_))
        ));
        assert!(matches!(
            variance_estimate(34.0, 2, &df_naive(3)),
            Err(Error::DfExhausted(_))
        ));
    }

    #[test]
    fn t_statistic_cases() {
        let v = variance_estimate(36.0, 36, &df_naive(0)).unwrap();
        let (t, df) = t_statistic(0.0, 0.5, &v).unwrap();
        assert_eq!(t, 0.0);
        assert_eq!(df, 36.0);
        assert_eq!(t_two_sided_p(t, df), 1.0);
        assert!(t_statistic(1.0, 0.0, &v).is_err());
    }

    #[test]
    fn no_factor_test_matches_classical_regression() {
        let b = bundle(39, 30, 5);
        let fit = LatentFit::new(&b, 0).unwrap();
        let assigner = DfAssigner::new(DofMethod::Proposed, fit.n(), fit.m(), 0, &TestOptions::default()).unwrap();
        let x = b.x().unwrap();
        let z = b.z().unwrap();
        let hz = z * (z.transpose() * z).try_inverse().unwrap() * z.transpose();
        let xtx_inv = (x.transpose() * x).try_inverse().unwrap();
        for j in [0usize, 7, 29] {
            let r = fit.test_response(j, 2, &assigner, "g").unwrap();
            // oracle: ordinary least squares of y_s = Y s on X
            let mut s = nalgebra::DVector::zeros(30);
            s[j] = 1.0;
            let s = &s - &hz * &s;
            let ys = b.y() * &s;
            let beta = &xtx_inv * x.transpose() * &ys;
            let resid = &ys - x * &beta;
            let sigma2 = resid.norm_squared() / 36.0;
            let se = (sigma2 * xtx_inv[(2, 2)]).sqrt();
            assert!((r.estimate - beta[2]).abs() < 1e-9);
            assert!((r.std_error - se).abs() < 1e-9);
            assert!((r.t_stat - beta[2] / se).abs() < 1e-9);
            assert_eq!(r.df_resid, 36.0);
            let p = 2.0 * (1.0 - t_cdf((beta[2] / se).abs(), 36.0));
            assert!((r.p_value - p).abs() < 1e-9);
            assert_eq!(r.df_method, None);
        }
    }

    #[test]
    fn fast_path_matches_explicit_direction() {
        let b = bundle(20, 25, 9);
        let fit = LatentFit::new(&b, 2).unwrap();
        for method in DofMethod::DATA {
            let opts = TestOptions {
                mandel_reps: 200,
                ..Default::default()
            };
            let a = DfAssigner::new(method, fit.n(), fit.m(), 2, &opts).unwrap();
            for j in 0..25 {
                let s = fit.model.test_direction(j).unwrap();
                let slow = fit.test_direction(&s, 1, &a, "x").unwrap();
                let fast = fit.test_response(j, 1, &a, "x").unwrap();
                assert!((slow.estimate - fast.estimate).abs() < 1e-10);
                assert!((slow.std_error - fast.std_error).abs() < 1e-10);
                assert!((slow.p_value - fast.p_value).abs() < 1e-10);
                assert!((slow.df_resid - fast.df_resid).abs() < 1e-10);
            }
            let all = fit.test_all(1, &a, None).unwrap();
            for (j, r) in all.iter().enumerate() {
                assert_eq!(*r, fit.test_response(j, 1, &a, &j.to_string()).unwrap());
            }
        }
    }

    #[test]
    fn scale_equivariance() {
        let b = bundle(15, 12, 3);
        let scaled = b.with_response(b.y() * 4.0).unwrap();
        let opts = TestOptions::default();
        for j in 0..12 {
            let r1 = test_response(&b, j, 1, 1, DofMethod::Proposed, &opts).unwrap();
            let r2 = test_response(&scaled, j, 1, 1, DofMethod::Proposed, &opts).unwrap();
            assert!((r2.estimate - 4.0 * r1.estimate).abs() < 1e-10 * r2.estimate.abs().max(1.0));
            assert!((r2.std_error - 4.0 * r1.std_error).abs() < 1e-10 * r2.std_error.max(1.0));
            assert!((r2.t_stat - r1.t_stat).abs() < 1e-10);
            assert!((r2.df_resid - r1.df_resid).abs() < 1e-10);
            assert!((r2.p_value - r1.p_value).abs() < 1e-10);
        }
    }

    #[test]
    fn direction_scale_leaves_t_unchanged() {
        let b = bundle(15, 12, 4);
        let fit = LatentFit::new(&b, 1).unwrap();
        let a = DfAssigner::new(DofMethod::Proposed, fit.n(), fit.m(), 1, &TestOptions::default()).unwrap();
        let s = fit.model.test_direction(3).unwrap();
        let cs = TestDirection::new(s.s.iter().map(|v| 2.5 * v).collect()).unwrap();
        let r1 = fit.test_direction(&s, 2, &a, "a").unwrap();
        let r2 = fit.test_direction(&cs, 2, &a, "a").unwrap();
        assert!((r2.t_stat - r1.t_stat).abs() < 1e-10);
        assert!((r2.df_resid - r1.df_resid).abs() < 1e-10);
        assert!((r2.p_value - r1.p_value).abs() < 1e-10);
        assert!((r2.estimate - 2.5 * r1.estimate).abs() < 1e-10);
    }

    #[test]
    fn naive_keeps_more_residual_df_than_proposed() {
        let b = bundle(20, 40, 6);
        let fit = LatentFit::new(&b, 2).unwrap();
        let opts = TestOptions::default();
        let naive = DfAssigner::new(DofMethod::Naive, fit.n(), fit.m(), 2, &opts).unwrap();
        let prop = DfAssigner::new(DofMethod::Proposed, fit.n(), fit.m(), 2, &opts).unwrap();
        let a = fit.test_all(1, &naive, None).unwrap();
        let p = fit.test_all(1, &prop, None).unwrap();
        for (x, y) in a.iter().zip(&p) {
            assert!(x.df_resid >= y.df_resid);
        }
    }

    #[test]
    fn theoretical_signal_rejected_for_data() {
        assert!(DfAssigner::new(DofMethod::TheoreticalSignal, 10, 10, 1, &TestOptions::default()).is_err());
    }

    #[test]
    fn exhausted_df_is_an_error() {
        // n = 3 and proposed df for 2 factors is at least 2 (1 + sqrt(3/m))^2 > 3
        let y = random_matrix(4, 6, 1);
        let x = Matrix::from_element(4, 1, 1.0);
        let b = DatasetBundle::new(y, Some(x), None).unwrap();
        let r = test_response(&b, 0, 0, 2, DofMethod::Proposed, &TestOptions::default());
        assert!(matches!(r, Err(Error::DfExhausted(_))));
    }

    #[test]
    fn index_errors() {
        let b = bundle(10, 8, 2);
        let opts = TestOptions::default();
        assert!(matches!(
            test_response(&b, 8, 0, 1, DofMethod::Proposed, &opts),
            Err(Error::IndexOutOfRange { .. })
        ));
        assert!(matches!(
            test_response(&b, 0, 3, 1, DofMethod::Proposed, &opts),
            Err(Error::IndexOutOfRange { .. })
        ));
    }
}
