//! Parametric bootstrap of the per-response testing pipeline: build a
//! generative truth from a fit, resimulate, refit, and score each df method.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distributions::{mix_seed, normal, SeededGenerator};
use crate::dof::DofMethod;
use crate::error::{Error, Result};
use crate::inference::{DfAssigner, LatentFit, TestOptions};
use crate::linalg::{Matrix, Vector};
use crate::model_fit::DatasetBundle;
use crate::simulation::MeanSe;

/// A method under evaluation; `None` fits no factors at all.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Adjustment {
    None,
    Method(DofMethod),
}

impl Adjustment {
    pub fn name(&self) -> &'static str {
        match self {
            Adjustment::None => "none",
            Adjustment::Method(m) => m.name(),
        }
    }

    /// The four data methods followed by the unadjusted baseline.
    pub fn standard() -> Vec<Adjustment> {
        DofMethod::DATA
            .iter()
            .map(|m| Adjustment::Method(*m))
            .chain(std::iter::once(Adjustment::None))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub k_factors: usize,
    pub alpha: f64,
    pub n_datasets: usize,
    pub seed: u64,
    pub methods: Vec<Adjustment>,
    /// Column of `X` whose identifiable component is tested.
    pub coef_index: usize,
    pub test_options: TestOptions,
}

impl BootstrapConfig {
    pub fn new(k_factors: usize, alpha: f64, n_datasets: usize, seed: u64, coef_index: usize) -> Self {
        Self {
            k_factors,
            alpha,
            n_datasets,
            seed,
            methods: Adjustment::standard(),
            coef_index,
            test_options: TestOptions {
                mandel_seed: mix_seed(seed, 0x6d61_6e64),
                ..Default::default()
            },
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        if self.n_datasets < 10 {
            return Err(Error::InvalidArgument(format!(
                "need at least 10 bootstrap datasets, got {}",
                self.n_datasets
            )));
        }
        if self.methods.is_empty() {
            return Err(Error::InvalidArgument("no methods to evaluate".into()));
        }
        if self.k_factors == 0 && self.methods.iter().any(|m| matches!(m, Adjustment::Method(_))) {
            return Err(Error::InvalidArgument("adjusting methods need k_factors > 0".into()));
        }
        Ok(())
    }
}

/// Fixed mean surface and noise levels used to resimulate datasets.
#[derive(Debug, Clone)]
pub struct GenerativeTruth {
    pub x: Matrix,
    pub z: Option<Matrix>,
    /// Regression part `X B*^T + A Z^T`.
    pub fixed_effects: Matrix,
    /// `sqrt(n) U_hat D_hat V_hat^T`.
    pub factor_term: Matrix,
    pub noise_variances: Vec<f64>,
    /// `[B*^T s_j]_c` for every response.
    pub tested_effects: Vec<f64>,
    /// Responses with a nonzero tested effect, ascending.
    pub nonzero: Vec<usize>,
    pub coef_index: usize,
}

impl GenerativeTruth {
    pub fn mean(&self) -> Matrix {
        &self.fixed_effects + &self.factor_term
    }
}

/// Fits `k_factors` factors, tests every response with the proposed df,
/// and keeps the identifiable tested effects only where `p < alpha`.
///
/// The kept effects are adjusted within the kept set so that `Z^T b = 0`;
/// this makes every other response's identifiable effect exactly zero.
pub fn build_generative_truth(
    data: &DatasetBundle,
    k_factors: usize,
    alpha: f64,
    coef_index: usize,
    opts: &TestOptions,
) -> Result<GenerativeTruth> {
    let x = data
        .x()
        .cloned()
        .ok_or_else(|| Error::InvalidArgument("the bootstrap needs row covariates".into()))?;
    if coef_index >= x.ncols() {
        return Err(Error::IndexOutOfRange {
            index: coef_index,
            len: x.ncols(),
        });
    }
    let fit = LatentFit::new(data, k_factors)?;
    let assigner = DfAssigner::new(DofMethod::Proposed, fit.n(), fit.m(), k_factors, opts)?;
    let tests = fit.test_all(coef_index, &assigner, None)?;
    let m = data.n_cols();

    let significant: Vec<usize> = (0..m).filter(|&j| tests[j].p_value < alpha).collect();
    let mut kept = vec![0.0; m];
    if !significant.is_empty() {
        let d = Vector::from_iterator(significant.len(), significant.iter().map(|&j| tests[j].estimate));
        let d = match data.z() {
            Some(z) => {
                let zs = Matrix::from_fn(significant.len(), z.ncols(), |i, c| z[(significant[i], c)]);
                project_out(&d, &zs)
            }
            None => d,
        };
        for (i, &j) in significant.iter().enumerate() {
            kept[j] = d[i];
        }
    }
    let scale = kept.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let nonzero: Vec<usize> = (0..m).filter(|&j| kept[j].abs() > 1e-12 * scale).collect();

    // B* = H_Z B_hat with the (I - H_Z) part of the tested column replaced
    let model = &fit.model;
    let mut b = model.coefficients.b_hat.clone();
    let mut col = b.column(coef_index).into_owned();
    if model.q() > 0 {
        col = &model.p1 * (model.p1.transpose() * &col);
    } else {
        col.fill(0.0);
    }
    for j in 0..m {
        col[j] += kept[j];
    }
    b.set_column(coef_index, &col);

    let mut fixed_effects = &x * b.transpose();
    if let Some(z) = data.z() {
        fixed_effects += &model.coefficients.a_hat * z.transpose();
    }
    let noise_variances = (0..m)
        .map(|j| {
            let df_resid = tests[j].df_resid;
            fit.rss_at(j) / df_resid / model.direction_norm_sq(j)
        })
        .collect();
    Ok(GenerativeTruth {
        x,
        z: data.z().cloned(),
        fixed_effects,
        factor_term: fit.factors.signal(),
        noise_variances,
        tested_effects: kept,
        nonzero,
        coef_index,
    })
}

/// `(I - H_A) d` via Gram-Schmidt on the columns of `a`, skipping dependent ones.
fn project_out(d: &Vector, a: &Matrix) -> Vector {
    let mut basis: Vec<Vector> = Vec::new();
    for c in a.column_iter() {
        let scale = c.norm();
        let mut v = c.into_owned();
        for _ in 0..2 {
            for b in &basis {
                let t = b.dot(&v);
                v.axpy(-t, b, 1.0);
            }
        }
        let norm = v.norm();
        if norm > 1e-10 * scale.max(f64::MIN_POSITIVE) {
            basis.push(v / norm);
        }
    }
    let mut out = d.clone();
    for b in &basis {
        let t = b.dot(&out);
        out.axpy(-t, b, 1.0);
    }
    out
}

/// Mean surface plus independent `N(0, sigma_j^2)` noise in each column.
pub fn simulate_dataset(truth: &GenerativeTruth, seed: u64) -> Result<DatasetBundle> {
    let mut rng = SeededGenerator::new(seed, 0).rng();
    let mut y = truth.mean();
    let rows = y.nrows();
    for (j, var) in truth.noise_variances.iter().enumerate() {
        let sd = var.sqrt();
        for i in 0..rows {
            y[(i, j)] += sd * normal(&mut rng);
        }
    }
    DatasetBundle::new(y, Some(truth.x.clone()), truth.z.clone())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRates {
    pub method: String,
    /// Percent. Absent when no dataset produced a discovery.
    pub fdr: Option<MeanSe>,
    pub fpr: MeanSe,
    /// Percent. Absent when the truth has no nonzero effects.
    pub tpr: Option<MeanSe>,
    pub mean_discoveries: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FdrReport {
    pub rows: Vec<MethodRates>,
    pub n_datasets: usize,
    pub n_responses: usize,
    pub n_nonzero: usize,
    pub alpha: f64,
}

impl FdrReport {
    pub fn get(&self, method: &str) -> Option<&MethodRates> {
        self.rows.iter().find(|r| r.method == method)
    }
}

#[derive(Debug, Clone, Copy)]
struct Counts {
    discoveries: usize,
    false_discoveries: usize,
    true_discoveries: usize,
}

/// Runs the full bootstrap on `data`.
pub fn evaluate(config: &BootstrapConfig, data: &DatasetBundle) -> Result<FdrReport> {
    config.validate()?;
    let truth = build_generative_truth(
        data,
        config.k_factors,
        config.alpha,
        config.coef_index,
        &config.test_options,
    )?;
    evaluate_truth(config, &truth)
}

/// Bootstrap against a given truth.
pub fn evaluate_truth(config: &BootstrapConfig, truth: &GenerativeTruth) -> Result<FdrReport> {
    config.validate()?;
    let m = truth.noise_variances.len();
    let rows = truth.x.nrows();
    let n = rows - truth.x.ncols();
    let q = truth.z.as_ref().map_or(0, |z| z.ncols());
    let mut is_signal = vec![false; m];
    for &j in &truth.nonzero {
        is_signal[j] = true;
    }
    let n_nonzero = truth.nonzero.len();
    let n_null = m - n_nonzero;

    // df assigners are shared by every dataset
    let assigners: Vec<Option<DfAssigner>> = config
        .methods
        .iter()
        .map(|a| match a {
            Adjustment::None => Ok(None),
            Adjustment::Method(method) => {
                DfAssigner::new(*method, n, m - q, config.k_factors, &config.test_options).map(Some)
            }
        })
        .collect::<Result<_>>()?;
    let needs_none = config.methods.contains(&Adjustment::None);
    let none_assigner = DfAssigner::new(DofMethod::Naive, n, m - q, 0, &config.test_options)?;

    let per_dataset: Vec<Vec<Counts>> = (0..config.n_datasets as u64)
        .into_par_iter()
        .map(|d| {
            let bundle = simulate_dataset(truth, mix_seed(config.seed, d))?;
            let adjusted = if assigners.iter().any(|a| a.is_some()) {
                Some(LatentFit::new(&bundle, config.k_factors)?)
            } else {
                None
            };
            let plain = if needs_none {
                Some(LatentFit::new(&bundle, 0)?)
            } else {
                None
            };
            assigners
                .iter()
                .map(|a| {
                    let (fit, assigner) = match a {
                        Some(a) => (adjusted.as_ref().expect("adjusted fit"), a),
                        None => (plain.as_ref().expect("plain fit"), &none_assigner),
                    };
                    let tests = fit.test_all(truth.coef_index, assigner, None)?;
                    let mut c = Counts {
                        discoveries: 0,
                        false_discoveries: 0,
                        true_discoveries: 0,
                    };
                    for (j, t) in tests.iter().enumerate() {
                        if t.p_value < config.alpha {
                            c.discoveries += 1;
                            if is_signal[j] {
                                c.true_discoveries += 1;
                            } else {
                                c.false_discoveries += 1;
                            }
                        }
                    }
                    Ok(c)
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    let rows = config
        .methods
        .iter()
        .enumerate()
        .map(|(k, method)| {
            let counts: Vec<Counts> = per_dataset.iter().map(|d| d[k]).collect();
            let fdr: Vec<f64> = counts
                .iter()
                .map(|c| {
                    if c.discoveries == 0 {
                        0.0
                    } else {
                        100.0 * c.false_discoveries as f64 / c.discoveries as f64
                    }
                })
                .collect();
            let fpr: Vec<f64> = counts
                .iter()
                .map(|c| {
                    if n_null == 0 {
                        0.0
                    } else {
                        100.0 * c.false_discoveries as f64 / n_null as f64
                    }
                })
                .collect();
            let tpr: Vec<f64> = counts
                .iter()
                .map(|c| 100.0 * c.true_discoveries as f64 / n_nonzero.max(1) as f64)
                .collect();
            MethodRates {
                method: method.name().to_string(),
                fdr: counts.iter().any(|c| c.discoveries > 0).then(|| MeanSe::of(&fdr)),
                fpr: MeanSe::of(&fpr),
                tpr: (n_nonzero > 0).then(|| MeanSe::of(&tpr)),
                mean_discoveries: counts.iter().map(|c| c.discoveries as f64).sum::<f64>() / counts.len() as f64,
            }
        })
        .collect();
    Ok(FdrReport {
        rows,
        n_datasets: config.n_datasets,
        n_responses: m,
        n_nonzero,
        alpha: config.alpha,
    })
}
