//! Synthetic stand-in for a gene-expression ageing study: subjects in rows
//! with covariates `[1, sex, age]`, genes in columns with covariates
//! `[1, tissue]`, a few strong latent subject factors carried by a subset
//! of genes, and age effects in a small share of those genes.

use serde::{Deserialize, Serialize};

use crate::distributions::{normal, SeededGenerator};
use crate::error::{Error, Result};
use crate::linalg::{orthonormal_complement, orthonormalize_columns, Matrix, Vector};
use crate::model_fit::DatasetBundle;

/// Column of `X` holding age.
pub const AGE_COLUMN: usize = 2;

const AGES: [f64; 4] = [1.0, 6.0, 16.0, 24.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateConfig {
    pub n_subjects: usize,
    pub n_genes: usize,
    /// Per-entry variance of each latent factor term, averaged over genes,
    /// relative to a unit noise level.
    pub factor_variances: Vec<f64>,
    /// Share of genes that load on the factors at all.
    pub loaded_fraction: f64,
    pub signal_fraction: f64,
    /// Age effects are sized so that the factor-adjusted t statistic is
    /// about this large.
    pub signal_t: f64,
    /// Standard deviation of the log gene noise variances.
    pub log_variance_sd: f64,
    pub seed: u64,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        Self {
            n_subjects: 39,
            n_genes: 2000,
            factor_variances: vec![3.0, 1.0],
            loaded_fraction: 0.3,
            signal_fraction: 0.03,
            signal_t: 4.5,
            log_variance_sd: 0.3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Surrogate {
    pub bundle: DatasetBundle,
    /// Genes with a nonzero age effect, ascending.
    pub signal_genes: Vec<usize>,
    pub age_effects: Vec<f64>,
    pub noise_variances: Vec<f64>,
}

pub fn subject_covariates(n: usize) -> Matrix {
    Matrix::from_fn(n, 3, |i, c| match c {
        0 => 1.0,
        1 => {
            if i % 2 == 0 {
                1.0
            } else {
                -1.0
            }
        }
        _ => AGES[(i / 2) % AGES.len()],
    })
}

pub fn gene_covariates(m: usize) -> Matrix {
    Matrix::from_fn(m, 2, |j, c| if c == 0 || j < m / 2 { 1.0 } else { -1.0 })
}

pub fn generate(config: &SurrogateConfig) -> Result<Surrogate> {
    let (n, m) = (config.n_subjects, config.n_genes);
    let r = config.factor_variances.len();
    if n < 3 + r + 2 || m < 4 {
        return Err(Error::InvalidArgument(format!(
            "surrogate needs at least {} subjects and 4 genes, got {n} and {m}",
            5 + r
        )));
    }
    if !(0.0..=1.0).contains(&config.signal_fraction) {
        return Err(Error::InvalidArgument("signal fraction outside [0, 1]".into()));
    }
    if !(config.loaded_fraction > 0.0 && config.loaded_fraction <= 1.0) {
        return Err(Error::InvalidArgument("loaded fraction outside (0, 1]".into()));
    }
    if config.factor_variances.iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::InvalidArgument("factor variances must be nonnegative".into()));
    }
    let mut rng = SeededGenerator::new(config.seed, 0).rng();
    let x = subject_covariates(n);
    let z = gene_covariates(m);

    // factor scores: Haar frame inside the complement of span(X), unit entry variance
    let (qx, _) = crate::linalg::polar_factors(&x)?;
    let comp = orthonormal_complement(&qx)?;
    let g = Matrix::from_fn(comp.ncols(), r, |_, _| normal(&mut rng));
    let scores = &comp * orthonormalize_columns(&g)? * (n as f64).sqrt();

    let mut order: Vec<usize> = (0..m).collect();
    rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
    let n_loaded = ((config.loaded_fraction * m as f64).round() as usize).clamp(1, m);
    let mut loaded = vec![false; m];
    for &j in &order[..n_loaded] {
        loaded[j] = true;
    }

    // loadings on the loaded genes, then made orthogonal to span(Z)
    let (qz, _) = crate::linalg::polar_factors(&z)?;
    let boost = (m as f64 / n_loaded as f64).sqrt();
    let mut loadings = Matrix::from_fn(m, r, |j, _| if loaded[j] { boost * normal(&mut rng) } else { 0.0 });
    loadings -= &qz * (qz.transpose() * &loadings);
    for (k, v) in config.factor_variances.iter().enumerate() {
        loadings.column_mut(k).scale_mut(v.sqrt());
    }

    let noise_variances: Vec<f64> = (0..m)
        .map(|_| (config.log_variance_sd * normal(&mut rng)).exp())
        .collect();

    let age = x.column(AGE_COLUMN);
    let age_ss = (age - Vector::from_element(n, age.mean())).norm_squared();
    // age effects go to loaded genes first
    let n_signals = (config.signal_fraction * m as f64).round() as usize;
    let mut signal_genes = order[..n_signals].to_vec();
    signal_genes.sort_unstable();
    let mut age_effects = vec![0.0; m];
    for &j in &signal_genes {
        let sign = if normal(&mut rng) >= 0.0 { 1.0 } else { -1.0 };
        age_effects[j] = sign * config.signal_t * noise_variances[j].sqrt() / age_ss.sqrt();
    }

    let mut b = Matrix::zeros(m, 3);
    for j in 0..m {
        b[(j, 0)] = 8.0 + normal(&mut rng);
        b[(j, 1)] = 0.1 * normal(&mut rng);
        b[(j, 2)] = age_effects[j];
    }
    let a = Matrix::from_fn(n, 2, |_, _| 0.2 * normal(&mut rng));

    let mut y = &x * b.transpose() + &a * z.transpose() + &scores * loadings.transpose();
    for j in 0..m {
        let sd = noise_variances[j].sqrt();
        for i in 0..n {
            y[(i, j)] += sd * normal(&mut rng);
        }
    }
    Ok(Surrogate {
        bundle: DatasetBundle::new(y, Some(x), Some(z))?,
        signal_genes,
        age_effects,
        noise_variances,
    })
}
