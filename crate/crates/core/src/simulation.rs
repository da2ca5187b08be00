//! Monte-Carlo study of the df actually used by `r_hat` fitted factors.
//!
//! Each replicate draws `Y = sqrt(n) U D V^T + E` with a fresh Haar `U`,
//! fits `r_hat` factors, and records `df_obs = n - RSS(s) / (sigma^2 s^T s)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distributions::{chi2_cdf, chi_squared, ks_test, mix_seed, normal, KsResult, SeededGenerator};
use crate::dof::{df_noise, df_perp_listing, df_signal_total, noise_df_per_factor, transition_threshold};
use crate::error::{Error, Result};
use crate::linalg::{orthonormalize_columns, symmetric_eigen_desc, truncated_svd, Matrix, Vector};

pub const DEFAULT_REPLICATES: usize = 10_000;
pub const MIN_REPLICATES: usize = 100;

pub const GRID_N: [usize; 4] = [5, 10, 50, 100];
pub const GRID_M: [usize; 8] = [5, 10, 50, 100, 500, 1000, 5000, 10000];

/// Loading vector of a single true factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SignalShape {
    /// `(1, ..., 1) / sqrt(m)`
    Ones,
    /// `e_1`
    Basis,
    /// `(0, 1, ..., 1) / sqrt(m - 1)`
    PerpOnes,
    /// `e_2`
    PerpBasis,
    /// Explicit orthonormal loadings, one vector per factor.
    Custom(Vec<Vec<f64>>),
}

impl SignalShape {
    pub fn name(&self) -> &'static str {
        match self {
            SignalShape::Ones => "ones",
            SignalShape::Basis => "basis",
            SignalShape::PerpOnes => "perp-ones",
            SignalShape::PerpBasis => "perp-basis",
            SignalShape::Custom(_) => "custom",
        }
    }

    pub fn is_perp(&self) -> bool {
        matches!(self, SignalShape::PerpOnes | SignalShape::PerpBasis)
    }

    /// `m x r` loading matrix.
    pub fn loadings(&self, m: usize, r: usize) -> Result<Matrix> {
        if r == 0 {
            return Ok(Matrix::zeros(m, 0));
        }
        if let SignalShape::Custom(vs) = self {
            if vs.len() != r {
                return Err(Error::DimMismatch(format!("{} loading vectors for r = {r}", vs.len())));
            }
            let mut v = Matrix::zeros(m, r);
            for (k, col) in vs.iter().enumerate() {
                if col.len() != m {
                    return Err(Error::DimMismatch(format!(
                        "loading of length {} for m = {m}",
                        col.len()
                    )));
                }
                v.set_column(k, &Vector::from_column_slice(col));
            }
            let err = crate::linalg::orthonormality_error(&v);
            if err > crate::linalg::ORTHONORMAL_TOL {
                return Err(Error::NotOrthonormal(err));
            }
            return Ok(v);
        }
        if r > 1 {
            return Err(Error::InvalidArgument(format!(
                "shape '{}' defines one factor; use custom loadings for r = {r}",
                self.name()
            )));
        }
        let needs = if self.is_perp() { 2 } else { 1 };
        if m < needs {
            return Err(Error::InvalidArgument(format!(
                "shape '{}' needs m >= {needs}",
                self.name()
            )));
        }
        let mut v = Matrix::zeros(m, 1);
        match self {
            SignalShape::Ones => v.fill(1.0 / (m as f64).sqrt()),
            SignalShape::Basis => v[(0, 0)] = 1.0,
            SignalShape::PerpOnes => {
                let c = 1.0 / ((m - 1) as f64).sqrt();
                for i in 1..m {
                    v[(i, 0)] = c;
                }
            }
            SignalShape::PerpBasis => v[(1, 0)] = 1.0,
            SignalShape::Custom(_) => unreachable!(),
        }
        Ok(v)
    }
}

/// How replicate data are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SimSampler {
    /// Draws only `Y W` for `W` spanning `{s, V}` plus the `n x n` Wishart
    /// Gram matrix of the remaining columns; same distribution, `O(n^3)`.
    #[default]
    Reduced,
    /// Forms the full `n x m` matrix and its SVD.
    Direct,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n: usize,
    pub m: usize,
    pub mu: Vec<f64>,
    pub signal_shape: SignalShape,
    pub sigma_sq: f64,
    pub r_hat: usize,
    pub replicates: usize,
    pub seed: u64,
    /// Defaults to `e_1`.
    pub test_direction: Option<Vec<f64>>,
    pub sampler: SimSampler,
}

impl SimConfig {
    /// No true factors, `r_hat` fitted.
    pub fn noise(n: usize, m: usize, r_hat: usize, replicates: usize, seed: u64) -> Self {
        Self {
            n,
            m,
            mu: Vec::new(),
            signal_shape: SignalShape::Basis,
            sigma_sq: 1.0,
            r_hat,
            replicates,
            seed,
            test_direction: None,
            sampler: SimSampler::Reduced,
        }
    }

    /// One true factor of strength `mu` with the given shape, one fitted.
    pub fn signal(n: usize, m: usize, mu: f64, shape: SignalShape, replicates: usize, seed: u64) -> Self {
        Self {
            mu: vec![mu],
            signal_shape: shape,
            ..Self::noise(n, m, 1, replicates, seed)
        }
    }

    pub fn r(&self) -> usize {
        self.mu.len()
    }

    fn direction(&self) -> Result<Vector> {
        match &self.test_direction {
            None => {
                let mut s = Vector::zeros(self.m);
                s[0] = 1.0;
                Ok(s)
            }
            Some(s) if s.len() != self.m => Err(Error::DimMismatch(format!(
                "test direction of length {} for m = {}",
                s.len(),
                self.m
            ))),
            Some(s) => {
                let v = Vector::from_column_slice(s);
                if !(v.norm_squared() > 0.0) || v.iter().any(|x| !x.is_finite()) {
                    return Err(Error::InvalidArgument(
                        "test direction must be finite and nonzero".into(),
                    ));
                }
                Ok(v)
            }
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n == 0 || self.m == 0 {
            return Err(Error::InvalidArgument("n and m must be positive".into()));
        }
        if !(self.sigma_sq > 0.0) || !self.sigma_sq.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "sigma^2 must be positive, got {}",
                self.sigma_sq
            )));
        }
        let limit = self.n.min(self.m);
        if self.r_hat > limit {
            return Err(Error::InvalidArgument(format!(
                "r_hat = {} exceeds min(n, m) = {limit}",
                self.r_hat
            )));
        }
        if self.r() > limit {
            return Err(Error::InvalidArgument(format!(
                "r = {} exceeds min(n, m) = {limit}",
                self.r()
            )));
        }
        if self.mu.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::InvalidArgument("signal strengths must be positive".into()));
        }
        Ok(())
    }
}

/// Per-config quantities shared by all replicates.
struct Prepared {
    s: Vector,
    s_norm_sq: f64,
    v: Matrix,
    /// `sqrt(n mu_k)`
    scales: Vec<f64>,
    /// Orthonormal basis of `span{s, V}`, `m x d`.
    w: Matrix,
    ws: Vector,
    wv: Matrix,
}

impl Prepared {
    fn new(config: &SimConfig) -> Result<Self> {
        config.validate()?;
        let s = config.direction()?;
        let v = config.signal_shape.loadings(config.m, config.r())?;
        let mut cols = vec![s.clone()];
        cols.extend(v.column_iter().map(|c| c.into_owned()));
        let w = span_basis(&cols, config.m);
        Ok(Self {
            s_norm_sq: s.norm_squared(),
            ws: w.transpose() * &s,
            wv: w.transpose() * &v,
            scales: config.mu.iter().map(|mu| (config.n as f64 * mu).sqrt()).collect(),
            s,
            v,
            w,
        })
    }
}

/// Orthonormal basis of the span of `cols` by twice-applied Gram-Schmidt,
/// dropping dependent vectors.
fn span_basis(cols: &[Vector], m: usize) -> Matrix {
    let mut basis: Vec<Vector> = Vec::new();
    for c in cols {
        let scale = c.norm();
        let mut x = c.clone();
        for _ in 0..2 {
            for b in &basis {
                let d = b.dot(&x);
                x.axpy(-d, b, 1.0);
            }
        }
        let norm = x.norm();
        if norm > 1e-10 * scale.max(f64::MIN_POSITIVE) {
            basis.push(x / norm);
        }
    }
    let mut w = Matrix::zeros(m, basis.len());
    for (k, b) in basis.iter().enumerate() {
        w.set_column(k, b);
    }
    w
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateDraw {
    pub rss: f64,
    pub df_obs: f64,
    /// Top `r_hat` eigenvalues of `Y^T Y / n`.
    pub mu_hat: Vec<f64>,
    /// `(v_hat_k^T v_k)^2` for `k < min(r, r_hat)`.
    pub loading_overlap_sq: Vec<f64>,
}

fn gaussian_matrix<R: rand::Rng>(rng: &mut R, rows: usize, cols: usize) -> Matrix {
    // column-major fill so the draw order is fixed
    let mut g = Matrix::zeros(rows, cols);
    for c in 0..cols {
        for r in 0..rows {
            g[(r, c)] = normal(rng);
        }
    }
    g
}

/// `G G^T` for `G` an `n x k` standard Gaussian matrix; Bartlett
/// decomposition when `k >= n`.
fn wishart_gram<R: rand::Rng>(rng: &mut R, n: usize, k: usize) -> Matrix {
    if k == 0 {
        return Matrix::zeros(n, n);
    }
    if k < n {
        let g = gaussian_matrix(rng, n, k);
        return &g * g.transpose();
    }
    let mut l = Matrix::zeros(n, n);
    for i in 0..n {
        l[(i, i)] = chi_squared(rng, (k - i) as f64).sqrt();
        for j in 0..i {
            l[(i, j)] = normal(rng);
        }
    }
    &l * l.transpose()
}

fn draw_u<R: rand::Rng>(rng: &mut R, n: usize, r: usize) -> Result<Matrix> {
    if r == 0 {
        return Ok(Matrix::zeros(n, 0));
    }
    orthonormalize_columns(&gaussian_matrix(rng, n, r))
}

fn replicate_with(config: &SimConfig, prep: &Prepared, index: u64) -> Result<ReplicateDraw> {
    let mut rng = SeededGenerator::new(config.seed, index).rng();
    let (n, m) = (config.n, config.m);
    let sigma = config.sigma_sq.sqrt();
    let u = draw_u(&mut rng, n, config.r())?;
    let mut ud = u;
    for (k, c) in prep.scales.iter().enumerate() {
        ud.column_mut(k).scale_mut(*c);
    }
    let r_hat = config.r_hat;
    let k_overlap = config.r().min(r_hat);
    match config.sampler {
        SimSampler::Reduced => {
            let d = prep.w.ncols();
            let yw = &ud * prep.wv.transpose() + gaussian_matrix(&mut rng, n, d) * sigma;
            let mut gram = wishart_gram(&mut rng, n, m - d) * config.sigma_sq;
            gram += &yw * yw.transpose();
            let ys = &yw * &prep.ws;
            let mut rss = ys.norm_squared();
            let mut mu_hat = Vec::with_capacity(r_hat);
            let mut overlap = Vec::with_capacity(k_overlap);
            if r_hat > 0 {
                let (values, vectors) = symmetric_eigen_desc(&gram);
                for k in 0..r_hat {
                    let uk = vectors.column(k);
                    rss -= uk.dot(&ys).powi(2);
                    mu_hat.push(values[k] / n as f64);
                    if k < k_overlap {
                        let yv = &yw * prep.wv.column(k);
                        overlap.push(uk.dot(&yv).powi(2) / values[k]);
                    }
                }
            }
            let rss = rss.max(0.0);
            Ok(ReplicateDraw {
                rss,
                df_obs: n as f64 - rss / (config.sigma_sq * prep.s_norm_sq),
                mu_hat,
                loading_overlap_sq: overlap,
            })
        }
        SimSampler::Direct => {
            let y = &ud * prep.v.transpose() + gaussian_matrix(&mut rng, n, m) * sigma;
            let ys = &y * &prep.s;
            let mut rss = ys.norm_squared();
            let mut mu_hat = Vec::with_capacity(r_hat);
            let mut overlap = Vec::with_capacity(k_overlap);
            if r_hat > 0 {
                let svd = truncated_svd(&y, r_hat)?;
                for k in 0..r_hat {
                    rss -= svd.left_vectors.column(k).dot(&ys).powi(2);
                    mu_hat.push(svd.singular_values[k].powi(2) / n as f64);
                    if k < k_overlap {
                        overlap.push(svd.right_vectors.column(k).dot(&prep.v.column(k)).powi(2));
                    }
                }
            }
            let rss = rss.max(0.0);
            Ok(ReplicateDraw {
                rss,
                df_obs: n as f64 - rss / (config.sigma_sq * prep.s_norm_sq),
                mu_hat,
                loading_overlap_sq: overlap,
            })
        }
    }
}

/// One replicate. The draw depends only on `(config, index)`.
pub fn run_replicate(config: &SimConfig, index: u64) -> Result<ReplicateDraw> {
    let prep = Prepared::new(config)?;
    replicate_with(config, &prep, index)
}

/// Theoretical df for a config together with the perpendicular-shape
/// alternative, when it applies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoreticalDf {
    pub df: f64,
    pub conjectural: bool,
    pub alternative: Option<f64>,
}

pub fn theoretical_df(config: &SimConfig) -> Result<TheoreticalDf> {
    let prep = Prepared::new(config)?;
    theoretical_with(config, &prep)
}

fn theoretical_with(config: &SimConfig, prep: &Prepared) -> Result<TheoreticalDf> {
    let (n, m) = (config.n, config.m);
    if config.r() == 0 {
        return Ok(TheoreticalDf {
            df: df_noise(n, m, config.r_hat)?.total,
            conjectural: false,
            alternative: None,
        });
    }
    let proj: Vec<f64> = prep
        .v
        .column_iter()
        .map(|c| c.dot(&prep.s).powi(2) / prep.s_norm_sq)
        .collect();
    let est = df_signal_total(n, m, &config.mu, config.sigma_sq, &proj, config.r_hat)?;
    let threshold = transition_threshold(n, m, config.sigma_sq);
    let alternative = (config.signal_shape.is_perp() && config.mu.iter().all(|mu| *mu > threshold)).then(|| {
        let fitted = config.r().min(config.r_hat);
        let listed: f64 = config.mu[..fitted]
            .iter()
            .map(|mu| df_perp_listing(*mu, config.sigma_sq))
            .sum();
        listed + (config.r_hat - fitted) as f64 * noise_df_per_factor(n, m)
    });
    Ok(TheoreticalDf {
        df: est.total,
        conjectural: est.conjectural,
        alternative,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
}

impl MeanSe {
    pub fn of(values: &[f64]) -> Self {
        let count = values.len() as f64;
        let mean = values.iter().sum::<f64>() / count;
        let var = if values.len() > 1 {
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (count - 1.0)
        } else {
            0.0
        };
        Self {
            mean,
            se: (var / count).sqrt(),
        }
    }

    /// `|mean - target| <= k * se`
    pub fn within(&self, target: f64, k: f64) -> bool {
        (self.mean - target).abs() <= k * self.se
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub n: usize,
    pub m: usize,
    pub mu: Vec<f64>,
    pub shape: String,
    pub r_hat: usize,
    pub mean_df: f64,
    pub se_df: f64,
    pub theoretical_df: f64,
    pub conjectural: bool,
    /// `1 + (sigma^2/mu)^2` per factor for perpendicular shapes above the transition.
    pub alternative_df: Option<f64>,
    pub within_theory: bool,
    pub within_alternative: Option<bool>,
    /// KS test of `RSS / (sigma^2 s^T s)` against chi-squared with
    /// `n - theoretical_df` df; absent when that is not positive.
    pub ks: Option<KsResult>,
    pub replicates_used: usize,
    pub mu_hat: Vec<MeanSe>,
    pub loading_overlap_sq: Vec<MeanSe>,
}

/// Band used for `within_theory` and `within_alternative`.
pub const AGREEMENT_SE: f64 = 3.0;

pub fn run_sim(config: &SimConfig) -> Result<SimResult> {
    if config.replicates < MIN_REPLICATES {
        return Err(Error::InvalidArgument(format!(
            "need at least {MIN_REPLICATES} replicates, got {}",
            config.replicates
        )));
    }
    let prep = Prepared::new(config)?;
    let theory = theoretical_with(config, &prep)?;
    let draws: Vec<ReplicateDraw> = (0..config.replicates as u64)
        .into_par_iter()
        .map(|i| replicate_with(config, &prep, i))
        .collect::<Result<_>>()?;
    let dfs: Vec<f64> = draws.iter().map(|d| d.df_obs).collect();
    let df = MeanSe::of(&dfs);
    let chi_df = config.n as f64 - theory.df;
    let ks = if chi_df > 0.0 {
        let scaled: Vec<f64> = draws
            .iter()
            .map(|d| d.rss / (config.sigma_sq * prep.s_norm_sq))
            .collect();
        Some(ks_test(&scaled, |x| chi2_cdf(x, chi_df))?)
    } else {
        None
    };
    let stat = |f: &dyn Fn(&ReplicateDraw) -> f64| MeanSe::of(&draws.iter().map(f).collect::<Vec<_>>());
    let mu_hat = (0..config.r_hat).map(|k| stat(&|d| d.mu_hat[k])).collect();
    let overlap = (0..config.r().min(config.r_hat))
        .map(|k| stat(&|d| d.loading_overlap_sq[k]))
        .collect();
    Ok(SimResult {
        n: config.n,
        m: config.m,
        mu: config.mu.clone(),
        shape: if config.r() == 0 {
            "noise".into()
        } else {
            config.signal_shape.name().into()
        },
        r_hat: config.r_hat,
        mean_df: df.mean,
        se_df: df.se,
        theoretical_df: theory.df,
        conjectural: theory.conjectural,
        alternative_df: theory.alternative,
        within_theory: df.within(theory.df, AGREEMENT_SE),
        within_alternative: theory.alternative.map(|a| df.within(a, AGREEMENT_SE)),
        ks,
        replicates_used: config.replicates,
        mu_hat,
        loading_overlap_sq: overlap,
    })
}

/// Runs every config; results come back in input order.
pub fn run_grid(configs: &[SimConfig]) -> Result<Vec<SimResult>> {
    if configs.is_empty() {
        return Err(Error::InvalidArgument("empty simulation grid".into()));
    }
    configs.par_iter().map(run_sim).collect()
}

fn cell_seed(seed: u64, index: usize) -> u64 {
    mix_seed(seed, index as u64)
}

/// Noise grid over `n` in {5, 10, 50, 100} and `m` in {5, ..., 10000}, one
/// fitted factor, row-major in `n`.
pub fn noise_grid(replicates: usize, seed: u64) -> Vec<SimConfig> {
    let mut out = Vec::new();
    for &n in &GRID_N {
        for &m in &GRID_M {
            out.push(SimConfig::noise(n, m, 1, replicates, cell_seed(seed, out.len())));
        }
    }
    out
}

/// Same grid with one factor of strength `mu` along the test direction.
pub fn basis_grid(mu: f64, replicates: usize, seed: u64) -> Vec<SimConfig> {
    let mut out = Vec::new();
    for &n in &GRID_N {
        for &m in &GRID_M {
            out.push(SimConfig::signal(
                n,
                m,
                mu,
                SignalShape::Basis,
                replicates,
                cell_seed(seed, out.len()),
            ));
        }
    }
    out
}
