//! Degrees of freedom spent on estimated latent factors along a test
//! direction, under each allocation scheme.
//!
//! All functions take the post-reduction dimensions `n = N - p` and
//! `m = M - q`.

use std::fmt;
use std::str::FromStr;

use nalgebra::SymmetricEigen;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distributions::{chi_squared, normal, SeededGenerator};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DofMethod {
    Proposed,
    Gollob,
    Mandel,
    Naive,
    TheoreticalNoise,
    TheoreticalSignal,
}

impl DofMethod {
    pub const ALL: [DofMethod; 6] = [
        DofMethod::Proposed,
        DofMethod::Gollob,
        DofMethod::Mandel,
        DofMethod::Naive,
        DofMethod::TheoreticalNoise,
        DofMethod::TheoreticalSignal,
    ];

    /// Methods usable on data, where the true factors are unknown.
    pub const DATA: [DofMethod; 4] = [
        DofMethod::Proposed,
        DofMethod::Gollob,
        DofMethod::Mandel,
        DofMethod::Naive,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            DofMethod::Proposed => "proposed",
            DofMethod::Gollob => "gollob",
            DofMethod::Mandel => "mandel",
            DofMethod::Naive => "naive",
            DofMethod::TheoreticalNoise => "theoretical-noise",
            DofMethod::TheoreticalSignal => "theoretical-signal",
        }
    }
}

impl fmt::Display for DofMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DofMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DofMethod::ALL
            .iter()
            .copied()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown df method '{s}'")))
    }
}

/// Degrees of freedom attributed to the estimated factors along one direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DofEstimate {
    pub per_factor: Vec<f64>,
    /// Contribution of true factors that were not estimated (`r_hat < r`);
    /// zero for every other case.
    pub unassigned: f64,
    /// `sum(per_factor) + unassigned`.
    pub total: f64,
    pub method: DofMethod,
    pub direction_id: Option<String>,
    /// Set when any factor fell on or below the phase transition.
    pub conjectural: bool,
    /// Monte-Carlo standard error of `total`, for simulated schemes.
    pub std_error: Option<f64>,
}

impl DofEstimate {
    fn new(per_factor: Vec<f64>, method: DofMethod) -> Self {
        let total = per_factor.iter().sum();
        Self {
            per_factor,
            unassigned: 0.0,
            total,
            method,
            direction_id: None,
            conjectural: false,
            std_error: None,
        }
    }

    pub fn with_direction(mut self, id: impl Into<String>) -> Self {
        self.direction_id = Some(id.into());
        self
    }

    pub fn r_hat(&self) -> usize {
        self.per_factor.len()
    }
}

/// Signal-case df of a single factor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FactorDf {
    pub df: f64,
    pub conjectural: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticPrediction {
    pub mu_bar: f64,
    pub rho_bar_sq: f64,
    pub above_transition: bool,
}

fn check_dims(n: usize, m: usize) -> Result<()> {
    if n == 0 || m == 0 {
        return Err(Error::InvalidArgument(format!(
            "dimensions must be positive, got n = {n}, m = {m}"
        )));
    }
    Ok(())
}

fn check_projection(p: f64) -> Result<()> {
    if !(0.0..=1.0 + 1e-12).contains(&p) || p.is_nan() {
        return Err(Error::InvalidArgument(format!("squared projection {p} outside [0, 1]")));
    }
    Ok(())
}

fn check_projection_sum(ps: &[f64]) -> Result<()> {
    for p in ps {
        check_projection(*p)?;
    }
    let sum: f64 = ps.iter().sum();
    if sum > 1.0 + 1e-9 {
        return Err(Error::InvalidArgument(format!("squared projections sum to {sum} > 1")));
    }
    Ok(())
}

/// `(1 + sqrt(n/m))^2`, the df of one factor fitted to pure noise.
pub fn noise_df_per_factor(n: usize, m: usize) -> f64 {
    (1.0 + (n as f64 / m as f64).sqrt()).powi(2)
}

/// Phase-transition location `sigma^2 sqrt(m/n)`.
pub fn transition_threshold(n: usize, m: usize, sigma_sq: f64) -> f64 {
    sigma_sq * (m as f64 / n as f64).sqrt()
}

pub fn df_noise(n: usize, m: usize, r_hat: usize) -> Result<DofEstimate> {
    check_dims(n, m)?;
    Ok(DofEstimate::new(
        vec![noise_df_per_factor(n, m); r_hat],
        DofMethod::TheoreticalNoise,
    ))
}

/// Signal-case df of factor `k` with strength `mu_k` and squared loading
/// projection `proj_sq = (v_k^T s)^2 / (s^T s)`. On or below the transition
/// the conjectured form `(1 + sqrt(n/m))^2 - n (mu/sigma^2) proj_sq` is used.
pub fn df_signal_k(n: usize, m: usize, mu_k: f64, sigma_sq: f64, proj_sq: f64) -> Result<FactorDf> {
    check_dims(n, m)?;
    if !(mu_k > 0.0) || !(sigma_sq > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "need mu > 0 and sigma^2 > 0, got {mu_k} and {sigma_sq}"
        )));
    }
    check_projection(proj_sq)?;
    let proj_sq = proj_sq.min(1.0);
    let (nf, mf) = (n as f64, m as f64);
    let ratio = sigma_sq / mu_k;
    if mu_k > transition_threshold(n, m, sigma_sq) {
        let parallel = nf * (1.0 - mf / nf * ratio - mf / nf * ratio * ratio);
        let perp = (1.0 + ratio).powi(2);
        Ok(FactorDf {
            df: parallel * proj_sq + perp * (1.0 - proj_sq),
            conjectural: false,
        })
    } else {
        Ok(FactorDf {
            df: noise_df_per_factor(n, m) - nf * mu_k / sigma_sq * proj_sq,
            conjectural: true,
        })
    }
}

/// Alternative value for a loading orthogonal to `s` above the transition,
/// `1 + (sigma^2/mu)^2`, as listed for the perpendicular simulation shapes.
/// `df_signal_k` with `proj_sq = 0` gives `(1 + sigma^2/mu)^2` instead.
pub fn df_perp_listing(mu: f64, sigma_sq: f64) -> f64 {
    1.0 + (sigma_sq / mu).powi(2)
}

/// Total signal-case df for `r` true factors when `r_hat` are estimated.
///
/// With `r_hat > r` the extra factors fit noise and each adds
/// `(1 + sqrt(n/m))^2`. With `r_hat < r` the missed factors contribute
/// `-n (mu_k/sigma^2) proj_k`, reported in `unassigned`.
pub fn df_signal_total(
    n: usize,
    m: usize,
    mu: &[f64],
    sigma_sq: f64,
    proj_sqs: &[f64],
    r_hat: usize,
) -> Result<DofEstimate> {
    check_dims(n, m)?;
    if mu.len() != proj_sqs.len() {
        return Err(Error::DimMismatch(format!(
            "{} signal strengths but {} projections",
            mu.len(),
            proj_sqs.len()
        )));
    }
    if mu.iter().any(|v| !(*v > 0.0)) || mu.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidArgument(
            "signal strengths must be positive and strictly decreasing".into(),
        ));
    }
    check_projection_sum(proj_sqs)?;
    let r = mu.len();
    let mut per_factor = Vec::with_capacity(r_hat);
    let mut conjectural = false;
    for k in 0..r.min(r_hat) {
        let f = df_signal_k(n, m, mu[k], sigma_sq, proj_sqs[k])?;
        conjectural |= f.conjectural;
        per_factor.push(f.df);
    }
    for _ in r..r_hat {
        per_factor.push(noise_df_per_factor(n, m));
    }
    let unassigned: f64 = (r_hat..r).map(|k| -(n as f64) * mu[k] / sigma_sq * proj_sqs[k]).sum();
    let mut est = DofEstimate::new(per_factor, DofMethod::TheoreticalSignal);
    est.unassigned = unassigned;
    est.total += unassigned;
    est.conjectural = conjectural;
    Ok(est)
}

/// `n (v_hat_k^T s)^2 / (s^T s) + (1 + sqrt(n/m))^2` per estimated factor.
/// Needs no knowledge of the true factors or the noise level.
pub fn df_conservative(n: usize, m: usize, vhat_proj_sqs: &[f64]) -> Result<DofEstimate> {
    check_dims(n, m)?;
    check_projection_sum(vhat_proj_sqs)?;
    let floor = noise_df_per_factor(n, m);
    Ok(DofEstimate::new(
        vhat_proj_sqs.iter().map(|p| n as f64 * p + floor).collect(),
        DofMethod::Proposed,
    ))
}

/// Parameter counting: factor `k` (1-based) costs `(n - k + 1) + (m - k + 1) - 1`
/// parameters for the whole matrix, spread evenly over the `m` directions.
pub fn df_gollob(n: usize, m: usize, r_hat: usize) -> Result<DofEstimate> {
    check_dims(n, m)?;
    if r_hat >= n.min(m) {
        return Err(Error::InvalidArgument(format!(
            "Gollob allocation needs r_hat < min(n, m) = {}, got {r_hat}",
            n.min(m)
        )));
    }
    let per_factor = (1..=r_hat)
        .map(|k| ((n - k + 1) + (m - k + 1) - 1) as f64 / m as f64)
        .collect();
    Ok(DofEstimate::new(per_factor, DofMethod::Gollob))
}

/// One df per factor, as if the factor scores were observed covariates.
pub fn df_naive(r_hat: usize) -> DofEstimate {
    DofEstimate::new(vec![1.0; r_hat], DofMethod::Naive)
}

/// How the white Wishart eigenvalues are drawn for Mandel's scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WishartSampler {
    /// Bidiagonal model with chi-distributed entries, `O(min(n,m)^2)` per draw.
    #[default]
    Bidiagonal,
    /// Dense `G G^T` from an explicit Gaussian matrix.
    Dense,
}

pub const MANDEL_DEFAULT_REPS: usize = 1000;
pub const MANDEL_MIN_REPS: usize = 100;

/// Top `k` eigenvalues of `G^T G` for one `n x m` standard Gaussian `G`.
pub fn wishart_top_eigenvalues(
    n: usize,
    m: usize,
    k: usize,
    gen: &SeededGenerator,
    sampler: WishartSampler,
) -> Vec<f64> {
    let mut rng = gen.rng();
    let small = n.min(m);
    let large = n.max(m);
    let gram = match sampler {
        WishartSampler::Bidiagonal => {
            // lower bidiagonal B with diag chi_{large - i}, subdiag chi_{small - 1 - i};
            // the nonzero spectrum of G^T G is that of B B^T
            let diag: Vec<f64> = (0..small)
                .map(|i| chi_squared(&mut rng, (large - i) as f64).sqrt())
                .collect();
            let sub: Vec<f64> = (1..small)
                .map(|i| chi_squared(&mut rng, (small - i) as f64).sqrt())
                .collect();
            let mut t = Matrix::zeros(small, small);
            for i in 0..small {
                let below = if i > 0 { sub[i - 1] } else { 0.0 };
                t[(i, i)] = diag[i] * diag[i] + below * below;
                if i + 1 < small {
                    let off = sub[i] * diag[i];
                    t[(i, i + 1)] = off;
                    t[(i + 1, i)] = off;
                }
            }
            t
        }
        WishartSampler::Dense => {
            let g = Matrix::from_fn(small, large, |_, _| normal(&mut rng));
            &g * g.transpose()
        }
    };
    let mut values: Vec<f64> = SymmetricEigen::new(gram).eigenvalues.iter().copied().collect();
    values.sort_by(|a, b| b.partial_cmp(a).expect("NaN eigenvalue"));
    values.truncate(k);
    values
}

/// Mandel's scheme: factor `k` is allotted `E[lambda_k] / m` per direction,
/// `lambda_k` the `k`-th largest eigenvalue of `G^T G` for an `n x m`
/// standard Gaussian `G`, estimated from `reps` seeded draws.
pub fn df_mandel(
    n: usize,
    m: usize,
    r_hat: usize,
    reps: usize,
    seed: u64,
    sampler: WishartSampler,
) -> Result<DofEstimate> {
    check_dims(n, m)?;
    if r_hat > n.min(m) {
        return Err(Error::InvalidArgument(format!(
            "r_hat = {r_hat} exceeds min(n, m) = {}",
            n.min(m)
        )));
    }
    if reps < MANDEL_MIN_REPS {
        return Err(Error::InvalidArgument(format!(
            "Mandel needs at least {MANDEL_MIN_REPS} replicates, got {reps}"
        )));
    }
    let draws: Vec<Vec<f64>> = (0..reps)
        .into_par_iter()
        .map(|rep| wishart_top_eigenvalues(n, m, r_hat, &SeededGenerator::new(seed, rep as u64), sampler))
        .collect();
    let mf = m as f64;
    let repsf = reps as f64;
    let mut per_factor = vec![0.0; r_hat];
    for d in &draws {
        for (acc, v) in per_factor.iter_mut().zip(d) {
            *acc += v / mf;
        }
    }
    for v in per_factor.iter_mut() {
        *v /= repsf;
    }
    let totals: Vec<f64> = draws.iter().map(|d| d.iter().sum::<f64>() / mf).collect();
    let mean: f64 = totals.iter().sum::<f64>() / repsf;
    let var: f64 = totals.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (repsf - 1.0);
    let mut est = DofEstimate::new(per_factor, DofMethod::Mandel);
    est.std_error = Some((var / repsf).sqrt());
    Ok(est)
}

/// Limits of `mu_hat_k` and `(v_hat_k^T v_k)^2` for a factor of strength
/// `mu_k`. Below the transition the top sample eigenvalue sticks to the bulk
/// edge `sigma^2 (1 + sqrt(m/n))^2` and the loading carries no information.
pub fn asymptotic_predictions(mu_k: f64, n: usize, m: usize, sigma_sq: f64) -> Result<AsymptoticPrediction> {
    check_dims(n, m)?;
    if !(mu_k > 0.0) || !(sigma_sq > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "need mu > 0 and sigma^2 > 0, got {mu_k} and {sigma_sq}"
        )));
    }
    let mu = mu_k / sigma_sq;
    let c_inv = m as f64 / n as f64;
    if mu > c_inv.sqrt() {
        Ok(AsymptoticPrediction {
            mu_bar: sigma_sq * (mu + 1.0) * (c_inv / mu + 1.0),
            rho_bar_sq: ((1.0 - c_inv / (mu * mu)) / (1.0 + c_inv / mu)).clamp(0.0, 1.0),
            above_transition: true,
        })
    } else {
        Ok(AsymptoticPrediction {
            mu_bar: sigma_sq * (1.0 + c_inv.sqrt()).powi(2),
            rho_bar_sq: 0.0,
            above_transition: false,
        })
    }
}
