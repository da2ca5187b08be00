//! Command-line front end. The binary is a thin wrapper around [`run`].

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Map, Value};

use crate::dof::{DofMethod, WishartSampler, MANDEL_DEFAULT_REPS};
use crate::error::{Error, Result};
use crate::factor_estimation::variance_explained;
use crate::fdr_bootstrap::{evaluate, BootstrapConfig};
use crate::inference::{DfAssigner, LatentFit, TestOptions};
use crate::io::{ingest, write_labeled_path, Ingested, LabeledMatrix};
use crate::linalg::Matrix;
use crate::simulation::{
    basis_grid, noise_grid, run_grid, run_sim, SignalShape, SimConfig, SimResult, SimSampler,
    DEFAULT_REPLICATES, GRID_M, GRID_N,
};
use crate::surrogate::{generate, SurrogateConfig, AGE_COLUMN};

pub const THREADS_ENV: &str = "BILINEAR_DOF_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "bilinear-dof",
    version,
    about = "Bilinear regression with latent factors: df assignment, per-response tests, simulation and bootstrap FDR",
    after_help = "Input files are CSV with a header row and a leading id column. See docs/formats.md."
)]
pub struct Cli {
    /// Output format.
    #[arg(long, value_enum, default_value_t = Format::Table, global = true)]
    pub format: Format,
    /// Write output here instead of standard output.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads (never changes results).
    #[arg(long, env = THREADS_ENV, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Table,
    Csv,
    Json,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic ageing-study dataset (y.csv, x.csv, z.csv, truth.csv).
    Generate(GenerateArgs),
    /// Fit the regression part and report coefficients and residual sums of squares.
    Fit(FitArgs),
    /// Residual variance explained by each principal component.
    Scree(ScreeArgs),
    /// Test one coefficient for every response after adjusting for latent factors.
    Test(TestArgs),
    /// Monte-Carlo df study for a single configuration.
    Simulate(SimulateArgs),
    /// Grid of KS p-values for the chi-squared fit of the residual sum of squares.
    KsTable(KsTableArgs),
    /// Parametric bootstrap estimate of FDR, FPR and TPR for each df method.
    Bootstrap(BootstrapArgs),
}

#[derive(Debug, Args)]
pub struct InputArgs {
    /// Response matrix: subjects in rows, responses in columns.
    #[arg(long)]
    pub y: PathBuf,
    /// Row covariates, one row per subject.
    #[arg(long)]
    pub x: Option<PathBuf>,
    /// Column covariates, one row per response.
    #[arg(long)]
    pub z: Option<PathBuf>,
    /// Prepend an intercept column to both covariate matrices.
    #[arg(long)]
    pub add_intercepts: bool,
}

impl InputArgs {
    fn load(&self) -> Result<Ingested> {
        ingest(&self.y, self.x.as_deref(), self.z.as_deref(), self.add_intercepts)
    }
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = 2000)]
    pub genes: usize,
    #[arg(long, default_value_t = 39)]
    pub subjects: usize,
    /// Per-entry variance of each factor term, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "3,1")]
    pub factor_variances: Vec<f64>,
    #[arg(long, default_value_t = 0.3)]
    pub loaded_fraction: f64,
    #[arg(long, default_value_t = 0.03)]
    pub signal_fraction: f64,
    #[arg(long, default_value_t = 4.5)]
    pub signal_t: f64,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Number of latent factors removed before computing residual sums of squares.
    #[arg(long, default_value_t = 0)]
    pub r_hat: usize,
}

#[derive(Debug, Args)]
pub struct ScreeArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Number of components to list (default: all).
    #[arg(long)]
    pub components: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Proposed,
    Gollob,
    Mandel,
    Naive,
    /// No factor adjustment (forces --r-hat 0).
    None,
}

impl MethodArg {
    fn dof(self) -> Option<DofMethod> {
        match self {
            MethodArg::Proposed => Some(DofMethod::Proposed),
            MethodArg::Gollob => Some(DofMethod::Gollob),
            MethodArg::Mandel => Some(DofMethod::Mandel),
            MethodArg::Naive => Some(DofMethod::Naive),
            MethodArg::None => None,
        }
    }
}

#[derive(Debug, Args)]
pub struct TestArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, default_value_t = 2)]
    pub r_hat: usize,
    #[arg(long, value_enum, default_value_t = MethodArg::Proposed)]
    pub method: MethodArg,
    /// Row covariate to test, by name or zero-based position.
    #[arg(long)]
    pub coef: String,
    #[arg(long, default_value_t = 0.001)]
    pub alpha: f64,
    #[arg(long, default_value_t = MANDEL_DEFAULT_REPS)]
    pub mandel_reps: usize,
    /// Required with --method mandel.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ShapeArg {
    Ones,
    Basis,
    PerpOnes,
    PerpBasis,
}

impl From<ShapeArg> for SignalShape {
    fn from(s: ShapeArg) -> Self {
        match s {
            ShapeArg::Ones => SignalShape::Ones,
            ShapeArg::Basis => SignalShape::Basis,
            ShapeArg::PerpOnes => SignalShape::PerpOnes,
            ShapeArg::PerpBasis => SignalShape::PerpBasis,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SamplerArg {
    Reduced,
    Direct,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub m: usize,
    /// Signal strength of the true factor; omit for the noise case.
    #[arg(long)]
    pub mu: Option<f64>,
    #[arg(long, value_enum, default_value_t = ShapeArg::Basis)]
    pub shape: ShapeArg,
    #[arg(long, default_value_t = 1)]
    pub r_hat: usize,
    #[arg(long, default_value_t = 1.0)]
    pub sigma_sq: f64,
    #[arg(long, default_value_t = DEFAULT_REPLICATES)]
    pub replicates: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = SamplerArg::Reduced)]
    pub sampler: SamplerArg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    Noise,
    Basis,
}

#[derive(Debug, Args)]
pub struct KsTableArgs {
    #[arg(long, value_enum)]
    pub preset: Preset,
    /// Signal strength for the basis preset.
    #[arg(long, default_value_t = 3.0)]
    pub mu: f64,
    #[arg(long, default_value_t = DEFAULT_REPLICATES)]
    pub replicates: usize,
    #[arg(long)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct BootstrapArgs {
    /// Response matrix; omit to bootstrap a generated surrogate instead.
    #[arg(long, requires = "x")]
    pub y: Option<PathBuf>,
    #[arg(long)]
    pub x: Option<PathBuf>,
    #[arg(long)]
    pub z: Option<PathBuf>,
    #[arg(long)]
    pub add_intercepts: bool,
    /// Genes in the generated surrogate.
    #[arg(long, default_value_t = 2000)]
    pub genes: usize,
    /// Row covariate to test (default: age for the surrogate).
    #[arg(long)]
    pub coef: Option<String>,
    #[arg(long, default_value_t = 2)]
    pub k_factors: usize,
    #[arg(long, default_value_t = 0.001)]
    pub alpha: f64,
    #[arg(long, default_value_t = 1000)]
    pub datasets: usize,
    #[arg(long, default_value_t = MANDEL_DEFAULT_REPS)]
    pub mandel_reps: usize,
    #[arg(long)]
    pub seed: u64,
}

/// Rows of JSON values rendered as an aligned table, CSV or JSON.
#[derive(Debug, Clone, Default)]
pub struct Report {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Value>>,
    pub summary: Vec<(String, Value)>,
}

impl Report {
    fn new(columns: &[&str]) -> Self {
        Self {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            ..Default::default()
        }
    }

    fn push(&mut self, row: Vec<Value>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    fn note(&mut self, key: &str, value: impl Into<Value>) {
        self.summary.push((key.to_string(), value.into()));
    }

    pub fn render(&self, format: Format) -> Result<String> {
        match format {
            Format::Json => {
                let rows: Vec<Value> = self
                    .rows
                    .iter()
                    .map(|r| {
                        let obj: Map<String, Value> = self.columns.iter().cloned().zip(r.iter().cloned()).collect();
                        Value::Object(obj)
                    })
                    .collect();
                let summary: Map<String, Value> = self.summary.iter().cloned().collect();
                let mut s = serde_json::to_string_pretty(&json!({ "summary": summary, "rows": rows }))?;
                s.push('\n');
                Ok(s)
            }
            Format::Csv => {
                let mut w = csv::Writer::from_writer(Vec::new());
                w.write_record(&self.columns)?;
                for r in &self.rows {
                    w.write_record(r.iter().map(csv_cell))?;
                }
                let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
                String::from_utf8(bytes).map_err(|e| Error::Io(e.to_string()))
            }
            Format::Table => {
                let cells: Vec<Vec<String>> = self.rows.iter().map(|r| r.iter().map(table_cell).collect()).collect();
                let mut widths: Vec<usize> = self.columns.iter().map(|c| c.len()).collect();
                for r in &cells {
                    for (w, c) in widths.iter_mut().zip(r) {
                        *w = (*w).max(c.len());
                    }
                }
                let mut out = String::new();
                let line = |items: &[String], out: &mut String| {
                    let parts: Vec<String> = items
                        .iter()
                        .zip(&widths)
                        .map(|(c, w)| format!("{c:>w$}", w = *w))
                        .collect();
                    out.push_str(parts.join("  ").trim_end());
                    out.push('\n');
                };
                line(&self.columns, &mut out);
                for r in &cells {
                    line(r, &mut out);
                }
                if !self.summary.is_empty() {
                    out.push('\n');
                    for (k, v) in &self.summary {
                        out.push_str(&format!("{k}: {}\n", table_cell(v)));
                    }
                }
                Ok(out)
            }
        }
    }
}

fn csv_cell(v: &Value) -> String {
    match v {
        Value::Null => String::new(),
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn table_cell(v: &Value) -> String {
    match v {
        Value::Null => "-".into(),
        Value::String(s) => s.clone(),
        Value::Number(n) if n.is_f64() => {
            let x = n.as_f64().unwrap_or(f64::NAN);
            if x != 0.0 && (x.abs() < 1e-3 || x.abs() >= 1e6) {
                format!("{x:.4e}")
            } else {
                format!("{x:.4}")
            }
        }
        Value::Array(a) => a.iter().map(table_cell).collect::<Vec<_>>().join(","),
        other => other.to_string(),
    }
}

fn num(x: f64) -> Value {
    serde_json::Number::from_f64(x).map_or(Value::Null, Value::Number)
}

fn opt(x: Option<f64>) -> Value {
    x.map_or(Value::Null, num)
}

fn cmd_generate(a: &GenerateArgs) -> Result<Report> {
    let s = generate(&SurrogateConfig {
        n_subjects: a.subjects,
        n_genes: a.genes,
        factor_variances: a.factor_variances.clone(),
        loaded_fraction: a.loaded_fraction,
        signal_fraction: a.signal_fraction,
        signal_t: a.signal_t,
        seed: a.seed,
        ..Default::default()
    })?;
    std::fs::create_dir_all(&a.out_dir).map_err(|e| Error::Io(format!("{}: {e}", a.out_dir.display())))?;
    let subjects: Vec<String> = (1..=a.subjects).map(|i| format!("s{i:02}")).collect();
    let genes: Vec<String> = (1..=a.genes).map(|j| format!("g{j:05}")).collect();
    let b = &s.bundle;
    let files = [
        (
            "y.csv",
            LabeledMatrix::new("id", subjects.clone(), genes.clone(), b.y().clone())?,
        ),
        (
            "x.csv",
            LabeledMatrix::new(
                "id",
                subjects,
                vec!["intercept".into(), "sex".into(), "age".into()],
                b.x().expect("surrogate has X").clone(),
            )?,
        ),
        (
            "z.csv",
            LabeledMatrix::new(
                "id",
                genes.clone(),
                vec!["intercept".into(), "tissue".into()],
                b.z().expect("surrogate has Z").clone(),
            )?,
        ),
        (
            "truth.csv",
            LabeledMatrix::new(
                "id",
                genes,
                vec!["age_effect".into(), "noise_variance".into(), "signal".into()],
                Matrix::from_fn(a.genes, 3, |j, c| match c {
                    0 => s.age_effects[j],
                    1 => s.noise_variances[j],
                    _ => f64::from(u8::from(s.age_effects[j] != 0.0)),
                }),
            )?,
        ),
    ];
    let mut report = Report::new(&["file", "rows", "columns"]);
    for (name, m) in &files {
        write_labeled_path(&a.out_dir.join(name), m)?;
        report.push(vec![json!(name), json!(m.data.nrows()), json!(m.data.ncols())]);
    }
    report.note("signal_genes", s.signal_genes.len());
    Ok(report)
}

fn cmd_fit(a: &FitArgs) -> Result<Report> {
    let data = a.input.load()?;
    let fit = LatentFit::new(&data.bundle, a.r_hat)?;
    let mut cols: Vec<String> = vec!["id".into()];
    cols.extend(data.x_names.iter().map(|n| format!("b_{n}")));
    cols.push("rss".into());
    let mut report = Report {
        columns: cols,
        ..Default::default()
    };
    let b = &fit.model.coefficients.b_hat;
    for (j, id) in data.response_ids.iter().enumerate() {
        let mut row = vec![json!(id)];
        row.extend(b.row(j).iter().map(|v| num(*v)));
        row.push(num(fit.rss_at(j)));
        report.push(row);
    }
    report.note("N", data.bundle.n_rows());
    report.note("M", data.bundle.n_cols());
    report.note("p", data.bundle.p());
    report.note("q", data.bundle.q());
    report.note("r_hat", a.r_hat);
    report.note(
        "mu_hat",
        Value::Array(fit.factors.mu_hat.iter().map(|v| num(*v)).collect()),
    );
    Ok(report)
}

fn cmd_scree(a: &ScreeArgs) -> Result<Report> {
    let data = a.input.load()?;
    let fit = crate::model_fit::fit(&data.bundle)?;
    let table = variance_explained(&fit.residuals.e_hat)?;
    let mut report = Report::new(&["component", "variance_pct", "residual_pct"]);
    let take = a.components.unwrap_or(table.rows.len());
    for r in table.rows.iter().take(take) {
        report.push(vec![json!(r.component), num(r.variance_pct), num(r.residual_pct)]);
    }
    Ok(report)
}

fn cmd_test(a: &TestArgs) -> Result<Report> {
    if !(a.alpha > 0.0 && a.alpha < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "alpha must lie in (0, 1), got {}",
            a.alpha
        )));
    }
    let data = a.input.load()?;
    let coef = data.coef_index(&a.coef)?;
    let (method, r_hat) = match a.method.dof() {
        Some(m) => (m, a.r_hat),
        None => (DofMethod::Naive, 0),
    };
    if method == DofMethod::Mandel && r_hat > 0 && a.seed.is_none() {
        return Err(Error::InvalidArgument("--method mandel needs --seed".into()));
    }
    let opts = TestOptions {
        mandel_reps: a.mandel_reps,
        mandel_seed: a.seed.unwrap_or(0),
        mandel_sampler: WishartSampler::Bidiagonal,
    };
    let fit = LatentFit::new(&data.bundle, r_hat)?;
    let assigner = DfAssigner::new(method, fit.n(), fit.m(), r_hat, &opts)?;
    let mut results = fit.test_all(coef, &assigner, Some(&data.response_ids))?;
    // stable sort keeps input order among equal p-values
    results.sort_by(|x, y| x.p_value.total_cmp(&y.p_value));
    let mut report = Report::new(&["id", "estimate", "std_error", "t_stat", "df_resid", "p_value", "method"]);
    let significant = results.iter().filter(|r| r.p_value < a.alpha).count();
    for r in &results {
        report.push(vec![
            json!(r.response_id),
            num(r.estimate),
            num(r.std_error),
            num(r.t_stat),
            num(r.df_resid),
            num(r.p_value),
            json!(r.method_name()),
        ]);
    }
    report.note("coefficient", data.x_names[coef].clone());
    report.note("r_hat", r_hat);
    report.note("tests", results.len());
    report.note("alpha", num(a.alpha));
    report.note("significant", significant);
    Ok(report)
}

const SIM_COLUMNS: [&str; 14] = [
    "n",
    "m",
    "mu",
    "shape",
    "r_hat",
    "mean_df",
    "se_df",
    "theoretical_df",
    "conjectural",
    "alternative_df",
    "within_theory",
    "ks_D",
    "ks_p",
    "replicates",
];

fn sim_row(r: &SimResult) -> Vec<Value> {
    vec![
        json!(r.n),
        json!(r.m),
        r.mu.first().map_or(Value::Null, |v| num(*v)),
        json!(r.shape),
        json!(r.r_hat),
        num(r.mean_df),
        num(r.se_df),
        num(r.theoretical_df),
        json!(r.conjectural),
        opt(r.alternative_df),
        json!(r.within_theory),
        opt(r.ks.map(|k| k.statistic)),
        opt(r.ks.map(|k| k.p_value)),
        json!(r.replicates_used),
    ]
}

fn cmd_simulate(a: &SimulateArgs) -> Result<Report> {
    let mut config = match a.mu {
        Some(mu) => SimConfig::signal(a.n, a.m, mu, a.shape.into(), a.replicates, a.seed),
        None => SimConfig::noise(a.n, a.m, a.r_hat, a.replicates, a.seed),
    };
    config.r_hat = a.r_hat;
    config.sigma_sq = a.sigma_sq;
    config.sampler = match a.sampler {
        SamplerArg::Reduced => SimSampler::Reduced,
        SamplerArg::Direct => SimSampler::Direct,
    };
    let r = run_sim(&config)?;
    let mut report = Report::new(&SIM_COLUMNS);
    report.push(sim_row(&r));
    if let Some(w) = r.within_alternative {
        report.note("within_alternative", w);
    }
    for (k, s) in r.mu_hat.iter().enumerate() {
        report.note(&format!("mu_hat_{}", k + 1), num(s.mean));
        report.note(&format!("mu_hat_{}_se", k + 1), num(s.se));
    }
    for (k, s) in r.loading_overlap_sq.iter().enumerate() {
        report.note(&format!("overlap_sq_{}", k + 1), num(s.mean));
        report.note(&format!("overlap_sq_{}_se", k + 1), num(s.se));
    }
    Ok(report)
}

fn cmd_ks_table(a: &KsTableArgs, format: Format) -> Result<Report> {
    let configs = match a.preset {
        Preset::Noise => noise_grid(a.replicates, a.seed),
        Preset::Basis => basis_grid(a.mu, a.replicates, a.seed),
    };
    let results = run_grid(&configs)?;
    if format != Format::Table {
        let mut report = Report::new(&SIM_COLUMNS);
        for r in &results {
            report.push(sim_row(r));
        }
        return Ok(report);
    }
    // rows n, columns m, cells KS p-values
    let mut columns = vec!["n \\ m".to_string()];
    columns.extend(GRID_M.iter().map(|m| m.to_string()));
    let mut report = Report {
        columns,
        ..Default::default()
    };
    for (i, n) in GRID_N.iter().enumerate() {
        let mut row = vec![json!(n.to_string())];
        for j in 0..GRID_M.len() {
            let r = &results[i * GRID_M.len() + j];
            row.push(r.ks.map_or(json!("-"), |k| json!(format!("{:.2}", k.p_value))));
        }
        report.push(row);
    }
    Ok(report)
}

fn cmd_bootstrap(a: &BootstrapArgs) -> Result<Report> {
    let (bundle, coef) = match &a.y {
        Some(y) => {
            let data = ingest(y, a.x.as_deref(), a.z.as_deref(), a.add_intercepts)?;
            let key = a
                .coef
                .as_deref()
                .ok_or_else(|| Error::InvalidArgument("--coef is required with --y".into()))?;
            let coef = data.coef_index(key)?;
            (data.bundle, coef)
        }
        None => {
            let s = generate(&SurrogateConfig {
                n_genes: a.genes,
                seed: a.seed,
                ..Default::default()
            })?;
            let coef = match a.coef.as_deref() {
                None | Some("age") => AGE_COLUMN,
                Some(other) => other
                    .parse()
                    .map_err(|_| Error::InvalidArgument(format!("unknown surrogate covariate '{other}'")))?,
            };
            (s.bundle, coef)
        }
    };
    let mut config = BootstrapConfig::new(a.k_factors, a.alpha, a.datasets, a.seed, coef);
    config.test_options.mandel_reps = a.mandel_reps;
    let r = evaluate(&config, &bundle)?;
    let mut report = Report::new(&[
        "method",
        "fdr_pct",
        "fdr_se",
        "fpr_pct",
        "fpr_se",
        "tpr_pct",
        "tpr_se",
        "mean_discoveries",
    ]);
    for row in &r.rows {
        report.push(vec![
            json!(row.method),
            opt(row.fdr.map(|v| v.mean)),
            opt(row.fdr.map(|v| v.se)),
            num(row.fpr.mean),
            num(row.fpr.se),
            opt(row.tpr.map(|v| v.mean)),
            opt(row.tpr.map(|v| v.se)),
            num(row.mean_discoveries),
        ]);
    }
    report.note("datasets", r.n_datasets);
    report.note("responses", r.n_responses);
    report.note("nonzero_effects", r.n_nonzero);
    report.note("alpha", num(r.alpha));
    Ok(report)
}

fn execute(cli: &Cli) -> Result<Report> {
    match &cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Scree(a) => cmd_scree(a),
        Command::Test(a) => cmd_test(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::KsTable(a) => cmd_ks_table(a, cli.format),
        Command::Bootstrap(a) => cmd_bootstrap(a),
    }
}

/// Runs a parsed command and returns the rendered output.
pub fn run(cli: &Cli) -> Result<String> {
    let threads = match cli.threads {
        Some(0) => return Err(Error::InvalidArgument("--threads must be positive".into())),
        Some(t) => t,
        None => 0,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let report = pool.install(|| execute(cli))?;
    report.render(cli.format)
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| Error::Io(format!("{}: {e}", path.display()))),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            stdout.flush()?;
            Ok(())
        }
    }
}

/// Entry point for the binary; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli).and_then(|text| emit(cli.out.as_deref(), &text)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.code());
            1
        }
    }
}
