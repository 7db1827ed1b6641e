//! Synthetic additive-model experiments and their selection/estimation
//! metrics.
//!
//! Covariates are truncated standard normals on `[0, 1]` mixed with a shared
//! factor inside the active set and another shared factor outside it. Every
//! replication draws from its own ChaCha stream of the configured seed, so
//! replications are reproducible independently of scheduling.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::estimators::{fit, fit_pair, FitError, FitOptions, FitResult, Method};
use crate::solver::{LipschitzMode, SolverConfig};

/// Active covariates (zero-based) of every simulated model.
pub const ACTIVE: [usize; 4] = [0, 1, 2, 3];

/// Monte Carlo sample size used to estimate the signal variance.
pub const CALIBRATION_DRAWS: usize = 100_000;

/// Grid used for monotonicity checks of fitted components.
pub const MONOTONE_GRID: usize = 1001;

const CURVE_GRID: usize = 51;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Model {
    /// Four nonlinear monotone components.
    A,
    /// Model A with the fourth component replaced by `2x`.
    B,
    /// `-2 x1 - 2 x2 + 2 x3 + 2 x4`.
    #[serde(rename = "linear")]
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Component {
    G1,
    G2,
    G3,
    G4a,
    G4b,
}

pub fn true_component(id: Component, x: f64) -> f64 {
    match id {
        Component::G1 => -(x * x).exp(),
        Component::G2 => -(x + 0.1).ln(),
        Component::G3 => 2.0 * (20.0 * x * x).tanh() + 0.5 * (x * x * x).exp(),
        Component::G4a => {
            let e = (10.0 * x - 5.0).exp();
            2.0 * e / (1.0 + e)
        }
        Component::G4b => 2.0 * x,
    }
}

const LINEAR_COEFFICIENTS: [f64; 4] = [-2.0, -2.0, 2.0, 2.0];

impl Model {
    /// True function of active component `slot` (0..4).
    pub fn component(self, slot: usize, x: f64) -> f64 {
        match self {
            Model::A => true_component(
                [Component::G1, Component::G2, Component::G3, Component::G4a][slot],
                x,
            ),
            Model::B => true_component(
                [Component::G1, Component::G2, Component::G3, Component::G4b][slot],
                x,
            ),
            Model::Linear => LINEAR_COEFFICIENTS[slot] * x,
        }
    }

    pub fn component_labels(self) -> [&'static str; 4] {
        match self {
            Model::A => ["g1", "g2", "g3", "g4a"],
            Model::B => ["g1", "g2", "g3", "g4b"],
            Model::Linear => ["g1", "g2", "g3", "g4"],
        }
    }

    /// Noise-free response of one row of the active covariates.
    pub fn signal(self, active_row: &[f64]) -> f64 {
        (0..4).map(|s| self.component(s, active_row[s])).sum()
    }
}

/// Inverse-CDF draws from N(0, 1) truncated to `[0, 1]`.
pub fn sample_truncnorm01<R: Rng + ?Sized>(count: usize, rng: &mut R) -> Vec<f64> {
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    let lo = normal.cdf(0.0);
    let hi = normal.cdf(1.0);
    (0..count)
        .map(|_| {
            let u = lo + (hi - lo) * rng.gen::<f64>();
            normal.inverse_cdf(u).clamp(0.0, 1.0)
        })
        .collect()
}

/// `x_ij = (w_ij + t u_i) / (1 + t)` inside the active set and
/// `(w_ij + t v_i) / (1 + t)` outside it.
pub fn gen_covariates<R: Rng + ?Sized>(
    n: usize,
    p: usize,
    t_dep: f64,
    active: &[usize],
    rng: &mut R,
) -> Array2<f64> {
    let w = sample_truncnorm01(n * p, rng);
    let u = sample_truncnorm01(n, rng);
    let v = sample_truncnorm01(n, rng);
    let mut is_active = vec![false; p];
    for &j in active {
        is_active[j] = true;
    }
    Array2::from_shape_fn((n, p), |(i, j)| {
        let shared = if is_active[j] { u[i] } else { v[i] };
        (w[i * p + j] + t_dep * shared) / (1.0 + t_dep)
    })
}

/// Noise level giving `Var(signal) / sigma^2 = snr`, with the signal variance
/// estimated from [`CALIBRATION_DRAWS`] draws of the active covariates.
pub fn calibrate_sigma<R: Rng + ?Sized>(model: Model, snr: f64, t_dep: f64, rng: &mut R) -> f64 {
    let x = gen_covariates(CALIBRATION_DRAWS, 4, t_dep, &[0, 1, 2, 3], rng);
    let signal: Vec<f64> = x
        .axis_iter(Axis(0))
        .map(|row| model.signal(row.as_slice().expect("row-major")))
        .collect();
    let mean = signal.iter().sum::<f64>() / signal.len() as f64;
    let var = signal.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (signal.len() - 1) as f64;
    (var / snr).sqrt()
}

pub fn gen_response<R: Rng + ?Sized>(
    x: ArrayView2<f64>,
    model: Model,
    sigma: f64,
    rng: &mut R,
) -> Array1<f64> {
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    x.axis_iter(Axis(0))
        .map(|row| {
            let active: Vec<f64> = ACTIVE.iter().map(|&j| row[j]).collect();
            let noise: f64 = rng.sample(normal);
            model.signal(&active) + sigma * noise
        })
        .collect()
}

/// `(TP, FP)` of a selected support against the true active set.
pub fn tp_fp(support: &[usize], active: &[usize]) -> (usize, usize) {
    let tp = support.iter().filter(|j| active.contains(j)).count();
    (tp, support.len() - tp)
}

fn centered(v: &[f64]) -> Vec<f64> {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| x - mean).collect()
}

/// Mean squared difference between the fitted and true component `slot` at
/// the observed covariate values, both centered over those values.
pub fn component_mse(
    fit: &FitResult,
    slot: usize,
    x: ArrayView2<f64>,
    model: Model,
) -> Result<f64, FitError> {
    let j = ACTIVE[slot];
    let column: Vec<f64> = x.column(j).to_vec();
    let fitted = centered(&fit.component_at_raw(j, &column)?);
    let truth = centered(&column.iter().map(|&v| model.component(slot, v)).collect::<Vec<_>>());
    Ok(fitted
        .iter()
        .zip(&truth)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        / column.len() as f64)
}

/// Whether values on a grid are monotone in either direction, with a small
/// absolute slack for rounding.
pub fn is_monotone(values: &[f64]) -> bool {
    let scale = values.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(1.0);
    let slack = 1e-12 * scale;
    let up = values.windows(2).all(|w| w[1] >= w[0] - slack);
    let down = values.windows(2).all(|w| w[1] <= w[0] + slack);
    up || down
}

/// Sign-coherent selected groups whose curve is not monotone on a 1001-point
/// grid. Only meaningful for I-spline and linear fits.
pub fn monotonicity_violations(fit: &FitResult) -> Option<usize> {
    if fit.transform.basis.kind == crate::spline::BasisKind::Bspline {
        return None;
    }
    let grid: Vec<f64> = (0..MONOTONE_GRID)
        .map(|i| i as f64 / (MONOTONE_GRID - 1) as f64)
        .collect();
    let count = fit
        .support
        .iter()
        .filter(|&&j| fit.diagnostics.sign_coherent[j])
        .filter(|&&j| {
            let curve = fit.component_curve(j, &grid).expect("j in range");
            !is_monotone(&curve)
        })
        .count();
    Some(count)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LambdaRule {
    /// K-fold cross-validation on the path grid (both stages for adaptive fits).
    Cv,
    /// Normalized objective with `lambda_n = lambda0 * n^(-gamma)`.
    Rate { lambda0: f64, gamma: f64 },
}

fn default_methods() -> Vec<Method> {
    Method::ALL.to_vec()
}
fn default_knots() -> usize {
    6
}
fn default_folds() -> usize {
    10
}
fn default_grid_size() -> usize {
    100
}
fn default_grid_ratio() -> f64 {
    1e-3
}
fn default_lambda_rule() -> LambdaRule {
    LambdaRule::Cv
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n: usize,
    pub p: usize,
    #[serde(default)]
    pub t_dep: f64,
    pub snr: f64,
    pub model: Model,
    pub replications: usize,
    pub seed: u64,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default = "default_knots")]
    pub knots: usize,
    /// I-spline order; B-splines are always quadratic.
    #[serde(default)]
    pub order: Option<usize>,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default = "default_grid_size")]
    pub grid_size: usize,
    #[serde(default = "default_grid_ratio")]
    pub grid_ratio: f64,
    /// Scale design columns to unit variance after centering.
    #[serde(default)]
    pub standardize: bool,
    #[serde(default = "default_lambda_rule")]
    pub lambda_rule: LambdaRule,
    /// Store fitted curves of the active components in the raw records.
    #[serde(default = "default_true")]
    pub record_curves: bool,
    #[serde(default)]
    pub max_iterations: Option<usize>,
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidConfig(m.to_string()));
        if !(self.t_dep >= 0.0 && self.t_dep.is_finite()) {
            return bad("t_dep must be finite and nonnegative");
        }
        if !(self.snr > 0.0) {
            return bad("snr must be positive");
        }
        if self.p < ACTIVE.len() {
            return bad("p must be at least the active-set size 4");
        }
        if self.replications == 0 {
            return bad("replications must be at least 1");
        }
        if self.methods.is_empty() {
            return bad("at least one method is required");
        }
        if self.n < 2 * self.folds {
            return bad("n must allow at least two observations per fold");
        }
        Ok(())
    }

    /// Fit options shared by every method of replication `rep`.
    pub fn fit_options(&self, rep: usize) -> FitOptions {
        let mut solver = SolverConfig {
            lipschitz: LipschitzMode::PowerIteration,
            ..SolverConfig::default()
        };
        if let Some(max) = self.max_iterations {
            solver.max_iterations = max;
        }
        let (lambda, initial_lambda) = match self.lambda_rule {
            LambdaRule::Cv => (None, None),
            LambdaRule::Rate { lambda0, gamma } => {
                solver.normalized = true;
                let l = lambda0 * (self.n as f64).powf(-gamma);
                (Some(l), Some(l))
            }
        };
        FitOptions {
            knots: self.knots,
            order: self.order,
            folds: self.folds,
            seed: replication_seed(self.seed, rep as u64),
            grid_size: self.grid_size,
            grid_ratio: self.grid_ratio,
            standardize: self.standardize,
            lambda,
            initial_lambda,
            solver,
        }
    }
}

/// Seed for the fold assignment of replication `rep`.
pub fn replication_seed(seed: u64, rep: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(rep.wrapping_add(1).wrapping_mul(0xD1B5_4A32_D192_ED03))
}

/// Data stream of replication `rep`; stream 0 is reserved for calibration.
pub fn replication_rng(seed: u64, rep: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep + 1);
    rng
}

pub fn calibration_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRecord {
    pub method: Method,
    pub support: Vec<usize>,
    pub tp: usize,
    pub fp: usize,
    /// Whether each active component was selected.
    pub selected: [bool; 4],
    pub mse: [f64; 4],
    pub exact_recovery: bool,
    pub lambda: f64,
    pub converged: bool,
    pub kkt_residual: f64,
    pub incoherent_selected: Vec<usize>,
    /// Sign-coherent selected groups with a non-monotone curve.
    pub monotone_violations: Option<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub curves: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub replication: usize,
    pub records: Vec<MethodRecord>,
    /// Methods that failed in this replication, with the error text.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failures: Vec<(Method, String)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
}

impl MeanSd {
    /// Mean and sample standard deviation (`n - 1` denominator).
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self {
                mean: f64::NAN,
                sd: f64::NAN,
            };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let sd = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, sd }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub completed: usize,
    pub failed: usize,
    pub selection: [MeanSd; 4],
    pub tp: MeanSd,
    pub fp: MeanSd,
    pub mse: [MeanSd; 4],
    pub exact_recovery: f64,
    pub unconverged: usize,
    pub incoherent_groups: usize,
    pub monotone_violations: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub config: SimConfig,
    pub sigma: f64,
    pub summaries: Vec<MethodSummary>,
    pub replications: Vec<ReplicationRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub runtime_seconds: Option<f64>,
}

fn record_for(
    fit_result: &FitResult,
    x: ArrayView2<f64>,
    model: Model,
    record_curves: bool,
) -> Result<MethodRecord, FitError> {
    let (tp, fp) = tp_fp(&fit_result.support, &ACTIVE);
    let mut selected = [false; 4];
    let mut mse = [0.0; 4];
    for slot in 0..4 {
        selected[slot] = fit_result.support.contains(&ACTIVE[slot]);
        mse[slot] = component_mse(fit_result, slot, x, model)?;
    }
    let curves = if record_curves {
        let grid: Vec<f64> = (0..CURVE_GRID)
            .map(|i| i as f64 / (CURVE_GRID - 1) as f64)
            .collect();
        ACTIVE
            .iter()
            .map(|&j| fit_result.component_curve(j, &grid))
            .collect::<Result<_, _>>()?
    } else {
        Vec::new()
    };
    Ok(MethodRecord {
        method: fit_result.method,
        exact_recovery: tp == ACTIVE.len() && fp == 0,
        support: fit_result.support.clone(),
        tp,
        fp,
        selected,
        mse,
        lambda: fit_result.lambda,
        converged: fit_result.diagnostics.converged,
        kkt_residual: fit_result.diagnostics.kkt_residual,
        incoherent_selected: fit_result.diagnostics.incoherent_selected.clone(),
        monotone_violations: monotonicity_violations(fit_result),
        curves,
    })
}

/// Runs every configured method on one generated data set.
pub fn run_replication(cfg: &SimConfig, sigma: f64, rep: usize) -> ReplicationRecord {
    let mut rng = replication_rng(cfg.seed, rep as u64);
    let x = gen_covariates(cfg.n, cfg.p, cfg.t_dep, &ACTIVE, &mut rng);
    let y = gen_response(x.view(), cfg.model, sigma, &mut rng);
    let opts = cfg.fit_options(rep);
    let wants = |m: Method| cfg.methods.contains(&m);

    let mut fits: Vec<Result<FitResult, (Method, FitError)>> = Vec::new();
    for (plain, adaptive) in [(Method::Ms, Method::Ams), (Method::Lasso, Method::Alasso)] {
        match (wants(plain), wants(adaptive)) {
            (_, true) => match fit_pair(x.view(), y.view(), adaptive, &opts) {
                Ok((first, second)) => {
                    if wants(plain) {
                        fits.push(Ok(first));
                    }
                    fits.push(Ok(second));
                }
                Err(e) => {
                    let msg = e.to_string();
                    if wants(plain) {
                        fits.push(Err((plain, FitError::InitialStage(msg))));
                    }
                    fits.push(Err((adaptive, e)));
                }
            },
            (true, false) => fits.push(fit(x.view(), y.view(), plain, &opts).map_err(|e| (plain, e))),
            (false, false) => {}
        }
    }
    if wants(Method::Bs) {
        fits.push(fit(x.view(), y.view(), Method::Bs, &opts).map_err(|e| (Method::Bs, e)));
    }

    let mut records = Vec::new();
    let mut failures = Vec::new();
    for f in fits {
        match f.and_then(|fr| record_for(&fr, x.view(), cfg.model, cfg.record_curves).map_err(|e| (fr.method, e))) {
            Ok(r) => records.push(r),
            Err((m, e)) => failures.push((m, e.to_string())),
        }
    }
    records.sort_by_key(|r| r.method);
    failures.sort_by_key(|(m, _)| *m);
    ReplicationRecord {
        replication: rep,
        records,
        failures,
    }
}

pub fn summarize(cfg: &SimConfig, reps: &[ReplicationRecord]) -> Vec<MethodSummary> {
    let mut methods = cfg.methods.clone();
    methods.sort();
    methods.dedup();
    methods
        .into_iter()
        .map(|method| {
            let records: Vec<&MethodRecord> = reps
                .iter()
                .flat_map(|r| r.records.iter().filter(move |m| m.method == method))
                .collect();
            let failed = reps
                .iter()
                .filter(|r| r.failures.iter().any(|(m, _)| *m == method))
                .count();
            let col = |f: &dyn Fn(&MethodRecord) -> f64| -> MeanSd {
                MeanSd::of(&records.iter().map(|r| f(r)).collect::<Vec<_>>())
            };
            let selection = std::array::from_fn(|s| col(&|r| if r.selected[s] { 1.0 } else { 0.0 }));
            let mse = std::array::from_fn(|s| col(&|r| r.mse[s]));
            let monotone_violations = records
                .iter()
                .map(|r| r.monotone_violations)
                .try_fold(0usize, |acc, v| v.map(|v| acc + v));
            MethodSummary {
                method,
                completed: records.len(),
                failed,
                selection,
                tp: col(&|r| r.tp as f64),
                fp: col(&|r| r.fp as f64),
                mse,
                exact_recovery: col(&|r| if r.exact_recovery { 1.0 } else { 0.0 }).mean,
                unconverged: records.iter().filter(|r| !r.converged).count(),
                incoherent_groups: records.iter().map(|r| r.incoherent_selected.len()).sum(),
                monotone_violations,
            }
        })
        .collect()
}

/// Runs all replications on the current rayon pool and aggregates them.
pub fn run_experiment(cfg: &SimConfig) -> Result<SimReport, SimError> {
    cfg.validate()?;
    let sigma = calibrate_sigma(cfg.model, cfg.snr, cfg.t_dep, &mut calibration_rng(cfg.seed));
    let replications: Vec<ReplicationRecord> = (0..cfg.replications)
        .into_par_iter()
        .map(|rep| run_replication(cfg, sigma, rep))
        .collect();
    let summaries = summarize(cfg, &replications);
    Ok(SimReport {
        config: cfg.clone(),
        sigma,
        summaries,
        replications,
        runtime_seconds: None,
    })
}

fn cell(m: MeanSd) -> String {
    if m.mean.is_nan() {
        "      NA     ".to_string()
    } else {
        format!("{:5.2} ({:4.2})", m.mean, m.sd)
    }
}

/// Aligned text table with a selection block and an estimation block.
pub fn render_table(report: &SimReport) -> String {
    let labels = report.config.model.component_labels();
    let width = 14;
    let mut out = String::new();
    let header = |cols: &[&str]| -> String {
        let mut h = format!("{:<14}", "");
        for c in cols {
            h.push_str(&format!("{:>w$}", c, w = width));
        }
        h.push('\n');
        h
    };
    let rule = "-".repeat(14 + width * 6) + "\n";
    out.push_str(&format!(
        "Model {:?}, n = {}, P = {}, t = {}, SNR = {}, replications = {}\n",
        report.config.model,
        report.config.n,
        report.config.p,
        report.config.t_dep,
        report.config.snr,
        report.config.replications
    ));
    out.push_str("\nSelection\n");
    let mut cols: Vec<&str> = labels.to_vec();
    cols.extend(["TP", "FP"]);
    out.push_str(&header(&cols));
    out.push_str(&rule);
    for s in &report.summaries {
        let mut line = format!("{:<14}", s.method.label());
        for m in s.selection.iter().chain([&s.tp, &s.fp]) {
            line.push_str(&format!("{:>w$}", cell(*m), w = width));
        }
        if s.failed > 0 {
            line.push_str(&format!("  [{} failed]", s.failed));
        }
        out.push_str(&line);
        out.push('\n');
    }
    out.push_str("\nEstimation\n");
    out.push_str(&header(&labels));
    out.push_str(&rule);
    for s in &report.summaries {
        let mut line = format!("{:<14}", s.method.label());
        for m in &s.mse {
            line.push_str(&format!("{:>w$}", cell(*m), w = width));
        }
        out.push_str(&line);
        out.push('\n');
    }
    out
}
