//! Model fits: MS-lasso (I-splines + cooperative penalty), its adaptive
//! version, lasso, adaptive lasso and the adaptive B-spline group lasso.

use ndarray::{Array1, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cv::{cv_curve, CvError, CvResult, PathSpec};
use crate::design::{build_design, center_response, DesignError, DesignMatrix, DesignTransform};
use crate::solver::{
    lambda_grid, lambda_max, sign_coherence_check, solve, solve_path, support, PenaltyKind,
    PenaltySpec, SolverConfig, SolverError, SolverResult,
};
use crate::spline::{BasisSpec, SplineError};

#[derive(Debug, Error)]
pub enum FitError {
    #[error("X has {rows} rows but y has {len} entries")]
    ResponseLength { rows: usize, len: usize },
    #[error("non-finite response value at row {0}")]
    NonFiniteResponse(usize),
    #[error("covariate index {index} out of range for {count} covariates")]
    ComponentOutOfRange { index: usize, count: usize },
    #[error(transparent)]
    Spline(#[from] SplineError),
    #[error(transparent)]
    Design(#[from] DesignError),
    #[error(transparent)]
    Cv(#[from] CvError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error("shared two-stage fit failed: {0}")]
    InitialStage(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Ms,
    Ams,
    Lasso,
    Alasso,
    Bs,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Ms, Method::Ams, Method::Lasso, Method::Alasso, Method::Bs];

    pub fn label(self) -> &'static str {
        match self {
            Method::Ms => "MS-lasso",
            Method::Ams => "Ad. MS-lasso",
            Method::Lasso => "Lasso",
            Method::Alasso => "Ad. lasso",
            Method::Bs => "BS-lasso",
        }
    }

    pub fn id(self) -> &'static str {
        match self {
            Method::Ms => "ms",
            Method::Ams => "ams",
            Method::Lasso => "lasso",
            Method::Alasso => "alasso",
            Method::Bs => "bs",
        }
    }

    pub fn is_adaptive(self) -> bool {
        matches!(self, Method::Ams | Method::Alasso | Method::Bs)
    }

    pub fn penalty(self) -> PenaltyKind {
        match self {
            Method::Ms | Method::Ams => PenaltyKind::Coop,
            Method::Lasso | Method::Alasso => PenaltyKind::L1,
            Method::Bs => PenaltyKind::Group,
        }
    }

    /// The non-adaptive method whose fit seeds this one's weights.
    pub fn initial(self) -> Method {
        match self {
            Method::Ams => Method::Ms,
            Method::Alasso => Method::Lasso,
            other => other,
        }
    }

    pub fn basis(self, opts: &FitOptions) -> Result<BasisSpec, SplineError> {
        let spec = match self {
            Method::Ms | Method::Ams => BasisSpec::ispline(opts.knots, opts.order.unwrap_or(2))?,
            Method::Bs => BasisSpec::bspline(opts.knots, opts.order.unwrap_or(3))?,
            Method::Lasso | Method::Alasso => BasisSpec::identity(),
        };
        Ok(spec.standardized(opts.standardize))
    }
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.id() == s)
            .ok_or_else(|| format!("unknown method '{s}' (expected ms, ams, lasso, alasso or bs)"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    /// Interior knot count.
    pub knots: usize,
    /// Spline order; `None` means 2 for I-splines and 3 (quadratic) for B-splines.
    pub order: Option<usize>,
    pub folds: usize,
    pub seed: u64,
    pub grid_size: usize,
    pub grid_ratio: f64,
    /// Scale design columns to unit variance after centering.
    pub standardize: bool,
    /// Fixed lambda for the final stage instead of cross-validation.
    pub lambda: Option<f64>,
    /// Fixed lambda for the initial stage of adaptive fits.
    pub initial_lambda: Option<f64>,
    pub solver: SolverConfig,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            knots: 6,
            order: None,
            folds: 10,
            seed: 0,
            grid_size: 100,
            grid_ratio: 1e-3,
            standardize: false,
            lambda: None,
            initial_lambda: None,
            solver: SolverConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub kkt_residual: f64,
    pub converged: bool,
    pub iterations: usize,
    pub sign_coherent: Vec<bool>,
    /// Selected groups with coefficients of both signs.
    pub incoherent_selected: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

/// First-stage summary kept by adaptive fits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialStage {
    pub lambda: f64,
    pub support: Vec<usize>,
    pub cv: Option<CvResult>,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub method: Method,
    pub transform: DesignTransform,
    /// Coefficients grouped by covariate.
    pub coefficients: Vec<Vec<f64>>,
    pub intercept: f64,
    pub lambda: f64,
    /// Group weights of the final stage; `None` marks an excluded group.
    pub weights: Vec<Option<f64>>,
    pub support: Vec<usize>,
    pub cv: Option<CvResult>,
    pub initial: Option<InitialStage>,
    pub diagnostics: Diagnostics,
}

impl FitResult {
    pub fn beta(&self) -> Array1<f64> {
        self.coefficients.iter().flatten().copied().collect()
    }

    pub fn n_covariates(&self) -> usize {
        self.coefficients.len()
    }

    pub fn is_null(&self) -> bool {
        self.support.is_empty()
    }

    pub fn predict(&self, x_new: ArrayView2<f64>) -> Result<Array1<f64>, FitError> {
        let z = self.transform.expand_new(x_new)?;
        let beta = self.beta();
        Ok(z.dot(&beta) + self.intercept)
    }

    /// Fitted component `j` on points of the transformed `[0, 1]` scale
    /// (raw scale for the linear methods).
    pub fn component_curve(&self, j: usize, grid: &[f64]) -> Result<Vec<f64>, FitError> {
        let count = self.n_covariates();
        if j >= count {
            return Err(FitError::ComponentOutOfRange { index: j, count });
        }
        let b = &self.coefficients[j];
        Ok(grid
            .iter()
            .map(|&x| {
                self.transform
                    .centered_basis_at(j, x)
                    .iter()
                    .zip(b)
                    .map(|(z, c)| z * c)
                    .sum()
            })
            .collect())
    }

    /// Fitted component `j` at raw covariate values, through the stored
    /// rescaling and clamping.
    pub fn component_at_raw(&self, j: usize, raw: &[f64]) -> Result<Vec<f64>, FitError> {
        let count = self.n_covariates();
        if j >= count {
            return Err(FitError::ComponentOutOfRange { index: j, count });
        }
        let mapped: Vec<f64> = if self.transform.basis.rescales() {
            raw.iter().map(|&v| self.transform.rescale[j].apply(v)).collect()
        } else {
            raw.to_vec()
        };
        self.component_curve(j, &mapped)
    }
}

struct Stage {
    result: SolverResult,
    lambda: f64,
    cv: Option<CvResult>,
}

fn check_inputs(x: ArrayView2<f64>, y: ArrayView1<f64>) -> Result<(), FitError> {
    if x.nrows() != y.len() {
        return Err(FitError::ResponseLength {
            rows: x.nrows(),
            len: y.len(),
        });
    }
    if let Some(i) = y.iter().position(|v| !v.is_finite()) {
        return Err(FitError::NonFiniteResponse(i));
    }
    Ok(())
}

fn zero_result(design: &DesignMatrix) -> SolverResult {
    let groups = design.groups();
    SolverResult {
        beta: Array1::zeros(groups.total()),
        objective: 0.0,
        iterations: 0,
        kkt_residual: 0.0,
        sign_coherent: vec![true; groups.count],
        converged: true,
        trace: None,
    }
}

/// Largest lambda of the grid on the solver's scale.
pub fn lambda_max_for(
    design: &DesignMatrix,
    yc: ArrayView1<f64>,
    kind: PenaltyKind,
    weights: &[f64],
    solver: &SolverConfig,
) -> Result<f64, SolverError> {
    let lmax = lambda_max(design.z.view(), yc, design.groups(), kind, weights)?;
    Ok(if solver.normalized {
        lmax / design.z.nrows() as f64
    } else {
        lmax
    })
}

fn fit_stage(
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    design: &DesignMatrix,
    yc: ArrayView1<f64>,
    spec: &PathSpec,
    lambda: Option<f64>,
    opts: &FitOptions,
) -> Result<Stage, FitError> {
    let groups = design.groups();
    if let Some(lambda) = lambda {
        let penalty = PenaltySpec {
            kind: spec.kind,
            weights: spec.weights.clone(),
            lambda,
        };
        let result = solve(design.z.view(), yc, groups, &penalty, &opts.solver, None)?;
        return Ok(Stage {
            result,
            lambda,
            cv: None,
        });
    }
    let lmax = lambda_max_for(design, yc, spec.kind, &spec.weights, &opts.solver)?;
    if !(lmax > 0.0) {
        return Ok(Stage {
            result: zero_result(design),
            lambda: 0.0,
            cv: None,
        });
    }
    let grid = lambda_grid(lmax, opts.grid_size, opts.grid_ratio);
    let cv = cv_curve(x, y, spec, &grid, opts.folds, opts.seed, &opts.solver)?;
    let path = solve_path(
        design.z.view(),
        yc,
        groups,
        spec.kind,
        &spec.weights,
        &grid[..=cv.chosen_index],
        &opts.solver,
    )?;
    let point = path.into_iter().last().expect("grid is nonempty");
    Ok(Stage {
        result: point.result,
        lambda: point.lambda,
        cv: Some(cv),
    })
}

/// Adaptive weights `1/||b_j||`, infinite for zero groups.
pub fn adaptive_weights(beta: &[f64], groups: &crate::design::Groups) -> Vec<f64> {
    let selected = support(beta, groups);
    (0..groups.count)
        .map(|j| {
            if selected.binary_search(&j).is_ok() {
                let b = &beta[groups.range(j)];
                1.0 / b.iter().map(|v| v * v).sum::<f64>().sqrt()
            } else {
                f64::INFINITY
            }
        })
        .collect()
}

fn assemble(
    method: Method,
    design: &DesignMatrix,
    intercept: f64,
    stage: Stage,
    weights: &[f64],
    initial: Option<InitialStage>,
    notes: Vec<String>,
) -> FitResult {
    let groups = *design.groups();
    let mut beta = stage.result.beta;
    // Clear rounding-level coefficients so the stored support matches beta.
    beta.mapv_inplace(|v| if v.abs() <= crate::solver::ZERO_TOLERANCE { 0.0 } else { v });
    let b = beta.as_slice().expect("contiguous");
    let sign_coherent = sign_coherence_check(b, &groups);
    let selected = support(b, &groups);
    let incoherent_selected = selected
        .iter()
        .copied()
        .filter(|&j| !sign_coherent[j])
        .collect();
    FitResult {
        method,
        transform: design.transform.clone(),
        coefficients: (0..groups.count).map(|j| b[groups.range(j)].to_vec()).collect(),
        intercept,
        lambda: stage.lambda,
        weights: weights
            .iter()
            .map(|&w| if w.is_finite() { Some(w) } else { None })
            .collect(),
        support: selected,
        cv: stage.cv,
        initial,
        diagnostics: Diagnostics {
            kkt_residual: stage.result.kkt_residual,
            converged: stage.result.converged,
            iterations: stage.result.iterations,
            sign_coherent,
            incoherent_selected,
            notes,
        },
    }
}

/// Fits `method` on raw covariates `x` and response `y`.
pub fn fit(
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    method: Method,
    opts: &FitOptions,
) -> Result<FitResult, FitError> {
    check_inputs(x, y)?;
    let basis = method.basis(opts)?;
    let design = build_design(x, &basis)?;
    let (yc, y_mean) = center_response(y);
    let p = design.groups().count;
    let unit = vec![1.0; p];

    let initial_spec = PathSpec {
        basis: basis.clone(),
        kind: method.penalty(),
        weights: unit.clone(),
    };
    if !method.is_adaptive() {
        let stage = fit_stage(x, y, &design, yc.view(), &initial_spec, opts.lambda, opts)?;
        return Ok(assemble(method, &design, y_mean, stage, &unit, None, Vec::new()));
    }

    let first = fit_stage(x, y, &design, yc.view(), &initial_spec, opts.initial_lambda, opts)?;
    adaptive_from_initial(x, y, method, opts, &design, y_mean, yc.view(), first)
}

/// Second stage of an adaptive fit given the first-stage fit.
#[allow(clippy::too_many_arguments)]
fn adaptive_from_initial(
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    method: Method,
    opts: &FitOptions,
    design: &DesignMatrix,
    y_mean: f64,
    yc: ArrayView1<f64>,
    first: Stage,
) -> Result<FitResult, FitError> {
    let groups = *design.groups();
    let first_beta = first.result.beta.as_slice().expect("contiguous");
    let weights = adaptive_weights(first_beta, &groups);
    let initial = InitialStage {
        lambda: first.lambda,
        support: support(first_beta, &groups),
        cv: first.cv.clone(),
        converged: first.result.converged,
    };
    if initial.support.is_empty() {
        let stage = Stage {
            result: zero_result(design),
            lambda: first.lambda,
            cv: None,
        };
        let notes = vec!["initial stage selected no covariates; returning the null model".into()];
        return Ok(assemble(method, design, y_mean, stage, &weights, Some(initial), notes));
    }
    let spec = PathSpec {
        basis: design.transform.basis.clone(),
        kind: method.penalty(),
        weights: weights.clone(),
    };
    let mut stage = fit_stage(x, y, design, yc, &spec, opts.lambda, opts)?;
    stage.result.converged &= first.result.converged;
    Ok(assemble(method, design, y_mean, stage, &weights, Some(initial), Vec::new()))
}

/// Fits a non-adaptive method and, from the same first stage, its adaptive
/// counterpart. Returns `(initial, adaptive)`.
pub fn fit_pair(
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    adaptive: Method,
    opts: &FitOptions,
) -> Result<(FitResult, FitResult), FitError> {
    check_inputs(x, y)?;
    let initial_method = adaptive.initial();
    let basis = adaptive.basis(opts)?;
    let design = build_design(x, &basis)?;
    let (yc, y_mean) = center_response(y);
    let unit = vec![1.0; design.groups().count];
    let spec = PathSpec {
        basis,
        kind: adaptive.penalty(),
        weights: unit.clone(),
    };
    let first = fit_stage(x, y, &design, yc.view(), &spec, opts.initial_lambda, opts)?;
    let first_copy = Stage {
        result: first.result.clone(),
        lambda: first.lambda,
        cv: first.cv.clone(),
    };
    let initial_fit = assemble(initial_method, &design, y_mean, first_copy, &unit, None, Vec::new());
    let adaptive_fit =
        adaptive_from_initial(x, y, adaptive, opts, &design, y_mean, yc.view(), first)?;
    Ok((initial_fit, adaptive_fit))
}

pub fn fit_ms_lasso(x: ArrayView2<f64>, y: ArrayView1<f64>, opts: &FitOptions) -> Result<FitResult, FitError> {
    fit(x, y, Method::Ms, opts)
}

pub fn fit_adaptive_ms_lasso(
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    opts: &FitOptions,
) -> Result<FitResult, FitError> {
    fit(x, y, Method::Ams, opts)
}

pub fn fit_lasso(x: ArrayView2<f64>, y: ArrayView1<f64>, opts: &FitOptions) -> Result<FitResult, FitError> {
    fit(x, y, Method::Lasso, opts)
}

pub fn fit_adaptive_lasso(
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    opts: &FitOptions,
) -> Result<FitResult, FitError> {
    fit(x, y, Method::Alasso, opts)
}

pub fn fit_bs_lasso(x: ArrayView2<f64>, y: ArrayView1<f64>, opts: &FitOptions) -> Result<FitResult, FitError> {
    fit(x, y, Method::Bs, opts)
}
