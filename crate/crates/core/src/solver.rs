//! Penalized least squares with cooperative, group and l1 penalties.
//!
//! The objective is `s/2 ||y - Z b||^2 + lambda * sum_j w_j pen(b_j)` with
//! `s = 1` (or `1/n` in normalized form). It is minimized by accelerated
//! proximal gradient on a working set of groups; groups outside the working
//! set are held at zero and admitted whenever they violate their optimality
//! condition, so the returned solution is certified on the full problem.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::design::Groups;

/// Coefficients with magnitude at or below this count as zero for sign and
/// support bookkeeping.
pub const ZERO_TOLERANCE: f64 = 1e-10;

const MAX_BACKTRACKS: usize = 60;

/// KKT residuals below this fraction of `max |Z'y|` are not resolvable in
/// double precision and count as satisfied.
const KKT_ROUNDING: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("design has {rows} rows but response has {len} entries")]
    ResponseLength { rows: usize, len: usize },
    #[error("design has {cols} columns but groups cover {expected}")]
    GroupLayout { cols: usize, expected: usize },
    #[error("expected {expected} group weights, got {found}")]
    WeightCount { expected: usize, found: usize },
    #[error("weight {value} for group {group} is not positive")]
    InvalidWeight { group: usize, value: f64 },
    #[error("every group has an infinite weight")]
    AllGroupsExcluded,
    #[error("lambda must be finite and nonnegative, got {0}")]
    InvalidLambda(f64),
    #[error("warm start has length {found}, expected {expected}")]
    WarmStartLength { expected: usize, found: usize },
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PenaltyKind {
    Coop,
    Group,
    L1,
}

impl PenaltyKind {
    /// Unweighted penalty of one coefficient block.
    pub fn value(self, b: &[f64]) -> f64 {
        match self {
            PenaltyKind::Coop => {
                let (pos, neg) = b.iter().fold((0.0, 0.0), |(p, n), &v| {
                    if v > 0.0 {
                        (p + v * v, n)
                    } else {
                        (p, n + v * v)
                    }
                });
                pos.sqrt() + neg.sqrt()
            }
            PenaltyKind::Group => norm(b),
            PenaltyKind::L1 => b.iter().map(|v| v.abs()).sum(),
        }
    }

    /// Dual norm of a gradient block: the smallest `lambda * w` at which the
    /// zero block satisfies its optimality condition.
    pub fn zero_score(self, g: &[f64]) -> f64 {
        match self {
            PenaltyKind::Coop => {
                let (pos, neg) = g.iter().fold((0.0, 0.0), |(p, n), &v| {
                    if v > 0.0 {
                        (p + v * v, n)
                    } else {
                        (p, n + v * v)
                    }
                });
                pos.sqrt().max(neg.sqrt())
            }
            PenaltyKind::Group => norm(g),
            PenaltyKind::L1 => g.iter().fold(0.0, |m, v| m.max(v.abs())),
        }
    }

    /// Proximal map of `t * pen` applied in place.
    pub fn prox_in_place(self, v: &mut [f64], t: f64) {
        match self {
            PenaltyKind::Coop => prox_coop_in_place(v, t),
            PenaltyKind::Group => group_soft_threshold_in_place(v, t),
            PenaltyKind::L1 => {
                for x in v.iter_mut() {
                    *x = soft_threshold(*x, t);
                }
            }
        }
    }

    /// Largest violation of the subgradient condition `g in t * d pen(b)`
    /// for one block, where `g = -grad` of the loss.
    pub fn block_kkt(self, g: &[f64], b: &[f64], t: f64) -> f64 {
        match self {
            PenaltyKind::Coop => coop_block_kkt(g, b, t),
            PenaltyKind::Group => {
                let nb = norm(b);
                if nb > 0.0 {
                    g.iter()
                        .zip(b)
                        .map(|(gk, bk)| (gk - t * bk / nb).powi(2))
                        .sum::<f64>()
                        .sqrt()
                } else {
                    (norm(g) - t).max(0.0)
                }
            }
            PenaltyKind::L1 => g.iter().zip(b).fold(0.0, |m, (&gk, &bk)| {
                let v = if bk != 0.0 {
                    (gk - t * bk.signum()).abs()
                } else {
                    (gk.abs() - t).max(0.0)
                };
                m.max(v)
            }),
        }
    }
}

fn coop_block_kkt(g: &[f64], b: &[f64], t: f64) -> f64 {
    let pos_norm = b.iter().filter(|&&v| v > 0.0).map(|v| v * v).sum::<f64>().sqrt();
    let neg_norm = b.iter().filter(|&&v| v < 0.0).map(|v| v * v).sum::<f64>().sqrt();
    let mut active_pos = 0.0;
    let mut active_neg = 0.0;
    let mut free_pos = 0.0;
    let mut free_neg = 0.0;
    for (&gk, &bk) in g.iter().zip(b) {
        if bk > 0.0 {
            active_pos += (gk - t * bk / pos_norm).powi(2);
        } else if bk < 0.0 {
            active_neg += (gk - t * bk / neg_norm).powi(2);
        } else if gk > 0.0 {
            free_pos += gk * gk;
        } else {
            free_neg += gk * gk;
        }
    }
    // An active sign part needs an exact gradient match and leaves no slack for
    // zero coordinates pulling the same way; an inactive part is a ball test.
    let pos = if pos_norm > 0.0 {
        active_pos.sqrt().max(free_pos.sqrt())
    } else {
        (free_pos.sqrt() - t).max(0.0)
    };
    let neg = if neg_norm > 0.0 {
        active_neg.sqrt().max(free_neg.sqrt())
    } else {
        (free_neg.sqrt() - t).max(0.0)
    };
    pos.max(neg)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

fn group_soft_threshold_in_place(v: &mut [f64], t: f64) {
    let nv = norm(v);
    let scale = if nv > t { 1.0 - t / nv } else { 0.0 };
    for x in v.iter_mut() {
        *x *= scale;
    }
}

fn prox_coop_in_place(v: &mut [f64], t: f64) {
    let pos = v.iter().filter(|&&x| x > 0.0).map(|x| x * x).sum::<f64>().sqrt();
    let neg = v.iter().filter(|&&x| x < 0.0).map(|x| x * x).sum::<f64>().sqrt();
    let pos_scale = if pos > t { 1.0 - t / pos } else { 0.0 };
    let neg_scale = if neg > t { 1.0 - t / neg } else { 0.0 };
    for x in v.iter_mut() {
        *x *= if *x > 0.0 { pos_scale } else { neg_scale };
    }
}

/// `v * max(0, 1 - t / ||v||)`.
pub fn group_soft_threshold(v: &[f64], t: f64) -> Vec<f64> {
    let mut out = v.to_vec();
    group_soft_threshold_in_place(&mut out, t);
    out
}

/// Proximal map of `t * (||b+|| + ||b-||)`: the positive and negative parts
/// are group-thresholded separately.
pub fn prox_coop(v: &[f64], t: f64) -> Vec<f64> {
    let mut out = v.to_vec();
    prox_coop_in_place(&mut out, t);
    out
}

pub fn prox_l1(v: &[f64], t: f64) -> Vec<f64> {
    v.iter().map(|&x| soft_threshold(x, t)).collect()
}

/// `sum_j w_j (||b_j+|| + ||b_j-||)`.
pub fn coop_norm(beta: &[f64], groups: &Groups, weights: &[f64]) -> f64 {
    (0..groups.count)
        .map(|j| weights[j] * PenaltyKind::Coop.value(&beta[groups.range(j)]))
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenaltySpec {
    pub kind: PenaltyKind,
    /// One weight per group; `f64::INFINITY` excludes the group.
    pub weights: Vec<f64>,
    pub lambda: f64,
}

impl PenaltySpec {
    pub fn unit(kind: PenaltyKind, groups: usize, lambda: f64) -> Self {
        Self {
            kind,
            weights: vec![1.0; groups],
            lambda,
        }
    }

    pub fn value(&self, beta: &[f64], groups: &Groups) -> f64 {
        (0..groups.count)
            .filter(|&j| self.weights[j].is_finite())
            .map(|j| self.weights[j] * self.kind.value(&beta[groups.range(j)]))
            .sum::<f64>()
            * self.lambda
    }

    fn validate(&self, groups: &Groups) -> Result<(), SolverError> {
        if self.weights.len() != groups.count {
            return Err(SolverError::WeightCount {
                expected: groups.count,
                found: self.weights.len(),
            });
        }
        for (group, &value) in self.weights.iter().enumerate() {
            if !(value > 0.0) {
                return Err(SolverError::InvalidWeight { group, value });
            }
        }
        if self.weights.iter().all(|w| w.is_infinite()) {
            return Err(SolverError::AllGroupsExcluded);
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(SolverError::InvalidLambda(self.lambda));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LipschitzMode {
    /// Power iteration on `Z'Z` with a safety factor; backtracking only if the
    /// estimate turns out too small.
    PowerIteration,
    /// Start from a cheap lower bound and double on sufficient-decrease failure.
    Backtracking,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub max_iterations: usize,
    pub objective_tolerance: f64,
    pub step_tolerance: f64,
    /// Converged solutions must also satisfy `kkt <= kkt_tolerance * lambda`.
    pub kkt_tolerance: f64,
    pub lipschitz: LipschitzMode,
    /// Scale the loss by `1/n`.
    pub normalized: bool,
    pub record_trace: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iterations: 50_000,
            objective_tolerance: 1e-8,
            step_tolerance: 1e-6,
            kkt_tolerance: 1e-5,
            lipschitz: LipschitzMode::PowerIteration,
            normalized: false,
            record_trace: false,
        }
    }
}

impl SolverConfig {
    fn validate(&self) -> Result<(), SolverError> {
        if self.max_iterations == 0 {
            return Err(SolverError::InvalidConfig("max_iterations must be at least 1"));
        }
        if !(self.objective_tolerance > 0.0 && self.step_tolerance > 0.0 && self.kkt_tolerance > 0.0)
        {
            return Err(SolverError::InvalidConfig("tolerances must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverResult {
    pub beta: Array1<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub kkt_residual: f64,
    pub sign_coherent: Vec<bool>,
    pub converged: bool,
    /// Objective at every accepted iterate, when requested.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub trace: Option<Vec<f64>>,
}

impl SolverResult {
    pub fn support(&self, groups: &Groups) -> Vec<usize> {
        support(self.beta.as_slice().expect("contiguous"), groups)
    }
}

/// Groups with at least one coefficient above [`ZERO_TOLERANCE`].
pub fn support(beta: &[f64], groups: &Groups) -> Vec<usize> {
    (0..groups.count)
        .filter(|&j| beta[groups.range(j)].iter().any(|v| v.abs() > ZERO_TOLERANCE))
        .collect()
}

/// Per-group flag: `false` iff the block has both a coefficient above
/// `ZERO_TOLERANCE` and one below `-ZERO_TOLERANCE`.
pub fn sign_coherence_check(beta: &[f64], groups: &Groups) -> Vec<bool> {
    (0..groups.count)
        .map(|j| {
            let b = &beta[groups.range(j)];
            let pos = b.iter().any(|&v| v > ZERO_TOLERANCE);
            let neg = b.iter().any(|&v| v < -ZERO_TOLERANCE);
            !(pos && neg)
        })
        .collect()
}

fn check_dims(
    z: ArrayView2<f64>,
    y: ArrayView1<f64>,
    groups: &Groups,
) -> Result<(), SolverError> {
    if z.nrows() != y.len() {
        return Err(SolverError::ResponseLength {
            rows: z.nrows(),
            len: y.len(),
        });
    }
    if z.ncols() != groups.total() {
        return Err(SolverError::GroupLayout {
            cols: z.ncols(),
            expected: groups.total(),
        });
    }
    Ok(())
}

/// Smallest lambda at which the all-zero coefficient vector is optimal for
/// the unnormalized objective.
pub fn lambda_max(
    z: ArrayView2<f64>,
    y: ArrayView1<f64>,
    groups: &Groups,
    kind: PenaltyKind,
    weights: &[f64],
) -> Result<f64, SolverError> {
    check_dims(z, y, groups)?;
    if weights.len() != groups.count {
        return Err(SolverError::WeightCount {
            expected: groups.count,
            found: weights.len(),
        });
    }
    let c = z.t().dot(&y);
    let c = c.as_slice().expect("contiguous");
    Ok((0..groups.count)
        .filter(|&j| weights[j].is_finite())
        .map(|j| kind.zero_score(&c[groups.range(j)]) / weights[j])
        .fold(0.0, f64::max))
}

fn kkt_from_gradient(g: &[f64], beta: &[f64], groups: &Groups, penalty: &PenaltySpec) -> f64 {
    (0..groups.count)
        .filter(|&j| penalty.weights[j].is_finite())
        .map(|j| {
            let r = groups.range(j);
            penalty
                .kind
                .block_kkt(&g[r.clone()], &beta[r], penalty.lambda * penalty.weights[j])
        })
        .fold(0.0, f64::max)
}

/// Maximum violation of the subgradient optimality conditions of the
/// unnormalized objective at `beta`. Groups with infinite weight are ignored.
pub fn kkt_residual(
    z: ArrayView2<f64>,
    y: ArrayView1<f64>,
    groups: &Groups,
    beta: ArrayView1<f64>,
    penalty: &PenaltySpec,
) -> Result<f64, SolverError> {
    check_dims(z, y, groups)?;
    penalty.validate(groups)?;
    let r = &y - &z.dot(&beta);
    let g = z.t().dot(&r);
    let beta = beta.to_owned();
    Ok(kkt_from_gradient(
        g.as_slice().expect("contiguous"),
        beta.as_slice().expect("contiguous"),
        groups,
        penalty,
    ))
}

/// Full objective value for the given scaling.
pub fn objective(
    z: ArrayView2<f64>,
    y: ArrayView1<f64>,
    groups: &Groups,
    beta: ArrayView1<f64>,
    penalty: &PenaltySpec,
    normalized: bool,
) -> f64 {
    let r = &y - &z.dot(&beta);
    let s = if normalized { 1.0 / y.len() as f64 } else { 1.0 };
    0.5 * s * r.dot(&r) + penalty.value(beta.as_slice().expect("contiguous"), groups)
}

fn power_iteration(z: ArrayView2<f64>, iterations: usize) -> f64 {
    let p = z.ncols();
    if p == 0 {
        return 0.0;
    }
    let mut v = Array1::from_elem(p, 1.0 / (p as f64).sqrt());
    let mut estimate = 0.0;
    for _ in 0..iterations {
        let w = z.t().dot(&z.dot(&v));
        let nw = w.dot(&w).sqrt();
        if nw == 0.0 {
            return 0.0;
        }
        estimate = v.dot(&w);
        v = w / nw;
    }
    // Rayleigh quotient at the final vector.
    let zv = z.dot(&v);
    estimate.max(zv.dot(&zv))
}

struct Subproblem<'a> {
    z: Array2<f64>,
    y: ArrayView1<'a, f64>,
    groups: Groups,
    kind: PenaltyKind,
    thresholds: Vec<f64>,
    scale: f64,
    /// Gradient resolution: KKT residuals below this are rounding noise.
    kkt_floor: f64,
}

struct InnerOutcome {
    beta: Array1<f64>,
    iterations: usize,
    converged: bool,
}

impl Subproblem<'_> {
    fn penalty(&self, b: &[f64]) -> f64 {
        (0..self.groups.count)
            .map(|j| self.thresholds[j] * self.kind.value(&b[self.groups.range(j)]))
            .sum()
    }

    fn kkt(&self, g: &[f64], b: &[f64]) -> f64 {
        (0..self.groups.count)
            .map(|j| {
                let r = self.groups.range(j);
                self.kind.block_kkt(&g[r.clone()], &b[r], self.thresholds[j])
            })
            .fold(0.0, f64::max)
    }

    /// Exit when no step can make progress; converged iff the KKT gate holds.
    fn flat_exit(
        &self,
        x: Array1<f64>,
        zx: &Array1<f64>,
        cfg: &SolverConfig,
        lambda: f64,
        iterations: usize,
    ) -> InnerOutcome {
        let resid = &self.y - zx;
        let g = self.z.t().dot(&resid) * self.scale;
        let kkt = self.kkt(g.as_slice().unwrap(), x.as_slice().unwrap());
        InnerOutcome {
            converged: lambda == 0.0 || kkt <= (cfg.kkt_tolerance * lambda).max(self.kkt_floor),
            beta: x,
            iterations,
        }
    }

    fn minimize(
        &self,
        start: Array1<f64>,
        cfg: &SolverConfig,
        budget: usize,
        lambda: f64,
        trace: &mut Option<Vec<f64>>,
    ) -> InnerOutcome {
        let s = self.scale;
        let mut lipschitz = match cfg.lipschitz {
            LipschitzMode::PowerIteration => 1.1 * s * power_iteration(self.z.view(), 20),
            LipschitzMode::Backtracking => {
                let cols = self.z.ncols().max(1) as f64;
                s * self.z.iter().map(|v| v * v).sum::<f64>() / cols
            }
        };
        if !(lipschitz > 0.0) {
            lipschitz = f64::MIN_POSITIVE.sqrt();
        }

        let mut x = start;
        let mut zx = self.z.dot(&x);
        let resid = &self.y - &zx;
        let mut obj_x = 0.5 * s * resid.dot(&resid) + self.penalty(x.as_slice().unwrap());

        let mut yv = x.clone();
        let mut zy = zx.clone();
        let mut theta: f64 = 1.0;
        let mut iterations = 0;

        while iterations < budget {
            iterations += 1;
            let resid_y = &self.y - &zy;
            let f_y = 0.5 * s * resid_y.dot(&resid_y);
            let neg_grad = self.z.t().dot(&resid_y) * s;

            let mut backtracks = 0;
            let accepted = loop {
                let mut cand = &yv + &(&neg_grad / lipschitz);
                {
                    let c = cand.as_slice_mut().unwrap();
                    for j in 0..self.groups.count {
                        let r = self.groups.range(j);
                        self.kind.prox_in_place(&mut c[r], self.thresholds[j] / lipschitz);
                    }
                }
                let zc = self.z.dot(&cand);
                let rc = &self.y - &zc;
                let f_c = 0.5 * s * rc.dot(&rc);
                let d = &cand - &yv;
                let bound = f_y - neg_grad.dot(&d) + 0.5 * lipschitz * d.dot(&d);
                if f_c <= bound + 1e-12 * (f_y.abs() + f_c.abs()) {
                    break Some((cand, zc, f_c));
                }
                backtracks += 1;
                if backtracks > MAX_BACKTRACKS {
                    // Sufficient decrease fails only through rounding once the
                    // step is this short: the loss is flat at machine precision.
                    break None;
                }
                lipschitz *= 2.0;
            };
            let Some((x_new, zx_new, f_new)) = accepted else {
                return self.flat_exit(x, &zx, cfg, lambda, iterations);
            };

            let obj_new = f_new + self.penalty(x_new.as_slice().unwrap());
            if obj_new > obj_x {
                if theta == 1.0 {
                    // A plain proximal step from the accepted iterate failed to
                    // descend: the objective is flat to rounding precision.
                    return self.flat_exit(x, &zx, cfg, lambda, iterations);
                }
                // Momentum overshoot: restart from the last accepted iterate.
                theta = 1.0;
                yv.assign(&x);
                zy.assign(&zx);
                continue;
            }

            let step = &x_new - &x;
            let step_norm = step.dot(&step).sqrt();
            let x_norm = x_new.dot(&x_new).sqrt();
            let rel_obj = (obj_x - obj_new).abs() / obj_x.abs().max(f64::MIN_POSITIVE);

            let theta_new = 0.5 * (1.0 + (1.0 + 4.0 * theta * theta).sqrt());
            let momentum = (theta - 1.0) / theta_new;
            yv = &x_new + &(&step * momentum);
            zy = &zx_new + &((&zx_new - &zx) * momentum);
            theta = theta_new;

            x = x_new;
            zx = zx_new;
            obj_x = obj_new;
            if let Some(t) = trace.as_mut() {
                t.push(obj_x);
            }

            let small_step = step_norm <= cfg.step_tolerance * x_norm || step_norm == 0.0;
            if rel_obj < cfg.objective_tolerance && small_step {
                let resid = &self.y - &zx;
                let g = self.z.t().dot(&resid) * s;
                let kkt = self.kkt(g.as_slice().unwrap(), x.as_slice().unwrap());
                if lambda == 0.0 || kkt <= (0.5 * cfg.kkt_tolerance * lambda).max(self.kkt_floor) {
                    return InnerOutcome {
                        beta: x,
                        iterations,
                        converged: true,
                    };
                }
            }
        }
        InnerOutcome {
            beta: x,
            iterations,
            converged: false,
        }
    }
}

/// Minimizes the penalized least-squares objective.
///
/// Non-convergence within `cfg.max_iterations` is reported through
/// [`SolverResult::converged`] rather than as an error.
pub fn solve(
    z: ArrayView2<f64>,
    y: ArrayView1<f64>,
    groups: &Groups,
    penalty: &PenaltySpec,
    cfg: &SolverConfig,
    warm_start: Option<ArrayView1<f64>>,
) -> Result<SolverResult, SolverError> {
    check_dims(z, y, groups)?;
    penalty.validate(groups)?;
    cfg.validate()?;
    let n = z.nrows();
    let scale = if cfg.normalized { 1.0 / n as f64 } else { 1.0 };
    let lambda = penalty.lambda;
    let m = groups.size;

    let mut beta = match warm_start {
        Some(w) if w.len() != groups.total() => {
            return Err(SolverError::WarmStartLength {
                expected: groups.total(),
                found: w.len(),
            })
        }
        Some(w) => w.to_owned(),
        None => Array1::zeros(groups.total()),
    };
    for j in 0..groups.count {
        if penalty.weights[j].is_infinite() {
            beta.slice_mut(ndarray::s![groups.range(j)]).fill(0.0);
        }
    }

    let mut trace = cfg.record_trace.then(Vec::new);
    let mut iterations = 0;
    let converged;
    let mut in_working = vec![false; groups.count];
    let mut working: Vec<usize> = Vec::new();
    let admit_margin = 0.1 * cfg.kkt_tolerance * lambda;
    let kkt_floor = KKT_ROUNDING * scale * z.t().dot(&y).iter().fold(0.0, |m: f64, v| m.max(v.abs()));

    let mut g;
    loop {
        let resid = &y - &z.dot(&beta);
        g = z.t().dot(&resid) * scale;
        let gs = g.as_slice().unwrap();
        let bs = beta.as_slice().unwrap();

        let mut added = false;
        for j in 0..groups.count {
            let w = penalty.weights[j];
            if !w.is_finite() || in_working[j] {
                continue;
            }
            let r = groups.range(j);
            let nonzero = bs[r.clone()].iter().any(|&v| v != 0.0);
            let violates = penalty.kind.zero_score(&gs[r]) - lambda * w > admit_margin;
            if nonzero || violates {
                in_working[j] = true;
                working.push(j);
                added = true;
            }
        }
        if !added {
            // Either the zero vector is optimal or the last working-set
            // solution has no violators outside the set.
            converged = true;
            break;
        }
        let budget = cfg.max_iterations.saturating_sub(iterations);
        if budget == 0 {
            converged = false;
            break;
        }
        working.sort_unstable();

        let sub_groups = Groups::new(working.len(), m);
        let mut start = Array1::zeros(sub_groups.total());
        for (slot, &j) in working.iter().enumerate() {
            start
                .slice_mut(ndarray::s![sub_groups.range(slot)])
                .assign(&beta.slice(ndarray::s![groups.range(j)]));
        }
        let sub = Subproblem {
            z: select_groups(z, groups, &working),
            y,
            groups: sub_groups,
            kind: penalty.kind,
            thresholds: working.iter().map(|&j| lambda * penalty.weights[j]).collect(),
            scale,
            kkt_floor,
        };
        let outcome = sub.minimize(start, cfg, budget, lambda, &mut trace);
        iterations += outcome.iterations;
        for (slot, &j) in working.iter().enumerate() {
            beta.slice_mut(ndarray::s![groups.range(j)])
                .assign(&outcome.beta.slice(ndarray::s![sub_groups.range(slot)]));
        }
        if !outcome.converged {
            let resid = &y - &z.dot(&beta);
            g = z.t().dot(&resid) * scale;
            converged = false;
            break;
        }
    }

    let bs = beta.as_slice().unwrap();
    let kkt = kkt_from_gradient(g.as_slice().unwrap(), bs, groups, penalty);
    let resid = &y - &z.dot(&beta);
    let objective = 0.5 * scale * resid.dot(&resid) + penalty.value(bs, groups);
    Ok(SolverResult {
        sign_coherent: sign_coherence_check(bs, groups),
        beta,
        objective,
        iterations,
        kkt_residual: kkt,
        converged,
        trace,
    })
}

/// `size` values from `lambda_max` down to `ratio * lambda_max`, evenly
/// spaced on the log scale.
pub fn lambda_grid(lambda_max: f64, size: usize, ratio: f64) -> Vec<f64> {
    if size == 1 {
        return vec![lambda_max];
    }
    (0..size)
        .map(|i| lambda_max * ratio.powf(i as f64 / (size - 1) as f64))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathPoint {
    pub lambda: f64,
    pub result: SolverResult,
}

/// Solves along a decreasing lambda grid with warm starts.
pub fn solve_path(
    z: ArrayView2<f64>,
    y: ArrayView1<f64>,
    groups: &Groups,
    kind: PenaltyKind,
    weights: &[f64],
    lambdas: &[f64],
    cfg: &SolverConfig,
) -> Result<Vec<PathPoint>, SolverError> {
    let mut out: Vec<PathPoint> = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let penalty = PenaltySpec {
            kind,
            weights: weights.to_vec(),
            lambda,
        };
        let warm = out.last().map(|p| p.result.beta.view());
        let result = solve(z, y, groups, &penalty, cfg, warm)?;
        out.push(PathPoint { lambda, result });
    }
    Ok(out)
}

/// Path on a log grid starting at `lambda_max` (for the unnormalized scale).
pub fn lambda_path(
    z: ArrayView2<f64>,
    y: ArrayView1<f64>,
    groups: &Groups,
    kind: PenaltyKind,
    weights: &[f64],
    grid_size: usize,
    ratio: f64,
    cfg: &SolverConfig,
) -> Result<Vec<PathPoint>, SolverError> {
    let mut lmax = lambda_max(z, y, groups, kind, weights)?;
    if cfg.normalized {
        lmax /= z.nrows() as f64;
    }
    solve_path(z, y, groups, kind, weights, &lambda_grid(lmax, grid_size, ratio), cfg)
}

/// Columns of `z` gathered by group into a new matrix.
pub fn select_groups(z: ArrayView2<f64>, groups: &Groups, keep: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((z.nrows(), keep.len() * groups.size));
    for (slot, &j) in keep.iter().enumerate() {
        out.slice_mut(ndarray::s![.., slot * groups.size..(slot + 1) * groups.size])
            .assign(&z.slice(ndarray::s![.., groups.range(j)]));
    }
    out
}

/// Row-wise `z * beta` that skips zero groups.
pub fn sparse_predict(z: ArrayView2<f64>, groups: &Groups, beta: ArrayView1<f64>) -> Array1<f64> {
    let mut out = Array1::zeros(z.nrows());
    for j in 0..groups.count {
        let r = groups.range(j);
        let b = beta.slice(ndarray::s![r.clone()]);
        if b.iter().any(|&v| v != 0.0) {
            out += &z.slice(ndarray::s![.., r]).dot(&b);
        }
    }
    out
}
