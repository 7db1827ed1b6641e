//! K-fold cross-validation over a shared lambda grid.
//!
//! Every training fold gets its own rescaling and centering, so held-out rows
//! never influence the transforms applied to them.

use ndarray::{Array1, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::design::{build_design, center_response, DesignError};
use crate::solver::{solve_path, sparse_predict, PenaltyKind, SolverConfig, SolverError};
use crate::spline::BasisSpec;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CvError {
    #[error("cannot split {n} observations into {folds} folds")]
    TooManyFolds { n: usize, folds: usize },
    #[error("fold {fold} has {size} observations; at least 2 are required")]
    FoldTooSmall { fold: usize, size: usize },
    #[error("lambda grid must be nonempty and strictly decreasing")]
    BadGrid,
    #[error("fold {fold}: {source}")]
    Design { fold: usize, source: DesignError },
    #[error(transparent)]
    Solver(#[from] SolverError),
}

/// What is refit on every training fold.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSpec {
    pub basis: BasisSpec,
    pub kind: PenaltyKind,
    /// Group weights, held fixed across folds. `f64::INFINITY` excludes.
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub lambdas: Vec<f64>,
    pub cv: Vec<f64>,
    pub chosen_index: usize,
    pub chosen_lambda: f64,
    pub folds: usize,
    pub seed: u64,
    /// Fold paths that hit the iteration cap at some grid point.
    pub unconverged_fits: usize,
}

/// Fold label per observation: a seeded permutation dealt round-robin, so
/// fold sizes differ by at most one.
pub fn kfold_split(n: usize, folds: usize, seed: u64) -> Result<Vec<usize>, CvError> {
    if folds == 0 || folds > n {
        return Err(CvError::TooManyFolds { n, folds });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut labels = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        labels[i] = pos % folds;
    }
    Ok(labels)
}

/// Index of the smallest CV value; ties go to the larger lambda, which comes
/// first in a decreasing grid.
pub fn select_lambda(cv: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in cv.iter().enumerate() {
        if v < cv[best] {
            best = i;
        }
    }
    best
}

/// Sum of squared held-out errors per grid point for one fold.
fn fold_errors(
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    labels: &[usize],
    fold: usize,
    spec: &PathSpec,
    lambdas: &[f64],
    solver: &SolverConfig,
) -> Result<(Vec<f64>, usize), CvError> {
    let train: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] != fold).collect();
    let test: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == fold).collect();
    let x_train = x.select(Axis(0), &train);
    let y_train = y.select(Axis(0), &train);
    let design =
        build_design(x_train.view(), &spec.basis).map_err(|source| CvError::Design { fold, source })?;
    let (yc, y_mean) = center_response(y_train.view());
    let z_test = design
        .expand_new(x.select(Axis(0), &test).view())
        .map_err(|source| CvError::Design { fold, source })?;
    let y_test: Array1<f64> = y.select(Axis(0), &test);

    let path = solve_path(
        design.z.view(),
        yc.view(),
        design.groups(),
        spec.kind,
        &spec.weights,
        lambdas,
        solver,
    )?;
    let unconverged = path.iter().filter(|p| !p.result.converged).count();
    let errors = path
        .iter()
        .map(|point| {
            let pred = sparse_predict(z_test.view(), design.groups(), point.result.beta.view());
            y_test
                .iter()
                .zip(pred.iter())
                .map(|(yi, pi)| (yi - y_mean - pi).powi(2))
                .sum()
        })
        .collect();
    Ok((errors, unconverged))
}

/// `CV(lambda) = (1/n) sum_k sum_{i in fold k} (y_i - yhat_i^{-k}(lambda))^2`.
pub fn cv_curve(
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    spec: &PathSpec,
    lambdas: &[f64],
    folds: usize,
    seed: u64,
    solver: &SolverConfig,
) -> Result<CvResult, CvError> {
    let n = x.nrows();
    if lambdas.is_empty() || lambdas.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(CvError::BadGrid);
    }
    let labels = kfold_split(n, folds, seed)?;
    for fold in 0..folds {
        let size = labels.iter().filter(|&&l| l == fold).count();
        if size < 2 {
            return Err(CvError::FoldTooSmall { fold, size });
        }
    }
    cv_curve_with_labels(x, y, spec, lambdas, &labels, folds, seed, solver)
}

/// Same as [`cv_curve`] with explicit fold labels.
#[allow(clippy::too_many_arguments)]
pub fn cv_curve_with_labels(
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    spec: &PathSpec,
    lambdas: &[f64],
    labels: &[usize],
    folds: usize,
    seed: u64,
    solver: &SolverConfig,
) -> Result<CvResult, CvError> {
    let n = x.nrows();
    let per_fold: Vec<Result<(Vec<f64>, usize), CvError>> = (0..folds)
        .into_par_iter()
        .map(|fold| fold_errors(x, y, labels, fold, spec, lambdas, solver))
        .collect();
    let mut sse = vec![0.0; lambdas.len()];
    let mut unconverged_fits = 0;
    for result in per_fold {
        let (errors, unconverged) = result?;
        for (total, e) in sse.iter_mut().zip(errors) {
            *total += e;
        }
        unconverged_fits += unconverged;
    }
    let cv: Vec<f64> = sse.iter().map(|s| s / n as f64).collect();
    let chosen_index = select_lambda(&cv);
    Ok(CvResult {
        chosen_lambda: lambdas[chosen_index],
        lambdas: lambdas.to_vec(),
        cv,
        chosen_index,
        folds,
        seed,
        unconverged_fits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn balanced_folds() {
        let labels = kfold_split(50, 10, 3).unwrap();
        for f in 0..10 {
            assert_eq!(labels.iter().filter(|&&l| l == f).count(), 5);
        }
        let labels = kfold_split(52, 10, 3).unwrap();
        let mut sizes: Vec<usize> = (0..10)
            .map(|f| labels.iter().filter(|&&l| l == f).count())
            .collect();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![5, 5, 5, 5, 5, 5, 5, 5, 6, 6]);
    }

    #[test]
    fn split_is_seeded() {
        assert_eq!(kfold_split(40, 10, 9).unwrap(), kfold_split(40, 10, 9).unwrap());
        assert_ne!(kfold_split(40, 10, 9).unwrap(), kfold_split(40, 10, 10).unwrap());
        assert!(kfold_split(5, 10, 0).is_err());
    }

    #[test]
    fn selection_rules() {
        assert_eq!(select_lambda(&[3.0, 1.0, 0.5, 2.0]), 2);
        assert_eq!(select_lambda(&[1.0, 1.0, 1.0]), 0);
        assert_eq!(select_lambda(&[5.0, 4.0, 3.0, 2.0]), 3);
        assert_eq!(select_lambda(&[2.0, 1.0, 1.0, 3.0]), 1);
    }
}
