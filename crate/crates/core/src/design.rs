//! Centered basis-expansion design matrices.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::spline::{rescale_to_unit, BasisSpec, RescaleParams, SplineError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DesignError {
    #[error("need at least 2 observations, got {0}")]
    TooFewRows(usize),
    #[error("covariate {column} is constant and cannot be expanded")]
    ConstantColumn { column: usize },
    #[error("non-finite value at row {row}, column {column}")]
    NonFinite { row: usize, column: usize },
    #[error("expected {expected} covariate columns, got {found}")]
    ColumnMismatch { expected: usize, found: usize },
    #[error(transparent)]
    Spline(#[from] SplineError),
}

/// Contiguous, equal-sized coefficient blocks: block `j` owns columns
/// `j * size .. (j + 1) * size`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Groups {
    pub count: usize,
    pub size: usize,
}

impl Groups {
    pub fn new(count: usize, size: usize) -> Self {
        Self { count, size }
    }

    pub fn total(&self) -> usize {
        self.count * self.size
    }

    pub fn range(&self, j: usize) -> std::ops::Range<usize> {
        j * self.size..(j + 1) * self.size
    }
}

/// Everything needed to expand new covariate rows the way the training rows
/// were expanded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignTransform {
    pub basis: BasisSpec,
    pub groups: Groups,
    /// Training means of the raw basis columns, subtracted at expansion time.
    pub column_means: Vec<f64>,
    /// Per-covariate min-max parameters; empty for the identity basis.
    pub rescale: Vec<RescaleParams>,
    /// Divisors applied after centering; empty means no scaling.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub column_scales: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    pub z: Array2<f64>,
    pub transform: DesignTransform,
}

fn check_finite(x: ArrayView2<f64>) -> Result<(), DesignError> {
    for ((row, column), v) in x.indexed_iter() {
        if !v.is_finite() {
            return Err(DesignError::NonFinite { row, column });
        }
    }
    Ok(())
}

/// Expands every covariate with `basis` without centering.
fn expand_raw(
    x: ArrayView2<f64>,
    basis: &BasisSpec,
    rescale: &[RescaleParams],
) -> Array2<f64> {
    let (n, p) = x.dim();
    let m = basis.size();
    let mut z = Array2::zeros((n, p * m));
    let mut buf = vec![0.0; m];
    for (i, mut row) in z.axis_iter_mut(Axis(0)).enumerate() {
        for j in 0..p {
            let raw = x[[i, j]];
            let v = if basis.rescales() { rescale[j].apply(raw) } else { raw };
            basis.eval_into(v, &mut buf);
            for (k, &b) in buf.iter().enumerate() {
                row[j * m + k] = b;
            }
        }
    }
    z
}

pub fn build_design(x: ArrayView2<f64>, basis: &BasisSpec) -> Result<DesignMatrix, DesignError> {
    let (n, p) = x.dim();
    if n < 2 {
        return Err(DesignError::TooFewRows(n));
    }
    check_finite(x)?;
    let mut rescale = Vec::new();
    for (column, col) in x.axis_iter(Axis(1)).enumerate() {
        let values: Vec<f64> = col.to_vec();
        if basis.rescales() {
            match rescale_to_unit(&values) {
                Ok((_, params)) => rescale.push(params),
                Err(SplineError::ConstantColumn) => {
                    return Err(DesignError::ConstantColumn { column })
                }
                Err(e) => return Err(e.into()),
            }
        } else if values.iter().all(|&v| v == values[0]) {
            return Err(DesignError::ConstantColumn { column });
        }
    }
    let mut z = expand_raw(x, basis, &rescale);
    let means = z.mean_axis(Axis(0)).expect("n >= 2");
    z -= &means;
    let mut column_scales = Vec::new();
    if basis.standardize {
        // A column without spread stays as is; it cannot enter the fit anyway.
        column_scales = z
            .axis_iter(Axis(1))
            .map(|c| {
                let sd = (c.dot(&c) / n as f64).sqrt();
                if sd > 0.0 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        z /= &ArrayView1::from(&column_scales[..]);
    }
    Ok(DesignMatrix {
        z,
        transform: DesignTransform {
            basis: basis.clone(),
            groups: Groups::new(p, basis.size()),
            column_means: means.to_vec(),
            rescale,
            column_scales,
        },
    })
}

impl DesignMatrix {
    pub fn groups(&self) -> &Groups {
        &self.transform.groups
    }

    pub fn expand_new(&self, x_new: ArrayView2<f64>) -> Result<Array2<f64>, DesignError> {
        self.transform.expand_new(x_new)
    }
}

impl DesignTransform {
    pub fn n_covariates(&self) -> usize {
        self.groups.count
    }

    /// Expands new observations with the stored training transforms.
    pub fn expand_new(&self, x_new: ArrayView2<f64>) -> Result<Array2<f64>, DesignError> {
        let p = self.groups.count;
        if x_new.ncols() != p {
            return Err(DesignError::ColumnMismatch {
                expected: p,
                found: x_new.ncols(),
            });
        }
        check_finite(x_new)?;
        let mut z = expand_raw(x_new, &self.basis, &self.rescale);
        z -= &ArrayView1::from(&self.column_means[..]);
        if !self.column_scales.is_empty() {
            z /= &ArrayView1::from(&self.column_scales[..]);
        }
        Ok(z)
    }

    /// Centered basis values of covariate `j` at a point already on the
    /// transformed `[0, 1]` scale (the raw scale for the identity basis).
    pub fn centered_basis_at(&self, j: usize, x: f64) -> Vec<f64> {
        let range = self.groups.range(j);
        let mut out = self.basis.eval(x);
        for (o, mean) in out.iter_mut().zip(&self.column_means[range.clone()]) {
            *o -= mean;
        }
        if !self.column_scales.is_empty() {
            for (o, s) in out.iter_mut().zip(&self.column_scales[range]) {
                *o /= s;
            }
        }
        out
    }
}

pub fn center_response(y: ArrayView1<f64>) -> (Array1<f64>, f64) {
    let mean = y.mean().unwrap_or(0.0);
    (y.mapv(|v| v - mean), mean)
}
