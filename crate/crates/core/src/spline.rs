//! Knot vectors and spline bases on the unit interval.
//!
//! M-splines are evaluated with the order recursion, I-splines either through
//! the closed form for order two or by integrating the M-spline numerically,
//! and B-splines through the Cox-de Boor recurrence. Basis indices are
//! zero-based throughout: index `k` covers `[t_k, t_{k+l}]`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of Simpson panels used per knot span when integrating M-splines.
pub const QUADRATURE_PANELS: usize = 1 << 12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SplineError {
    #[error("spline order must be at least 1, got {0}")]
    InvalidOrder(usize),
    #[error("basis index {index} out of range for a basis of size {size}")]
    IndexOutOfRange { index: usize, size: usize },
    #[error("column has fewer than two distinct values and cannot be rescaled")]
    ConstantColumn,
    #[error("non-finite value {value} at position {position}")]
    NonFinite { position: usize, value: f64 },
    #[error("knot vector is malformed: {0}")]
    MalformedKnots(String),
}

/// Knot sequence of length `K + 2l` on `[0, 1]` with boundary knots repeated
/// `l` times and `K` equally spaced interior knots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnotVector {
    order: usize,
    interior_count: usize,
    knots: Vec<f64>,
}

impl KnotVector {
    pub fn equally_spaced(interior_count: usize, order: usize) -> Result<Self, SplineError> {
        if order == 0 {
            return Err(SplineError::InvalidOrder(order));
        }
        let mut knots = Vec::with_capacity(interior_count + 2 * order);
        knots.extend(std::iter::repeat(0.0).take(order));
        let denom = (interior_count + 1) as f64;
        knots.extend((1..=interior_count).map(|i| i as f64 / denom));
        knots.extend(std::iter::repeat(1.0).take(order));
        Ok(Self {
            order,
            interior_count,
            knots,
        })
    }

    /// Builds a knot vector from explicit interior knots.
    pub fn with_interior(interior: &[f64], order: usize) -> Result<Self, SplineError> {
        if order == 0 {
            return Err(SplineError::InvalidOrder(order));
        }
        if interior.iter().any(|&t| !(t > 0.0 && t < 1.0)) {
            return Err(SplineError::MalformedKnots(
                "interior knots must lie strictly inside (0, 1)".into(),
            ));
        }
        if interior.windows(2).any(|w| w[1] < w[0]) {
            return Err(SplineError::MalformedKnots(
                "interior knots must be nondecreasing".into(),
            ));
        }
        let mut knots = vec![0.0; order];
        knots.extend_from_slice(interior);
        knots.extend(std::iter::repeat(1.0).take(order));
        Ok(Self {
            order,
            interior_count: interior.len(),
            knots,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn interior_count(&self) -> usize {
        self.interior_count
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Basis size `m = K + l`.
    pub fn basis_size(&self) -> usize {
        self.interior_count + self.order
    }

    fn check_index(&self, k: usize) -> Result<(), SplineError> {
        let size = self.basis_size();
        if k >= size {
            Err(SplineError::IndexOutOfRange { index: k, size })
        } else {
            Ok(())
        }
    }

    /// Knot span containing `x`: the `i` with `t_i <= x < t_{i+1}` and positive
    /// width. The last non-empty span is closed on the right so `x = 1` is
    /// covered.
    fn span_of(&self, x: f64) -> Option<usize> {
        let t = &self.knots;
        if !(x >= t[0] && x <= t[t.len() - 1]) {
            return None;
        }
        let last = (0..t.len() - 1).rev().find(|&i| t[i + 1] > t[i])?;
        if x >= t[last] {
            return Some(last);
        }
        (0..last).find(|&i| t[i + 1] > t[i] && x >= t[i] && x < t[i + 1])
    }

    /// Polynomial piece of the order-`order` M-spline `k` on knot span
    /// `span`, evaluated at `x` by the order recursion.
    fn mspline_piece(&self, k: usize, order: usize, span: usize, x: f64) -> f64 {
        let t = &self.knots;
        if k + order >= t.len() || span < k || span >= k + order {
            return 0.0;
        }
        if order == 1 {
            return 1.0 / (t[k + 1] - t[k]);
        }
        let width = t[k + order] - t[k];
        if width <= 0.0 {
            return 0.0;
        }
        let l = order as f64;
        let left = (x - t[k]) * self.mspline_piece(k, order - 1, span, x);
        let right = (t[k + order] - x) * self.mspline_piece(k + 1, order - 1, span, x);
        l * (left + right) / ((l - 1.0) * width)
    }

    /// Cox-de Boor recurrence restricted to knot span `span`.
    fn bspline_piece(&self, k: usize, order: usize, span: usize, x: f64) -> f64 {
        let t = &self.knots;
        if k + order >= t.len() || span < k || span >= k + order {
            return 0.0;
        }
        if order == 1 {
            return 1.0;
        }
        let mut value = 0.0;
        let left_width = t[k + order - 1] - t[k];
        if left_width > 0.0 {
            value += (x - t[k]) / left_width * self.bspline_piece(k, order - 1, span, x);
        }
        let right_width = t[k + order] - t[k + 1];
        if right_width > 0.0 {
            value += (t[k + order] - x) / right_width * self.bspline_piece(k + 1, order - 1, span, x);
        }
        value
    }

    fn mspline_raw(&self, k: usize, x: f64) -> f64 {
        self.span_of(x)
            .map_or(0.0, |span| self.mspline_piece(k, self.order, span, x))
    }

    fn bspline_raw(&self, k: usize, x: f64) -> f64 {
        self.span_of(x)
            .map_or(0.0, |span| self.bspline_piece(k, self.order, span, x))
    }

    pub fn mspline(&self, k: usize, x: f64) -> Result<f64, SplineError> {
        self.check_index(k)?;
        Ok(self.mspline_raw(k, x))
    }

    pub fn bspline(&self, k: usize, x: f64) -> Result<f64, SplineError> {
        self.check_index(k)?;
        Ok(self.bspline_raw(k, x))
    }

    /// I-spline value. Order two uses the closed form; other orders
    /// integrate the M-spline with composite Simpson per knot span.
    pub fn ispline(&self, k: usize, x: f64) -> Result<f64, SplineError> {
        self.check_index(k)?;
        if self.order == 2 {
            Ok(self.ispline2_closed(k, x))
        } else {
            Ok(self.ispline_quadrature(k, x))
        }
    }

    fn ispline2_closed(&self, k: usize, x: f64) -> f64 {
        let t = &self.knots;
        let (a, b, c) = (t[k], t[k + 1], t[k + 2]);
        if x <= a {
            0.0
        } else if x <= b {
            (x - a) * (x - a) / ((b - a) * (c - a))
        } else if x <= c {
            1.0 - (c - x) * (c - x) / ((c - a) * (c - b))
        } else {
            1.0
        }
    }

    /// Integral of `M_k` from 0 to `x` by composite Simpson, split at knots so
    /// each piece is a single polynomial.
    pub fn ispline_quadrature(&self, k: usize, x: f64) -> f64 {
        let t = &self.knots;
        let lo = t[k];
        let hi = t[k + self.order].min(x);
        if hi <= lo {
            return 0.0;
        }
        let mut total = 0.0;
        for i in k..k + self.order {
            let a = t[i].max(lo);
            let b = t[i + 1].min(hi);
            if b <= a {
                continue;
            }
            total += simpson(|u| self.mspline_piece(k, self.order, i, u), a, b, QUADRATURE_PANELS);
        }
        total.clamp(0.0, 1.0)
    }
}

/// Composite Simpson rule with `panels` (rounded up to even) subintervals.
pub fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, panels: usize) -> f64 {
    let n = if panels % 2 == 0 { panels.max(2) } else { panels + 1 };
    let h = (b - a) / n as f64;
    let mut sum = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        sum += w * f(a + i as f64 * h);
    }
    sum * h / 3.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BasisKind {
    Ispline,
    Bspline,
    Identity,
}

/// Basis family plus its knots; identity has no knots and a single column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisSpec {
    pub kind: BasisKind,
    pub knots: Option<KnotVector>,
    /// Scale every centered design column to unit variance. Off by default.
    #[serde(default)]
    pub standardize: bool,
}

impl BasisSpec {
    pub fn ispline(interior_count: usize, order: usize) -> Result<Self, SplineError> {
        Ok(Self {
            kind: BasisKind::Ispline,
            knots: Some(KnotVector::equally_spaced(interior_count, order)?),
            standardize: false,
        })
    }

    pub fn bspline(interior_count: usize, order: usize) -> Result<Self, SplineError> {
        Ok(Self {
            kind: BasisKind::Bspline,
            knots: Some(KnotVector::equally_spaced(interior_count, order)?),
            standardize: false,
        })
    }

    pub fn identity() -> Self {
        Self {
            kind: BasisKind::Identity,
            knots: None,
            standardize: false,
        }
    }

    pub fn standardized(self, on: bool) -> Self {
        Self {
            standardize: on,
            ..self
        }
    }

    pub fn size(&self) -> usize {
        match (&self.kind, &self.knots) {
            (BasisKind::Identity, _) | (_, None) => 1,
            (_, Some(kv)) => kv.basis_size(),
        }
    }

    /// Whether covariates are min-max mapped to `[0, 1]` before expansion.
    pub fn rescales(&self) -> bool {
        self.kind != BasisKind::Identity
    }

    /// Writes all basis values at `x` into `out` (length [`Self::size`]).
    pub fn eval_into(&self, x: f64, out: &mut [f64]) {
        match (&self.kind, &self.knots) {
            (BasisKind::Identity, _) | (_, None) => out[0] = x,
            (BasisKind::Ispline, Some(kv)) => {
                for (k, o) in out.iter_mut().enumerate() {
                    *o = if kv.order == 2 {
                        kv.ispline2_closed(k, x)
                    } else {
                        kv.ispline_quadrature(k, x)
                    };
                }
            }
            (BasisKind::Bspline, Some(kv)) => {
                for (k, o) in out.iter_mut().enumerate() {
                    *o = kv.bspline_raw(k, x);
                }
            }
        }
    }

    pub fn eval(&self, x: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.size()];
        self.eval_into(x, &mut out);
        out
    }
}

/// Min-max parameters of one training column.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RescaleParams {
    pub min: f64,
    pub max: f64,
}

impl RescaleParams {
    /// Maps a raw value into `[0, 1]`, clamping values beyond the training range.
    pub fn apply(&self, x: f64) -> f64 {
        ((x - self.min) / (self.max - self.min)).clamp(0.0, 1.0)
    }
}

pub fn rescale_to_unit(column: &[f64]) -> Result<(Vec<f64>, RescaleParams), SplineError> {
    if let Some((position, &value)) = column.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(SplineError::NonFinite { position, value });
    }
    let min = column.iter().copied().fold(f64::INFINITY, f64::min);
    let max = column.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(max > min) {
        return Err(SplineError::ConstantColumn);
    }
    let params = RescaleParams { min, max };
    Ok((column.iter().map(|&x| params.apply(x)).collect(), params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn grid(points: usize) -> impl Iterator<Item = f64> {
        (0..points).map(move |i| i as f64 / (points - 1) as f64)
    }

    #[test]
    fn knot_layouts() {
        let kv = KnotVector::equally_spaced(0, 1).unwrap();
        assert_eq!(kv.knots(), &[0.0, 1.0]);
        assert_eq!(kv.basis_size(), 1);

        let kv = KnotVector::equally_spaced(6, 2).unwrap();
        assert_eq!(kv.knots().len(), 10);
        assert_eq!(kv.basis_size(), 8);
        assert_eq!(&kv.knots()[..2], &[0.0, 0.0]);
        assert_eq!(&kv.knots()[8..], &[1.0, 1.0]);
        for i in 1..=6 {
            assert_abs_diff_eq!(kv.knots()[i + 1], i as f64 / 7.0);
        }

        let kv = KnotVector::equally_spaced(1, 2).unwrap();
        assert_eq!(kv.knots(), &[0.0, 0.0, 0.5, 1.0, 1.0]);
        assert_eq!(kv.basis_size(), 3);
        assert!(KnotVector::equally_spaced(3, 0).is_err());
    }

    #[test]
    fn order_one_mspline_is_reciprocal_width() {
        let kv = KnotVector::with_interior(&[0.5], 1).unwrap();
        assert_eq!(kv.knots(), &[0.0, 0.5, 1.0]);
        assert_abs_diff_eq!(kv.mspline(0, 0.25).unwrap(), 2.0);
        assert_abs_diff_eq!(kv.mspline(0, 0.75).unwrap(), 0.0);
        assert_abs_diff_eq!(kv.mspline(1, 1.0).unwrap(), 2.0);
    }

    #[test]
    fn out_of_range_index_is_rejected() {
        let kv = KnotVector::equally_spaced(6, 2).unwrap();
        assert_eq!(
            kv.ispline(8, 0.3),
            Err(SplineError::IndexOutOfRange { index: 8, size: 8 })
        );
        assert!(kv.mspline(8, 0.3).is_err());
        assert!(kv.bspline(9, 0.3).is_err());
    }

    #[test]
    fn mspline_vanishes_outside_support() {
        let kv = KnotVector::equally_spaced(6, 2).unwrap();
        // M_4 covers [t_4, t_6] = [3/7, 5/7]
        assert_eq!(kv.mspline(4, 0.1).unwrap(), 0.0);
        assert_eq!(kv.mspline(4, 0.9).unwrap(), 0.0);
        assert!(kv.mspline(4, 0.5).unwrap() > 0.0);
    }

    #[test]
    fn order_two_closed_form_values() {
        // Single segment (t_k, t_{k+1}, t_{k+2}) = (0, 0.5, 1): index 1 of K=1, l=2.
        let kv = KnotVector::equally_spaced(1, 2).unwrap();
        assert_eq!(kv.ispline(1, 0.0).unwrap(), 0.0);
        assert_abs_diff_eq!(kv.ispline(1, 0.25).unwrap(), 0.125, epsilon = 1e-15);
        assert_abs_diff_eq!(kv.ispline(1, 0.75).unwrap(), 0.875, epsilon = 1e-15);
        assert_abs_diff_eq!(kv.ispline_quadrature(1, 0.25), 0.125, epsilon = 1e-10);
        assert_abs_diff_eq!(kv.ispline_quadrature(1, 0.75), 0.875, epsilon = 1e-10);
    }

    #[test]
    fn mspline_matches_scaled_bspline() {
        // M_k = l / (t_{k+l} - t_k) * B_k, an identity independent of both recursions.
        for order in 1..=4 {
            let kv = KnotVector::equally_spaced(5, order).unwrap();
            let t = kv.knots();
            for k in 0..kv.basis_size() {
                let scale = order as f64 / (t[k + order] - t[k]);
                for x in grid(301) {
                    assert_abs_diff_eq!(
                        kv.mspline(k, x).unwrap(),
                        scale * kv.bspline(k, x).unwrap(),
                        epsilon = 1e-10
                    );
                }
            }
        }
    }

    #[test]
    fn order_one_bspline_is_indicator() {
        let kv = KnotVector::equally_spaced(3, 1).unwrap();
        for x in grid(101) {
            for k in 0..kv.basis_size() {
                let lo = k as f64 / 4.0;
                let hi = (k + 1) as f64 / 4.0;
                let inside = x >= lo && (x < hi || (k == 3 && x <= hi));
                assert_eq!(kv.bspline(k, x).unwrap(), if inside { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn higher_order_ispline_endpoints() {
        for order in [1, 3, 4] {
            let kv = KnotVector::equally_spaced(4, order).unwrap();
            for k in 0..kv.basis_size() {
                assert_abs_diff_eq!(kv.ispline(k, 0.0).unwrap(), 0.0);
                assert_abs_diff_eq!(kv.ispline(k, 1.0).unwrap(), 1.0, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn rescaling() {
        let (z, p) = rescale_to_unit(&[0.0, 5.0, 10.0]).unwrap();
        assert_eq!(z, vec![0.0, 0.5, 1.0]);
        assert_eq!(p.apply(12.0), 1.0);
        assert_eq!(p.apply(-3.0), 0.0);
        let (z, _) = rescale_to_unit(&[0.0, 0.3, 1.0]).unwrap();
        assert_eq!(z, vec![0.0, 0.3, 1.0]);
        assert_eq!(rescale_to_unit(&[2.0, 2.0]), Err(SplineError::ConstantColumn));
        assert!(matches!(
            rescale_to_unit(&[1.0, f64::NAN]),
            Err(SplineError::NonFinite { position: 1, .. })
        ));
    }

    #[test]
    fn identity_basis() {
        let b = BasisSpec::identity();
        assert_eq!(b.size(), 1);
        assert_eq!(b.eval(0.37), vec![0.37]);
        assert!(!b.rescales());
    }
}
