//! Sparse monotone additive regression.
//!
//! Each covariate is expanded in a monotone I-spline basis and the
//! coefficient blocks are selected with a cooperative (sign-coherent) group
//! penalty, so every selected component is monotone increasing or
//! decreasing. Linear and B-spline baselines, K-fold cross-validation and a
//! simulation harness are included.

pub mod cv;
pub mod design;
pub mod estimators;
pub mod simulation;
pub mod solver;
pub mod spline;

pub use design::{build_design, center_response, DesignMatrix, Groups};
pub use estimators::{fit, FitOptions, FitResult, Method};
pub use solver::{PenaltyKind, PenaltySpec, SolverConfig, SolverResult};
pub use spline::{BasisKind, BasisSpec, KnotVector};
