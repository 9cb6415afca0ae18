//! Least-squares affine fitting and the scalar fitness measures built on it.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dtree::DiscriminantTree;
use crate::trace::{ExecutionTrace, Point, TraceSet};

/// Relative singular-value cutoff for rank decisions in the least-squares
/// solve.
pub const RANK_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum FitError {
    #[error("cannot fit an affine model to an empty point set")]
    Empty,
    #[error("dimension mismatch: point {index} has {got} inputs, expected {expected}")]
    DimensionMismatch {
        index: usize,
        got: usize,
        expected: usize,
    },
    #[error("actual and predicted lengths differ ({actual} vs {predicted})")]
    LengthMismatch { actual: usize, predicted: usize },
    #[error("coefficient of determination is undefined: actual values have zero variance")]
    ZeroVariance,
    #[error("singular value decomposition did not converge")]
    SvdFailed,
    #[error(transparent)]
    Tree(#[from] crate::dtree::TreeError),
}

/// An affine function y = slope . x + intercept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineModel {
    pub slope: Vec<f64>,
    pub intercept: f64,
}

impl AffineModel {
    pub fn new(slope: Vec<f64>, intercept: f64) -> Self {
        AffineModel { slope, intercept }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.slope.len());
        self.slope.iter().zip(x).map(|(a, v)| a * v).sum::<f64>() + self.intercept
    }

    /// Squared vertical residual of a point against this model.
    pub fn squared_residual(&self, p: &Point) -> f64 {
        let r = p.y - self.eval(&p.x);
        r * r
    }
}

/// Result of a least-squares fit.
#[derive(Debug, Clone)]
pub struct FitReport {
    pub model: AffineModel,
    pub rss: f64,
    pub count: usize,
    /// True when the design matrix was rank-deficient and the minimum-norm
    /// solution was returned (e.g. fewer points than coefficients).
    pub degenerate: bool,
}

/// Fits the minimum-RSS affine model to the points. Rank-deficient systems
/// get the minimum-norm solution and are flagged degenerate.
pub fn fit_affine(points: &[Point]) -> Result<FitReport, FitError> {
    let n_pts = points.len();
    if n_pts == 0 {
        return Err(FitError::Empty);
    }
    let dim = points[0].x.len();
    for (i, p) in points.iter().enumerate() {
        if p.x.len() != dim {
            return Err(FitError::DimensionMismatch {
                index: i,
                got: p.x.len(),
                expected: dim,
            });
        }
    }

    // Design matrix [x | 1], solved by SVD so near-collinear inputs stay
    // stable and rank-deficient systems fall back to minimum norm.
    let cols = dim + 1;
    let mut design = DMatrix::<f64>::zeros(n_pts, cols);
    let mut rhs = DVector::<f64>::zeros(n_pts);
    for (i, p) in points.iter().enumerate() {
        for (j, v) in p.x.iter().enumerate() {
            design[(i, j)] = *v;
        }
        design[(i, dim)] = 1.0;
        rhs[i] = p.y;
    }

    let svd = design.svd(true, true);
    let sigma_max = svd.singular_values.iter().cloned().fold(0.0_f64, f64::max);
    let cutoff = RANK_TOLERANCE * sigma_max;
    let rank = svd
        .singular_values
        .iter()
        .filter(|&&s| s > cutoff && s > 0.0)
        .count();

    let u = svd.u.as_ref().ok_or(FitError::SvdFailed)?;
    let vt = svd.v_t.as_ref().ok_or(FitError::SvdFailed)?;
    // Pseudo-inverse applied to the rhs: x = V diag(1/sigma) U^T b with small
    // singular values zeroed.
    let utb = u.transpose() * &rhs;
    let mut scaled = DVector::<f64>::zeros(svd.singular_values.len());
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > cutoff && s > 0.0 {
            scaled[i] = utb[i] / s;
        }
    }
    let coeffs = vt.transpose() * scaled;

    let model = AffineModel::new(coeffs.iter().take(dim).cloned().collect(), coeffs[dim]);
    let rss = points.iter().map(|p| model.squared_residual(p)).sum();
    Ok(FitReport {
        model,
        rss,
        count: n_pts,
        degenerate: rank < cols,
    })
}

/// Squared error of the tree's mixture prediction on one trace: the trace's
/// call counts route to a leaf, whose distribution weights the attached
/// affine models.
pub fn prediction_error(trace: &ExecutionTrace, tree: &DiscriminantTree) -> Result<f64, FitError> {
    let predicted = tree.predict_output(&trace.aux, &trace.inputs)?;
    let err = trace.output - predicted;
    Ok(err * err)
}

/// Mean of [`prediction_error`] over the trace set.
pub fn mse(ts: &TraceSet, tree: &DiscriminantTree) -> Result<f64, FitError> {
    let mut total = 0.0;
    for t in ts.traces() {
        total += prediction_error(t, tree)?;
    }
    Ok(total / ts.len() as f64)
}

/// Coefficient of determination, 1 - SS_res/SS_tot. Errors (rather than
/// returning NaN) when the actual values have zero variance.
pub fn r_squared(actual: &[f64], predicted: &[f64]) -> Result<f64, FitError> {
    if actual.len() != predicted.len() || actual.is_empty() {
        return Err(FitError::LengthMismatch {
            actual: actual.len(),
            predicted: predicted.len(),
        });
    }
    let mean = actual.iter().sum::<f64>() / actual.len() as f64;
    let ss_tot: f64 = actual.iter().map(|y| (y - mean) * (y - mean)).sum();
    if ss_tot == 0.0 {
        return Err(FitError::ZeroVariance);
    }
    let ss_res: f64 = actual
        .iter()
        .zip(predicted)
        .map(|(y, p)| (y - p) * (y - p))
        .sum();
    Ok(1.0 - ss_res / ss_tot)
}
