//! Weighted local linear regression fit independently per grid point over
//! a circular day-of-year window.

use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::geotime::{circular_window_mask, DayOfYear};

/// Training data for one grid point: row-major n x d feature matrix plus
/// outcomes, offsets, and weights. NaN entries mark missing data; rows with
/// any missing value are dropped at fit time.
#[derive(Debug, Clone, Default)]
pub struct PointDesign {
    pub features: Vec<f64>,
    pub outcomes: Vec<f64>,
    pub offsets: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Multitask regression design: shared training dates and feature names,
/// one `PointDesign` per grid point.
#[derive(Debug, Clone)]
pub struct RegressionDesign {
    pub dates: Vec<NaiveDate>,
    pub feature_names: Vec<String>,
    pub points: Vec<PointDesign>,
}

impl RegressionDesign {
    pub fn n_rows(&self) -> usize {
        self.dates.len()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    /// A design keeping only the given feature columns, in the given order.
    pub fn select_columns(&self, cols: &[usize]) -> RegressionDesign {
        let n = self.dates.len();
        let d = self.feature_names.len();
        let points = self
            .points
            .iter()
            .map(|p| {
                let mut features = Vec::with_capacity(n * cols.len());
                for r in 0..n {
                    let row = &p.features[r * d..(r + 1) * d];
                    for &c in cols {
                        features.push(row[c]);
                    }
                }
                PointDesign {
                    features,
                    outcomes: p.outcomes.clone(),
                    offsets: p.offsets.clone(),
                    weights: p.weights.clone(),
                }
            })
            .collect();
        RegressionDesign {
            dates: self.dates.clone(),
            feature_names: cols.iter().map(|&c| self.feature_names[c].clone()).collect(),
            points,
        }
    }

    fn validate(&self) -> Result<()> {
        let n = self.dates.len();
        let d = self.feature_names.len();
        for (pi, p) in self.points.iter().enumerate() {
            if p.features.len() != n * d
                || p.outcomes.len() != n
                || p.offsets.len() != n
                || p.weights.len() != n
            {
                return Err(Error::Invalid(format!(
                    "inconsistent row counts in design for grid point {pi}"
                )));
            }
            if p.weights.iter().any(|&w| w < 0.0) {
                return Err(Error::Invalid(format!(
                    "negative weight in design for grid point {pi}"
                )));
            }
        }
        Ok(())
    }
}

/// Fitted coefficients per grid point.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub feature_names: Vec<String>,
    /// One coefficient vector (length = feature count) per grid point.
    pub coefficients: Vec<Vec<f64>>,
    /// Usable training rows per grid point after windowing and filtering.
    pub rows_used: Vec<usize>,
    pub span: u16,
}

/// Fit the weighted local linear regression on the circular day-of-year
/// window around `d_star`.
pub fn fit_wllr(d_star: DayOfYear, span: u16, design: &RegressionDesign) -> Result<FitResult> {
    fit_wllr_excluding(d_star, span, design, |_| false)
}

/// As `fit_wllr`, additionally dropping training dates for which `exclude`
/// returns true (used by the hold-out cross-validation loop).
pub fn fit_wllr_excluding(
    d_star: DayOfYear,
    span: u16,
    design: &RegressionDesign,
    exclude: impl Fn(NaiveDate) -> bool,
) -> Result<FitResult> {
    design.validate()?;
    let d = design.n_features();
    let in_window = circular_window_mask(d_star, span, &design.dates);
    let rows: Vec<usize> = (0..design.dates.len())
        .filter(|&r| in_window[r] && !exclude(design.dates[r]))
        .collect();
    if rows.is_empty() {
        return Err(Error::EmptyWindow { doy: d_star.value(), span });
    }

    let mut coefficients = Vec::with_capacity(design.points.len());
    let mut rows_used = Vec::with_capacity(design.points.len());
    for p in &design.points {
        let (beta, used) = fit_point(p, d, &rows)?;
        coefficients.push(beta);
        rows_used.push(used);
    }
    Ok(FitResult {
        feature_names: design.feature_names.clone(),
        coefficients,
        rows_used,
        span,
    })
}

fn fit_point(p: &PointDesign, d: usize, rows: &[usize]) -> Result<(Vec<f64>, usize)> {
    // normal equations accumulated in fixed row order
    let mut xtwx = DMatrix::<f64>::zeros(d, d);
    let mut xtwy = DVector::<f64>::zeros(d);
    let mut used = 0usize;
    let mut weight_sum = 0.0;
    for &r in rows {
        let y = p.outcomes[r];
        let b = p.offsets[r];
        let w = p.weights[r];
        let x = &p.features[r * d..(r + 1) * d];
        if y.is_nan() || b.is_nan() || w.is_nan() || x.iter().any(|v| v.is_nan()) {
            continue;
        }
        used += 1;
        weight_sum += w;
        if w == 0.0 {
            continue;
        }
        let resid_target = y - b;
        for i in 0..d {
            xtwy[i] += w * x[i] * resid_target;
            for j in i..d {
                xtwx[(i, j)] += w * x[i] * x[j];
            }
        }
    }
    if used == 0 || weight_sum == 0.0 {
        return Err(Error::AllZeroWeights);
    }
    for i in 0..d {
        for j in 0..i {
            xtwx[(i, j)] = xtwx[(j, i)];
        }
    }
    Ok((min_norm_solve(&xtwx, &xtwy), used))
}

/// Minimum-norm solution of the (possibly singular) normal equations via
/// symmetric eigendecomposition, with relative eigenvalue cutoff
/// 1e-10 * lambda_max.
fn min_norm_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Vec<f64> {
    let d = b.len();
    let eig = a.clone().symmetric_eigen();
    let lambda_max = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
    if lambda_max <= 0.0 {
        return vec![0.0; d];
    }
    let cutoff = 1e-10 * lambda_max;
    let mut beta = DVector::<f64>::zeros(d);
    for k in 0..d {
        let lambda = eig.eigenvalues[k];
        if lambda > cutoff {
            let q = eig.eigenvectors.column(k);
            let coef = q.dot(b) / lambda;
            beta += q * coef;
        }
    }
    beta.iter().cloned().collect()
}

/// Predictions for one date: y_g = b_g + beta_g . x_g.
pub fn predict(fit: &FitResult, features: &[Vec<f64>], offsets: &[f64]) -> Result<Vec<f64>> {
    if features.len() != fit.coefficients.len() || offsets.len() != fit.coefficients.len() {
        return Err(Error::LengthMismatch {
            left: features.len(),
            right: fit.coefficients.len(),
        });
    }
    let d = fit.feature_names.len();
    let mut out = Vec::with_capacity(features.len());
    for ((x, beta), &b) in features.iter().zip(&fit.coefficients).zip(offsets) {
        if x.len() != d {
            return Err(Error::LengthMismatch { left: x.len(), right: d });
        }
        let mut y = b;
        for (xi, bi) in x.iter().zip(beta) {
            y += xi * bi;
        }
        out.push(y);
    }
    Ok(out)
}
