//! The contest objective (spatial cosine similarity of anomaly vectors)
//! and the l2-normalized ensembling rule.

use chrono::NaiveDate;

use crate::error::{Error, Result};
use crate::geotime::Horizon;

/// A forecast anomaly over the grid for one target date.
#[derive(Debug, Clone)]
pub struct ForecastAnomaly {
    pub model_name: String,
    pub target_start: NaiveDate,
    pub horizon: Horizon,
    pub values: Vec<f64>,
}

impl ForecastAnomaly {
    pub fn new(
        model_name: impl Into<String>,
        target_start: NaiveDate,
        horizon: Horizon,
        values: Vec<f64>,
    ) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("forecast anomaly contains non-finite values".into()));
        }
        Ok(ForecastAnomaly { model_name: model_name.into(), target_start, horizon, values })
    }
}

/// Nonnegative weights summing to 1.
#[derive(Debug, Clone)]
pub struct EnsembleWeights(Vec<f64>);

impl EnsembleWeights {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidWeights("no weights".into()));
        }
        if weights.iter().any(|&w| !(w >= 0.0)) {
            return Err(Error::InvalidWeights("weights must be nonnegative".into()));
        }
        let sum = pairwise_sum(&weights);
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidWeights(format!("weights sum to {sum}, expected 1")));
        }
        Ok(EnsembleWeights(weights))
    }

    pub fn uniform(m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidWeights("no weights".into()));
        }
        EnsembleWeights::new(vec![1.0 / m as f64; m])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Pairwise (cascade) summation: deterministic and independent of thread
/// count, with better rounding behavior than sequential summation.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 32 {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Inner product with pairwise accumulation.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    if a.len() <= 32 {
        return a.iter().zip(b).map(|(x, y)| x * y).sum();
    }
    let mid = a.len() / 2;
    dot(&a[..mid], &b[..mid]) + dot(&a[mid..], &b[mid..])
}

pub fn l2_norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine similarity between forecast and observed anomaly vectors.
/// A zero-norm input is an explicit error, not 0 or NaN.
pub fn skill(forecast: &[f64], observed: &[f64]) -> Result<f64> {
    if forecast.len() != observed.len() {
        return Err(Error::LengthMismatch { left: forecast.len(), right: observed.len() });
    }
    let nf = l2_norm(forecast);
    let no = l2_norm(observed);
    if nf == 0.0 {
        return Err(Error::ZeroNorm { side: "forecast" });
    }
    if no == 0.0 {
        return Err(Error::ZeroNorm { side: "observed" });
    }
    let cos = dot(forecast, observed) / (nf * no);
    // clamp rounding spill outside [-1, 1]
    Ok(cos.clamp(-1.0, 1.0))
}

/// Weighted average of the l2-normalized forecast anomalies. All
/// constituents must share target date, horizon, and length, and each must
/// have nonzero norm. The resulting vector may still be zero (exact
/// cancellation); that is representable and left to the caller to detect.
pub fn ensemble(forecasts: &[ForecastAnomaly], weights: &EnsembleWeights) -> Result<ForecastAnomaly> {
    if forecasts.is_empty() {
        return Err(Error::Invalid("ensemble needs at least one forecast".into()));
    }
    if forecasts.len() != weights.as_slice().len() {
        return Err(Error::LengthMismatch {
            left: forecasts.len(),
            right: weights.as_slice().len(),
        });
    }
    let first = &forecasts[0];
    let g = first.values.len();
    let mut out = vec![0.0; g];
    for (fc, &w) in forecasts.iter().zip(weights.as_slice()) {
        if fc.target_start != first.target_start || fc.horizon != first.horizon {
            return Err(Error::MismatchedForecasts);
        }
        if fc.values.len() != g {
            return Err(Error::LengthMismatch { left: fc.values.len(), right: g });
        }
        let norm = l2_norm(&fc.values);
        if norm == 0.0 {
            return Err(Error::ZeroNorm { side: "constituent forecast" });
        }
        for (o, &v) in out.iter_mut().zip(&fc.values) {
            *o += w * v / norm;
        }
    }
    let name = forecasts
        .iter()
        .map(|f| f.model_name.as_str())
        .collect::<Vec<_>>()
        .join("+");
    ForecastAnomaly::new(format!("ensemble({name})"), first.target_start, first.horizon, out)
}

/// Outcome of checking the ensembling guarantee on one instance.
#[derive(Debug, Clone)]
pub struct SkillDominanceReport {
    /// Weighted average of constituent skills.
    pub lhs: f64,
    /// Skill of the l2-normalized ensemble.
    pub rhs: f64,
    pub sign_match: bool,
    pub magnitude_ok: bool,
    /// True when the normalized forecasts cancelled to a zero vector.
    pub degenerate: bool,
}

/// Check that the ensemble's skill dominates the weighted average of the
/// constituent skills in sign and magnitude.
pub fn verify_skill_dominance(
    forecasts: &[ForecastAnomaly],
    weights: &EnsembleWeights,
    observed: &[f64],
) -> Result<SkillDominanceReport> {
    let mut lhs = 0.0;
    for (fc, &w) in forecasts.iter().zip(weights.as_slice()) {
        lhs += w * skill(&fc.values, observed)?;
    }
    let ens = ensemble(forecasts, weights)?;
    if l2_norm(&ens.values) == 0.0 {
        return Ok(SkillDominanceReport {
            lhs,
            rhs: 0.0,
            sign_match: lhs == 0.0,
            magnitude_ok: lhs == 0.0,
            degenerate: true,
        });
    }
    let rhs = skill(&ens.values, observed)?;
    let slack = 1e-12;
    let sign_match = sign_of(lhs, slack) == sign_of(rhs, slack);
    let magnitude_ok = lhs.abs() <= rhs.abs() + slack;
    Ok(SkillDominanceReport { lhs, rhs, sign_match, magnitude_ok, degenerate: false })
}

fn sign_of(x: f64, slack: f64) -> i8 {
    if x > slack {
        1
    } else if x < -slack {
        -1
    } else {
        0
    }
}
