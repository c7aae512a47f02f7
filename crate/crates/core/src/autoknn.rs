//! Skill-weighted nearest-neighbor analog features and the local
//! autoregression built on them.
//!
//! For a date t, the similarity to a candidate date u is the mean cosine
//! skill between the two anomaly histories of length H starting `lead` days
//! before t and u. The top-k viable candidates become regression features.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use chrono::NaiveDate;
use rayon::prelude::*;

use crate::climatology::{anomalize, Climatology};
use crate::dataframe::{DatasetView, SpatioTemporalFrame, AGG_WINDOW_DAYS};
use crate::error::{Error, Result};
use crate::geotime::{day_of_year, issue_for_target, month_day, Horizon};
use crate::llr::{fit_wllr, predict, PointDesign, RegressionDesign};
use crate::skill::ForecastAnomaly;

/// Tuning of the neighbor search and the downstream regression.
#[derive(Debug, Clone)]
pub struct AutoknnConfig {
    /// Neighbors retained by the search.
    pub k: usize,
    /// Neighbors materialized as regression features (<= k).
    pub neighbors_used: usize,
    /// History length H (days) compared per candidate.
    pub history: usize,
    /// Offset (days) from a date back to the start of its history window.
    pub lead: i64,
    /// Day-of-year window half-width for the regression; `None` uses all
    /// training dates.
    pub span: Option<u16>,
}

impl AutoknnConfig {
    pub fn temperature() -> Self {
        AutoknnConfig { k: 20, neighbors_used: 20, history: 60, lead: 365, span: None }
    }

    pub fn precipitation() -> Self {
        AutoknnConfig { k: 20, neighbors_used: 1, history: 60, lead: 365, span: Some(56) }
    }

    pub fn for_variable(variable: &str) -> Result<Self> {
        match variable {
            "temperature" => Ok(Self::temperature()),
            "precipitation" => Ok(Self::precipitation()),
            _ => Err(Error::Config(format!(
                "no built-in neighbor configuration for variable '{variable}'"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.neighbors_used > self.k {
            return Err(Error::Config(format!(
                "neighbors_used {} exceeds k {}",
                self.neighbors_used, self.k
            )));
        }
        if self.k == 0 || self.history == 0 {
            return Err(Error::Config("k and history must be positive".into()));
        }
        Ok(())
    }

    /// Regression feature count: three lags, the intercept, and the
    /// materialized neighbors.
    pub fn feature_count(&self) -> usize {
        3 + 1 + self.neighbors_used
    }
}

/// Ranked neighbors of one date.
#[derive(Debug, Clone)]
pub struct NeighborSet {
    pub target_date: NaiveDate,
    /// (neighbor date, similarity), similarity non-increasing.
    pub neighbors: Vec<(NaiveDate, f64)>,
    pub k: usize,
}

/// Mean per-day cosine skill between the anomaly histories of `t_star` and
/// each candidate. A candidate whose history is not fully covered by the
/// frame is skipped; a history day where either anomaly vector has zero
/// norm is dropped from the mean, and a candidate with no usable days is
/// skipped entirely.
pub fn knn_similarities(
    t_star: NaiveDate,
    anomalies: &SpatioTemporalFrame,
    lead: i64,
    history: usize,
    candidates: &[NaiveDate],
) -> Result<Vec<(NaiveDate, f64)>> {
    let target_rows = history_rows(anomalies, t_star, lead, history).ok_or_else(|| {
        Error::Invalid(format!("anomaly history incomplete before {t_star}"))
    })?;
    let mut out = Vec::with_capacity(candidates.len());
    for &u in candidates {
        let Some(rows) = history_rows(anomalies, u, lead, history) else {
            log::debug!("candidate {u} skipped: incomplete history");
            continue;
        };
        let mut sum = 0.0;
        let mut used = 0usize;
        for (a, b) in rows.iter().zip(&target_rows) {
            if let Some(cos) = masked_cosine(a, b) {
                sum += cos;
                used += 1;
            }
        }
        if used == 0 {
            log::debug!("candidate {u} skipped: all history days degenerate");
            continue;
        }
        out.push((u, sum / used as f64));
    }
    Ok(out)
}

/// Anomaly rows at t-lead, t-lead-1, ..., t-lead-history+1; `None` if any
/// date is absent from the frame.
fn history_rows<'a>(
    frame: &'a SpatioTemporalFrame,
    t: NaiveDate,
    lead: i64,
    history: usize,
) -> Option<Vec<&'a [f64]>> {
    let mut rows = Vec::with_capacity(history);
    for h in 0..history as i64 {
        let date = t - chrono::Duration::days(lead + h);
        rows.push(frame.row(frame.date_index(date)?));
    }
    Some(rows)
}

/// Cosine over the grid points where both rows are present; `None` when a
/// side has zero norm (or nothing overlaps).
fn masked_cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        if x.is_finite() && y.is_finite() {
            dot += x * y;
            na += x * x;
            nb += y * y;
        }
    }
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    Some((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

/// The k most similar candidates fully observed before `viability_issue`
/// (candidate period end <= issue). Ties at equal similarity go to the
/// earlier date. Fewer than k viable candidates returns them all.
pub fn top_k_neighbors(
    target_date: NaiveDate,
    sims: &[(NaiveDate, f64)],
    k: usize,
    viability_issue: NaiveDate,
) -> NeighborSet {
    let mut viable: Vec<(NaiveDate, f64)> = sims
        .iter()
        .copied()
        .filter(|&(u, _)| u + chrono::Duration::days(AGG_WINDOW_DAYS) <= viability_issue)
        .collect();
    viable.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    if viable.len() < k {
        log::warn!(
            "only {} viable neighbors for {} (wanted {})",
            viable.len(),
            target_date,
            k
        );
    }
    viable.truncate(k);
    NeighborSet { target_date, neighbors: viable, k }
}

/// Population variance (divide by count) over the finite entries.
pub fn population_variance(xs: &[f64]) -> Option<f64> {
    let mut sum = 0.0;
    let mut sq = 0.0;
    let mut n = 0.0;
    for &x in xs {
        if x.is_finite() {
            sum += x;
            sq += x * x;
            n += 1.0;
        }
    }
    if n == 0.0 {
        return None;
    }
    let mean = sum / n;
    Some((sq / n - mean * mean).max(0.0))
}

/// Training weight 1 / Var_g(anomaly row); 0 when the variance is zero or
/// the row is empty.
pub fn variance_weight(row: &[f64]) -> f64 {
    match population_variance(row) {
        Some(v) if v > 0.0 => 1.0 / v,
        _ => 0.0,
    }
}

/// Anomaly row rescaled to population standard deviation 1. `None` if the
/// date is absent or the row is constant.
pub fn scaled_anomaly_row(anomalies: &SpatioTemporalFrame, date: NaiveDate) -> Option<Vec<f64>> {
    let row = anomalies.row_at(date)?;
    let var = population_variance(row)?;
    if var <= 0.0 {
        return None;
    }
    let sd = var.sqrt();
    Some(row.iter().map(|&v| v / sd).collect())
}

/// Memo of neighbor searches keyed by (date, viability issue). Sound across
/// backtest issues because a date's similarities and viability depend only
/// on data strictly before its own issue date.
#[derive(Debug, Default)]
pub struct NeighborCache {
    map: Mutex<HashMap<(NaiveDate, NaiveDate), Arc<NeighborSet>>>,
}

impl NeighborCache {
    pub fn new() -> Self {
        Self::default()
    }

    fn get_or_compute(
        &self,
        key: (NaiveDate, NaiveDate),
        compute: impl FnOnce() -> Result<NeighborSet>,
    ) -> Result<Arc<NeighborSet>> {
        if let Some(hit) = self.map.lock().unwrap().get(&key) {
            return Ok(Arc::clone(hit));
        }
        let set = Arc::new(compute()?);
        self.map
            .lock()
            .unwrap()
            .entry(key)
            .or_insert_with(|| Arc::clone(&set));
        Ok(set)
    }
}

/// Forecast by weighted local regression on three lagged anomalies, an
/// intercept, and the scaled anomalies of the date's nearest neighbors.
/// Training weights are inverse anomaly variances, offsets are the
/// climatology. Returns the forecast together with the target date's own
/// neighbor set.
pub fn autoknn_forecast(
    target_date: NaiveDate,
    horizon: Horizon,
    config: &AutoknnConfig,
    view: &DatasetView,
    clim: &Climatology,
    cache: Option<&NeighborCache>,
) -> Result<(ForecastAnomaly, NeighborSet)> {
    config.validate()?;
    let issue = issue_for_target(target_date, horizon);
    let anomalies = anomalize(view.target(), clim)?;
    let grid = view.grid();
    let g = grid.len();
    let fresh = horizon.freshest_lag();
    let lags = [fresh, 2 * fresh, 365];
    let all_dates: Vec<NaiveDate> = anomalies.dates().to_vec();
    let train: Vec<NaiveDate> = all_dates
        .iter()
        .copied()
        .filter(|&t| t + chrono::Duration::days(AGG_WINDOW_DAYS) <= issue)
        .collect();
    if train.is_empty() {
        return Err(Error::Invalid(format!("no training dates before issue {issue}")));
    }

    let search = |t: NaiveDate, viability: NaiveDate| -> Result<Arc<NeighborSet>> {
        let compute = || -> Result<NeighborSet> {
            let sims = knn_similarities(t, &anomalies, config.lead, config.history, &all_dates)?;
            Ok(top_k_neighbors(t, &sims, config.k, viability))
        };
        match cache {
            Some(c) => c.get_or_compute((t, viability), compute),
            None => compute().map(Arc::new),
        }
    };

    // per-training-date neighbor searches, each viable against that date's
    // own issue date; dates without enough history get no neighbors
    let offset = horizon.issue_to_target_offset();
    let train_sets: Vec<Option<Arc<NeighborSet>>> = train
        .par_iter()
        .map(|&t| {
            let viability = t - chrono::Duration::days(offset);
            match search(t, viability) {
                Ok(set) => Some(set),
                Err(_) => None,
            }
        })
        .collect();
    let target_set = search(target_date, issue)?;

    // scaled anomaly rows for every neighbor date in play
    let mut scaled: HashMap<NaiveDate, Option<Vec<f64>>> = HashMap::new();
    let mut note = |set: &NeighborSet| {
        for &(u, _) in set.neighbors.iter().take(config.neighbors_used) {
            scaled.entry(u).or_insert_with(|| scaled_anomaly_row(&anomalies, u));
        }
    };
    for set in train_sets.iter().flatten() {
        note(set);
    }
    note(&target_set);

    let m = config.neighbors_used;
    let d = config.feature_count();
    let var = view.variable();
    let mut feature_names: Vec<String> =
        lags.iter().map(|lag| format!("{var}_shift{lag}_anom")).collect();
    feature_names.push("ones".into());
    for j in 1..=m {
        feature_names.push(format!("knn{j}"));
    }

    let weights: Vec<f64> = train
        .iter()
        .map(|&t| variance_weight(anomalies.row_at(t).unwrap_or(&[])))
        .collect();

    let clim_row = |t: NaiveDate| -> Result<&[f64]> {
        let (mo, dd) = month_day(t);
        clim.values_for(mo, dd).ok_or(Error::UncoveredMonthDay { month: mo, day: dd })
    };

    let fill_row = |features: &mut Vec<f64>, t: NaiveDate, set: Option<&NeighborSet>, pi: usize| {
        for &lag in &lags {
            let src = t - chrono::Duration::days(lag);
            features.push(anomalies.value(src, pi).unwrap_or(f64::NAN));
        }
        features.push(1.0);
        for j in 0..m {
            let v = set
                .and_then(|s| s.neighbors.get(j))
                .and_then(|&(u, _)| scaled.get(&u).and_then(|r| r.as_ref()))
                .map(|r| r[pi])
                .unwrap_or(f64::NAN);
            features.push(v);
        }
    };

    let mut points = Vec::with_capacity(g);
    for pi in 0..g {
        let mut features = Vec::with_capacity(train.len() * d);
        let mut outcomes = Vec::with_capacity(train.len());
        let mut offsets = Vec::with_capacity(train.len());
        for (r, &t) in train.iter().enumerate() {
            fill_row(&mut features, t, train_sets[r].as_deref(), pi);
            outcomes.push(view.target().value(t, pi).unwrap_or(f64::NAN));
            offsets.push(clim_row(t)?[pi]);
        }
        points.push(PointDesign { features, outcomes, offsets, weights: weights.clone() });
    }
    let design = RegressionDesign { dates: train, feature_names, points };

    let span = config.span.unwrap_or(182);
    let d_star = day_of_year(target_date);
    let fit = fit_wllr(d_star, span, &design)?;

    let target_clim = clim_row(target_date)?.to_vec();
    let mut pred_features = Vec::with_capacity(g);
    for pi in 0..g {
        let mut row = Vec::with_capacity(d);
        fill_row(&mut row, target_date, Some(&target_set), pi);
        if row.iter().any(|v| v.is_nan()) {
            return Err(Error::Invalid(format!(
                "missing neighbor or lag data for grid point {pi} at {target_date}"
            )));
        }
        pred_features.push(row);
    }
    let preds = predict(&fit, &pred_features, &target_clim)?;
    let values: Vec<f64> = preds.iter().zip(&target_clim).map(|(p, c)| p - c).collect();
    let forecast = ForecastAnomaly::new("autoknn", target_date, horizon, values)?;
    Ok((forecast, NeighborSet::clone(&target_set)))
}

/// CSV summarizing neighbor sets: one row per (target date, rank).
pub fn neighbor_diagnostics(sets: &[NeighborSet]) -> String {
    use chrono::Datelike;
    let mut out = String::from("target_month,rank,neighbor_month,neighbor_year\n");
    for set in sets {
        for (rank, &(u, _)) in set.neighbors.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{}\n",
                set.target_date.month(),
                rank + 1,
                u.month(),
                u.year()
            ));
        }
    }
    out
}
