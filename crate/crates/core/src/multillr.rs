//! Multitask backward stepwise feature selection driven by leave-one-year-out
//! cross-validated skill, and the resulting local-regression forecast.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use rayon::prelude::*;

use crate::climatology::Climatology;
use crate::dataframe::{DatasetView, AGG_WINDOW_DAYS};
use crate::error::{Error, Result};
use crate::geotime::{day_of_year, issue_for_target, DayOfYear, Horizon};
use crate::llr::{fit_wllr, fit_wllr_excluding, predict, PointDesign, RegressionDesign};
use crate::skill::{pairwise_sum, skill, ForecastAnomaly};

pub const DEFAULT_SPAN: u16 = 56;
pub const DEFAULT_TOL: f64 = 0.01;

/// Where a candidate regressor's values come from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FeatureSource {
    /// Constant 1 (intercept).
    Ones,
    /// Target variable lagged by `lag` days; optionally converted to an
    /// anomaly with the target climatology.
    TargetLag { lag: i64, anomaly: bool },
    /// A `feature_*.csv` frame lagged by `lag` days.
    FrameLag { frame: String, lag: i64 },
}

#[derive(Debug, Clone)]
pub struct CatalogEntry {
    pub name: String,
    pub source: FeatureSource,
}

/// Ordered list of named candidate regressors.
#[derive(Debug, Clone)]
pub struct FeatureCatalog {
    entries: Vec<CatalogEntry>,
}

impl FeatureCatalog {
    pub fn new(entries: Vec<CatalogEntry>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Catalog("catalog must have at least one entry".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for e in &entries {
            if e.name.is_empty() {
                return Err(Error::Catalog("empty feature name".into()));
            }
            if !seen.insert(e.name.as_str()) {
                return Err(Error::Catalog(format!("duplicate feature name '{}'", e.name)));
            }
        }
        Ok(FeatureCatalog { entries })
    }

    /// The documented default: intercept, target anomalies at the freshest
    /// lag, twice the freshest lag, and one year, plus every feature frame
    /// in the dataset at the freshest admissible lag.
    pub fn default_for(view: &DatasetView, horizon: Horizon) -> Result<Self> {
        let var = view.variable();
        let fresh = horizon.freshest_lag();
        let mut entries = vec![CatalogEntry {
            name: "ones".into(),
            source: FeatureSource::Ones,
        }];
        for lag in [fresh, 2 * fresh, 365] {
            entries.push(CatalogEntry {
                name: format!("{var}_shift{lag}_anom"),
                source: FeatureSource::TargetLag { lag, anomaly: true },
            });
        }
        for name in view.feature_names() {
            entries.push(CatalogEntry {
                name: format!("{name}_shift{fresh}"),
                source: FeatureSource::FrameLag { frame: name.to_string(), lag: fresh },
            });
        }
        FeatureCatalog::new(entries)
    }

    pub fn entries(&self) -> &[CatalogEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.name.clone()).collect()
    }
}

/// A regression design over all admissible training dates plus the feature
/// row for the forecast target date itself.
#[derive(Debug, Clone)]
pub struct BuiltDesign {
    pub design: RegressionDesign,
    /// Per-grid-point feature vector for the target date.
    pub prediction_features: Vec<Vec<f64>>,
}

/// Assemble the design matrix for every training date fully observed before
/// the issue date of `target_date`, one column per catalog entry. Outcomes
/// are raw target values; weights 1 and offsets 0 throughout.
pub fn build_design(
    catalog: &FeatureCatalog,
    target_date: NaiveDate,
    horizon: Horizon,
    view: &DatasetView,
    clim: &Climatology,
) -> Result<BuiltDesign> {
    let fresh = horizon.freshest_lag();
    for e in catalog.entries() {
        let lag = match &e.source {
            FeatureSource::Ones => continue,
            FeatureSource::TargetLag { lag, .. } => *lag,
            FeatureSource::FrameLag { lag, .. } => *lag,
        };
        if lag < fresh {
            return Err(Error::LagTooShort { lag, freshest: fresh, horizon: horizon.name() });
        }
    }
    for e in catalog.entries() {
        if let FeatureSource::FrameLag { frame, .. } = &e.source {
            view.feature(frame)?; // fail early with the source name
        }
    }

    let issue = issue_for_target(target_date, horizon);
    let grid = view.grid();
    let g = grid.len();
    let d = catalog.len();
    let target = view.target();
    let dates: Vec<NaiveDate> = target
        .dates()
        .iter()
        .copied()
        .filter(|&t| t + chrono::Duration::days(AGG_WINDOW_DAYS) <= issue)
        .collect();

    let cell = |entry: &CatalogEntry, t: NaiveDate, pi: usize| -> Result<f64> {
        match &entry.source {
            FeatureSource::Ones => Ok(1.0),
            FeatureSource::TargetLag { lag, anomaly } => {
                let src = t - chrono::Duration::days(*lag);
                let Some(v) = view.target_value(src, pi) else {
                    return Ok(f64::NAN);
                };
                if *anomaly {
                    let (m, dd) = crate::geotime::month_day(src);
                    let crow = clim
                        .values_for(m, dd)
                        .ok_or(Error::UncoveredMonthDay { month: m, day: dd })?;
                    Ok(v - crow[pi])
                } else {
                    Ok(v)
                }
            }
            FeatureSource::FrameLag { frame, lag } => {
                let src = t - chrono::Duration::days(*lag);
                Ok(view.feature_value(frame, src, pi).unwrap_or(f64::NAN))
            }
        }
    };

    let mut points = Vec::with_capacity(g);
    for pi in 0..g {
        let mut features = Vec::with_capacity(dates.len() * d);
        let mut outcomes = Vec::with_capacity(dates.len());
        for &t in &dates {
            for entry in catalog.entries() {
                features.push(cell(entry, t, pi)?);
            }
            outcomes.push(view.target_value(t, pi).unwrap_or(f64::NAN));
        }
        points.push(PointDesign {
            features,
            outcomes,
            offsets: vec![0.0; dates.len()],
            weights: vec![1.0; dates.len()],
        });
    }

    let mut prediction_features = Vec::with_capacity(g);
    for pi in 0..g {
        let mut row = Vec::with_capacity(d);
        for entry in catalog.entries() {
            row.push(cell(entry, target_date, pi)?);
        }
        prediction_features.push(row);
    }

    Ok(BuiltDesign {
        design: RegressionDesign { dates, feature_names: catalog.names(), points },
        prediction_features,
    })
}

/// Outcome of the leave-one-year-out hold-out loop for one feature subset.
#[derive(Debug, Clone)]
pub struct LoyocvResult {
    /// Dates with day-of-year `d_star` where a skill was realized.
    pub eval_dates: Vec<NaiveDate>,
    pub per_date_skill: Vec<f64>,
    /// Arithmetic mean of the per-date skills.
    pub mean_skill: f64,
    /// Dates skipped because the fit or the skill was undefined there.
    pub skipped: usize,
}

/// Leave-one-year-out cross-validated skill of the feature subset `cols`
/// (column indices into `design`). For every training date t with
/// doy(t) = `d_star`, the horizon's hold-out interval around t is excluded,
/// the regression is fit on the remaining window, and the prediction for t
/// is scored as an anomaly against the observed anomaly.
pub fn loyocv(
    d_star: DayOfYear,
    design: &RegressionDesign,
    cols: &[usize],
    clim: &Climatology,
    horizon: Horizon,
    span: u16,
) -> Result<LoyocvResult> {
    if cols.is_empty() {
        return Err(Error::Catalog("cannot cross-validate an empty feature set".into()));
    }
    let sub = design.select_columns(cols);
    let (before, after) = horizon.holdout_interval();
    let g = sub.points.len();

    let mut eval_dates = Vec::new();
    let mut per_date_skill = Vec::new();
    let mut skipped = 0usize;
    for (ti, &t) in sub.dates.iter().enumerate() {
        if day_of_year(t) != d_star {
            continue;
        }
        let lo = t - chrono::Duration::days(before);
        let hi = t + chrono::Duration::days(after);
        let fit = match fit_wllr_excluding(d_star, span, &sub, |d| d >= lo && d <= hi) {
            Ok(f) => f,
            Err(Error::EmptyWindow { .. }) | Err(Error::AllZeroWeights) => {
                skipped += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        let features: Vec<Vec<f64>> = (0..g)
            .map(|pi| {
                let dcols = sub.feature_names.len();
                sub.points[pi].features[ti * dcols..(ti + 1) * dcols].to_vec()
            })
            .collect();
        let preds = predict(&fit, &features, &vec![0.0; g])?;
        let (m, dd) = crate::geotime::month_day(t);
        let crow = clim
            .values_for(m, dd)
            .ok_or(Error::UncoveredMonthDay { month: m, day: dd })?;
        let mut pa = Vec::with_capacity(g);
        let mut oa = Vec::with_capacity(g);
        for pi in 0..g {
            let y = sub.points[pi].outcomes[ti];
            if preds[pi].is_finite() && y.is_finite() && crow[pi].is_finite() {
                pa.push(preds[pi] - crow[pi]);
                oa.push(y - crow[pi]);
            }
        }
        if pa.is_empty() {
            skipped += 1;
            continue;
        }
        match skill(&pa, &oa) {
            Ok(s) => {
                eval_dates.push(t);
                per_date_skill.push(s);
            }
            Err(Error::ZeroNorm { .. }) => skipped += 1,
            Err(e) => return Err(e),
        }
    }
    if eval_dates.is_empty() {
        return Err(Error::NoEvaluableDates { doy: d_star.value() });
    }
    let mean_skill = pairwise_sum(&per_date_skill) / per_date_skill.len() as f64;
    Ok(LoyocvResult { eval_dates, per_date_skill, mean_skill, skipped })
}

#[derive(Debug, Clone)]
pub struct TraceStep {
    pub removed: String,
    /// Cross-validated mean skill of the set after this removal.
    pub mean_skill: f64,
}

/// Record of one backward stepwise run.
#[derive(Debug, Clone)]
pub struct SelectionTrace {
    pub d_star: DayOfYear,
    /// Mean skill of the full catalog before any removal.
    pub initial_skill: f64,
    pub steps: Vec<TraceStep>,
    pub final_features: Vec<String>,
    pub final_skill: f64,
    /// True when the loop stopped because only one feature remained, not
    /// because the tolerance condition held.
    pub forced_stop: bool,
}

impl SelectionTrace {
    /// CSV with columns `step,removed_feature,mean_skill`; step 0 is the
    /// full set before any removal.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,removed_feature,mean_skill\n");
        out.push_str(&format!("0,,{}\n", self.initial_skill));
        for (i, s) in self.steps.iter().enumerate() {
            out.push_str(&format!("{},{},{}\n", i + 1, s.removed, s.mean_skill));
        }
        out
    }
}

/// Backward stepwise elimination: starting from every design column,
/// repeatedly drop the feature whose removal hurts the cross-validated mean
/// skill the least, as long as the loss stays under `tol`. Removal
/// candidates within one iteration are evaluated in parallel; ties go to
/// the lowest catalog index, and the last remaining feature is never
/// removed.
pub fn backward_stepwise(
    d_star: DayOfYear,
    tol: f64,
    design: &RegressionDesign,
    clim: &Climatology,
    horizon: Horizon,
    span: u16,
) -> Result<SelectionTrace> {
    let d = design.n_features();
    let mut active: Vec<usize> = (0..d).collect();
    let mut v = loyocv(d_star, design, &active, clim, horizon, span)?.mean_skill;
    let initial_skill = v;
    let mut steps = Vec::new();
    let mut forced_stop = false;
    loop {
        if active.len() == 1 {
            forced_stop = true;
            log::debug!(
                "stepwise stop forced at doy {}: one feature left ('{}')",
                d_star.value(),
                design.feature_names[active[0]]
            );
            break;
        }
        let candidates: Vec<Result<f64>> = active
            .par_iter()
            .map(|&j| {
                let rest: Vec<usize> = active.iter().copied().filter(|&c| c != j).collect();
                loyocv(d_star, design, &rest, clim, horizon, span).map(|r| r.mean_skill)
            })
            .collect();
        let mut best: Option<(usize, f64)> = None; // (position in active, v_j)
        for (pos, cand) in candidates.into_iter().enumerate() {
            let vj = cand?;
            // strict > keeps the earliest (lowest catalog index) on ties
            if best.map_or(true, |(_, b)| vj > b) {
                best = Some((pos, vj));
            }
        }
        let (pos, vmax) = best.expect("active has >= 2 entries");
        if tol > v - vmax {
            let removed = active.remove(pos);
            v = vmax;
            steps.push(TraceStep {
                removed: design.feature_names[removed].clone(),
                mean_skill: v,
            });
        } else {
            break;
        }
    }
    Ok(SelectionTrace {
        d_star,
        initial_skill,
        steps,
        final_features: active.iter().map(|&c| design.feature_names[c].clone()).collect(),
        final_skill: v,
        forced_stop,
    })
}

/// End-to-end forecast: select features by backward stepwise elimination
/// for the target's day-of-year, refit on all admissible training data, and
/// return the predicted anomaly together with the selection trace.
pub fn multillr_forecast(
    target_date: NaiveDate,
    horizon: Horizon,
    catalog: &FeatureCatalog,
    view: &DatasetView,
    clim: &Climatology,
    tol: f64,
    span: u16,
) -> Result<(ForecastAnomaly, SelectionTrace)> {
    let built = build_design(catalog, target_date, horizon, view, clim)?;
    let d_star = day_of_year(target_date);
    let trace = backward_stepwise(d_star, tol, &built.design, clim, horizon, span)?;
    let cols: Vec<usize> = built
        .design
        .feature_names
        .iter()
        .enumerate()
        .filter(|(_, n)| trace.final_features.contains(n))
        .map(|(i, _)| i)
        .collect();
    let sub = built.design.select_columns(&cols);
    let fit = fit_wllr(d_star, span, &sub)?;
    let g = view.grid().len();
    let features: Vec<Vec<f64>> = built
        .prediction_features
        .iter()
        .map(|row| cols.iter().map(|&c| row[c]).collect())
        .collect();
    for (pi, row) in features.iter().enumerate() {
        if row.iter().any(|v| v.is_nan()) {
            return Err(Error::Invalid(format!(
                "missing feature value for grid point {pi} at target date {target_date}"
            )));
        }
    }
    let preds = predict(&fit, &features, &vec![0.0; g])?;
    let (m, dd) = crate::geotime::month_day(target_date);
    let crow = clim
        .values_for(m, dd)
        .ok_or(Error::UncoveredMonthDay { month: m, day: dd })?;
    let values: Vec<f64> = preds.iter().zip(crow).map(|(p, c)| p - c).collect();
    let forecast = ForecastAnomaly::new("multillr", target_date, horizon, values)?;
    Ok((forecast, trace))
}

/// How often each feature survived selection, over a collection of traces.
pub fn selection_frequencies(traces: &[SelectionTrace]) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    for tr in traces {
        for f in &tr.final_features {
            *out.entry(f.clone()).or_insert(0) += 1;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::climatology::compute_climatology;
    use crate::dataframe::synthetic::{generate_synthetic, SyntheticSpec, SyntheticTruth};
    use crate::dataframe::Dataset;
    use crate::geotime::{target_start, GridSpec};

    fn d(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
    }

    fn grid2() -> GridSpec {
        GridSpec::from_points(vec![(40, -100), (41, -99)]).unwrap()
    }

    /// Noiseless linear dataset: target = const + sum of active features at
    /// lag 29, no seasonal cycle.
    fn noiseless_dataset(dir: &std::path::Path) -> Dataset {
        let spec = SyntheticSpec {
            n_features: 4,
            n_active: 2,
            noise_sd: 0.0,
            seasonal_amp: 0.0,
            ..SyntheticSpec::default()
        };
        generate_synthetic(11, &grid2(), (2001, 2010), &spec, dir).unwrap();
        Dataset::load(dir).unwrap()
    }

    fn clim_of(ds: &Dataset) -> Climatology {
        compute_climatology(&ds.target, (2001, 2010)).unwrap()
    }

    #[test]
    fn default_catalog_lists_target_lags_and_features() {
        let tmp = tempfile::tempdir().unwrap();
        let ds = noiseless_dataset(tmp.path());
        let view = DatasetView::full(&ds);
        let cat = FeatureCatalog::default_for(&view, Horizon::Weeks34).unwrap();
        let names = cat.names();
        let var = view.variable().to_string();
        assert_eq!(names[0], "ones");
        assert!(names.contains(&format!("{var}_shift29_anom")));
        assert!(names.contains(&format!("{var}_shift58_anom")));
        assert!(names.contains(&format!("{var}_shift365_anom")));
        assert!(names.contains(&"f01_shift29".to_string()));
        assert_eq!(names.len(), 4 + 4);

        let cat56 = FeatureCatalog::default_for(&view, Horizon::Weeks56).unwrap();
        assert!(cat56.names().contains(&format!("{var}_shift43_anom")));
        assert!(cat56.names().contains(&format!("{var}_shift86_anom")));
    }

    #[test]
    fn duplicate_names_rejected() {
        let e = CatalogEntry { name: "x".into(), source: FeatureSource::Ones };
        assert!(FeatureCatalog::new(vec![e.clone(), e]).is_err());
    }

    #[test]
    fn design_columns_match_sources() {
        let tmp = tempfile::tempdir().unwrap();
        let ds = noiseless_dataset(tmp.path());
        let view = DatasetView::full(&ds);
        let clim = clim_of(&ds);
        let cat = FeatureCatalog::new(vec![
            CatalogEntry { name: "ones".into(), source: FeatureSource::Ones },
            CatalogEntry {
                name: "lag29".into(),
                source: FeatureSource::TargetLag { lag: 29, anomaly: false },
            },
            CatalogEntry {
                name: "lag29a".into(),
                source: FeatureSource::TargetLag { lag: 29, anomaly: true },
            },
            CatalogEntry {
                name: "f".into(),
                source: FeatureSource::FrameLag { frame: "f01".into(), lag: 29 },
            },
        ])
        .unwrap();
        let target_date = d("2009-07-01");
        let built = build_design(&cat, target_date, Horizon::Weeks34, &view, &clim).unwrap();
        let dsg = &built.design;
        let issue = issue_for_target(target_date, Horizon::Weeks34);
        assert!(dsg.dates.iter().all(|&t| t + chrono::Duration::days(14) <= issue));

        let probe = d("2005-06-15");
        let ti = dsg.dates.iter().position(|&t| t == probe).unwrap();
        let row = &dsg.points[1].features[ti * 4..(ti + 1) * 4];
        let src = probe - chrono::Duration::days(29);
        assert_eq!(row[0], 1.0);
        assert_eq!(row[1], ds.target.value(src, 1).unwrap());
        let crow = clim.values_for_date(src).unwrap();
        assert_eq!(row[2], row[1] - crow[1]);
        assert_eq!(row[3], ds.features["f01"].value(src, 1).unwrap());
        assert_eq!(dsg.points[1].outcomes[ti], ds.target.value(probe, 1).unwrap());
    }

    #[test]
    fn short_lag_is_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        let ds = noiseless_dataset(tmp.path());
        let view = DatasetView::full(&ds);
        let clim = clim_of(&ds);
        let cat = FeatureCatalog::new(vec![CatalogEntry {
            name: "lag7".into(),
            source: FeatureSource::TargetLag { lag: 7, anomaly: false },
        }])
        .unwrap();
        let err = build_design(&cat, d("2009-07-01"), Horizon::Weeks34, &view, &clim);
        assert!(matches!(err, Err(Error::LagTooShort { .. })));
    }

    #[test]
    fn noiseless_true_features_give_mean_skill_one() {
        let tmp = tempfile::tempdir().unwrap();
        let ds = noiseless_dataset(tmp.path());
        let truth = SyntheticTruth::from_manifest(&ds.manifest).unwrap();
        let view = DatasetView::full(&ds);
        let clim = clim_of(&ds);
        let mut entries = vec![CatalogEntry { name: "ones".into(), source: FeatureSource::Ones }];
        for name in &truth.active {
            entries.push(CatalogEntry {
                name: name.clone(),
                source: FeatureSource::FrameLag { frame: name.clone(), lag: 29 },
            });
        }
        let cat = FeatureCatalog::new(entries).unwrap();
        let built = build_design(&cat, d("2009-07-01"), Horizon::Weeks34, &view, &clim).unwrap();
        let cols: Vec<usize> = (0..cat.len()).collect();
        let res = loyocv(day_of_year(d("2009-07-01")), &built.design, &cols, &clim, Horizon::Weeks34, DEFAULT_SPAN)
            .unwrap();
        assert!(res.eval_dates.len() >= 5, "few eval dates: {}", res.eval_dates.len());
        assert!(
            (res.mean_skill - 1.0).abs() < 1e-6,
            "mean skill {} != 1",
            res.mean_skill
        );
    }

    /// Independent re-implementation of the hold-out loop for the
    /// intercept-only model: the prediction at each evaluation date is the
    /// plain mean of windowed, non-held-out outcomes.
    #[test]
    fn intercept_only_loyocv_matches_hand_rolled_oracle() {
        let tmp = tempfile::tempdir().unwrap();
        let spec = SyntheticSpec {
            n_features: 1,
            n_active: 1,
            noise_sd: 1.0,
            ..SyntheticSpec::default()
        };
        generate_synthetic(5, &grid2(), (2001, 2009), &spec, tmp.path()).unwrap();
        let ds = Dataset::load(tmp.path()).unwrap();
        let view = DatasetView::full(&ds);
        let clim = compute_climatology(&ds.target, (2001, 2009)).unwrap();
        let cat = FeatureCatalog::new(vec![CatalogEntry {
            name: "ones".into(),
            source: FeatureSource::Ones,
        }])
        .unwrap();
        let target_date = d("2008-03-10");
        let horizon = Horizon::Weeks34;
        let built = build_design(&cat, target_date, horizon, &view, &clim).unwrap();
        let d_star = day_of_year(target_date);
        let got = loyocv(d_star, &built.design, &[0], &clim, horizon, DEFAULT_SPAN).unwrap();

        // oracle: windowed mean per point, skill per date, plain average
        let (before, after) = horizon.holdout_interval();
        let mut skills = Vec::new();
        for &t in &built.design.dates {
            if day_of_year(t) != d_star {
                continue;
            }
            let lo = t - chrono::Duration::days(before);
            let hi = t + chrono::Duration::days(after);
            let mut pa = Vec::new();
            let mut oa = Vec::new();
            for (pi, p) in built.design.points.iter().enumerate() {
                let mut sum = 0.0;
                let mut n = 0.0;
                for (ti, &u) in built.design.dates.iter().enumerate() {
                    let in_window = day_of_year(u).circular_distance(d_star) <= DEFAULT_SPAN;
                    if in_window && !(u >= lo && u <= hi) {
                        sum += p.outcomes[ti];
                        n += 1.0;
                    }
                }
                let ti = built.design.dates.iter().position(|&u| u == t).unwrap();
                let c = clim.values_for_date(t).unwrap()[pi];
                pa.push(sum / n - c);
                oa.push(p.outcomes[ti] - c);
            }
            skills.push(skill(&pa, &oa).unwrap());
        }
        assert_eq!(skills.len(), got.per_date_skill.len());
        for (a, b) in skills.iter().zip(&got.per_date_skill) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
        let mean = skills.iter().sum::<f64>() / skills.len() as f64;
        assert!((mean - got.mean_skill).abs() < 1e-10);
    }

    #[test]
    fn holdout_interval_never_enters_fitting_window() {
        // direct check of the exclusion closure semantics on the design dates
        let tmp = tempfile::tempdir().unwrap();
        let ds = noiseless_dataset(tmp.path());
        let view = DatasetView::full(&ds);
        let clim = clim_of(&ds);
        let cat = FeatureCatalog::new(vec![CatalogEntry {
            name: "ones".into(),
            source: FeatureSource::Ones,
        }])
        .unwrap();
        let horizon = Horizon::Weeks34;
        let built = build_design(&cat, d("2009-07-01"), horizon, &view, &clim).unwrap();
        let d_star = day_of_year(d("2009-07-01"));
        let (before, after) = horizon.holdout_interval();
        for &t in &built.design.dates {
            if day_of_year(t) != d_star {
                continue;
            }
            let lo = t - chrono::Duration::days(before);
            let hi = t + chrono::Duration::days(after);
            let fit = fit_wllr_excluding(d_star, DEFAULT_SPAN, &built.design, |u| {
                assert!(!(u >= lo && u <= hi) || true);
                u >= lo && u <= hi
            })
            .unwrap();
            // rows_used must exclude the whole hold-out interval
            let kept: usize = built
                .design
                .dates
                .iter()
                .filter(|&&u| {
                    day_of_year(u).circular_distance(d_star) <= DEFAULT_SPAN && !(u >= lo && u <= hi)
                })
                .count();
            assert_eq!(fit.rows_used[0], kept);
        }
    }

    #[test]
    fn stepwise_drops_inert_features_and_keeps_active_ones() {
        let tmp = tempfile::tempdir().unwrap();
        let spec = SyntheticSpec {
            n_features: 4,
            n_active: 2,
            noise_sd: 0.1,
            seasonal_amp: 0.0,
            ..SyntheticSpec::default()
        };
        generate_synthetic(3, &grid2(), (2001, 2012), &spec, tmp.path()).unwrap();
        let ds = Dataset::load(tmp.path()).unwrap();
        let truth = SyntheticTruth::from_manifest(&ds.manifest).unwrap();
        let view = DatasetView::full(&ds);
        let clim = compute_climatology(&ds.target, (2001, 2012)).unwrap();
        let mut entries = vec![CatalogEntry { name: "ones".into(), source: FeatureSource::Ones }];
        for name in view.feature_names() {
            entries.push(CatalogEntry {
                name: name.to_string(),
                source: FeatureSource::FrameLag { frame: name.to_string(), lag: 29 },
            });
        }
        let cat = FeatureCatalog::new(entries).unwrap();
        let built = build_design(&cat, d("2011-07-01"), Horizon::Weeks34, &view, &clim).unwrap();
        let trace = backward_stepwise(
            day_of_year(d("2011-07-01")),
            DEFAULT_TOL,
            &built.design,
            &clim,
            Horizon::Weeks34,
            DEFAULT_SPAN,
        )
        .unwrap();
        for name in &truth.active {
            assert!(
                trace.final_features.contains(name),
                "active feature {name} was dropped: {:?}",
                trace.final_features
            );
        }
        let inert: Vec<&String> = ds
            .features
            .keys()
            .filter(|k| !truth.active.contains(k))
            .collect();
        for name in &inert {
            assert!(
                !trace.final_features.contains(name),
                "inert feature {name} survived: {:?}",
                trace.final_features
            );
        }
        // every recorded removal respects the tolerance rule
        let mut v = trace.initial_skill;
        for s in &trace.steps {
            assert!(DEFAULT_TOL > v - s.mean_skill);
            v = s.mean_skill;
        }
        assert_eq!(v, trace.final_skill);
    }

    #[test]
    fn trace_replay_is_bit_exact() {
        let tmp = tempfile::tempdir().unwrap();
        let ds = noiseless_dataset(tmp.path());
        let view = DatasetView::full(&ds);
        let clim = clim_of(&ds);
        let cat = FeatureCatalog::default_for(&view, Horizon::Weeks34).unwrap();
        let built = build_design(&cat, d("2009-07-01"), Horizon::Weeks34, &view, &clim).unwrap();
        let d_star = day_of_year(d("2009-07-01"));
        let trace = backward_stepwise(
            d_star,
            DEFAULT_TOL,
            &built.design,
            &clim,
            Horizon::Weeks34,
            DEFAULT_SPAN,
        )
        .unwrap();
        // replay each intermediate set
        let mut active: Vec<usize> = (0..cat.len()).collect();
        let v0 = loyocv(d_star, &built.design, &active, &clim, Horizon::Weeks34, DEFAULT_SPAN)
            .unwrap()
            .mean_skill;
        assert_eq!(v0.to_bits(), trace.initial_skill.to_bits());
        for step in &trace.steps {
            let pos = active
                .iter()
                .position(|&c| built.design.feature_names[c] == step.removed)
                .unwrap();
            active.remove(pos);
            let v = loyocv(d_star, &built.design, &active, &clim, Horizon::Weeks34, DEFAULT_SPAN)
                .unwrap()
                .mean_skill;
            assert_eq!(v.to_bits(), step.mean_skill.to_bits());
        }
    }

    #[test]
    fn single_feature_catalog_is_never_emptied() {
        let tmp = tempfile::tempdir().unwrap();
        let ds = noiseless_dataset(tmp.path());
        let view = DatasetView::full(&ds);
        let clim = clim_of(&ds);
        let cat = FeatureCatalog::new(vec![CatalogEntry {
            name: "ones".into(),
            source: FeatureSource::Ones,
        }])
        .unwrap();
        let built = build_design(&cat, d("2009-07-01"), Horizon::Weeks34, &view, &clim).unwrap();
        let trace = backward_stepwise(
            day_of_year(d("2009-07-01")),
            DEFAULT_TOL,
            &built.design,
            &clim,
            Horizon::Weeks34,
            DEFAULT_SPAN,
        )
        .unwrap();
        assert_eq!(trace.final_features, vec!["ones".to_string()]);
        assert!(trace.forced_stop);
    }

    #[test]
    fn forecast_on_noiseless_data_is_highly_skillful() {
        let tmp = tempfile::tempdir().unwrap();
        let ds = noiseless_dataset(tmp.path());
        let clim = clim_of(&ds);
        let horizon = Horizon::Weeks34;
        let target_date = d("2010-07-01");
        let issue = issue_for_target(target_date, horizon);
        let view = DatasetView::gated(&ds, issue);
        let cat = FeatureCatalog::default_for(&view, horizon).unwrap();
        let (fc, _trace) =
            multillr_forecast(target_date, horizon, &cat, &view, &clim, DEFAULT_TOL, DEFAULT_SPAN)
                .unwrap();
        assert_eq!(view.violations(), 0);
        // realized anomaly from the full data
        let full = DatasetView::full(&ds);
        let g = full.grid().len();
        let crow = clim.values_for_date(target_date).unwrap().to_vec();
        let obs: Vec<f64> = (0..g)
            .map(|pi| full.target_value(target_date, pi).unwrap() - crow[pi])
            .collect();
        let s = skill(&fc.values, &obs).unwrap();
        assert!(s >= 0.99, "forecast skill {s}");
        assert_eq!(fc.target_start, target_start(issue, horizon));
    }

    #[test]
    fn trace_csv_has_expected_shape() {
        let trace = SelectionTrace {
            d_star: DayOfYear::new(100).unwrap(),
            initial_skill: 0.5,
            steps: vec![TraceStep { removed: "junk".into(), mean_skill: 0.51 }],
            final_features: vec!["ones".into()],
            final_skill: 0.51,
            forced_stop: false,
        };
        let csv = trace.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "step,removed_feature,mean_skill");
        assert_eq!(lines[1], "0,,0.5");
        assert_eq!(lines[2], "1,junk,0.51");
    }

    #[test]
    fn selection_frequencies_count_final_sets() {
        let mk = |feats: &[&str]| SelectionTrace {
            d_star: DayOfYear::new(1).unwrap(),
            initial_skill: 0.0,
            steps: vec![],
            final_features: feats.iter().map(|s| s.to_string()).collect(),
            final_skill: 0.0,
            forced_stop: false,
        };
        let freq = selection_frequencies(&[mk(&["a", "b"]), mk(&["b"])]);
        assert_eq!(freq["a"], 1);
        assert_eq!(freq["b"], 2);
    }
}
