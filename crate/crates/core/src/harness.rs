//! Run configuration, the biweekly backtest driver, and report emission.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{Datelike, NaiveDate};
use rayon::prelude::*;

use crate::autoknn::{autoknn_forecast, AutoknnConfig, NeighborCache, NeighborSet};
use crate::climatology::{compute_climatology, Climatology};
use crate::dataframe::{Dataset, DatasetView, SpatioTemporalFrame};
use crate::error::{Error, Result};
use crate::geotime::{issue_schedule, target_start, Horizon};
use crate::multillr::{
    multillr_forecast, CatalogEntry, FeatureCatalog, FeatureSource, SelectionTrace,
    DEFAULT_SPAN, DEFAULT_TOL,
};
use crate::skill::{ensemble, skill, verify_skill_dominance, EnsembleWeights, ForecastAnomaly};

/// One forecasting model in a run.
#[derive(Debug, Clone)]
pub enum ModelSpec {
    Multillr { tol: f64, span: u16, catalog: Option<Vec<String>> },
    Autoknn(AutoknnConfig),
    /// Debug model that echoes the observed anomaly (skill 1 wherever the
    /// outcome is observed). Evaluation-side only; never used for real
    /// forecasts.
    Echo,
}

impl ModelSpec {
    pub fn name(&self) -> &'static str {
        match self {
            ModelSpec::Multillr { .. } => "multillr",
            ModelSpec::Autoknn(_) => "autoknn",
            ModelSpec::Echo => "climatology-echo",
        }
    }
}

/// Parsed backtest configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub dataset_dir: PathBuf,
    pub horizon: Horizon,
    pub first_issue: NaiveDate,
    pub last_issue: NaiveDate,
    pub base_years: (i32, i32),
    pub models: Vec<ModelSpec>,
    /// Ensemble weights over `models`; uniform when absent.
    pub ensemble_weights: Option<Vec<f64>>,
    pub parallelism: usize,
    /// Original config text, echoed into the output directory.
    pub raw: String,
}

/// Parse `key = value` lines grouped by `[section]` headers. Keys before
/// any header land in the section "run".
pub fn parse_sections(text: &str) -> Result<BTreeMap<String, BTreeMap<String, String>>> {
    let mut out: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
    let mut section = "run".to_string();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            section = name.trim().to_string();
            out.entry(section.clone()).or_default();
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Config(format!("line {}: expected 'key = value', got '{line}'", i + 1)));
        };
        out.entry(section.clone())
            .or_default()
            .insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

fn parse_date(s: &str) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(s, "%Y-%m-%d").map_err(|_| Error::BadDate(s.to_string()))
}

/// Parse "A..B" into an inclusive year range.
pub fn parse_year_range(s: &str) -> Result<(i32, i32)> {
    let (a, b) = s
        .split_once("..")
        .ok_or_else(|| Error::Config(format!("expected 'FIRST..LAST' years, got '{s}'")))?;
    let a: i32 = a.trim().parse().map_err(|_| Error::Config(format!("bad year '{a}'")))?;
    let b: i32 = b.trim().parse().map_err(|_| Error::Config(format!("bad year '{b}'")))?;
    if b < a {
        return Err(Error::Config(format!("year range '{s}' is reversed")));
    }
    Ok((a, b))
}

impl RunConfig {
    pub fn parse(text: &str, config_dir: &Path) -> Result<RunConfig> {
        let sections = parse_sections(text)?;
        let run = sections
            .get("run")
            .ok_or_else(|| Error::Config("missing [run] section".into()))?;
        let get = |k: &str| -> Result<&String> {
            run.get(k).ok_or_else(|| Error::Config(format!("missing key '{k}' in [run]")))
        };
        let dataset_dir = {
            let p = PathBuf::from(get("dataset")?);
            if p.is_absolute() {
                p
            } else {
                config_dir.join(p)
            }
        };
        let horizon = Horizon::parse(get("horizon")?)?;
        let first_issue = parse_date(get("first_issue")?)?;
        let last_issue = parse_date(get("last_issue")?)?;
        if last_issue < first_issue {
            return Err(Error::Config("last_issue precedes first_issue".into()));
        }
        let base_years = parse_year_range(get("base_years")?)?;
        let parallelism = match run.get("parallelism") {
            Some(s) => s
                .parse()
                .map_err(|_| Error::Config(format!("bad parallelism '{s}'")))?,
            None => 1,
        };
        if parallelism == 0 {
            return Err(Error::Config("parallelism must be >= 1".into()));
        }

        let model_list = get("models")?;
        let mut models = Vec::new();
        for name in model_list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            match name {
                "multillr" => {
                    let sec = sections.get("multillr").cloned().unwrap_or_default();
                    let tol = match sec.get("tol") {
                        Some(s) => s.parse().map_err(|_| Error::Config(format!("bad tol '{s}'")))?,
                        None => DEFAULT_TOL,
                    };
                    let span = match sec.get("span") {
                        Some(s) => s.parse().map_err(|_| Error::Config(format!("bad span '{s}'")))?,
                        None => DEFAULT_SPAN,
                    };
                    let catalog = sec.get("catalog").map(|s| {
                        s.split(',').map(|e| e.trim().to_string()).filter(|e| !e.is_empty()).collect()
                    });
                    models.push(ModelSpec::Multillr { tol, span, catalog });
                }
                "autoknn" => {
                    let sec = sections.get("autoknn").cloned().unwrap_or_default();
                    let mut cfg = match sec.get("variable") {
                        Some(v) => AutoknnConfig::for_variable(v)?,
                        None => AutoknnConfig::temperature(),
                    };
                    let num = |k: &str, cur: usize| -> Result<usize> {
                        match sec.get(k) {
                            Some(s) => s.parse().map_err(|_| Error::Config(format!("bad {k} '{s}'"))),
                            None => Ok(cur),
                        }
                    };
                    cfg.k = num("k", cfg.k)?;
                    cfg.neighbors_used = num("neighbors_used", cfg.neighbors_used)?;
                    cfg.history = num("history", cfg.history)?;
                    if let Some(s) = sec.get("lead") {
                        cfg.lead = s.parse().map_err(|_| Error::Config(format!("bad lead '{s}'")))?;
                    }
                    if let Some(s) = sec.get("span") {
                        cfg.span = if s == "all" {
                            None
                        } else {
                            Some(s.parse().map_err(|_| Error::Config(format!("bad span '{s}'")))?)
                        };
                    }
                    cfg.validate()?;
                    models.push(ModelSpec::Autoknn(cfg));
                }
                "climatology-echo" => models.push(ModelSpec::Echo),
                other => {
                    return Err(Error::Config(format!("unknown model '{other}'")));
                }
            }
        }
        if models.is_empty() {
            return Err(Error::Config("no models configured".into()));
        }

        let ensemble_weights = match sections.get("ensemble").and_then(|s| s.get("weights")) {
            Some(s) => {
                let w: std::result::Result<Vec<f64>, _> =
                    s.split(',').map(|x| x.trim().parse::<f64>()).collect();
                let w = w.map_err(|_| Error::Config(format!("bad ensemble weights '{s}'")))?;
                if w.len() != models.len() {
                    return Err(Error::Config(format!(
                        "{} ensemble weights for {} models",
                        w.len(),
                        models.len()
                    )));
                }
                Some(w)
            }
            None => None,
        };

        Ok(RunConfig {
            dataset_dir,
            horizon,
            first_issue,
            last_issue,
            base_years,
            models,
            ensemble_weights,
            parallelism,
            raw: text.to_string(),
        })
    }

    pub fn from_file(path: &Path) -> Result<RunConfig> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let dir = path.parent().unwrap_or(Path::new("."));
        RunConfig::parse(&text, dir)
    }
}

/// Parse a catalog entry spec: `ones`, `target:LAG[:anom]`, or
/// `frame:NAME:LAG`.
pub fn parse_catalog_entry(spec: &str, variable: &str) -> Result<CatalogEntry> {
    let parts: Vec<&str> = spec.split(':').collect();
    match parts.as_slice() {
        ["ones"] => Ok(CatalogEntry { name: "ones".into(), source: FeatureSource::Ones }),
        ["target", lag] | ["target", lag, "anom"] => {
            let lag: i64 = lag
                .parse()
                .map_err(|_| Error::Config(format!("bad lag in catalog entry '{spec}'")))?;
            let anomaly = parts.len() == 3;
            let suffix = if anomaly { "_anom" } else { "" };
            Ok(CatalogEntry {
                name: format!("{variable}_shift{lag}{suffix}"),
                source: FeatureSource::TargetLag { lag, anomaly },
            })
        }
        ["frame", name, lag] => {
            let lag: i64 = lag
                .parse()
                .map_err(|_| Error::Config(format!("bad lag in catalog entry '{spec}'")))?;
            Ok(CatalogEntry {
                name: format!("{name}_shift{lag}"),
                source: FeatureSource::FrameLag { frame: name.to_string(), lag },
            })
        }
        _ => Err(Error::Config(format!("unrecognized catalog entry '{spec}'"))),
    }
}

/// Evaluation year of an issue date: Y for issues in [Apr 18 Y, Apr 17 Y+1].
pub fn evaluation_year(issue: NaiveDate) -> i32 {
    let boundary = NaiveDate::from_ymd_opt(issue.year(), 4, 18).expect("Apr 18 always exists");
    if issue >= boundary {
        issue.year()
    } else {
        issue.year() - 1
    }
}

/// Realized skill (or the reason it is missing) of one model on one issue.
#[derive(Debug, Clone)]
pub struct SkillRecord {
    pub model: String,
    pub issue: NaiveDate,
    pub target_start: NaiveDate,
    pub evaluation_year: i32,
    pub skill: Option<f64>,
    pub note: String,
}

#[derive(Debug, Clone)]
pub struct BacktestReport {
    pub horizon: Horizon,
    pub records: Vec<SkillRecord>,
    /// Attempted reads past an issue cutoff, summed over all gated views.
    pub gate_violations: u64,
    /// Ensembling-guarantee checks run / failed across backtest dates.
    pub dominance_checked: usize,
    pub dominance_failures: usize,
}

pub const HISTOGRAM_BINS: usize = 20;

impl BacktestReport {
    /// Model names in report order (configured models, then the ensemble).
    pub fn model_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for r in &self.records {
            if !names.contains(&r.model) {
                names.push(r.model.clone());
            }
        }
        names
    }

    fn skills_of(&self, model: &str) -> Vec<f64> {
        self.records
            .iter()
            .filter(|r| r.model == model)
            .filter_map(|r| r.skill)
            .collect()
    }

    pub fn mean_skill(&self, model: &str) -> Option<f64> {
        let s = self.skills_of(model);
        if s.is_empty() {
            None
        } else {
            Some(crate::skill::pairwise_sum(&s) / s.len() as f64)
        }
    }

    pub fn year_mean_skill(&self, model: &str, year: i32) -> Option<f64> {
        let s: Vec<f64> = self
            .records
            .iter()
            .filter(|r| r.model == model && r.evaluation_year == year)
            .filter_map(|r| r.skill)
            .collect();
        if s.is_empty() {
            None
        } else {
            Some(crate::skill::pairwise_sum(&s) / s.len() as f64)
        }
    }

    pub fn evaluation_years(&self) -> Vec<i32> {
        let mut years: Vec<i32> = self.records.iter().map(|r| r.evaluation_year).collect();
        years.sort_unstable();
        years.dedup();
        years
    }

    /// Counts of realized skills in bins of width 0.1 over [-1, 1].
    pub fn histogram(&self, model: &str) -> [usize; HISTOGRAM_BINS] {
        let mut bins = [0usize; HISTOGRAM_BINS];
        for s in self.skills_of(model) {
            let idx = (((s + 1.0) / 0.1).floor() as isize).clamp(0, HISTOGRAM_BINS as isize - 1);
            bins[idx as usize] += 1;
        }
        bins
    }

    /// Per-record CSV: one row per (model, issue date).
    pub fn skills_csv(&self) -> String {
        let mut out = String::from("model,issue,target_start,evaluation_year,skill,note\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.model,
                r.issue,
                r.target_start,
                r.evaluation_year,
                r.skill.map(|s| s.to_string()).unwrap_or_default(),
                r.note
            ));
        }
        out
    }

    /// Per-year mean-skill CSV with an `all` summary row per model.
    pub fn summary_csv(&self) -> String {
        let mut out = String::from("model,year,mean_skill,n\n");
        for model in self.model_names() {
            for year in self.evaluation_years() {
                let n = self
                    .records
                    .iter()
                    .filter(|r| r.model == model && r.evaluation_year == year && r.skill.is_some())
                    .count();
                let mean = self
                    .year_mean_skill(&model, year)
                    .map(|m| m.to_string())
                    .unwrap_or_default();
                out.push_str(&format!("{model},{year},{mean},{n}\n"));
            }
            let n = self.skills_of(&model).len();
            let mean = self.mean_skill(&model).map(|m| m.to_string()).unwrap_or_default();
            out.push_str(&format!("{model},all,{mean},{n}\n"));
        }
        out
    }

    /// Markdown table: per-year rows, one column per model, `all` last.
    pub fn summary_markdown(&self) -> String {
        let models = self.model_names();
        let mut out = String::from("| year |");
        for m in &models {
            out.push_str(&format!(" {m} |"));
        }
        out.push('\n');
        out.push_str("|---|");
        for _ in &models {
            out.push_str("---|");
        }
        out.push('\n');
        let fmt = |v: Option<f64>| v.map(|m| format!("{m:.4}")).unwrap_or_else(|| "-".into());
        for year in self.evaluation_years() {
            out.push_str(&format!("| {year} |"));
            for m in &models {
                out.push_str(&format!(" {} |", fmt(self.year_mean_skill(m, year))));
            }
            out.push('\n');
        }
        out.push_str("| all |");
        for m in &models {
            out.push_str(&format!(" {} |", fmt(self.mean_skill(m))));
        }
        out.push('\n');
        out
    }

    /// Histogram CSV: bin edges and counts per model.
    pub fn histogram_csv(&self) -> String {
        let mut out = String::from("model,bin_lo,bin_hi,count\n");
        for model in self.model_names() {
            let bins = self.histogram(&model);
            for (i, count) in bins.iter().enumerate() {
                let lo = -1.0 + 0.1 * i as f64;
                let hi = lo + 0.1;
                out.push_str(&format!("{model},{lo:.1},{hi:.1},{count}\n"));
            }
        }
        out
    }
}

/// Rebuild a report from a `skills_csv` file (for the standalone report
/// command).
pub fn parse_skills_csv(text: &str, horizon: Horizon) -> Result<BacktestReport> {
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            if line != "model,issue,target_start,evaluation_year,skill,note" {
                return Err(Error::Config(format!("unexpected skills header '{line}'")));
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.splitn(6, ',').collect();
        if parts.len() != 6 {
            return Err(Error::Config(format!("skills line {}: expected 6 fields", i + 1)));
        }
        let skill = if parts[4].is_empty() {
            None
        } else {
            Some(parts[4].parse().map_err(|_| {
                Error::Config(format!("skills line {}: bad skill '{}'", i + 1, parts[4]))
            })?)
        };
        records.push(SkillRecord {
            model: parts[0].to_string(),
            issue: parse_date(parts[1])?,
            target_start: parse_date(parts[2])?,
            evaluation_year: parts[3]
                .parse()
                .map_err(|_| Error::Config(format!("skills line {}: bad year", i + 1)))?,
            skill,
            note: parts[5].to_string(),
        });
    }
    Ok(BacktestReport {
        horizon,
        records,
        gate_violations: 0,
        dominance_checked: 0,
        dominance_failures: 0,
    })
}

/// Everything a backtest produces besides the report: forecast frames per
/// model and the model diagnostics collected along the way.
#[derive(Debug)]
pub struct BacktestOutcome {
    pub report: BacktestReport,
    /// Model name -> anomaly frame over the backtest target dates (missing
    /// where the model failed).
    pub forecasts: BTreeMap<String, SpatioTemporalFrame>,
    pub traces: Vec<SelectionTrace>,
    pub neighbor_sets: Vec<NeighborSet>,
}

struct IssueOutput {
    issue: NaiveDate,
    target: NaiveDate,
    forecasts: Vec<(String, std::result::Result<ForecastAnomaly, String>)>,
    traces: Vec<SelectionTrace>,
    neighbor_set: Option<NeighborSet>,
    violations: u64,
    dominance_ok: Option<bool>,
}

/// Run one model for one issue against a gated view.
fn run_model(
    spec: &ModelSpec,
    view: &DatasetView,
    clim: &Climatology,
    target_date: NaiveDate,
    horizon: Horizon,
    knn_cache: &NeighborCache,
    observed_anomaly: Option<&[f64]>,
) -> Result<(ForecastAnomaly, Option<SelectionTrace>, Option<NeighborSet>)> {
    match spec {
        ModelSpec::Multillr { tol, span, catalog } => {
            let cat = match catalog {
                Some(entries) => {
                    let parsed: Result<Vec<CatalogEntry>> = entries
                        .iter()
                        .map(|e| parse_catalog_entry(e, view.variable()))
                        .collect();
                    FeatureCatalog::new(parsed?)?
                }
                None => FeatureCatalog::default_for(view, horizon)?,
            };
            let (fc, trace) =
                multillr_forecast(target_date, horizon, &cat, view, clim, *tol, *span)?;
            Ok((fc, Some(trace), None))
        }
        ModelSpec::Autoknn(cfg) => {
            let (fc, set) =
                autoknn_forecast(target_date, horizon, cfg, view, clim, Some(knn_cache))?;
            Ok((fc, None, Some(set)))
        }
        ModelSpec::Echo => {
            let obs = observed_anomaly
                .ok_or_else(|| Error::Invalid("outcome not observed yet".into()))?;
            let fc = ForecastAnomaly::new("climatology-echo", target_date, horizon, obs.to_vec())?;
            Ok((fc, None, None))
        }
    }
}

/// Observed anomaly for a target date from the ungated data; `None` when
/// any grid cell is missing.
fn observed_anomaly(
    ds: &Dataset,
    clim: &Climatology,
    target_date: NaiveDate,
) -> Result<Option<Vec<f64>>> {
    let Some(row) = ds.target.row_at(target_date) else {
        return Ok(None);
    };
    let (m, d) = crate::geotime::month_day(target_date);
    let crow = clim
        .values_for(m, d)
        .ok_or(Error::UncoveredMonthDay { month: m, day: d })?;
    let mut out = Vec::with_capacity(row.len());
    for (v, c) in row.iter().zip(crow) {
        if v.is_nan() || c.is_nan() {
            return Ok(None);
        }
        out.push(v - c);
    }
    Ok(Some(out))
}

/// Run the biweekly backtest. Each issue date builds a truncated dataset
/// view, runs every configured model, forms the normalized ensemble, and
/// scores everything against the observed anomalies. Model failures are
/// recorded and the run continues. Output is bit-identical for any
/// parallelism degree.
pub fn backtest(config: &RunConfig, ds: &Dataset) -> Result<BacktestOutcome> {
    let clim = compute_climatology(&ds.target, config.base_years)?;
    if config.base_years.1 >= config.first_issue.year() {
        log::warn!(
            "climatology base period {}..{} overlaps the backtest issues; \
             gated views cannot see past each issue, but the shared climatology can",
            config.base_years.0,
            config.base_years.1
        );
    }
    let issues = issue_schedule(config.first_issue, config.last_issue);
    if issues.is_empty() {
        return Err(Error::Config("issue schedule is empty".into()));
    }
    let weights = match &config.ensemble_weights {
        Some(w) => EnsembleWeights::new(w.clone())?,
        None => EnsembleWeights::uniform(config.models.len())?,
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.parallelism)
        .build()
        .map_err(|e| Error::Invalid(format!("thread pool: {e}")))?;

    // one neighbor cache per model slot, shared across issues
    let caches: Vec<NeighborCache> =
        config.models.iter().map(|_| NeighborCache::new()).collect();

    let outputs: Vec<Result<IssueOutput>> = pool.install(|| {
        issues
            .par_iter()
            .map(|&issue| {
                let target = target_start(issue, config.horizon);
                let view = DatasetView::gated(ds, issue);
                let obs = observed_anomaly(ds, &clim, target)?;
                let mut forecasts = Vec::new();
                let mut traces = Vec::new();
                let mut neighbor_set = None;
                for (mi, spec) in config.models.iter().enumerate() {
                    let res = run_model(
                        spec,
                        &view,
                        &clim,
                        target,
                        config.horizon,
                        &caches[mi],
                        obs.as_deref(),
                    );
                    match res {
                        Ok((fc, trace, set)) => {
                            forecasts.push((spec.name().to_string(), Ok(fc)));
                            if let Some(t) = trace {
                                traces.push(t);
                            }
                            if let Some(s) = set {
                                neighbor_set = Some(s);
                            }
                        }
                        Err(e) => {
                            log::warn!("{} failed for issue {issue}: {e}", spec.name());
                            forecasts.push((spec.name().to_string(), Err(e.to_string())));
                        }
                    }
                }
                Ok(IssueOutput {
                    issue,
                    target,
                    forecasts,
                    traces,
                    neighbor_set,
                    violations: view.violations(),
                    dominance_ok: None,
                })
            })
            .collect()
    });

    let grid = ds.grid().clone();
    let g = grid.len();
    let mut records = Vec::new();
    let mut gate_violations = 0u64;
    let mut dominance_checked = 0usize;
    let mut dominance_failures = 0usize;
    let mut traces = Vec::new();
    let mut neighbor_sets = Vec::new();
    let model_order: Vec<String> = {
        let mut names: Vec<String> =
            config.models.iter().map(|m| m.name().to_string()).collect();
        names.push("ensemble".to_string());
        names
    };
    let mut frames: BTreeMap<String, Vec<f64>> = model_order
        .iter()
        .map(|n| (n.clone(), vec![f64::NAN; issues.len() * g]))
        .collect();

    for (ii, output) in outputs.into_iter().enumerate() {
        let mut out = output?;
        gate_violations += out.violations;
        traces.append(&mut out.traces);
        if let Some(set) = out.neighbor_set.take() {
            neighbor_sets.push(set);
        }
        let obs = observed_anomaly(ds, &clim, out.target)?;
        let year = evaluation_year(out.issue);

        let mut successes: Vec<(usize, &ForecastAnomaly)> = Vec::new();
        for (mi, (name, res)) in out.forecasts.iter().enumerate() {
            let (skill_val, note) = match res {
                Ok(fc) => {
                    frames.get_mut(name).expect("known model")[ii * g..(ii + 1) * g]
                        .copy_from_slice(&fc.values);
                    successes.push((mi, fc));
                    match &obs {
                        Some(o) => match skill(&fc.values, o) {
                            Ok(s) => (Some(s), String::new()),
                            Err(e) => (None, e.to_string()),
                        },
                        None => (None, "outcome unobserved".to_string()),
                    }
                }
                Err(e) => (None, e.clone()),
            };
            records.push(SkillRecord {
                model: name.clone(),
                issue: out.issue,
                target_start: out.target,
                evaluation_year: year,
                skill: skill_val,
                note,
            });
        }

        // normalized ensemble over the models that produced a forecast,
        // configured weights renormalized to the successful subset
        let (ens_skill, ens_note) = if successes.is_empty() {
            (None, "no constituent forecasts".to_string())
        } else {
            let wsum: f64 = successes.iter().map(|&(mi, _)| weights.as_slice()[mi]).sum();
            if wsum <= 0.0 {
                (None, "all successful constituents have zero weight".to_string())
            } else {
                let sub_weights = EnsembleWeights::new(
                    successes.iter().map(|&(mi, _)| weights.as_slice()[mi] / wsum).collect(),
                )?;
                let constituents: Vec<ForecastAnomaly> =
                    successes.iter().map(|&(_, fc)| fc.clone()).collect();
                match ensemble(&constituents, &sub_weights) {
                    Ok(ens) => {
                        frames.get_mut("ensemble").expect("ensemble slot")
                            [ii * g..(ii + 1) * g]
                            .copy_from_slice(&ens.values);
                        match &obs {
                            Some(o) => {
                                match verify_skill_dominance(&constituents, &sub_weights, o) {
                                    Ok(rep) => {
                                        dominance_checked += 1;
                                        if !(rep.sign_match && rep.magnitude_ok) {
                                            dominance_failures += 1;
                                            log::warn!(
                                                "ensembling guarantee failed at issue {}: lhs {} rhs {}",
                                                out.issue,
                                                rep.lhs,
                                                rep.rhs
                                            );
                                        }
                                        out.dominance_ok = Some(rep.sign_match && rep.magnitude_ok);
                                    }
                                    Err(e) => log::warn!("guarantee check at {}: {e}", out.issue),
                                }
                                match skill(&ens.values, o) {
                                    Ok(s) => (Some(s), String::new()),
                                    Err(e) => (None, e.to_string()),
                                }
                            }
                            None => (None, "outcome unobserved".to_string()),
                        }
                    }
                    Err(e) => (None, e.to_string()),
                }
            }
        };
        records.push(SkillRecord {
            model: "ensemble".to_string(),
            issue: out.issue,
            target_start: out.target,
            evaluation_year: year,
            skill: ens_skill,
            note: ens_note,
        });
    }

    let target_dates: Vec<NaiveDate> =
        issues.iter().map(|&i| target_start(i, config.horizon)).collect();
    let mut forecast_frames = BTreeMap::new();
    for (name, values) in frames {
        forecast_frames.insert(
            name.clone(),
            SpatioTemporalFrame::new(name, grid.clone(), target_dates.clone(), values)?,
        );
    }

    Ok(BacktestOutcome {
        report: BacktestReport {
            horizon: config.horizon,
            records,
            gate_violations,
            dominance_checked,
            dominance_failures,
        },
        forecasts: forecast_frames,
        traces,
        neighbor_sets,
    })
}

/// Write the backtest artifacts: the echoed config, per-record and summary
/// reports, histograms, forecast frames, and model diagnostics. All output
/// is byte-deterministic.
pub fn write_backtest_outputs(outcome: &BacktestOutcome, config: &RunConfig, out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let write = |name: &str, text: &str| -> Result<()> {
        let path = out_dir.join(name);
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    };
    write("config.txt", &config.raw)?;
    write("skills.csv", &outcome.report.skills_csv())?;
    write("summary.csv", &outcome.report.summary_csv())?;
    write("summary.md", &outcome.report.summary_markdown())?;
    write("histogram.csv", &outcome.report.histogram_csv())?;
    write(
        "audit.txt",
        &format!(
            "gate_violations = {}\nguarantee_checked = {}\nguarantee_failures = {}\n",
            outcome.report.gate_violations,
            outcome.report.dominance_checked,
            outcome.report.dominance_failures
        ),
    )?;
    for (name, frame) in &outcome.forecasts {
        crate::dataframe::write_frame(frame, &out_dir.join(format!("forecast_{name}.csv")))?;
    }
    if !outcome.traces.is_empty() {
        let freq = crate::multillr::selection_frequencies(&outcome.traces);
        let mut text = String::from("feature,selected_count\n");
        for (k, v) in &freq {
            text.push_str(&format!("{k},{v}\n"));
        }
        write("selection_frequency.csv", &text)?;
    }
    if !outcome.neighbor_sets.is_empty() {
        write("neighbors.csv", &crate::autoknn::neighbor_diagnostics(&outcome.neighbor_sets))?;
    }
    Ok(())
}
