//! Columnar spatiotemporal data model, file I/O, 14-day aggregation, and
//! dataset directory loading.
//!
//! The on-disk format is plain text: header `lat,lon,start_date,value`,
//! comma separated, UTF-8, LF line endings, ISO-8601 dates, values as the
//! shortest round-trip decimal of 64-bit floats, missing as an empty field.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;

use crate::error::{Error, Result};
use crate::geotime::GridSpec;

pub mod synthetic;

/// Number of days aggregated into one period-start value.
pub const AGG_WINDOW_DAYS: i64 = 14;

/// Values of one variable indexed by (grid point, period start date).
/// Dense row-major storage: rows are dates, columns are grid points in
/// canonical grid order. Missing entries are stored as NaN and exposed as
/// `None`.
#[derive(Debug, Clone)]
pub struct SpatioTemporalFrame {
    variable_name: String,
    grid: GridSpec,
    dates: Vec<NaiveDate>,
    values: Vec<f64>,
}

impl SpatioTemporalFrame {
    /// Build a frame from a dense value matrix. `values` is row-major with
    /// `dates.len() * grid.len()` entries; NaN marks missing.
    pub fn new(
        variable_name: impl Into<String>,
        grid: GridSpec,
        dates: Vec<NaiveDate>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if values.len() != dates.len() * grid.len() {
            return Err(Error::Invalid(format!(
                "value matrix has {} entries, expected {} dates x {} points",
                values.len(),
                dates.len(),
                grid.len()
            )));
        }
        if dates.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Invalid("dates must be strictly increasing".into()));
        }
        Ok(SpatioTemporalFrame { variable_name: variable_name.into(), grid, dates, values })
    }

    /// An all-missing frame over the given dates and grid.
    pub fn empty(variable_name: impl Into<String>, grid: GridSpec, dates: Vec<NaiveDate>) -> Result<Self> {
        let n = dates.len() * grid.len();
        SpatioTemporalFrame::new(variable_name, grid, dates, vec![f64::NAN; n])
    }

    pub fn variable_name(&self) -> &str {
        &self.variable_name
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn date_index(&self, date: NaiveDate) -> Option<usize> {
        self.dates.binary_search(&date).ok()
    }

    /// Raw row for a date index; entries may be NaN.
    pub fn row(&self, date_idx: usize) -> &[f64] {
        let g = self.grid.len();
        &self.values[date_idx * g..(date_idx + 1) * g]
    }

    pub fn row_mut(&mut self, date_idx: usize) -> &mut [f64] {
        let g = self.grid.len();
        &mut self.values[date_idx * g..(date_idx + 1) * g]
    }

    /// Value at (date, point index), `None` if the date is absent or the
    /// cell is missing.
    pub fn value(&self, date: NaiveDate, point_idx: usize) -> Option<f64> {
        let di = self.date_index(date)?;
        let v = self.row(di)[point_idx];
        if v.is_nan() {
            None
        } else {
            Some(v)
        }
    }

    /// Row for a date, `None` if the date is absent. Entries may be NaN.
    pub fn row_at(&self, date: NaiveDate) -> Option<&[f64]> {
        self.date_index(date).map(|di| self.row(di))
    }

    /// True when every cell of the row at `date` is present.
    pub fn fully_present_at(&self, date: NaiveDate) -> bool {
        self.row_at(date).is_some_and(|r| r.iter().all(|v| !v.is_nan()))
    }

    /// Frame restricted to dates `<= cutoff`.
    pub fn truncated_at(&self, cutoff: NaiveDate) -> SpatioTemporalFrame {
        let n = self.dates.partition_point(|&d| d <= cutoff);
        SpatioTemporalFrame {
            variable_name: self.variable_name.clone(),
            grid: self.grid.clone(),
            dates: self.dates[..n].to_vec(),
            values: self.values[..n * self.grid.len()].to_vec(),
        }
    }

    /// Bit-exact equality including missing entries.
    pub fn same_as(&self, other: &SpatioTemporalFrame) -> bool {
        self.variable_name == other.variable_name
            && self.grid == other.grid
            && self.dates == other.dates
            && self.values.len() == other.values.len()
            && self
                .values
                .iter()
                .zip(&other.values)
                .all(|(a, b)| a.to_bits() == b.to_bits() || (a.is_nan() && b.is_nan()))
    }
}

/// Read a frame from the columnar format. When `grid` is supplied, rows
/// whose point is not in the grid are an error and the result uses exactly
/// that grid; otherwise the grid is inferred from the rows.
pub fn read_frame(path: &Path, grid: Option<&GridSpec>) -> Result<SpatioTemporalFrame> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let variable_name = variable_name_from_path(path);

    let mut cells: Vec<(i16, i16, NaiveDate, f64)> = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if lineno == 0 {
            if line.trim_end() != "lat,lon,start_date,value" {
                return Err(Error::MalformedRow {
                    path: path.to_path_buf(),
                    line: 1,
                    message: format!("bad header '{line}'"),
                });
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let bad = |message: String| Error::MalformedRow {
            path: path.to_path_buf(),
            line: lineno + 1,
            message,
        };
        let mut parts = line.splitn(4, ',');
        let lat: i16 = parts
            .next()
            .ok_or_else(|| bad("missing lat".into()))?
            .parse()
            .map_err(|e| bad(format!("bad lat: {e}")))?;
        let lon: i16 = parts
            .next()
            .ok_or_else(|| bad("missing lon".into()))?
            .parse()
            .map_err(|e| bad(format!("bad lon: {e}")))?;
        let date_str = parts.next().ok_or_else(|| bad("missing start_date".into()))?;
        let date = NaiveDate::parse_from_str(date_str, "%Y-%m-%d")
            .map_err(|e| bad(format!("bad start_date '{date_str}': {e}")))?;
        let value_str = parts.next().ok_or_else(|| bad("missing value".into()))?;
        let value = if value_str.is_empty() {
            f64::NAN
        } else {
            value_str.parse().map_err(|e| bad(format!("bad value '{value_str}': {e}")))?
        };
        cells.push((lat, lon, date, value));
    }

    let grid = match grid {
        Some(g) => {
            for &(lat, lon, _, _) in &cells {
                if g.index_of(lat, lon).is_none() {
                    return Err(Error::UnknownGridPoint { lat, lon });
                }
            }
            g.clone()
        }
        None => {
            let pts: Vec<(i16, i16)> = {
                let mut p: Vec<(i16, i16)> = cells.iter().map(|c| (c.0, c.1)).collect();
                p.sort_unstable();
                p.dedup();
                p
            };
            GridSpec::from_points(pts)?
        }
    };

    let mut dates: Vec<NaiveDate> = cells.iter().map(|c| c.2).collect();
    dates.sort_unstable();
    dates.dedup();

    let mut frame = SpatioTemporalFrame::empty(variable_name, grid, dates)?;
    let mut seen = vec![false; frame.dates.len() * frame.grid.len()];
    for (lat, lon, date, value) in cells {
        let pi = frame.grid.index_of(lat, lon).expect("point checked above");
        let di = frame.date_index(date).expect("date collected above");
        let idx = di * frame.grid.len() + pi;
        if seen[idx] {
            return Err(Error::DuplicateKey { lat, lon, date });
        }
        seen[idx] = true;
        frame.values[idx] = value;
    }
    Ok(frame)
}

/// Write a frame in the columnar format: one row per (date, grid point)
/// cell, sorted by date then grid order. Deterministic byte output.
pub fn write_frame(frame: &SpatioTemporalFrame, path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let emit = |w: &mut BufWriter<fs::File>, s: String| -> Result<()> {
        w.write_all(s.as_bytes()).map_err(|e| Error::io(path, e))
    };
    emit(&mut w, "lat,lon,start_date,value\n".into())?;
    for (di, &date) in frame.dates.iter().enumerate() {
        let row = frame.row(di);
        for (pi, &(lat, lon)) in frame.grid.points().iter().enumerate() {
            let v = row[pi];
            if v.is_nan() {
                emit(&mut w, format!("{lat},{lon},{date},\n"))?;
            } else {
                emit(&mut w, format!("{lat},{lon},{date},{v}\n"))?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn variable_name_from_path(path: &Path) -> String {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("value");
    stem.strip_prefix("target_")
        .or_else(|| stem.strip_prefix("feature_"))
        .unwrap_or(stem)
        .to_string()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AggKind {
    Mean,
    Sum,
}

impl AggKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(AggKind::Mean),
            "sum" => Ok(AggKind::Sum),
            _ => Err(Error::Config(format!("unknown aggregation kind '{s}'"))),
        }
    }
}

/// How a window with some missing constituent days is aggregated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MissingMode {
    /// Result is missing if any constituent day is missing.
    Strict,
    /// Result is missing only if all constituent days are missing.
    Lenient,
}

#[derive(Debug, Clone, Copy)]
pub struct AggregationRule {
    pub kind: AggKind,
    pub window: u32,
    pub missing: MissingMode,
}

impl AggregationRule {
    pub fn new(kind: AggKind, window: u32, missing: MissingMode) -> Result<Self> {
        if window < 1 {
            return Err(Error::Invalid("aggregation window must be >= 1".into()));
        }
        Ok(AggregationRule { kind, window, missing })
    }
}

/// Aggregate a daily-cadence frame into rolling windows: the value at date
/// t covers t..t+window-1. Dates whose window extends past the available
/// range are dropped.
pub fn aggregate_daily(daily: &SpatioTemporalFrame, rule: &AggregationRule) -> Result<SpatioTemporalFrame> {
    let g = daily.grid.len();
    let win = rule.window as i64;
    let mut out_dates = Vec::new();
    let mut out_values = Vec::new();
    for (di, &t) in daily.dates.iter().enumerate() {
        // require every day of the window to exist as a row
        let last = t + chrono::Duration::days(win - 1);
        if daily.dates.get(di + rule.window as usize - 1) != Some(&last) {
            continue;
        }
        out_dates.push(t);
        for pi in 0..g {
            let mut sum = 0.0;
            let mut present = 0u32;
            for k in 0..rule.window as usize {
                let v = daily.row(di + k)[pi];
                if !v.is_nan() {
                    sum += v;
                    present += 1;
                }
            }
            let missing = match rule.missing {
                MissingMode::Strict => present < rule.window,
                MissingMode::Lenient => present == 0,
            };
            let v = if missing {
                f64::NAN
            } else {
                match rule.kind {
                    AggKind::Mean => sum / present as f64,
                    AggKind::Sum => sum,
                }
            };
            out_values.push(v);
        }
    }
    SpatioTemporalFrame::new(daily.variable_name.clone(), daily.grid.clone(), out_dates, out_values)
}

/// A dataset directory: `target_<var>.csv`, any number of
/// `feature_<name>.csv`, and an optional `manifest.txt` of `key = value`
/// lines (ground truth for synthetic data).
#[derive(Debug)]
pub struct Dataset {
    pub variable: String,
    pub target: SpatioTemporalFrame,
    pub features: BTreeMap<String, SpatioTemporalFrame>,
    pub manifest: BTreeMap<String, String>,
}

impl Dataset {
    pub fn load(dir: &Path) -> Result<Dataset> {
        let mut target: Option<SpatioTemporalFrame> = None;
        let mut features = BTreeMap::new();
        let mut entries: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .collect();
        entries.sort();
        for path in entries {
            let Some(name) = path.file_name().and_then(|s| s.to_str()) else {
                continue;
            };
            if name.starts_with("target_") && name.ends_with(".csv") {
                if target.is_some() {
                    return Err(Error::Invalid(format!(
                        "multiple target_*.csv files in {}",
                        dir.display()
                    )));
                }
                target = Some(read_frame(&path, None)?);
            } else if name.starts_with("feature_") && name.ends_with(".csv") {
                let frame = read_frame(&path, None)?;
                features.insert(frame.variable_name().to_string(), frame);
            }
        }
        let target = target.ok_or_else(|| {
            Error::Invalid(format!("no target_*.csv file in {}", dir.display()))
        })?;
        for f in features.values() {
            if f.grid() != target.grid() {
                return Err(Error::GridMismatch(format!(
                    "feature '{}' grid differs from target grid",
                    f.variable_name()
                )));
            }
        }
        let manifest = read_manifest(&dir.join("manifest.txt")).unwrap_or_default();
        Ok(Dataset {
            variable: target.variable_name().to_string(),
            target,
            features,
            manifest,
        })
    }

    pub fn grid(&self) -> &GridSpec {
        self.target.grid()
    }
}

/// A model-facing view of a dataset, optionally truncated so that nothing
/// dated on or after an issue date is visible. Attempted reads past the
/// cutoff return `None` and are counted, so a backtest can assert that no
/// forecast ever touched future data.
#[derive(Debug)]
pub struct DatasetView {
    variable: String,
    cutoff: Option<NaiveDate>,
    target: SpatioTemporalFrame,
    features: BTreeMap<String, SpatioTemporalFrame>,
    violations: std::sync::atomic::AtomicU64,
}

impl DatasetView {
    /// Ungated view over the whole dataset (evaluation-side use only).
    pub fn full(ds: &Dataset) -> DatasetView {
        DatasetView {
            variable: ds.variable.clone(),
            cutoff: None,
            target: ds.target.clone(),
            features: ds.features.clone(),
            violations: Default::default(),
        }
    }

    /// View truncated to dates strictly before `issue`.
    pub fn gated(ds: &Dataset, issue: NaiveDate) -> DatasetView {
        let cutoff = issue - chrono::Duration::days(1);
        DatasetView {
            variable: ds.variable.clone(),
            cutoff: Some(cutoff),
            target: ds.target.truncated_at(cutoff),
            features: ds
                .features
                .iter()
                .map(|(k, v)| (k.clone(), v.truncated_at(cutoff)))
                .collect(),
            violations: Default::default(),
        }
    }

    pub fn variable(&self) -> &str {
        &self.variable
    }

    pub fn cutoff(&self) -> Option<NaiveDate> {
        self.cutoff
    }

    pub fn grid(&self) -> &GridSpec {
        self.target.grid()
    }

    pub fn target(&self) -> &SpatioTemporalFrame {
        &self.target
    }

    pub fn feature(&self, name: &str) -> Result<&SpatioTemporalFrame> {
        self.features
            .get(name)
            .ok_or_else(|| Error::MissingSource(name.to_string()))
    }

    pub fn feature_names(&self) -> impl Iterator<Item = &str> {
        self.features.keys().map(|s| s.as_str())
    }

    /// Gated cell read from the target frame.
    pub fn target_value(&self, date: NaiveDate, point_idx: usize) -> Option<f64> {
        self.check_gate(date)?;
        self.target.value(date, point_idx)
    }

    /// Gated cell read from a feature frame.
    pub fn feature_value(&self, name: &str, date: NaiveDate, point_idx: usize) -> Option<f64> {
        self.check_gate(date)?;
        self.features.get(name)?.value(date, point_idx)
    }

    fn check_gate(&self, date: NaiveDate) -> Option<()> {
        if let Some(cutoff) = self.cutoff {
            if date > cutoff {
                self.violations.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                return None;
            }
        }
        Some(())
    }

    /// Number of attempted reads past the cutoff.
    pub fn violations(&self) -> u64 {
        self.violations.load(std::sync::atomic::Ordering::Relaxed)
    }
}

/// Parse a `key = value` manifest file.
pub fn read_manifest(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = BTreeMap::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some((k, v)) = line.split_once('=') {
            out.insert(k.trim().to_string(), v.trim().to_string());
        }
    }
    Ok(out)
}

pub fn write_manifest(manifest: &BTreeMap<String, String>, path: &Path) -> Result<()> {
    let mut text = String::new();
    for (k, v) in manifest {
        text.push_str(k);
        text.push_str(" = ");
        text.push_str(v);
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
