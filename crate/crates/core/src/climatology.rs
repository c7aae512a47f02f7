//! Long-term per-month-day averages and anomaly computation.

use std::collections::BTreeMap;

use chrono::{Datelike, NaiveDate};

use crate::dataframe::SpatioTemporalFrame;
use crate::error::{Error, Result};
use crate::geotime::{month_day, GridSpec};

/// Per-(month-day, grid point) long-term mean over a base period. Feb 29
/// aliases Feb 28; lookups for Feb 29 return the Feb 28 vector.
#[derive(Debug, Clone)]
pub struct Climatology {
    variable_name: String,
    grid: GridSpec,
    values: BTreeMap<(u32, u32), Vec<f64>>,
    /// Contributing observation count per (month-day, grid point).
    counts: BTreeMap<(u32, u32), Vec<u32>>,
}

impl Climatology {
    pub fn variable_name(&self) -> &str {
        &self.variable_name
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    /// Climatology vector for a month-day, with the Feb-29 alias applied.
    pub fn values_for(&self, month: u32, day: u32) -> Option<&[f64]> {
        let key = if month == 2 && day == 29 { (2, 28) } else { (month, day) };
        self.values.get(&key).map(|v| v.as_slice())
    }

    pub fn values_for_date(&self, date: NaiveDate) -> Option<&[f64]> {
        let (m, d) = month_day(date);
        self.values_for(m, d)
    }

    pub fn counts_for(&self, month: u32, day: u32) -> Option<&[u32]> {
        let key = if month == 2 && day == 29 { (2, 28) } else { (month, day) };
        self.counts.get(&key).map(|v| v.as_slice())
    }

    pub fn month_days(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        self.values.keys().copied()
    }

    /// Serialize as a frame using sentinel dates 1799-12-19 through
    /// 1800-12-18 as month-day representatives.
    pub fn to_frame(&self) -> SpatioTemporalFrame {
        let mut dates = Vec::with_capacity(self.values.len());
        for &(m, d) in self.values.keys() {
            dates.push(sentinel_date(m, d));
        }
        dates.sort_unstable();
        let g = self.grid.len();
        let mut matrix = vec![f64::NAN; dates.len() * g];
        for (di, &date) in dates.iter().enumerate() {
            let row = &self.values[&(date.month(), date.day())];
            matrix[di * g..(di + 1) * g].copy_from_slice(row);
        }
        SpatioTemporalFrame::new(self.variable_name.clone(), self.grid.clone(), dates, matrix)
            .expect("sentinel dates are strictly increasing")
    }

    /// Rebuild from a sentinel-year frame written by `to_frame`.
    pub fn from_frame(frame: &SpatioTemporalFrame) -> Result<Climatology> {
        let mut values = BTreeMap::new();
        let mut counts = BTreeMap::new();
        for (di, &date) in frame.dates().iter().enumerate() {
            let key = (date.month(), date.day());
            values.insert(key, frame.row(di).to_vec());
            counts.insert(key, vec![0u32; frame.grid().len()]);
        }
        Ok(Climatology {
            variable_name: frame.variable_name().to_string(),
            grid: frame.grid().clone(),
            values,
            counts,
        })
    }
}

fn sentinel_date(month: u32, day: u32) -> NaiveDate {
    let year = if (month, day) >= (12, 19) { 1799 } else { 1800 };
    NaiveDate::from_ymd_opt(year, month, day).expect("aliased month-day is valid in 1800")
}

/// Per-month-day mean over the dates of `frame` whose year falls in
/// `base_years` (inclusive). The divisor is the count of actually present
/// observations, which equals the number of base years under complete
/// coverage. Summation order is ascending date.
pub fn compute_climatology(
    frame: &SpatioTemporalFrame,
    base_years: (i32, i32),
) -> Result<Climatology> {
    let g = frame.grid().len();
    let mut sums: BTreeMap<(u32, u32), Vec<f64>> = BTreeMap::new();
    let mut counts: BTreeMap<(u32, u32), Vec<u32>> = BTreeMap::new();
    for (di, &date) in frame.dates().iter().enumerate() {
        let year = date.year();
        if year < base_years.0 || year > base_years.1 {
            continue;
        }
        let key = month_day(date);
        let sum = sums.entry(key).or_insert_with(|| vec![0.0; g]);
        let cnt = counts.entry(key).or_insert_with(|| vec![0u32; g]);
        for (pi, &v) in frame.row(di).iter().enumerate() {
            if !v.is_nan() {
                sum[pi] += v;
                cnt[pi] += 1;
            }
        }
    }
    let mut values = BTreeMap::new();
    for (key, sum) in sums {
        let cnt = &counts[&key];
        if cnt.iter().all(|&c| c == 0) {
            return Err(Error::EmptyMonthDay { month: key.0, day: key.1 });
        }
        let row: Vec<f64> = sum
            .iter()
            .zip(cnt)
            .map(|(&s, &c)| if c == 0 { f64::NAN } else { s / c as f64 })
            .collect();
        values.insert(key, row);
    }
    if values.is_empty() {
        return Err(Error::Invalid(format!(
            "no observations in base period {}..{}",
            base_years.0, base_years.1
        )));
    }
    Ok(Climatology {
        variable_name: frame.variable_name().to_string(),
        grid: frame.grid().clone(),
        values,
        counts,
    })
}

/// Subtract the climatology from every cell of `frame`. Missing stays
/// missing; a month-day absent from the climatology is an error.
pub fn anomalize(frame: &SpatioTemporalFrame, clim: &Climatology) -> Result<SpatioTemporalFrame> {
    apply(frame, clim, |v, c| v - c)
}

/// Add the climatology back onto every cell; exact inverse of `anomalize`.
pub fn add_climatology(
    frame: &SpatioTemporalFrame,
    clim: &Climatology,
) -> Result<SpatioTemporalFrame> {
    apply(frame, clim, |v, c| v + c)
}

fn apply(
    frame: &SpatioTemporalFrame,
    clim: &Climatology,
    op: impl Fn(f64, f64) -> f64,
) -> Result<SpatioTemporalFrame> {
    if frame.grid() != clim.grid() {
        return Err(Error::GridMismatch("frame vs climatology".into()));
    }
    let g = frame.grid().len();
    let mut values = Vec::with_capacity(frame.dates().len() * g);
    for (di, &date) in frame.dates().iter().enumerate() {
        let (m, d) = month_day(date);
        let crow = clim
            .values_for(m, d)
            .ok_or(Error::UncoveredMonthDay { month: m, day: d })?;
        for (pi, &v) in frame.row(di).iter().enumerate() {
            if v.is_nan() || crow[pi].is_nan() {
                values.push(f64::NAN);
            } else {
                values.push(op(v, crow[pi]));
            }
        }
    }
    SpatioTemporalFrame::new(
        frame.variable_name().to_string(),
        frame.grid().clone(),
        frame.dates().to_vec(),
        values,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geotime::GridSpec;

    fn d(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
    }

    fn one_point_grid() -> GridSpec {
        GridSpec::from_points(vec![(40, -100)]).unwrap()
    }

    fn daily(first: &str, n: i64, f: impl Fn(NaiveDate) -> f64) -> SpatioTemporalFrame {
        let dates: Vec<NaiveDate> = (0..n).map(|i| d(first) + chrono::Duration::days(i)).collect();
        let values: Vec<f64> = dates.iter().map(|&t| f(t)).collect();
        SpatioTemporalFrame::new("t", one_point_grid(), dates, values).unwrap()
    }

    #[test]
    fn constant_frame_gives_constant_climatology() {
        let frame = daily("1981-01-01", 366 * 3, |_| 4.25);
        let clim = compute_climatology(&frame, (1981, 1983)).unwrap();
        for (m, dd) in clim.month_days() {
            assert_eq!(clim.values_for(m, dd).unwrap()[0], 4.25);
        }
    }

    #[test]
    fn two_years_average() {
        let frame = daily("2001-01-01", 365 * 2, |t| if t.year() == 2001 { 1.0 } else { 3.0 });
        let clim = compute_climatology(&frame, (2001, 2002)).unwrap();
        assert_eq!(clim.values_for(1, 1).unwrap()[0], 2.0);
        assert_eq!(clim.counts_for(1, 1).unwrap()[0], 2);
    }

    #[test]
    fn anomaly_of_single_year_is_zero() {
        let frame = daily("2001-01-01", 365, |t| t.ordinal() as f64);
        let clim = compute_climatology(&frame, (2001, 2001)).unwrap();
        let anom = anomalize(&frame, &clim).unwrap();
        for (di, _) in anom.dates().iter().enumerate() {
            assert_eq!(anom.row(di)[0], 0.0);
        }
    }

    #[test]
    fn anomalize_then_add_is_identity() {
        let frame = daily("2001-01-01", 800, |t| (t.ordinal() as f64 * 0.37).sin() * 9.0 + 1.0);
        let clim = compute_climatology(&frame, (2001, 2002)).unwrap();
        let anom = anomalize(&frame, &clim).unwrap();
        let back = add_climatology(&anom, &clim).unwrap();
        assert!(back.same_as(&frame));
    }

    #[test]
    fn feb29_uses_feb28_climatology() {
        let frame = daily("2015-01-01", 366 * 2, |t| t.month() as f64 + t.day() as f64 / 100.0);
        let clim = compute_climatology(&frame, (2015, 2016)).unwrap();
        assert!(clim.values_for(2, 29).is_some());
        assert_eq!(clim.values_for(2, 29).unwrap(), clim.values_for(2, 28).unwrap());
        let anom = anomalize(&frame, &clim).unwrap();
        let feb29 = anom.value(d("2016-02-29"), 0).unwrap();
        let expect = frame.value(d("2016-02-29"), 0).unwrap() - clim.values_for(2, 28).unwrap()[0];
        assert_eq!(feb29, expect);
    }

    #[test]
    fn climatology_of_anomalies_is_zero() {
        let frame = daily("2001-01-01", 365 * 4, |t| {
            (t.ordinal() as f64 / 58.0).cos() * 3.0 + t.year() as f64 * 0.01
        });
        let clim = compute_climatology(&frame, (2001, 2004)).unwrap();
        let anom = anomalize(&frame, &clim).unwrap();
        let clim2 = compute_climatology(&anom, (2001, 2004)).unwrap();
        for (m, dd) in clim2.month_days() {
            assert!(clim2.values_for(m, dd).unwrap()[0].abs() <= 1e-12);
        }
    }

    #[test]
    fn uncovered_month_day_is_an_error() {
        let frame = daily("2001-01-01", 10, |_| 1.0);
        let clim = compute_climatology(&frame, (2001, 2001)).unwrap();
        let later = daily("2001-06-01", 5, |_| 1.0);
        assert!(matches!(
            anomalize(&later, &clim),
            Err(Error::UncoveredMonthDay { .. })
        ));
    }

    #[test]
    fn sentinel_frame_round_trip() {
        let frame = daily("2001-01-01", 365 * 2, |t| t.ordinal() as f64 * 0.5);
        let clim = compute_climatology(&frame, (2001, 2002)).unwrap();
        let sf = clim.to_frame();
        assert_eq!(sf.dates().first().map(|t| t.year()), Some(1799));
        assert_eq!(sf.dates().len(), 365);
        let back = Climatology::from_frame(&sf).unwrap();
        for (m, dd) in clim.month_days() {
            assert_eq!(clim.values_for(m, dd).unwrap(), back.values_for(m, dd).unwrap());
        }
    }
}
