//! Bias correction of raw dynamical-model forecasts: average the ensemble
//! members, then shift each cell by (observed climatology - model
//! reforecast climatology) for its month-day.

use crate::climatology::Climatology;
use crate::dataframe::SpatioTemporalFrame;
use crate::error::{Error, Result};
use crate::geotime::month_day;

/// Raw model output: one frame per ensemble member, all on the same grid
/// and date index.
#[derive(Debug, Clone)]
pub struct RawModelForecast {
    pub variable: String,
    pub members: Vec<SpatioTemporalFrame>,
}

impl RawModelForecast {
    pub fn new(variable: impl Into<String>, members: Vec<SpatioTemporalFrame>) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::Invalid("forecast needs at least one member".into()));
        }
        let first = &members[0];
        for m in &members[1..] {
            if m.grid() != first.grid() {
                return Err(Error::GridMismatch("forecast members".into()));
            }
            if m.dates() != first.dates() {
                return Err(Error::Invalid("forecast members disagree on dates".into()));
            }
        }
        Ok(RawModelForecast { variable: variable.into(), members })
    }
}

/// The two climatologies the correction is built from: the model's own
/// long-term reforecast mean and the observed mean over the same period.
#[derive(Debug, Clone)]
pub struct DebiasClimPair {
    pub reforecast_clim: Climatology,
    pub observed_clim: Climatology,
}

impl DebiasClimPair {
    pub fn new(reforecast_clim: Climatology, observed_clim: Climatology) -> Result<Self> {
        if reforecast_clim.grid() != observed_clim.grid() {
            return Err(Error::GridMismatch("reforecast vs observed climatology".into()));
        }
        let a: Vec<_> = reforecast_clim.month_days().collect();
        let b: Vec<_> = observed_clim.month_days().collect();
        if a != b {
            return Err(Error::Invalid(
                "climatologies cover different month-days".into(),
            ));
        }
        Ok(DebiasClimPair { reforecast_clim, observed_clim })
    }

    /// Swapped pair; debiasing with it inverts the original correction.
    pub fn swapped(&self) -> DebiasClimPair {
        DebiasClimPair {
            reforecast_clim: self.observed_clim.clone(),
            observed_clim: self.reforecast_clim.clone(),
        }
    }
}

/// Cell-wise mean over members. A cell missing in some members uses the
/// mean of the present ones; a cell missing everywhere stays missing.
pub fn average_members(raw: &RawModelForecast) -> Result<SpatioTemporalFrame> {
    let first = &raw.members[0];
    let g = first.grid().len();
    let n = first.dates().len();
    let mut sums = vec![0.0f64; n * g];
    let mut counts = vec![0u32; n * g];
    for m in &raw.members {
        for di in 0..n {
            for (pi, &v) in m.row(di).iter().enumerate() {
                if !v.is_nan() {
                    sums[di * g + pi] += v;
                    counts[di * g + pi] += 1;
                }
            }
        }
    }
    let values: Vec<f64> = sums
        .iter()
        .zip(&counts)
        .map(|(&s, &c)| if c == 0 { f64::NAN } else { s / c as f64 })
        .collect();
    SpatioTemporalFrame::new(
        raw.variable.clone(),
        first.grid().clone(),
        first.dates().to_vec(),
        values,
    )
}

/// out(t, g) = forecast(t, g) - reforecast_clim(monthday(t), g)
///           + observed_clim(monthday(t), g). Missing stays missing.
pub fn debias(
    forecast: &SpatioTemporalFrame,
    pair: &DebiasClimPair,
) -> Result<SpatioTemporalFrame> {
    if forecast.grid() != pair.observed_clim.grid() {
        return Err(Error::GridMismatch("forecast vs climatology".into()));
    }
    let g = forecast.grid().len();
    let mut values = Vec::with_capacity(forecast.dates().len() * g);
    for (di, &date) in forecast.dates().iter().enumerate() {
        let (m, d) = month_day(date);
        let model = pair
            .reforecast_clim
            .values_for(m, d)
            .ok_or(Error::UncoveredMonthDay { month: m, day: d })?;
        let obs = pair
            .observed_clim
            .values_for(m, d)
            .ok_or(Error::UncoveredMonthDay { month: m, day: d })?;
        for (pi, &v) in forecast.row(di).iter().enumerate() {
            if v.is_nan() || model[pi].is_nan() || obs[pi].is_nan() {
                values.push(f64::NAN);
            } else {
                // single correction term: exact identity when the two
                // climatologies coincide, exact sign flip under swapping
                values.push(v + (obs[pi] - model[pi]));
            }
        }
    }
    SpatioTemporalFrame::new(
        forecast.variable_name().to_string(),
        forecast.grid().clone(),
        forecast.dates().to_vec(),
        values,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::climatology::{anomalize, compute_climatology};
    use crate::geotime::GridSpec;
    use chrono::NaiveDate;

    fn d(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
    }

    fn grid() -> GridSpec {
        GridSpec::from_points(vec![(40, -100), (41, -100)]).unwrap()
    }

    fn frame(first: &str, n: i64, f: impl Fn(i64, usize) -> f64) -> SpatioTemporalFrame {
        let dates: Vec<NaiveDate> =
            (0..n).map(|i| d(first) + chrono::Duration::days(i)).collect();
        let mut values = Vec::new();
        for i in 0..n {
            for pi in 0..2 {
                values.push(f(i, pi));
            }
        }
        SpatioTemporalFrame::new("temperature", grid(), dates, values).unwrap()
    }

    #[test]
    fn identical_members_average_to_member() {
        let m = frame("2011-04-01", 5, |i, pi| i as f64 + pi as f64);
        let raw = RawModelForecast::new("temperature", vec![m.clone(), m.clone(), m.clone()]).unwrap();
        let avg = average_members(&raw).unwrap();
        assert!(avg.same_as(&m));
    }

    #[test]
    fn member_mean_and_imputation() {
        let m1 = frame("2011-04-01", 1, |_, pi| if pi == 0 { 1.0 } else { 2.0 });
        let mut m2 = frame("2011-04-01", 1, |_, pi| if pi == 0 { 3.0 } else { 4.0 });
        // drop point 1 from member 2: mean of present members only
        m2.row_mut(0)[1] = f64::NAN;
        let raw = RawModelForecast::new("temperature", vec![m1, m2]).unwrap();
        let avg = average_members(&raw).unwrap();
        assert_eq!(avg.value(d("2011-04-01"), 0), Some(2.0));
        assert_eq!(avg.value(d("2011-04-01"), 1), Some(2.0));
    }

    #[test]
    fn cell_missing_in_all_members_stays_missing() {
        let mut m1 = frame("2011-04-01", 1, |_, _| 1.0);
        let mut m2 = frame("2011-04-01", 1, |_, _| 3.0);
        m1.row_mut(0)[0] = f64::NAN;
        m2.row_mut(0)[0] = f64::NAN;
        let raw = RawModelForecast::new("temperature", vec![m1, m2]).unwrap();
        let avg = average_members(&raw).unwrap();
        assert_eq!(avg.value(d("2011-04-01"), 0), None);
        assert_eq!(avg.value(d("2011-04-01"), 1), Some(2.0));
    }

    #[test]
    fn equal_climatologies_make_debias_identity() {
        let obs = frame("2001-01-01", 730, |i, pi| (i as f64 * 0.2).sin() + pi as f64);
        let clim = compute_climatology(&obs, (2001, 2002)).unwrap();
        let pair = DebiasClimPair::new(clim.clone(), clim).unwrap();
        let fc = frame("2002-03-01", 10, |i, pi| i as f64 - pi as f64);
        let out = debias(&fc, &pair).unwrap();
        assert!(out.same_as(&fc));
    }

    #[test]
    fn model_climatology_input_maps_to_observed_climatology() {
        let model = frame("2001-01-01", 730, |i, pi| (i as f64 * 0.1).cos() * 3.0 + pi as f64);
        let obs = frame("2001-01-01", 730, |i, pi| (i as f64 * 0.3).sin() - pi as f64);
        let mclim = compute_climatology(&model, (2001, 2002)).unwrap();
        let oclim = compute_climatology(&obs, (2001, 2002)).unwrap();
        let pair = DebiasClimPair::new(mclim.clone(), oclim.clone()).unwrap();
        // a forecast equal to the model climatology itself
        let fc_dates = frame("2002-05-01", 6, |_, _| 0.0);
        let mut values = Vec::new();
        for &t in fc_dates.dates() {
            values.extend_from_slice(mclim.values_for_date(t).unwrap());
        }
        let fc = SpatioTemporalFrame::new(
            "temperature",
            grid(),
            fc_dates.dates().to_vec(),
            values,
        )
        .unwrap();
        let out = debias(&fc, &pair).unwrap();
        for &t in out.dates() {
            let expect = oclim.values_for_date(t).unwrap();
            for pi in 0..2 {
                assert!((out.value(t, pi).unwrap() - expect[pi]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn swapped_pair_inverts_exactly() {
        let model = frame("2001-01-01", 730, |i, pi| (i as f64 * 0.17).sin() * 2.0 + pi as f64);
        let obs = frame("2001-01-01", 730, |i, pi| (i as f64 * 0.05).cos() - pi as f64);
        let pair = DebiasClimPair::new(
            compute_climatology(&model, (2001, 2002)).unwrap(),
            compute_climatology(&obs, (2001, 2002)).unwrap(),
        )
        .unwrap();
        let fc = frame("2002-07-01", 14, |i, pi| i as f64 * 0.3 + pi as f64);
        let out = debias(&fc, &pair).unwrap();
        let back = debias(&out, &pair.swapped()).unwrap();
        for (di, &t) in back.dates().iter().enumerate() {
            for pi in 0..2 {
                let got = back.row(di)[pi];
                let want = fc.row(di)[pi];
                assert!(
                    (got - want).abs() <= 1e-12 * want.abs().max(1.0),
                    "at {t}: {got} vs {want}"
                );
            }
        }
    }

    #[test]
    fn debiased_anomalies_equal_forecast_minus_reforecast_clim() {
        let model = frame("2001-01-01", 730, |i, pi| (i as f64 * 0.09).sin() + 2.0 * pi as f64);
        let obs = frame("2001-01-01", 730, |i, _| (i as f64 * 0.11).cos() * 4.0);
        let mclim = compute_climatology(&model, (2001, 2002)).unwrap();
        let oclim = compute_climatology(&obs, (2001, 2002)).unwrap();
        let pair = DebiasClimPair::new(mclim.clone(), oclim.clone()).unwrap();
        let fc = frame("2002-09-01", 8, |i, pi| i as f64 - 2.0 * pi as f64);
        let out = debias(&fc, &pair).unwrap();
        let anom = anomalize(&out, &oclim).unwrap();
        let direct = anomalize(&fc, &mclim).unwrap();
        for &t in anom.dates() {
            for pi in 0..2 {
                let a = anom.value(t, pi).unwrap();
                let b = direct.value(t, pi).unwrap();
                assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0), "at {t}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn constant_bias_is_removed() {
        // model runs +b hotter than observations; climatologies estimated
        // from those biased/unbiased histories cancel the bias
        let bias = 3.5;
        let truth = frame("2001-01-01", 1095, |i, pi| (i as f64 * 0.21).sin() * 2.0 + pi as f64);
        let model_hist = frame("2001-01-01", 1095, |i, pi| {
            (i as f64 * 0.21).sin() * 2.0 + pi as f64 + bias
        });
        let pair = DebiasClimPair::new(
            compute_climatology(&model_hist, (2001, 2003)).unwrap(),
            compute_climatology(&truth, (2001, 2003)).unwrap(),
        )
        .unwrap();
        // a new model forecast carrying the same bias
        let fc = frame("2003-06-01", 10, |i, pi| (i as f64 * 0.4).cos() + pi as f64 + bias);
        let out = debias(&fc, &pair).unwrap();
        for (di, &t) in out.dates().iter().enumerate() {
            for pi in 0..2 {
                let got = out.value(t, pi).unwrap();
                let want = fc.row(di)[pi] - bias;
                assert!((got - want).abs() < 1e-9, "at {t}: {got} vs {want}");
            }
        }
    }
}
