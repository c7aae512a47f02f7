//! Calendar and grid geometry: day-of-year with the Feb-29 convention,
//! circular day-of-year windows, issue/target scheduling, and the contest
//! grid definition.

use chrono::{Datelike, NaiveDate};

use crate::error::{Error, Result};

/// Day of the year in 1..=365. Feb 29 maps to the same value as Feb 28,
/// so Dec 31 of a leap year is still day 365.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DayOfYear(u16);

impl DayOfYear {
    pub fn new(value: u16) -> Result<Self> {
        if (1..=365).contains(&value) {
            Ok(DayOfYear(value))
        } else {
            Err(Error::Invalid(format!("day-of-year {value} outside 1..=365")))
        }
    }

    pub fn value(self) -> u16 {
        self.0
    }

    /// Circular distance to another day-of-year: min(|a-b|, 365-|a-b|).
    pub fn circular_distance(self, other: DayOfYear) -> u16 {
        let d = self.0.abs_diff(other.0);
        d.min(365 - d)
    }
}

/// Day of year under the convention that Feb 29 counts as Feb 28.
pub fn day_of_year(date: NaiveDate) -> DayOfYear {
    let ordinal = date.ordinal() as u16;
    let doy = if date.leap_year() && ordinal >= 60 {
        ordinal - 1
    } else {
        ordinal
    };
    DayOfYear(doy)
}

/// Month-day key with Feb 29 aliased to Feb 28.
pub fn month_day(date: NaiveDate) -> (u32, u32) {
    if date.month() == 2 && date.day() == 29 {
        (2, 28)
    } else {
        (date.month(), date.day())
    }
}

/// Dates whose circular day-of-year distance to `d_star` is at most `span`.
pub fn circular_window(d_star: DayOfYear, span: u16, dates: &[NaiveDate]) -> Vec<NaiveDate> {
    debug_assert!(span <= 182);
    dates
        .iter()
        .copied()
        .filter(|&t| day_of_year(t).circular_distance(d_star) <= span)
        .collect()
}

/// Per-date membership mask for the circular day-of-year window.
pub fn circular_window_mask(d_star: DayOfYear, span: u16, dates: &[NaiveDate]) -> Vec<bool> {
    dates
        .iter()
        .map(|&t| day_of_year(t).circular_distance(d_star) <= span)
        .collect()
}

/// Biweekly issue dates from `first_issue` through `last_issue`.
///
/// Issues restart on each anniversary of the first issue, so every
/// evaluation year carries exactly 26 issues: within a year block an issue
/// is included only when its full two-week cycle completes before the next
/// block begins. A contest year starting April 18 therefore ends with the
/// issue of April 3/4, for 26 realized forecasts per year.
pub fn issue_schedule(first_issue: NaiveDate, last_issue: NaiveDate) -> Vec<NaiveDate> {
    let mut out = Vec::new();
    let mut block_start = first_issue;
    while block_start <= last_issue {
        let next_block = add_year(block_start);
        let mut k = 0i64;
        loop {
            let d = block_start + chrono::Duration::days(14 * k);
            let cycle_end = d + chrono::Duration::days(14);
            if cycle_end > next_block && d != block_start {
                break;
            }
            if d > last_issue {
                return out;
            }
            out.push(d);
            k += 1;
        }
        block_start = next_block;
    }
    out
}

fn add_year(d: NaiveDate) -> NaiveDate {
    // Feb 29 anniversaries fall back to Feb 28.
    NaiveDate::from_ymd_opt(d.year() + 1, d.month(), d.day())
        .unwrap_or_else(|| NaiveDate::from_ymd_opt(d.year() + 1, 2, 28).unwrap())
}

/// Forecast horizon: the two-week target period starts `issue_to_target_offset`
/// days after the issue date, and the freshest fully observed data lag
/// relative to the target start is `freshest_lag` days.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Horizon {
    Weeks34,
    Weeks56,
}

impl Horizon {
    pub fn name(self) -> &'static str {
        match self {
            Horizon::Weeks34 => "weeks34",
            Horizon::Weeks56 => "weeks56",
        }
    }

    pub fn issue_to_target_offset(self) -> i64 {
        match self {
            Horizon::Weeks34 => 15,
            Horizon::Weeks56 => 29,
        }
    }

    /// Lag (days before the target start) of the most recent 14-day period
    /// fully observed at issue time.
    pub fn freshest_lag(self) -> i64 {
        self.issue_to_target_offset() + 14
    }

    /// Hold-out interval around an evaluation date, as (days before, days
    /// after): [t - before, t + after] is excluded from training.
    pub fn holdout_interval(self) -> (i64, i64) {
        match self {
            Horizon::Weeks34 => (29, 335),
            Horizon::Weeks56 => (43, 321),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "weeks34" => Ok(Horizon::Weeks34),
            "weeks56" => Ok(Horizon::Weeks56),
            _ => Err(Error::Config(format!(
                "unknown horizon '{s}' (expected weeks34 or weeks56)"
            ))),
        }
    }
}

/// Start of the two-week target period for a forecast issued on `issue`.
pub fn target_start(issue: NaiveDate, horizon: Horizon) -> NaiveDate {
    issue + chrono::Duration::days(horizon.issue_to_target_offset())
}

/// Issue date for a forecast whose target period starts on `target`.
pub fn issue_for_target(target: NaiveDate, horizon: Horizon) -> NaiveDate {
    target - chrono::Duration::days(horizon.issue_to_target_offset())
}

/// A fixed, ordered set of 1-degree grid points. Flattened vectors over the
/// grid always use this order: latitude-major ascending, then longitude
/// ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridSpec {
    points: Vec<(i16, i16)>,
}

impl GridSpec {
    /// Build a grid from explicit (lat, lon) pairs. Points are sorted into
    /// canonical order; duplicates are an error.
    pub fn from_points(mut points: Vec<(i16, i16)>) -> Result<Self> {
        points.sort_unstable();
        let before = points.len();
        points.dedup();
        if points.len() != before {
            return Err(Error::Invalid("grid points are not unique".into()));
        }
        Ok(GridSpec { points })
    }

    /// Full cartesian product of the given latitudes and longitudes.
    pub fn regular(latitudes: &[i16], longitudes: &[i16]) -> Result<Self> {
        let mut points = Vec::with_capacity(latitudes.len() * longitudes.len());
        for &lat in latitudes {
            for &lon in longitudes {
                points.push((lat, lon));
            }
        }
        GridSpec::from_points(points)
    }

    /// The built-in 514-point contest grid: integer-degree land points of
    /// the western contiguous U.S. within 25N-50N, 125W-93W. The land mask
    /// is a documented approximation of the contest region.
    pub fn contest() -> Self {
        GridSpec { points: CONTEST_POINTS.to_vec() }
    }

    pub fn points(&self) -> &[(i16, i16)] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Sorted unique latitudes present in the grid.
    pub fn latitudes(&self) -> Vec<i16> {
        let mut lats: Vec<i16> = self.points.iter().map(|p| p.0).collect();
        lats.sort_unstable();
        lats.dedup();
        lats
    }

    /// Sorted unique longitudes present in the grid.
    pub fn longitudes(&self) -> Vec<i16> {
        let mut lons: Vec<i16> = self.points.iter().map(|p| p.1).collect();
        lons.sort_unstable();
        lons.dedup();
        lons
    }

    /// Index of a point in the canonical order, if present.
    pub fn index_of(&self, lat: i16, lon: i16) -> Option<usize> {
        self.points.binary_search(&(lat, lon)).ok()
    }
}

const CONTEST_POINTS: [(i16, i16); 514] = [
    (32, -113), (32, -112), (32, -111), (32, -110), (32, -109), (32, -108), (32, -107), (32, -106),
    (32, -105), (32, -104), (32, -103), (32, -102), (33, -117), (33, -116), (33, -115), (33, -114),
    (33, -113), (33, -112), (33, -111), (33, -110), (33, -109), (33, -108), (33, -107), (33, -106),
    (33, -105), (33, -104), (33, -103), (33, -102), (33, -101), (33, -100), (33, -99), (33, -98),
    (33, -97), (33, -96), (33, -95), (33, -94), (34, -118), (34, -117), (34, -116), (34, -115),
    (34, -114), (34, -113), (34, -112), (34, -111), (34, -110), (34, -109), (34, -108), (34, -107),
    (34, -106), (34, -105), (34, -104), (34, -103), (34, -102), (34, -101), (34, -100), (34, -99),
    (34, -98), (34, -97), (34, -96), (34, -95), (34, -94), (35, -120), (35, -119), (35, -118),
    (35, -117), (35, -116), (35, -115), (35, -114), (35, -113), (35, -112), (35, -111), (35, -110),
    (35, -109), (35, -108), (35, -107), (35, -106), (35, -105), (35, -104), (35, -103), (35, -102),
    (35, -101), (35, -100), (35, -99), (35, -98), (35, -97), (35, -96), (35, -95), (35, -94),
    (36, -121), (36, -120), (36, -119), (36, -118), (36, -117), (36, -116), (36, -115), (36, -114),
    (36, -113), (36, -112), (36, -111), (36, -110), (36, -109), (36, -108), (36, -107), (36, -106),
    (36, -105), (36, -104), (36, -103), (36, -102), (36, -101), (36, -100), (36, -99), (36, -98),
    (36, -97), (36, -96), (36, -95), (36, -94), (37, -122), (37, -121), (37, -120), (37, -119),
    (37, -118), (37, -117), (37, -116), (37, -115), (37, -114), (37, -113), (37, -112), (37, -111),
    (37, -110), (37, -109), (37, -108), (37, -107), (37, -106), (37, -105), (37, -104), (37, -103),
    (37, -102), (37, -101), (37, -100), (37, -99), (37, -98), (37, -97), (37, -96), (37, -95),
    (37, -94), (38, -122), (38, -121), (38, -120), (38, -119), (38, -118), (38, -117), (38, -116),
    (38, -115), (38, -114), (38, -113), (38, -112), (38, -111), (38, -110), (38, -109), (38, -108),
    (38, -107), (38, -106), (38, -105), (38, -104), (38, -103), (38, -102), (38, -101), (38, -100),
    (38, -99), (38, -98), (38, -97), (38, -96), (38, -95), (38, -94), (39, -123), (39, -122),
    (39, -121), (39, -120), (39, -119), (39, -118), (39, -117), (39, -116), (39, -115), (39, -114),
    (39, -113), (39, -112), (39, -111), (39, -110), (39, -109), (39, -108), (39, -107), (39, -106),
    (39, -105), (39, -104), (39, -103), (39, -102), (39, -101), (39, -100), (39, -99), (39, -98),
    (39, -97), (39, -96), (39, -95), (39, -94), (40, -124), (40, -123), (40, -122), (40, -121),
    (40, -120), (40, -119), (40, -118), (40, -117), (40, -116), (40, -115), (40, -114), (40, -113),
    (40, -112), (40, -111), (40, -110), (40, -109), (40, -108), (40, -107), (40, -106), (40, -105),
    (40, -104), (40, -103), (40, -102), (40, -101), (40, -100), (40, -99), (40, -98), (40, -97),
    (40, -96), (40, -95), (40, -94), (41, -124), (41, -123), (41, -122), (41, -121), (41, -120),
    (41, -119), (41, -118), (41, -117), (41, -116), (41, -115), (41, -114), (41, -113), (41, -112),
    (41, -111), (41, -110), (41, -109), (41, -108), (41, -107), (41, -106), (41, -105), (41, -104),
    (41, -103), (41, -102), (41, -101), (41, -100), (41, -99), (41, -98), (41, -97), (41, -96),
    (41, -95), (41, -94), (42, -124), (42, -123), (42, -122), (42, -121), (42, -120), (42, -119),
    (42, -118), (42, -117), (42, -116), (42, -115), (42, -114), (42, -113), (42, -112), (42, -111),
    (42, -110), (42, -109), (42, -108), (42, -107), (42, -106), (42, -105), (42, -104), (42, -103),
    (42, -102), (42, -101), (42, -100), (42, -99), (42, -98), (42, -97), (42, -96), (42, -95),
    (42, -94), (43, -124), (43, -123), (43, -122), (43, -121), (43, -120), (43, -119), (43, -118),
    (43, -117), (43, -116), (43, -115), (43, -114), (43, -113), (43, -112), (43, -111), (43, -110),
    (43, -109), (43, -108), (43, -107), (43, -106), (43, -105), (43, -104), (43, -103), (43, -102),
    (43, -101), (43, -100), (43, -99), (43, -98), (43, -97), (43, -96), (43, -95), (43, -94),
    (44, -124), (44, -123), (44, -122), (44, -121), (44, -120), (44, -119), (44, -118), (44, -117),
    (44, -116), (44, -115), (44, -114), (44, -113), (44, -112), (44, -111), (44, -110), (44, -109),
    (44, -108), (44, -107), (44, -106), (44, -105), (44, -104), (44, -103), (44, -102), (44, -101),
    (44, -100), (44, -99), (44, -98), (44, -97), (44, -96), (44, -95), (44, -94), (45, -124),
    (45, -123), (45, -122), (45, -121), (45, -120), (45, -119), (45, -118), (45, -117), (45, -116),
    (45, -115), (45, -114), (45, -113), (45, -112), (45, -111), (45, -110), (45, -109), (45, -108),
    (45, -107), (45, -106), (45, -105), (45, -104), (45, -103), (45, -102), (45, -101), (45, -100),
    (45, -99), (45, -98), (45, -97), (45, -96), (45, -95), (45, -94), (46, -124), (46, -123),
    (46, -122), (46, -121), (46, -120), (46, -119), (46, -118), (46, -117), (46, -116), (46, -115),
    (46, -114), (46, -113), (46, -112), (46, -111), (46, -110), (46, -109), (46, -108), (46, -107),
    (46, -106), (46, -105), (46, -104), (46, -103), (46, -102), (46, -101), (46, -100), (46, -99),
    (46, -98), (46, -97), (46, -96), (46, -95), (46, -94), (47, -124), (47, -123), (47, -122),
    (47, -121), (47, -120), (47, -119), (47, -118), (47, -117), (47, -116), (47, -115), (47, -114),
    (47, -113), (47, -112), (47, -111), (47, -110), (47, -109), (47, -108), (47, -107), (47, -106),
    (47, -105), (47, -104), (47, -103), (47, -102), (47, -101), (47, -100), (47, -99), (47, -98),
    (47, -97), (47, -96), (47, -95), (47, -94), (48, -124), (48, -123), (48, -122), (48, -121),
    (48, -120), (48, -119), (48, -118), (48, -117), (48, -116), (48, -115), (48, -114), (48, -113),
    (48, -112), (48, -111), (48, -110), (48, -109), (48, -108), (48, -107), (48, -106), (48, -105),
    (48, -104), (48, -103), (48, -102), (48, -101), (48, -100), (48, -99), (48, -98), (48, -97),
    (48, -96), (48, -95), (48, -94), (49, -124), (49, -123), (49, -122), (49, -121), (49, -120),
    (49, -119), (49, -118), (49, -117), (49, -116), (49, -115), (49, -114), (49, -113), (49, -112),
    (49, -111), (49, -110), (49, -109), (49, -108), (49, -107), (49, -106), (49, -105), (49, -104),
    (49, -103), (49, -102), (49, -101), (49, -100), (49, -99), (49, -98), (49, -97), (49, -96),
    (49, -95), (49, -94),
];

#[cfg(test)]
mod tests {
    use super::*;

    fn d(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
    }

    #[test]
    fn feb29_aliases_feb28() {
        assert_eq!(day_of_year(d("2016-02-29")).value(), 59);
        assert_eq!(day_of_year(d("2016-02-28")).value(), 59);
        assert_eq!(day_of_year(d("2017-02-28")).value(), 59);
    }

    #[test]
    fn jan1_is_day_one() {
        assert_eq!(day_of_year(d("2017-01-01")).value(), 1);
    }

    #[test]
    fn leap_year_dec31_is_365() {
        // Oracle: brute-force walk of 2016 counting distinct doy values
        // under the Feb-29 rule.
        let mut t = d("2016-01-01");
        let mut max = 0;
        while t <= d("2016-12-31") {
            max = max.max(day_of_year(t).value());
            t += chrono::Duration::days(1);
        }
        assert_eq!(max, 365);
        assert_eq!(day_of_year(d("2016-12-31")).value(), 365);
    }

    #[test]
    fn day_of_year_surjective_over_full_year() {
        for year in [2015, 2016] {
            let mut seen = [false; 366];
            let mut t = NaiveDate::from_ymd_opt(year, 1, 1).unwrap();
            let end = NaiveDate::from_ymd_opt(year, 12, 31).unwrap();
            while t <= end {
                seen[day_of_year(t).value() as usize] = true;
                t += chrono::Duration::days(1);
            }
            assert!(seen[1..=365].iter().all(|&b| b), "year {year}");
        }
    }

    #[test]
    fn circular_window_wraps_at_year_end() {
        let dates: Vec<NaiveDate> = (0..365)
            .map(|i| d("2015-01-01") + chrono::Duration::days(i))
            .collect();
        let w = circular_window(DayOfYear::new(1).unwrap(), 2, &dates);
        let doys: Vec<u16> = w.iter().map(|&t| day_of_year(t).value()).collect();
        let mut expect = vec![1, 2, 3, 364, 365];
        let mut got = doys.clone();
        got.sort_unstable();
        expect.sort_unstable();
        assert_eq!(got, expect);
    }

    #[test]
    fn circular_window_span_zero() {
        let dates: Vec<NaiveDate> = (0..365)
            .map(|i| d("2015-01-01") + chrono::Duration::days(i))
            .collect();
        let w = circular_window(DayOfYear::new(180).unwrap(), 0, &dates);
        assert_eq!(w.len(), 1);
        assert_eq!(day_of_year(w[0]).value(), 180);
    }

    #[test]
    fn circular_window_matches_brute_force() {
        // May 2 is doy 122; 56-day window over three years of dates.
        let dates: Vec<NaiveDate> = (0..1096)
            .map(|i| d("2000-01-01") + chrono::Duration::days(i))
            .collect();
        let d_star = day_of_year(d("2017-05-02"));
        assert_eq!(d_star.value(), 122);
        let w = circular_window(d_star, 56, &dates);
        let brute: Vec<NaiveDate> = dates
            .iter()
            .copied()
            .filter(|&t| {
                let a = day_of_year(t).value() as i32;
                let b = d_star.value() as i32;
                let diff = (a - b).abs();
                diff.min(365 - diff) <= 56
            })
            .collect();
        assert_eq!(w, brute);
        assert!(!w.is_empty());
    }

    #[test]
    fn full_year_window_size_is_2s_plus_1() {
        let dates: Vec<NaiveDate> = (0..365)
            .map(|i| d("2015-01-01") + chrono::Duration::days(i))
            .collect();
        for d_star in [1u16, 59, 122, 365] {
            for span in [0u16, 1, 10, 56] {
                let w = circular_window(DayOfYear::new(d_star).unwrap(), span, &dates);
                assert_eq!(w.len(), 2 * span as usize + 1);
            }
        }
    }

    #[test]
    fn contest_schedule_has_26_issues() {
        let sched = issue_schedule(d("2017-04-18"), d("2018-04-17"));
        assert_eq!(sched.len(), 26);
        assert_eq!(sched[0], d("2017-04-18"));
        let sched = issue_schedule(d("2011-04-18"), d("2012-04-17"));
        assert_eq!(sched.len(), 26);
        let single = issue_schedule(d("2011-04-18"), d("2011-04-18"));
        assert_eq!(single, vec![d("2011-04-18")]);
    }

    #[test]
    fn target_start_offsets() {
        assert_eq!(target_start(d("2017-04-18"), Horizon::Weeks34), d("2017-05-03"));
        assert_eq!(target_start(d("2017-04-18"), Horizon::Weeks56), d("2017-05-17"));
        // offsets differ by exactly 14 days
        let t34 = target_start(d("2013-11-05"), Horizon::Weeks34);
        let t56 = target_start(d("2013-11-05"), Horizon::Weeks56);
        assert_eq!(t56 - t34, chrono::Duration::days(14));
    }

    #[test]
    fn freshest_lag_invariant() {
        for h in [Horizon::Weeks34, Horizon::Weeks56] {
            assert_eq!(h.freshest_lag(), h.issue_to_target_offset() + 14);
        }
        assert_eq!(Horizon::Weeks34.freshest_lag(), 29);
        assert_eq!(Horizon::Weeks56.freshest_lag(), 43);
    }

    #[test]
    fn contest_grid_has_514_unique_points() {
        let grid = GridSpec::contest();
        assert_eq!(grid.len(), 514);
        let mut pts = grid.points().to_vec();
        pts.sort_unstable();
        pts.dedup();
        assert_eq!(pts.len(), 514);
        // canonical ordering: lat-major ascending then lon ascending
        assert_eq!(pts, grid.points());
        for &(lat, lon) in grid.points() {
            assert!((25..=50).contains(&lat));
            assert!((-125..=-93).contains(&lon));
        }
    }

    #[test]
    fn grid_rejects_duplicates() {
        assert!(GridSpec::from_points(vec![(40, -100), (40, -100)]).is_err());
    }
}
