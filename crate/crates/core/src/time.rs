//! Whole-hour timestamps in naive local civil time.
//!
//! Daylight-saving transitions are ignored: every calendar day has 24 hours.

use std::fmt;
use std::str::FromStr;

use chrono::{Datelike, NaiveDate, NaiveDateTime, NaiveTime, Timelike};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Hours elapsed since 1970-01-01 00:00 local civil time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct HourStamp(i64);

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum TimeError {
    #[error("invalid timestamp `{0}` (expected `YYYY-MM-DD HH:00`)")]
    Invalid(String),
    #[error("timestamp `{0}` is not on a whole hour")]
    NotWholeHour(String),
    #[error("hour {0} out of range 0..=23")]
    HourRange(i64),
}

fn epoch() -> NaiveDate {
    NaiveDate::from_ymd_opt(1970, 1, 1).unwrap()
}

impl HourStamp {
    pub const fn from_raw(hours: i64) -> Self {
        HourStamp(hours)
    }

    pub const fn raw(self) -> i64 {
        self.0
    }

    pub fn from_date_hour(date: NaiveDate, hour: u32) -> Result<Self, TimeError> {
        if hour > 23 {
            return Err(TimeError::HourRange(hour as i64));
        }
        let days = (date - epoch()).num_days();
        Ok(HourStamp(days * 24 + hour as i64))
    }

    pub fn from_ymdh(year: i32, month: u32, day: u32, hour: u32) -> Option<Self> {
        let date = NaiveDate::from_ymd_opt(year, month, day)?;
        Self::from_date_hour(date, hour).ok()
    }

    /// Start of the given calendar day.
    pub fn start_of(date: NaiveDate) -> Self {
        HourStamp((date - epoch()).num_days() * 24)
    }

    pub fn date(self) -> NaiveDate {
        epoch() + chrono::Duration::days(self.0.div_euclid(24))
    }

    pub fn hour(self) -> u32 {
        self.0.rem_euclid(24) as u32
    }

    pub fn day_of_year(self) -> u32 {
        self.date().ordinal()
    }

    /// Monday = 0 .. Sunday = 6.
    pub fn day_of_week(self) -> u32 {
        self.date().weekday().num_days_from_monday()
    }

    /// (year, month) of the calendar month containing this hour.
    pub fn month_key(self) -> (i32, u32) {
        let d = self.date();
        (d.year(), d.month())
    }

    pub fn plus_hours(self, h: i64) -> Self {
        HourStamp(self.0 + h)
    }

    pub fn hours_until(self, later: HourStamp) -> i64 {
        later.0 - self.0
    }

    pub fn to_datetime(self) -> NaiveDateTime {
        self.date().and_time(NaiveTime::from_hms_opt(self.hour(), 0, 0).unwrap())
    }

    pub fn from_datetime(dt: NaiveDateTime) -> Result<Self, TimeError> {
        if dt.minute() != 0 || dt.second() != 0 || dt.nanosecond() != 0 {
            return Err(TimeError::NotWholeHour(dt.to_string()));
        }
        Self::from_date_hour(dt.date(), dt.hour())
    }
}

impl fmt::Display for HourStamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {:02}:00", self.date().format("%Y-%m-%d"), self.hour())
    }
}

impl FromStr for HourStamp {
    type Err = TimeError;

    /// Accepts `YYYY-MM-DD HH:MM`, `YYYY-MM-DDTHH:MM[:SS]` and `YYYY-MM-DD HH:MM:SS`;
    /// minutes and seconds must be zero.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        const FORMATS: [&str; 4] = ["%Y-%m-%d %H:%M", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M", "%Y-%m-%dT%H:%M:%S"];
        for f in FORMATS {
            if let Ok(dt) = NaiveDateTime::parse_from_str(t, f) {
                return HourStamp::from_datetime(dt);
            }
        }
        Err(TimeError::Invalid(s.to_string()))
    }
}

impl Serialize for HourStamp {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for HourStamp {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Half-open `[start, end)` span of whole hours.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HourWindow {
    pub start: HourStamp,
    pub end: HourStamp,
}

impl HourWindow {
    pub fn new(start: HourStamp, end: HourStamp) -> Self {
        HourWindow { start, end }
    }

    /// Window covering whole days `[start_date, end_date)`.
    pub fn from_dates(start: NaiveDate, end: NaiveDate) -> Self {
        HourWindow::new(HourStamp::start_of(start), HourStamp::start_of(end))
    }

    pub fn contains(&self, t: HourStamp) -> bool {
        t >= self.start && t < self.end
    }

    pub fn len_hours(&self) -> u64 {
        self.start.hours_until(self.end).max(0) as u64
    }
}
