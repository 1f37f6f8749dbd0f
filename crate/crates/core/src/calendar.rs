//! Calendar primitives: a compact day type and the six aggregation granularities.
//!
//! Dates are stored as days since 1970-01-01 so that bucketing is integer
//! arithmetic. Every granularity maps a day onto a global, monotonically
//! increasing period ordinal: later days never get a smaller index.

use std::fmt;
use std::str::FromStr;

use chrono::{Datelike, Days, NaiveDate};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

const EPOCH: NaiveDate = match NaiveDate::from_ymd_opt(1970, 1, 1) {
    Some(d) => d,
    None => unreachable!(),
};

/// A calendar day, stored as days since the Unix epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Day(i32);

impl Day {
    pub fn from_days_since_epoch(days: i32) -> Self {
        Day(days)
    }

    pub fn days_since_epoch(self) -> i32 {
        self.0
    }

    pub fn from_ymd(year: i32, month: u32, day: u32) -> Option<Self> {
        NaiveDate::from_ymd_opt(year, month, day).map(Self::from)
    }

    pub fn to_naive(self) -> NaiveDate {
        if self.0 >= 0 {
            EPOCH + Days::new(self.0 as u64)
        } else {
            EPOCH - Days::new(self.0.unsigned_abs() as u64)
        }
    }

    pub fn add_days(self, n: i32) -> Self {
        Day(self.0 + n)
    }
}

impl From<NaiveDate> for Day {
    fn from(date: NaiveDate) -> Self {
        Day((date - EPOCH).num_days() as i32)
    }
}

impl fmt::Display for Day {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_naive().format("%Y-%m-%d"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid ISO-8601 date {0:?}")]
pub struct ParseDayError(pub String);

impl FromStr for Day {
    type Err = ParseDayError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d")
            .map(Day::from)
            .map_err(|_| ParseDayError(s.to_string()))
    }
}

impl Serialize for Day {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Day {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Aggregation period length.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    Day,
    Week,
    Month,
    Quarter,
    HalfYear,
    Year,
}

impl Granularity {
    pub const ALL: [Granularity; 6] = [
        Granularity::Day,
        Granularity::Week,
        Granularity::Month,
        Granularity::Quarter,
        Granularity::HalfYear,
        Granularity::Year,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Granularity::Day => "day",
            Granularity::Week => "week",
            Granularity::Month => "month",
            Granularity::Quarter => "quarter",
            Granularity::HalfYear => "half_year",
            Granularity::Year => "year",
        }
    }

    /// Number of months per period for the calendar-month based levels.
    fn months(self) -> Option<i64> {
        match self {
            Granularity::Month => Some(1),
            Granularity::Quarter => Some(3),
            Granularity::HalfYear => Some(6),
            Granularity::Year => Some(12),
            Granularity::Day | Granularity::Week => None,
        }
    }

    /// Global ordinal of the period containing `day`.
    ///
    /// Weeks follow ISO numbering (Monday start); 1970-01-01 was a Thursday,
    /// so shifting by three days aligns the ordinal with ISO week boundaries.
    pub fn period_index(self, day: Day) -> i64 {
        let d = i64::from(day.0);
        match self {
            Granularity::Day => d,
            Granularity::Week => (d + 3).div_euclid(7),
            _ => {
                let date = day.to_naive();
                let month_ordinal = i64::from(date.year()) * 12 + i64::from(date.month0());
                month_ordinal.div_euclid(self.months().unwrap_or(1))
            }
        }
    }

    /// First day of period `index`.
    pub fn period_start(self, index: i64) -> Day {
        match self {
            Granularity::Day => Day(index as i32),
            Granularity::Week => Day((index * 7 - 3) as i32),
            _ => {
                let month_ordinal = index * self.months().unwrap_or(1);
                let year = month_ordinal.div_euclid(12) as i32;
                let month = month_ordinal.rem_euclid(12) as u32 + 1;
                Day::from_ymd(year, month, 1).expect("first of month is always valid")
            }
        }
    }

    /// Last day of period `index`.
    pub fn period_end(self, index: i64) -> Day {
        self.period_start(index + 1).add_days(-1)
    }
}

impl fmt::Display for Granularity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown granularity {0:?} (expected day, week, month, quarter, half_year or year)")]
pub struct ParseGranularityError(pub String);

impl FromStr for Granularity {
    type Err = ParseGranularityError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "day" | "daily" => Ok(Granularity::Day),
            "week" | "weekly" => Ok(Granularity::Week),
            "month" | "monthly" => Ok(Granularity::Month),
            "quarter" | "3m" => Ok(Granularity::Quarter),
            "half_year" | "halfyear" | "6m" => Ok(Granularity::HalfYear),
            "year" | "yearly" | "12m" => Ok(Granularity::Year),
            _ => Err(ParseGranularityError(s.to_string())),
        }
    }
}
