//! Time schedules for grants and site policy windows.
//!
//! All clock arithmetic uses integer UTC seconds; weekly schedules are
//! evaluated against the civil UTC calendar (no leap-second handling).
//! Interval bounds are half-open everywhere: a window is active at its start
//! instant and inactive at its end instant.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::canonical::{DocError, Value};

pub const SECONDS_PER_DAY: i64 = 86_400;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ScheduleError {
    #[error("window start must precede end")]
    EmptyWindow,
    #[error("weekly start minute must precede end minute (0..=1440)")]
    BadMinutes,
    #[error("weekly schedule needs at least one day")]
    NoDays,
    #[error("union must not be empty")]
    EmptyUnion,
    #[error("unknown day name `{0}`")]
    UnknownDay(String),
    #[error("unknown schedule kind `{0}`")]
    UnknownKind(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Weekday {
    Mon,
    Tue,
    Wed,
    Thu,
    Fri,
    Sat,
    Sun,
}

impl Weekday {
    pub const ALL: [Weekday; 7] = [
        Weekday::Mon,
        Weekday::Tue,
        Weekday::Wed,
        Weekday::Thu,
        Weekday::Fri,
        Weekday::Sat,
        Weekday::Sun,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Weekday::Mon => "Mon",
            Weekday::Tue => "Tue",
            Weekday::Wed => "Wed",
            Weekday::Thu => "Thu",
            Weekday::Fri => "Fri",
            Weekday::Sat => "Sat",
            Weekday::Sun => "Sun",
        }
    }

    pub fn parse(name: &str) -> Result<Weekday, ScheduleError> {
        Weekday::ALL
            .into_iter()
            .find(|d| d.name().eq_ignore_ascii_case(name))
            .ok_or_else(|| ScheduleError::UnknownDay(name.to_string()))
    }

    /// Civil UTC day of week for a unix timestamp. The epoch fell on a
    /// Thursday, so an offset of 3 aligns Monday with index 0.
    pub fn of_timestamp(t: i64) -> Weekday {
        let days = t.div_euclid(SECONDS_PER_DAY);
        Weekday::ALL[(days + 3).rem_euclid(7) as usize]
    }
}

/// Minute within the civil UTC day of a timestamp, in `0..1440`.
pub fn minute_of_day(t: i64) -> u32 {
    (t.rem_euclid(SECONDS_PER_DAY) / 60) as u32
}

/// When a grant or policy window applies.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TimeSchedule {
    /// Unconditionally active.
    Always,
    /// Active in `[start, end)`.
    Window { start: i64, end: i64 },
    /// Active on the listed days between `start_minute` (inclusive) and
    /// `end_minute` (exclusive), both counted from UTC midnight.
    Weekly {
        days: BTreeSet<Weekday>,
        start_minute: u32,
        end_minute: u32,
    },
    /// Active whenever any member schedule is.
    Union(Vec<TimeSchedule>),
}

impl TimeSchedule {
    pub fn window(start: i64, end: i64) -> Result<Self, ScheduleError> {
        if start >= end {
            return Err(ScheduleError::EmptyWindow);
        }
        Ok(TimeSchedule::Window { start, end })
    }

    pub fn weekly(
        days: impl IntoIterator<Item = Weekday>,
        start_minute: u32,
        end_minute: u32,
    ) -> Result<Self, ScheduleError> {
        let days: BTreeSet<Weekday> = days.into_iter().collect();
        if days.is_empty() {
            return Err(ScheduleError::NoDays);
        }
        if start_minute >= end_minute || end_minute > 1440 {
            return Err(ScheduleError::BadMinutes);
        }
        Ok(TimeSchedule::Weekly {
            days,
            start_minute,
            end_minute,
        })
    }

    pub fn union(members: Vec<TimeSchedule>) -> Result<Self, ScheduleError> {
        if members.is_empty() {
            return Err(ScheduleError::EmptyUnion);
        }
        Ok(TimeSchedule::Union(members))
    }

    /// Is the schedule active at instant `t`?
    pub fn is_active_at(&self, t: i64) -> bool {
        match self {
            TimeSchedule::Always => true,
            TimeSchedule::Window { start, end } => *start <= t && t < *end,
            TimeSchedule::Weekly {
                days,
                start_minute,
                end_minute,
            } => {
                let minute = minute_of_day(t);
                days.contains(&Weekday::of_timestamp(t))
                    && *start_minute <= minute
                    && minute < *end_minute
            }
            TimeSchedule::Union(members) => members.iter().any(|s| s.is_active_at(t)),
        }
    }

    pub fn to_doc(&self) -> Value {
        match self {
            TimeSchedule::Always => Value::map().field_str("kind", "always").build(),
            TimeSchedule::Window { start, end } => Value::map()
                .field_str("kind", "window")
                .field_int("start", *start)
                .field_int("end", *end)
                .build(),
            TimeSchedule::Weekly {
                days,
                start_minute,
                end_minute,
            } => Value::map()
                .field_str("kind", "weekly")
                .field(
                    "days",
                    Value::Array(days.iter().map(|d| Value::str(d.name())).collect()),
                )
                .field_int("start_minute", i64::from(*start_minute))
                .field_int("end_minute", i64::from(*end_minute))
                .build(),
            TimeSchedule::Union(members) => Value::map()
                .field_str("kind", "union")
                .field(
                    "members",
                    Value::Array(members.iter().map(TimeSchedule::to_doc).collect()),
                )
                .build(),
        }
    }

    pub fn from_doc(doc: &Value) -> Result<Self, DocError> {
        let bad = |detail: String| DocError::OutOfRange {
            field: "schedule".into(),
            detail,
        };
        match doc.get_str("kind")? {
            "always" => Ok(TimeSchedule::Always),
            "window" => TimeSchedule::window(doc.get_int("start")?, doc.get_int("end")?)
                .map_err(|e| bad(e.to_string())),
            "weekly" => {
                let mut days = Vec::new();
                for d in doc.get_array("days")? {
                    days.push(Weekday::parse(d.str_value()?).map_err(|e| bad(e.to_string()))?);
                }
                TimeSchedule::weekly(
                    days,
                    doc.get_u32("start_minute")?,
                    doc.get_u32("end_minute")?,
                )
                .map_err(|e| bad(e.to_string()))
            }
            "union" => {
                let mut members = Vec::new();
                for m in doc.get_array("members")? {
                    members.push(TimeSchedule::from_doc(m)?);
                }
                TimeSchedule::union(members).map_err(|e| bad(e.to_string()))
            }
            other => Err(bad(
                ScheduleError::UnknownKind(other.to_string()).to_string()
            )),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::{Datelike, TimeZone, Timelike, Utc};
    use rand::{Rng, SeedableRng};

    fn ts(text: &str) -> i64 {
        chrono::DateTime::parse_from_rfc3339(text)
            .unwrap()
            .timestamp()
    }

    fn working_hours() -> TimeSchedule {
        // Mon-Fri 09:00-17:00
        TimeSchedule::weekly(
            [
                Weekday::Mon,
                Weekday::Tue,
                Weekday::Wed,
                Weekday::Thu,
                Weekday::Fri,
            ],
            540,
            1020,
        )
        .unwrap()
    }

    #[test]
    fn weekly_working_hours() {
        let s = working_hours();
        // a Wednesday morning
        assert!(s.is_active_at(ts("2003-03-26T10:00:00Z")));
        // the following Saturday
        assert!(!s.is_active_at(ts("2003-03-29T10:00:00Z")));
        // Wednesday but out of hours
        assert!(!s.is_active_at(ts("2003-03-26T08:59:59Z")));
        // inclusive start, exclusive end
        assert!(s.is_active_at(ts("2003-03-26T09:00:00Z")));
        assert!(!s.is_active_at(ts("2003-03-26T17:00:00Z")));
    }

    #[test]
    fn window_is_half_open() {
        let s = TimeSchedule::window(100, 200).unwrap();
        assert!(s.is_active_at(100));
        assert!(s.is_active_at(199));
        assert!(!s.is_active_at(200));
        assert!(!s.is_active_at(99));
    }

    #[test]
    fn union_any_member() {
        let s = TimeSchedule::union(vec![
            TimeSchedule::window(0, 10).unwrap(),
            TimeSchedule::window(20, 30).unwrap(),
        ])
        .unwrap();
        assert!(s.is_active_at(5));
        assert!(!s.is_active_at(15));
        assert!(s.is_active_at(25));
    }

    #[test]
    fn constructor_validation() {
        assert_eq!(
            TimeSchedule::window(5, 5).unwrap_err(),
            ScheduleError::EmptyWindow
        );
        assert_eq!(
            TimeSchedule::weekly([Weekday::Mon], 600, 600).unwrap_err(),
            ScheduleError::BadMinutes
        );
        assert_eq!(
            TimeSchedule::weekly([], 0, 60).unwrap_err(),
            ScheduleError::NoDays
        );
        assert_eq!(
            TimeSchedule::union(vec![]).unwrap_err(),
            ScheduleError::EmptyUnion
        );
    }

    #[test]
    fn doc_roundtrip() {
        let s = TimeSchedule::union(vec![working_hours(), TimeSchedule::window(10, 20).unwrap()])
            .unwrap();
        let doc = s.to_doc();
        let reparsed = Value::parse(&doc.to_bytes()).unwrap();
        assert_eq!(TimeSchedule::from_doc(&reparsed).unwrap(), s);
    }

    /// Independent calendar oracle: chrono's civil calendar.
    fn oracle_active(days: &BTreeSet<Weekday>, start_m: u32, end_m: u32, t: i64) -> bool {
        let dt = Utc.timestamp_opt(t, 0).unwrap();
        let day = match dt.weekday() {
            chrono::Weekday::Mon => Weekday::Mon,
            chrono::Weekday::Tue => Weekday::Tue,
            chrono::Weekday::Wed => Weekday::Wed,
            chrono::Weekday::Thu => Weekday::Thu,
            chrono::Weekday::Fri => Weekday::Fri,
            chrono::Weekday::Sat => Weekday::Sat,
            chrono::Weekday::Sun => Weekday::Sun,
        };
        let minute = dt.hour() * 60 + dt.minute();
        days.contains(&day) && start_m <= minute && minute < end_m
    }

    #[test]
    fn weekly_agrees_with_calendar_oracle_over_a_week() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x5eed);
        for _ in 0..20 {
            let days: BTreeSet<Weekday> = Weekday::ALL
                .into_iter()
                .filter(|_| rng.random_bool(0.5))
                .collect();
            if days.is_empty() {
                continue;
            }
            let start_m = rng.random_range(0..1439);
            let end_m = rng.random_range(start_m + 1..=1440);
            let schedule = TimeSchedule::weekly(days.clone(), start_m, end_m).unwrap();
            // one full week, minute by minute, from an arbitrary Tuesday
            let base = ts("2004-06-01T00:00:00Z");
            for minute in 0..(7 * 24 * 60) {
                let t = base + minute * 60;
                assert_eq!(
                    schedule.is_active_at(t),
                    oracle_active(&days, start_m, end_m, t),
                    "disagreement at t={t} days={days:?} window={start_m}..{end_m}"
                );
            }
        }
    }

    /// Oracle over full schedule trees, the weekly case judged by chrono.
    fn oracle_schedule(s: &TimeSchedule, t: i64) -> bool {
        match s {
            TimeSchedule::Always => true,
            TimeSchedule::Window { start, end } => *start <= t && t < *end,
            TimeSchedule::Weekly {
                days,
                start_minute,
                end_minute,
            } => oracle_active(days, *start_minute, *end_minute, t),
            TimeSchedule::Union(members) => members.iter().any(|m| oracle_schedule(m, t)),
        }
    }

    #[test]
    fn union_agrees_with_oracle_over_a_week() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0xcafe);
        let base = ts("2004-06-01T00:00:00Z");
        for _ in 0..12 {
            let mut members = Vec::new();
            for _ in 0..rng.random_range(1..=3usize) {
                if rng.random_bool(0.5) {
                    let days: BTreeSet<Weekday> = Weekday::ALL
                        .into_iter()
                        .filter(|_| rng.random_bool(0.4))
                        .collect();
                    let days = if days.is_empty() {
                        BTreeSet::from([Weekday::Thu])
                    } else {
                        days
                    };
                    let start_m = rng.random_range(0..1439);
                    let end_m = rng.random_range(start_m + 1..=1440);
                    members.push(TimeSchedule::weekly(days, start_m, end_m).unwrap());
                } else {
                    let start = base + rng.random_range(0..6 * 86_400);
                    members.push(
                        TimeSchedule::window(start, start + rng.random_range(600..86_400)).unwrap(),
                    );
                }
            }
            let schedule = TimeSchedule::union(members).unwrap();
            for minute in 0..(7 * 24 * 60) {
                let t = base + minute * 60;
                assert_eq!(
                    schedule.is_active_at(t),
                    oracle_schedule(&schedule, t),
                    "union disagreement at t={t} schedule={schedule:?}"
                );
            }
        }
    }

    #[test]
    fn weekday_of_timestamp_matches_chrono_across_years() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        for _ in 0..2000 {
            let t: i64 = rng.random_range(0..4_102_444_800); // 1970..2100
            let expected = Utc
                .timestamp_opt(t, 0)
                .unwrap()
                .weekday()
                .num_days_from_monday();
            assert_eq!(Weekday::of_timestamp(t) as u32, expected, "t={t}");
        }
    }
}
