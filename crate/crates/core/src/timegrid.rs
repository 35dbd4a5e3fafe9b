//! Calendar time hierarchy, atomic time ranges and minimal partitions.
//!
//! All instants are whole seconds since the Unix epoch, interpreted in UTC.
//! The calendar is Gregorian, quarters start in January, April, July and
//! October, and three-hour epochs start at 00:00 UTC.

use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Datelike, NaiveDate, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Seconds since 1970-01-01T00:00:00Z.
pub type Instant = i64;

/// 0001-01-01T00:00:00Z
pub const MIN_INSTANT: Instant = -62_135_596_800;
/// 9999-01-01T00:00:00Z
pub const MAX_INSTANT: Instant = 253_370_764_800;

const EPOCH_SECS: i64 = 3 * 3600;
const DAY_SECS: i64 = 86_400;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TimeError {
    #[error("instant {} is not aligned to a {level} boundary", format_instant(*.instant))]
    Misaligned { instant: Instant, level: Level },
    #[error("range start {start} must be before end {end}")]
    InvalidRange { start: Instant, end: Instant },
    #[error("instant {0} is outside the supported calendar (years 1 to 9998)")]
    OutOfBounds(Instant),
    #[error("time hierarchy must contain at least one level")]
    EmptyHierarchy,
    #[error("time hierarchy levels must be strictly increasing, got {0} after {1}")]
    UnorderedHierarchy(Level, Level),
    #[error("unknown time level `{0}` (expected epoch3h, day, month, quarter or year)")]
    UnknownLevel(String),
    #[error("cannot parse instant `{0}`: expected ISO-8601 / RFC 3339")]
    BadInstant(String),
}

/// One granularity of the calendar ladder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Level {
    #[serde(rename = "epoch3h")]
    Epoch3h,
    #[serde(rename = "day")]
    Day,
    #[serde(rename = "month")]
    Month,
    #[serde(rename = "quarter")]
    Quarter,
    #[serde(rename = "year")]
    Year,
}

impl Level {
    pub const ALL: [Level; 5] = [
        Level::Epoch3h,
        Level::Day,
        Level::Month,
        Level::Quarter,
        Level::Year,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Level::Epoch3h => "epoch3h",
            Level::Day => "day",
            Level::Month => "month",
            Level::Quarter => "quarter",
            Level::Year => "year",
        }
    }

    pub(crate) fn code(self) -> u8 {
        self as u8
    }

    pub(crate) fn from_code(code: u8) -> Option<Level> {
        Level::ALL.get(code as usize).copied()
    }

    fn months(self) -> Option<i64> {
        match self {
            Level::Epoch3h | Level::Day => None,
            Level::Month => Some(1),
            Level::Quarter => Some(3),
            Level::Year => Some(12),
        }
    }

    /// Start of the unit of this level that contains `t`.
    pub fn floor(self, t: Instant) -> Instant {
        match self {
            Level::Epoch3h => t - t.rem_euclid(EPOCH_SECS),
            Level::Day => t - t.rem_euclid(DAY_SECS),
            _ => {
                let span = self.months().unwrap_or(1);
                let index = month_index(t);
                month_start(index - index.rem_euclid(span))
            }
        }
    }

    /// End (exclusive) of the unit of this level that contains `t`.
    pub fn ceil_unit_end(self, t: Instant) -> Instant {
        let start = self.floor(t);
        match self {
            Level::Epoch3h => start + EPOCH_SECS,
            Level::Day => start + DAY_SECS,
            _ => month_start(month_index(start) + self.months().unwrap_or(1)),
        }
    }

    pub fn is_boundary(self, t: Instant) -> bool {
        self.floor(t) == t
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Level {
    type Err = TimeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Level::ALL
            .into_iter()
            .find(|l| l.name() == s)
            .ok_or_else(|| TimeError::UnknownLevel(s.to_string()))
    }
}

fn date_of(t: Instant) -> NaiveDate {
    DateTime::<Utc>::from_timestamp(t, 0)
        .expect("instant within chrono range")
        .date_naive()
}

/// Months since year 0, January.
fn month_index(t: Instant) -> i64 {
    let d = date_of(t);
    d.year() as i64 * 12 + d.month0() as i64
}

fn month_start(index: i64) -> Instant {
    let year = index.div_euclid(12) as i32;
    let month = index.rem_euclid(12) as u32 + 1;
    NaiveDate::from_ymd_opt(year, month, 1)
        .expect("valid month start")
        .and_hms_opt(0, 0, 0)
        .expect("midnight")
        .and_utc()
        .timestamp()
}

/// Ordered ladder of granularities from finest to coarsest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Level>", into = "Vec<Level>")]
pub struct TimeHierarchy {
    levels: Vec<Level>,
}

impl TimeHierarchy {
    pub fn new(levels: Vec<Level>) -> Result<Self, TimeError> {
        if levels.is_empty() {
            return Err(TimeError::EmptyHierarchy);
        }
        for pair in levels.windows(2) {
            if pair[1] <= pair[0] {
                return Err(TimeError::UnorderedHierarchy(pair[1], pair[0]));
            }
        }
        Ok(Self { levels })
    }

    pub fn from_names<S: AsRef<str>>(names: &[S]) -> Result<Self, TimeError> {
        let levels = names
            .iter()
            .map(|n| n.as_ref().parse())
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(levels)
    }

    pub fn levels(&self) -> &[Level] {
        &self.levels
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn finest(&self) -> Level {
        self.levels[0]
    }

    pub fn level(&self, index: usize) -> Option<Level> {
        self.levels.get(index).copied()
    }
}

impl Default for TimeHierarchy {
    fn default() -> Self {
        Self {
            levels: Level::ALL.to_vec(),
        }
    }
}

impl TryFrom<Vec<Level>> for TimeHierarchy {
    type Error = TimeError;

    fn try_from(levels: Vec<Level>) -> Result<Self, Self::Error> {
        Self::new(levels)
    }
}

impl From<TimeHierarchy> for Vec<Level> {
    fn from(h: TimeHierarchy) -> Self {
        h.levels
    }
}

/// Half-open interval `[start, end)` of UTC instants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TimeRange {
    start: Instant,
    end: Instant,
}

impl TimeRange {
    pub fn new(start: Instant, end: Instant) -> Result<Self, TimeError> {
        for t in [start, end] {
            if !(MIN_INSTANT..=MAX_INSTANT).contains(&t) {
                return Err(TimeError::OutOfBounds(t));
            }
        }
        if start >= end {
            return Err(TimeError::InvalidRange { start, end });
        }
        Ok(Self { start, end })
    }

    pub fn start(&self) -> Instant {
        self.start
    }

    pub fn end(&self) -> Instant {
        self.end
    }

    pub fn contains(&self, t: Instant) -> bool {
        self.start <= t && t < self.end
    }

    /// Fails unless both endpoints sit on a boundary of the finest level.
    pub fn check_aligned(&self, h: &TimeHierarchy) -> Result<(), TimeError> {
        let finest = h.finest();
        for instant in [self.start, self.end] {
            if !finest.is_boundary(instant) {
                return Err(TimeError::Misaligned {
                    instant,
                    level: finest,
                });
            }
        }
        Ok(())
    }
}

impl fmt::Display for TimeRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "({}, {})",
            format_instant(self.start),
            format_instant(self.end)
        )
    }
}

/// A range covering exactly one unit of some hierarchy level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct AtomicTimeRange {
    range: TimeRange,
    level_index: usize,
    level: Level,
}

impl AtomicTimeRange {
    /// Builds an atomic range, checking that `range` is exactly one unit of
    /// the hierarchy level at `level_index`.
    pub fn new(range: TimeRange, level_index: usize, h: &TimeHierarchy) -> Result<Self, TimeError> {
        let level = h.level(level_index).ok_or(TimeError::EmptyHierarchy)?;
        if !level.is_boundary(range.start) {
            return Err(TimeError::Misaligned {
                instant: range.start,
                level,
            });
        }
        if level.ceil_unit_end(range.start) != range.end {
            return Err(TimeError::Misaligned {
                instant: range.end,
                level,
            });
        }
        Ok(Self {
            range,
            level_index,
            level,
        })
    }

    pub fn range(&self) -> TimeRange {
        self.range
    }

    pub fn start(&self) -> Instant {
        self.range.start
    }

    pub fn end(&self) -> Instant {
        self.range.end
    }

    pub fn level_index(&self) -> usize {
        self.level_index
    }

    pub fn level(&self) -> Level {
        self.level
    }
}

impl fmt::Display for AtomicTimeRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} [{}]", self.range, self.level)
    }
}

/// Returns the index of the coarsest level that `range` spans exactly, if any.
pub fn is_atomic(range: TimeRange, h: &TimeHierarchy) -> Result<Option<usize>, TimeError> {
    range.check_aligned(h)?;
    Ok(coarsest_unit_at(range.start, range.end, h)
        .filter(|(_, end)| *end == range.end)
        .map(|(idx, _)| idx))
}

/// Coarsest level whose unit starts at `cursor` and ends no later than `limit`.
fn coarsest_unit_at(cursor: Instant, limit: Instant, h: &TimeHierarchy) -> Option<(usize, Instant)> {
    h.levels.iter().enumerate().rev().find_map(|(idx, level)| {
        if !level.is_boundary(cursor) {
            return None;
        }
        let end = level.ceil_unit_end(cursor);
        (end <= limit).then_some((idx, end))
    })
}

/// Splits an aligned range into the fewest atomic ranges, left to right.
///
/// Greedy: at each cursor take the coarsest unit that starts there and still
/// fits. The calendar levels nest, so the chosen units are exactly the maximal
/// units contained in the range, which is the unique minimum.
pub fn minimal_partition(range: TimeRange, h: &TimeHierarchy) -> Result<Vec<AtomicTimeRange>, TimeError> {
    range.check_aligned(h)?;
    let mut parts = Vec::new();
    let mut cursor = range.start;
    while cursor < range.end {
        let (level_index, end) = coarsest_unit_at(cursor, range.end, h)
            .expect("finest level always fits between aligned instants");
        parts.push(AtomicTimeRange {
            range: TimeRange { start: cursor, end },
            level_index,
            level: h.levels[level_index],
        });
        cursor = end;
    }
    Ok(parts)
}

/// Clips `range` to the finest-level epochs that have fully elapsed at `now`.
///
/// Returns `None` when no complete epoch remains inside the range.
pub fn truncate_to_completed(range: TimeRange, now: Instant, h: &TimeHierarchy) -> Option<TimeRange> {
    let completed = h.finest().floor(now.clamp(MIN_INSTANT, MAX_INSTANT));
    let end = range.end.min(completed);
    (range.start < end).then_some(TimeRange {
        start: range.start,
        end,
    })
}

pub fn parse_instant(s: &str) -> Result<Instant, TimeError> {
    let parsed = DateTime::parse_from_rfc3339(s).map_err(|_| TimeError::BadInstant(s.to_string()))?;
    if parsed.timestamp_subsec_nanos() != 0 {
        return Err(TimeError::BadInstant(s.to_string()));
    }
    let t = parsed.timestamp();
    if !(MIN_INSTANT..=MAX_INSTANT).contains(&t) {
        return Err(TimeError::OutOfBounds(t));
    }
    Ok(t)
}

pub fn format_instant(t: Instant) -> String {
    match DateTime::<Utc>::from_timestamp(t, 0) {
        Some(dt) => dt.to_rfc3339_opts(SecondsFormat::Secs, true),
        None => t.to_string(),
    }
}
