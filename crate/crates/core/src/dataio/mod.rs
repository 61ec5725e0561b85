//! Ingestion of meter CSVs and hourly weather, resampling onto the hourly
//! grid, aggregation across apartments and the weather join.

mod aligned;
mod timestamp;
mod weather;
pub mod synth;

use std::io::Read;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Duration, Timelike, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use aligned::{align, AlignReport, AlignedDataset, AlignedRow};
pub use timestamp::{format_timestamp, parse_timestamp, DEFAULT_UTC_OFFSET_SECS};
pub use weather::{load_weather, read_weather, write_weather, WeatherRow, WeatherTable, WEATHER_COLUMNS};

pub const HOUR_SECS: i64 = 3600;

/// Default longest gap run (in samples) that `fill_gaps` interpolates.
pub const DEFAULT_MAX_FILL_RUN: usize = 3;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("{malformed} of {total} rows malformed, exceeding half of the file")]
    TooManyMalformed { malformed: usize, total: usize },
    #[error("file contains no usable rows")]
    Empty,
    #[error("step of {0} s does not divide one hour")]
    StepNotHourDivisor(i64),
    #[error("series are misaligned: {0}")]
    Misaligned(String),
    #[error("consumption and weather share no hours")]
    EmptyJoin,
    #[error("weather header mismatch: expected columns {expected:?}, found {found:?}")]
    BadHeader {
        expected: Vec<String>,
        found: Vec<String>,
    },
    #[error("weather row {row}: {reason}")]
    BadWeatherRow { row: usize, reason: String },
    #[error("weather timestamps not strictly increasing at row {0}")]
    WeatherOrder(usize),
}

/// Native metering resolution of a consumption file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeterFormat {
    PerMinute,
    PerQuarterHour,
}

impl MeterFormat {
    pub fn step_secs(self) -> i64 {
        match self {
            MeterFormat::PerMinute => 60,
            MeterFormat::PerQuarterHour => 900,
        }
    }
}

impl std::str::FromStr for MeterFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "per_minute" | "minute" | "1min" => Ok(MeterFormat::PerMinute),
            "per_quarter_hour" | "quarter_hour" | "15min" => Ok(MeterFormat::PerQuarterHour),
            other => Err(format!("unknown meter format `{other}`")),
        }
    }
}

/// Uniformly sampled series; `None` marks a gap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    pub start: DateTime<Utc>,
    pub step_secs: i64,
    pub values: Vec<Option<f64>>,
}

impl TimeSeries {
    pub fn new(start: DateTime<Utc>, step_secs: i64, values: Vec<Option<f64>>) -> Self {
        assert!(step_secs > 0, "step must be positive");
        Self {
            start,
            step_secs,
            values,
        }
    }

    /// Gap-free series from plain values.
    pub fn from_values(start: DateTime<Utc>, step_secs: i64, values: &[f64]) -> Self {
        Self::new(start, step_secs, values.iter().copied().map(Some).collect())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn time_at(&self, i: usize) -> DateTime<Utc> {
        self.start + Duration::seconds(self.step_secs * i as i64)
    }

    /// Exclusive end of the covered span.
    pub fn end(&self) -> DateTime<Utc> {
        self.time_at(self.len())
    }

    pub fn index_of(&self, t: DateTime<Utc>) -> Option<usize> {
        let offset = (t - self.start).num_seconds();
        if offset < 0 || offset % self.step_secs != 0 {
            return None;
        }
        let idx = (offset / self.step_secs) as usize;
        (idx < self.len()).then_some(idx)
    }

    pub fn gap_count(&self) -> usize {
        self.values.iter().filter(|v| v.is_none()).count()
    }

    /// All values, or `None` if any sample is missing.
    pub fn dense(&self) -> Option<Vec<f64>> {
        self.values.iter().copied().collect()
    }

    fn same_grid(&self, other: &TimeSeries) -> bool {
        self.start == other.start && self.step_secs == other.step_secs && self.len() == other.len()
    }
}

/// Parsing statistics for one consumption file.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadReport {
    pub rows: usize,
    pub parsed: usize,
    pub malformed: usize,
    pub negative: usize,
    pub off_grid: usize,
    pub duplicates: usize,
    pub gaps: usize,
}

pub fn load_consumption(
    path: impl AsRef<Path>,
    format: MeterFormat,
    utc_offset_secs: i32,
) -> Result<(TimeSeries, LoadReport), DataError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_consumption(file, format, utc_offset_secs)
}

/// Parses `timestamp,power_kW` rows. A header line is optional.
///
/// Negative readings become gaps. Rows that cannot be parsed, fall off the
/// metering grid, or repeat a timestamp count as malformed.
pub fn read_consumption<R: Read>(
    reader: R,
    format: MeterFormat,
    utc_offset_secs: i32,
) -> Result<(TimeSeries, LoadReport), DataError> {
    let step = format.step_secs();
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let mut report = LoadReport::default();
    let mut parsed: Vec<(DateTime<Utc>, Option<f64>)> = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        let ts = record.get(0).and_then(|s| parse_timestamp(s, utc_offset_secs));
        let power = record.get(1).and_then(|s| s.parse::<f64>().ok());
        match (ts, power) {
            (Some(ts), Some(p)) if p.is_finite() => {
                report.rows += 1;
                if p < 0.0 {
                    report.negative += 1;
                    parsed.push((ts, None));
                } else {
                    parsed.push((ts, Some(p)));
                }
            }
            // a non-timestamp first line is a header
            (None, _) if i == 0 => {}
            _ => {
                report.rows += 1;
                report.malformed += 1;
            }
        }
    }

    let Some(start) = parsed.iter().map(|(t, _)| *t).min() else {
        if report.malformed > 0 {
            return Err(DataError::TooManyMalformed {
                malformed: report.malformed,
                total: report.rows,
            });
        }
        return Err(DataError::Empty);
    };
    let end = parsed.iter().map(|(t, _)| *t).max().unwrap_or(start);
    let len = ((end - start).num_seconds() / step) as usize + 1;
    let mut values: Vec<Option<f64>> = vec![None; len];
    let mut seen = vec![false; len];
    for (t, v) in parsed {
        let offset = (t - start).num_seconds();
        if offset % step != 0 {
            report.off_grid += 1;
            report.malformed += 1;
            continue;
        }
        let idx = (offset / step) as usize;
        if seen[idx] {
            report.duplicates += 1;
            report.malformed += 1;
            continue;
        }
        seen[idx] = true;
        values[idx] = v;
        if v.is_some() {
            report.parsed += 1;
        }
    }
    if report.malformed * 2 > report.rows {
        return Err(DataError::TooManyMalformed {
            malformed: report.malformed,
            total: report.rows,
        });
    }
    let series = TimeSeries::new(start, step, values);
    report.gaps = series.gap_count();
    Ok((series, report))
}

/// Writes `timestamp,power` rows; gaps are skipped.
pub fn write_consumption<W: std::io::Write>(writer: W, series: &TimeSeries) -> Result<(), DataError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["timestamp", "power"])?;
    for (i, v) in series.values.iter().enumerate() {
        if let Some(v) = v {
            w.write_record([format_timestamp(series.time_at(i)), v.to_string()])?;
        }
    }
    w.flush().map_err(|source| DataError::Io {
        path: PathBuf::from("<consumption writer>"),
        source,
    })?;
    Ok(())
}

/// Hourly means of present sub-hour readings, on UTC hour boundaries.
pub fn resample_hourly(s: &TimeSeries) -> Result<TimeSeries, DataError> {
    if s.step_secs <= 0 || HOUR_SECS % s.step_secs != 0 {
        return Err(DataError::StepNotHourDivisor(s.step_secs));
    }
    let hour_start = truncate_to_hour(s.start);
    if s.is_empty() {
        return Ok(TimeSeries::new(hour_start, HOUR_SECS, Vec::new()));
    }
    let bucket_of = |i: usize| ((s.time_at(i) - hour_start).num_seconds() / HOUR_SECS) as usize;
    let n_hours = bucket_of(s.len() - 1) + 1;
    let mut sums = vec![0.0; n_hours];
    let mut counts = vec![0usize; n_hours];
    for (i, v) in s.values.iter().enumerate() {
        if let Some(v) = v {
            let b = bucket_of(i);
            sums[b] += v;
            counts[b] += 1;
        }
    }
    let values = sums
        .into_iter()
        .zip(counts)
        .map(|(sum, n)| (n > 0).then(|| sum / n as f64))
        .collect();
    Ok(TimeSeries::new(hour_start, HOUR_SECS, values))
}

/// Pointwise sum; a gap in any input is a gap in the result.
pub fn aggregate(series: &[TimeSeries]) -> Result<TimeSeries, DataError> {
    let first = series
        .first()
        .ok_or_else(|| DataError::Misaligned("no series to aggregate".into()))?;
    let mut values = first.values.clone();
    for (k, s) in series.iter().enumerate().skip(1) {
        if !first.same_grid(s) {
            return Err(DataError::Misaligned(format!(
                "series {k} has start {} step {} len {}, expected start {} step {} len {}",
                s.start,
                s.step_secs,
                s.len(),
                first.start,
                first.step_secs,
                first.len()
            )));
        }
        for (acc, v) in values.iter_mut().zip(&s.values) {
            *acc = match (*acc, v) {
                (Some(a), Some(b)) => Some(a + b),
                _ => None,
            };
        }
    }
    Ok(TimeSeries::new(first.start, first.step_secs, values))
}

/// Linearly interpolates interior gap runs no longer than `max_run`.
pub fn fill_gaps(s: &TimeSeries, max_run: usize) -> TimeSeries {
    let mut values = s.values.clone();
    let n = values.len();
    let mut i = 0;
    while i < n {
        if values[i].is_some() {
            i += 1;
            continue;
        }
        let run_start = i;
        while i < n && values[i].is_none() {
            i += 1;
        }
        let run_len = i - run_start;
        if run_start == 0 || i == n || run_len > max_run {
            continue;
        }
        let left = values[run_start - 1].expect("left neighbour present");
        let right = values[i].expect("right neighbour present");
        let span = (run_len + 1) as f64;
        for (k, v) in values[run_start..i].iter_mut().enumerate() {
            let w = (k + 1) as f64 / span;
            *v = Some(left + (right - left) * w);
        }
    }
    TimeSeries::new(s.start, s.step_secs, values)
}

pub(crate) fn truncate_to_hour(t: DateTime<Utc>) -> DateTime<Utc> {
    t.with_nanosecond(0)
        .and_then(|t| t.with_second(0))
        .and_then(|t| t.with_minute(0))
        .expect("valid hour truncation")
}
