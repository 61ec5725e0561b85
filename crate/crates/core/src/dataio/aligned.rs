use std::io::{Read, Write};
use std::path::Path;

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};

use super::weather::{WeatherRow, NUMERIC_WEATHER_COLUMNS};
use super::{format_timestamp, parse_timestamp, DataError, TimeSeries, WeatherTable, HOUR_SECS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignedRow {
    pub time: DateTime<Utc>,
    /// kW
    pub consumption: f64,
    pub weather: WeatherRow,
}

/// Hourly consumption joined with weather. Rows are strictly increasing
/// whole hours; hours missing from either source are absent, so runs of
/// consecutive rows are what windowing may use.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AlignedDataset {
    rows: Vec<AlignedRow>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignReport {
    pub consumption_hours: usize,
    pub weather_rows: usize,
    pub aligned: usize,
    /// Present consumption hours with no weather row.
    pub dropped_consumption_hours: usize,
    /// Weather rows with no present consumption hour.
    pub dropped_weather_rows: usize,
}

impl AlignedDataset {
    pub fn new(rows: Vec<AlignedRow>) -> Result<Self, DataError> {
        for (i, w) in rows.windows(2).enumerate() {
            let step = (w[1].time - w[0].time).num_seconds();
            if step <= 0 || step % HOUR_SECS != 0 {
                return Err(DataError::Misaligned(format!(
                    "row {} at {} does not follow {} on the hourly grid",
                    i + 1,
                    w[1].time,
                    w[0].time
                )));
            }
        }
        if rows.iter().any(|r| !r.consumption.is_finite() || r.consumption < 0.0) {
            return Err(DataError::Misaligned("consumption must be finite and non-negative".into()));
        }
        Ok(Self { rows })
    }

    pub fn rows(&self) -> &[AlignedRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn start(&self) -> Option<DateTime<Utc>> {
        self.rows.first().map(|r| r.time)
    }

    /// Exclusive end: one hour after the last row.
    pub fn end(&self) -> Option<DateTime<Utc>> {
        self.rows.last().map(|r| r.time + Duration::hours(1))
    }

    pub fn position(&self, t: DateTime<Utc>) -> Option<usize> {
        self.rows.binary_search_by(|r| r.time.cmp(&t)).ok()
    }

    pub fn get(&self, t: DateTime<Utc>) -> Option<&AlignedRow> {
        self.position(t).map(|i| &self.rows[i])
    }

    /// Hourly consumption over `[start, end)` with absent hours as gaps.
    pub fn consumption_series(&self) -> TimeSeries {
        let Some(start) = self.start() else {
            return TimeSeries::new(DateTime::<Utc>::UNIX_EPOCH, HOUR_SECS, Vec::new());
        };
        let len = ((self.end().unwrap() - start).num_seconds() / HOUR_SECS) as usize;
        let mut values = vec![None; len];
        for r in &self.rows {
            values[((r.time - start).num_seconds() / HOUR_SECS) as usize] = Some(r.consumption);
        }
        TimeSeries::new(start, HOUR_SECS, values)
    }

    pub fn weather(&self) -> WeatherTable {
        WeatherTable {
            rows: self.rows.iter().map(|r| r.weather.clone()).collect(),
        }
    }

    /// Rows whose time lies in `[from, to)`.
    pub fn slice(&self, from: DateTime<Utc>, to: DateTime<Utc>) -> AlignedDataset {
        AlignedDataset {
            rows: self
                .rows
                .iter()
                .filter(|r| r.time >= from && r.time < to)
                .cloned()
                .collect(),
        }
    }

    /// Copy with consumption replaced by `series` at matching hours. Hours
    /// where `series` has no value keep their original reading.
    pub fn with_consumption(&self, series: &TimeSeries) -> AlignedDataset {
        let rows = self
            .rows
            .iter()
            .map(|r| {
                let mut r = r.clone();
                if let Some(v) = series.index_of(r.time).and_then(|i| series.values[i]) {
                    r.consumption = v;
                }
                r
            })
            .collect();
        AlignedDataset { rows }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), DataError> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|source| DataError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DataError> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|source| DataError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::read_csv(file)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), DataError> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["time", "consumption", "summary", "icon"];
        header.extend(NUMERIC_WEATHER_COLUMNS);
        w.write_record(&header)?;
        for r in &self.rows {
            let mut fields = vec![format_timestamp(r.time), r.consumption.to_string()];
            fields.extend(r.weather.csv_fields());
            w.write_record(&fields)?;
        }
        w.flush().map_err(|source| DataError::Io {
            path: "<aligned writer>".into(),
            source,
        })?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self, DataError> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let mut expected = vec!["time", "consumption", "summary", "icon"];
        expected.extend(NUMERIC_WEATHER_COLUMNS);
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        if header != expected {
            return Err(DataError::BadHeader {
                expected: expected.iter().map(|s| s.to_string()).collect(),
                found: header,
            });
        }
        let mut rows = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let bad = |reason: &str| DataError::BadWeatherRow {
                row: i + 1,
                reason: reason.to_string(),
            };
            let time = parse_timestamp(&rec[0], 0).ok_or_else(|| bad("bad timestamp"))?;
            let consumption: f64 = rec[1].parse().map_err(|_| bad("bad consumption"))?;
            let mut numeric = [None; 11];
            for (k, slot) in numeric.iter_mut().enumerate() {
                *slot = rec[4 + k].parse::<f64>().ok();
            }
            let weather = WeatherRow::from_fields(time, rec[2].to_string(), rec[3].to_string(), numeric);
            rows.push(AlignedRow {
                time,
                consumption,
                weather,
            });
        }
        Self::new(rows)
    }
}

/// Inner join of hourly consumption and weather on the hour.
pub fn align(c: &TimeSeries, w: &WeatherTable) -> Result<(AlignedDataset, AlignReport), DataError> {
    if c.step_secs != HOUR_SECS {
        return Err(DataError::Misaligned(format!(
            "consumption step is {} s; resample to hourly first",
            c.step_secs
        )));
    }
    let mut report = AlignReport {
        weather_rows: w.len(),
        ..Default::default()
    };
    let mut rows = Vec::new();
    for (i, v) in c.values.iter().enumerate() {
        let Some(v) = *v else { continue };
        report.consumption_hours += 1;
        let t = c.time_at(i);
        match w.find(t) {
            Some(weather) => rows.push(AlignedRow {
                time: t,
                consumption: v,
                weather: weather.clone(),
            }),
            None => report.dropped_consumption_hours += 1,
        }
    }
    if rows.is_empty() {
        return Err(DataError::EmptyJoin);
    }
    report.aligned = rows.len();
    report.dropped_weather_rows = w.len() - rows.len();
    Ok((AlignedDataset::new(rows)?, report))
}
