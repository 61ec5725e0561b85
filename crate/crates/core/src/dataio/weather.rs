use std::io::{Read, Write};
use std::path::Path;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::{parse_timestamp, DataError};

/// Exact header of the hourly weather file.
pub const WEATHER_COLUMNS: [&str; 14] = [
    "time",
    "summary",
    "icon",
    "temperature",
    "apparentTemperature",
    "cloudCover",
    "precipProbability",
    "precipIntensity",
    "visibility",
    "windSpeed",
    "windBearing",
    "humidity",
    "pressure",
    "dewPoint",
];

/// Numeric columns, in feature order.
pub const NUMERIC_WEATHER_COLUMNS: [&str; 11] = [
    "temperature",
    "apparentTemperature",
    "cloudCover",
    "precipProbability",
    "precipIntensity",
    "visibility",
    "windSpeed",
    "windBearing",
    "humidity",
    "pressure",
    "dewPoint",
];

/// One hourly observation. Missing or out-of-range numeric values are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeatherRow {
    pub time: DateTime<Utc>,
    pub summary: String,
    pub icon: String,
    /// °F
    pub temperature: Option<f64>,
    /// °F
    pub apparent_temperature: Option<f64>,
    pub cloud_cover: Option<f64>,
    pub precip_probability: Option<f64>,
    pub precip_intensity: Option<f64>,
    pub visibility: Option<f64>,
    pub wind_speed: Option<f64>,
    /// degrees
    pub wind_bearing: Option<f64>,
    pub humidity: Option<f64>,
    pub pressure: Option<f64>,
    /// °F
    pub dew_point: Option<f64>,
}

impl WeatherRow {
    pub fn numeric(&self) -> [Option<f64>; 11] {
        [
            self.temperature,
            self.apparent_temperature,
            self.cloud_cover,
            self.precip_probability,
            self.precip_intensity,
            self.visibility,
            self.wind_speed,
            self.wind_bearing,
            self.humidity,
            self.pressure,
            self.dew_point,
        ]
    }

    pub(crate) fn from_fields(
        time: DateTime<Utc>,
        summary: String,
        icon: String,
        numeric: [Option<f64>; 11],
    ) -> Self {
        let frac = |v: Option<f64>| v.filter(|x| (0.0..=1.0).contains(x));
        let [temperature, apparent_temperature, cloud_cover, precip_probability, precip_intensity, visibility, wind_speed, wind_bearing, humidity, pressure, dew_point] =
            numeric;
        Self {
            time,
            summary,
            icon,
            temperature,
            apparent_temperature,
            cloud_cover: frac(cloud_cover),
            precip_probability: frac(precip_probability),
            precip_intensity,
            visibility,
            wind_speed,
            wind_bearing: wind_bearing.filter(|x| (0.0..=360.0).contains(x)),
            humidity: frac(humidity),
            pressure,
            dew_point,
        }
    }

    pub(crate) fn csv_fields(&self) -> Vec<String> {
        let mut out = vec![self.summary.clone(), self.icon.clone()];
        out.extend(
            self.numeric()
                .iter()
                .map(|v| v.map(|x| x.to_string()).unwrap_or_default()),
        );
        out
    }
}

/// Hourly weather, strictly increasing in time.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct WeatherTable {
    pub rows: Vec<WeatherRow>,
}

impl WeatherTable {
    pub fn new(rows: Vec<WeatherRow>) -> Result<Self, DataError> {
        if let Some(i) = rows.windows(2).position(|w| w[0].time >= w[1].time) {
            return Err(DataError::WeatherOrder(i + 1));
        }
        Ok(Self { rows })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn find(&self, t: DateTime<Utc>) -> Option<&WeatherRow> {
        self.rows
            .binary_search_by(|r| r.time.cmp(&t))
            .ok()
            .map(|i| &self.rows[i])
    }
}

pub fn load_weather(path: impl AsRef<Path>, utc_offset_secs: i32) -> Result<WeatherTable, DataError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_weather(file, utc_offset_secs)
}

pub fn read_weather<R: Read>(reader: R, utc_offset_secs: i32) -> Result<WeatherTable, DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let index_of = |name: &str| header.iter().position(|h| h == name);
    let positions: Option<Vec<usize>> = WEATHER_COLUMNS.iter().map(|c| index_of(c)).collect();
    let positions = match positions {
        Some(p) if header.len() == WEATHER_COLUMNS.len() => p,
        _ => {
            return Err(DataError::BadHeader {
                expected: WEATHER_COLUMNS.iter().map(|s| s.to_string()).collect(),
                found: header,
            })
        }
    };

    let mut rows = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        let field = |k: usize| record.get(positions[k]).unwrap_or("");
        let time = parse_timestamp(field(0), utc_offset_secs).ok_or_else(|| DataError::BadWeatherRow {
            row: i + 1,
            reason: format!("bad timestamp `{}`", field(0)),
        })?;
        let mut numeric = [None; 11];
        for (k, slot) in numeric.iter_mut().enumerate() {
            *slot = field(k + 3).parse::<f64>().ok().filter(|v| v.is_finite());
        }
        rows.push(WeatherRow::from_fields(
            time,
            field(1).to_string(),
            field(2).to_string(),
            numeric,
        ));
    }
    WeatherTable::new(rows)
}

/// Writes the table with `time` as epoch seconds.
pub fn write_weather<W: Write>(writer: W, table: &WeatherTable) -> Result<(), DataError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(WEATHER_COLUMNS)?;
    for row in &table.rows {
        let mut fields = vec![row.time.timestamp().to_string()];
        fields.extend(row.csv_fields());
        w.write_record(&fields)?;
    }
    w.flush().map_err(|source| DataError::Io {
        path: "<weather writer>".into(),
        source,
    })?;
    Ok(())
}
