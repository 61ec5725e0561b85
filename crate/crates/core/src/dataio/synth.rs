//! Seeded synthetic fixtures in the same file formats as the real data.
//!
//! Weather follows a seasonal + diurnal temperature curve with an AR(1)
//! synoptic anomaly; cloud cover, precipitation, humidity and the text
//! fields are derived from it. Each apartment draws its hourly mean load as
//!
//! ```text
//! base * occupancy(day) * profile(hour, weekend) + cooling(T) + heating(T)
//! ```
//!
//! with a slowly drifting AR(1) daily occupancy level and AR(1)
//! multiplicative hourly noise. Sub-hourly readings scatter around the
//! hourly mean to mimic appliance cycling. All times are UTC; the local
//! clock used for the daily profile is `utc_offset_secs` away.

use std::f64::consts::PI;
use std::path::Path;

use chrono::{DateTime, Datelike, Duration, Timelike, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{
    aggregate, align, resample_hourly, write_consumption, write_weather, AlignedDataset, DataError, MeterFormat,
    TimeSeries, WeatherRow, WeatherTable, DEFAULT_UTC_OFFSET_SECS, HOUR_SECS,
};

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub start: DateTime<Utc>,
    pub days: usize,
    pub apartments: usize,
    pub format: MeterFormat,
    pub seed: u64,
    pub utc_offset_secs: i32,
    /// Probability that a single sub-hourly reading is dropped.
    pub missing_prob: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            start: DateTime::parse_from_rfc3339("2016-06-01T05:00:00Z")
                .unwrap()
                .with_timezone(&Utc),
            days: 60,
            apartments: 3,
            format: MeterFormat::PerQuarterHour,
            seed: 20_160_601,
            utc_offset_secs: DEFAULT_UTC_OFFSET_SECS,
            missing_prob: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthData {
    /// Native-resolution readings, one series per apartment.
    pub apartments: Vec<TimeSeries>,
    pub weather: WeatherTable,
}

impl SynthData {
    /// Hourly aggregate of all apartments joined with weather.
    pub fn aligned_aggregate(&self) -> Result<AlignedDataset, DataError> {
        let hourly: Result<Vec<_>, _> = self.apartments.iter().map(resample_hourly).collect();
        let total = aggregate(&hourly?)?;
        Ok(align(&total, &self.weather)?.0)
    }

    /// Hourly series of one apartment joined with weather.
    pub fn aligned_apartment(&self, idx: usize) -> Result<AlignedDataset, DataError> {
        let hourly = resample_hourly(&self.apartments[idx])?;
        Ok(align(&hourly, &self.weather)?.0)
    }

    /// Writes `apartments/apt_NNN.csv` and `weather.csv` under `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<(), DataError> {
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| DataError::Io { path, source }
        };
        let apt_dir = dir.join("apartments");
        std::fs::create_dir_all(&apt_dir).map_err(io(&apt_dir))?;
        for (i, s) in self.apartments.iter().enumerate() {
            let path = apt_dir.join(format!("apt_{:03}.csv", i + 1));
            let file = std::fs::File::create(&path).map_err(io(&path))?;
            write_consumption(std::io::BufWriter::new(file), s)?;
        }
        let path = dir.join("weather.csv");
        let file = std::fs::File::create(&path).map_err(io(&path))?;
        write_weather(std::io::BufWriter::new(file), &self.weather)
    }
}

pub fn generate(cfg: &SynthConfig) -> SynthData {
    let hours = cfg.days * 24;
    let weather = weather_with_offset(cfg.start, hours, cfg.seed, cfg.utc_offset_secs);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xA5A5_5A5A_0F0F_F0F0);
    let step = cfg.format.step_secs();
    let per_hour = (HOUR_SECS / step) as usize;
    let cycling = Normal::new(0.0, 0.25).unwrap();

    let apartments = (0..cfg.apartments)
        .map(|_| {
            let hourly = apartment_hourly_means(&weather, cfg.utc_offset_secs, &mut rng);
            let mut values = Vec::with_capacity(hours * per_hour);
            for mean in hourly {
                for _ in 0..per_hour {
                    let v = (mean * (1.0 + cycling.sample(&mut rng))).max(0.0);
                    values.push((rng.random::<f64>() >= cfg.missing_prob).then_some(v));
                }
            }
            TimeSeries::new(cfg.start, step, values)
        })
        .collect();
    SynthData { apartments, weather }
}

/// Hourly weather with the default local offset.
pub fn synthetic_weather(start: DateTime<Utc>, hours: usize, seed: u64) -> WeatherTable {
    weather_with_offset(start, hours, seed, DEFAULT_UTC_OFFSET_SECS)
}

fn weather_with_offset(start: DateTime<Utc>, hours: usize, seed: u64, utc_offset_secs: i32) -> WeatherTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit: Normal<f64> = Normal::new(0.0, 1.0).unwrap();
    let mut temp_anom = 0.0;
    let mut cloud_latent = 0.0;
    let mut pressure_anom = 0.0;
    let mut wind: f64 = 6.0;
    let mut bearing: f64 = rng.random_range(0.0..360.0);
    let mut rows = Vec::with_capacity(hours);
    for h in 0..hours {
        let time = start + Duration::hours(h as i64);
        let local = time + Duration::seconds(utc_offset_secs as i64);
        let doy = local.ordinal() as f64;
        let hour = local.hour() as f64;

        temp_anom = 0.97 * temp_anom + 1.0 * unit.sample(&mut rng);
        cloud_latent = 0.95 * cloud_latent + 0.35 * unit.sample(&mut rng);
        pressure_anom = 0.98 * pressure_anom + 0.4 * unit.sample(&mut rng);
        wind = (0.9 * wind + 0.6 + 1.2 * unit.sample(&mut rng)).clamp(0.0, 40.0);
        bearing = (bearing + 15.0 * unit.sample(&mut rng)).rem_euclid(360.0);

        let diurnal = (2.0 * PI * (hour - 9.0) / 24.0).sin();
        let temperature = 50.0 + 25.0 * (2.0 * PI * (doy - 105.0) / 365.0).sin() + 8.0 * diurnal + temp_anom;
        let cloud = 1.0 / (1.0 + (-(cloud_latent - 0.2)).exp());
        let precip_probability = ((cloud - 0.55) * 2.2).clamp(0.0, 1.0);
        let precip_intensity = if precip_probability > 0.6 {
            0.02 + 0.1 * (precip_probability - 0.6)
        } else {
            0.0
        };
        let humidity = (0.62 - 0.15 * diurnal + 0.25 * (cloud - 0.5) + 0.03 * unit.sample(&mut rng)).clamp(0.1, 1.0);
        let dew_point = temperature - (1.0 - humidity) * 100.0 / 5.0 * 1.8;
        let apparent_temperature = if temperature > 70.0 {
            temperature + 8.0 * (humidity - 0.4)
        } else {
            temperature - 0.3 * wind
        };
        let visibility = (10.0 - 7.0 * precip_probability).max(0.5);
        let daytime = (6.0..20.0).contains(&hour);
        let (summary, icon) = sky_text(cloud, precip_probability, daytime);

        rows.push(WeatherRow {
            time,
            summary: summary.to_string(),
            icon: icon.to_string(),
            temperature: Some(round2(temperature)),
            apparent_temperature: Some(round2(apparent_temperature)),
            cloud_cover: Some(round2(cloud)),
            precip_probability: Some(round2(precip_probability)),
            precip_intensity: Some(round2(precip_intensity * 100.0) / 100.0),
            visibility: Some(round2(visibility)),
            wind_speed: Some(round2(wind)),
            wind_bearing: Some(bearing.round()),
            humidity: Some(round2(humidity)),
            pressure: Some(round2(1015.0 + pressure_anom)),
            dew_point: Some(round2(dew_point)),
        });
    }
    WeatherTable { rows }
}

fn sky_text(cloud: f64, precip: f64, daytime: bool) -> (&'static str, &'static str) {
    if precip > 0.75 {
        ("Rain", "rain")
    } else if precip > 0.6 {
        ("Light Rain", "rain")
    } else if cloud > 0.8 {
        ("Overcast", "cloudy")
    } else if cloud > 0.6 {
        ("Mostly Cloudy", if daytime { "partly-cloudy-day" } else { "partly-cloudy-night" })
    } else if cloud > 0.35 {
        ("Partly Cloudy", if daytime { "partly-cloudy-day" } else { "partly-cloudy-night" })
    } else {
        ("Clear", if daytime { "clear-day" } else { "clear-night" })
    }
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

fn bump(x: f64, centre: f64, width: f64) -> f64 {
    (-0.5 * ((x - centre) / width).powi(2)).exp()
}

fn daily_profile(hour: f64, weekend: bool) -> f64 {
    let mut p = 0.45 + 0.7 * bump(hour, 7.5, 1.2) + 1.1 * bump(hour, 19.5, 2.0);
    if weekend {
        p += 0.35 * bump(hour, 13.0, 3.0);
    } else {
        p -= 0.1 * bump(hour, 13.0, 3.0);
    }
    p
}

fn apartment_hourly_means(weather: &WeatherTable, utc_offset_secs: i32, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let unit: Normal<f64> = Normal::new(0.0, 1.0).unwrap();
    let base: f64 = rng.random_range(0.3..0.8);
    let cooling: f64 = rng.random_range(0.02..0.06);
    let heating: f64 = rng.random_range(0.005..0.02);
    let mut occupancy: f64 = 1.0;
    let mut noise = 0.0;
    let mut day = None;
    weather
        .rows
        .iter()
        .map(|row| {
            let local = row.time + Duration::seconds(utc_offset_secs as i64);
            if day != Some(local.ordinal()) {
                day = Some(local.ordinal());
                occupancy = (1.0 + 0.85 * (occupancy - 1.0) + 0.08 * unit.sample(rng)).clamp(0.3, 1.8);
            }
            noise = 0.6 * noise + 0.12 * unit.sample(rng);
            let weekend = local.weekday().number_from_monday() >= 6;
            let t = row.temperature.unwrap_or(60.0);
            let thermal = cooling * (t - 68.0).max(0.0) + heating * (50.0 - t).max(0.0);
            ((base * occupancy * daily_profile(local.hour() as f64, weekend) + thermal) * (1.0 + noise)).max(0.01)
        })
        .collect()
}

/// Hourly `level + amplitude * sin(2πt/period)` plus Gaussian noise with
/// standard deviation `noise_frac * amplitude`, joined with synthetic weather.
pub fn sinusoid_dataset(
    start: DateTime<Utc>,
    hours: usize,
    period: f64,
    level: f64,
    amplitude: f64,
    noise_frac: f64,
    seed: u64,
) -> AlignedDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, noise_frac * amplitude).unwrap();
    let values: Vec<f64> = (0..hours)
        .map(|t| (level + amplitude * (2.0 * PI * t as f64 / period).sin() + noise.sample(&mut rng)).max(0.0))
        .collect();
    let series = TimeSeries::from_values(start, HOUR_SECS, &values);
    let weather = synthetic_weather(start, hours, seed.wrapping_add(1));
    align(&series, &weather).expect("synthetic spans overlap").0
}
