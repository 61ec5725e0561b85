//! The `n + 18` input features: a consumption window of `n` past hours,
//! 13 weather features and 5 calendar features, plus supervised example
//! assembly over chronological train/validation/test splits.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::{DateTime, Datelike, Duration, Timelike, Utc};
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::{AlignedDataset, WeatherRow, DEFAULT_UTC_OFFSET_SECS, HOUR_SECS};

pub const WEATHER_FEATURES: usize = 13;
pub const CALENDAR_FEATURES: usize = 5;
pub const EXOGENOUS_FEATURES: usize = WEATHER_FEATURES + CALENDAR_FEATURES;
pub const FEATURE_SPEC_VERSION: u32 = 1;

/// Default ACF threshold for window selection.
pub const DEFAULT_ACF_THRESHOLD: f64 = 0.5;
pub const DEFAULT_DAYTIME: (u32, u32) = (7, 19);

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("autocorrelation undefined for a constant series")]
    ConstantSeries,
    #[error("series of length {len} too short for max lag {max_lag}")]
    TooShort { len: usize, max_lag: usize },
    #[error("threshold must lie in (0, 1), got {0}")]
    BadThreshold(f64),
    #[error("{0} split has no examples")]
    EmptySplit(&'static str),
    #[error("invalid splits: {0}")]
    BadSplits(String),
    #[error("window length must be at least 1")]
    ZeroWindow,
    #[error("feature spec version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("feature spec json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("feature spec io: {0}")]
    Io(#[from] std::io::Error),
}

/// Sample autocorrelations `r_1..=r_max_lag`, computed through the power
/// spectrum of the zero-padded, mean-centred series.
pub fn acf(x: &[f64], max_lag: usize) -> Result<Vec<f64>, FeatureError> {
    if max_lag == 0 || x.len() <= max_lag {
        return Err(FeatureError::TooShort {
            len: x.len(),
            max_lag,
        });
    }
    let n = x.len();
    let mean = x.iter().sum::<f64>() / n as f64;
    let scale = x.iter().map(|v| v * v).sum::<f64>().max(f64::MIN_POSITIVE);
    let denom: f64 = x.iter().map(|v| (v - mean).powi(2)).sum();
    if denom <= 1e-24 * scale {
        return Err(FeatureError::ConstantSeries);
    }
    let size = (2 * n).next_power_of_two();
    let mut buf: Vec<Complex<f64>> = x
        .iter()
        .map(|v| Complex::new(v - mean, 0.0))
        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
        .take(size)
        .collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(size).process(&mut buf);
    for c in buf.iter_mut() {
        *c = Complex::new(c.norm_sqr(), 0.0);
    }
    planner.plan_fft_inverse(size).process(&mut buf);
    let zero_lag = buf[0].re;
    Ok((1..=max_lag).map(|k| buf[k].re / zero_lag).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSelection {
    pub n: usize,
    /// Set when even `r_1` fell below the threshold and `n` was floored to 1.
    pub floored: bool,
}

/// Longest contiguous prefix of lags whose autocorrelation stays at or
/// above `threshold`, at least 1.
pub fn select_window(acf_values: &[f64], threshold: f64) -> Result<WindowSelection, FeatureError> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(FeatureError::BadThreshold(threshold));
    }
    let n = acf_values.iter().take_while(|&&r| r >= threshold).count();
    if n == 0 {
        log::warn!(
            "lag-1 autocorrelation {:?} below threshold {threshold}; using window length 1",
            acf_values.first()
        );
        return Ok(WindowSelection { n: 1, floored: true });
    }
    Ok(WindowSelection { n, floored: false })
}

/// z-score parameters. A zero `std` marks a constant feature, which
/// normalizes to 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: f64,
    pub std: f64,
}

impl Standardizer {
    pub fn fit(values: impl IntoIterator<Item = f64>) -> Self {
        let values: Vec<f64> = values.into_iter().collect();
        if values.is_empty() {
            return Self { mean: 0.0, std: 0.0 };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        let std = if std > 1e-12 * mean.abs().max(1.0) { std } else { 0.0 };
        Self { mean, std }
    }

    pub fn is_constant(&self) -> bool {
        self.std == 0.0
    }

    pub fn normalize(&self, x: f64) -> f64 {
        if self.is_constant() {
            0.0
        } else {
            (x - self.mean) / self.std
        }
    }

    pub fn denormalize(&self, z: f64) -> f64 {
        if self.is_constant() {
            self.mean
        } else {
            z * self.std + self.mean
        }
    }
}

/// Everything needed to turn raw rows into model inputs, fitted on the
/// training split only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub format_version: u32,
    pub window_len: usize,
    /// Category → index; index 0 is reserved for unseen text.
    pub summary_vocab: BTreeMap<String, usize>,
    pub icon_vocab: BTreeMap<String, usize>,
    /// One per numeric weather column, in `WeatherRow::numeric` order.
    pub weather_stats: Vec<Standardizer>,
    pub consumption: Standardizer,
    /// Local hours `[start, end)` counted as daytime.
    pub daytime_range: (u32, u32),
    pub utc_offset_secs: i32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureOptions {
    pub window_len: usize,
    pub daytime_range: (u32, u32),
    pub utc_offset_secs: i32,
}

impl Default for FeatureOptions {
    fn default() -> Self {
        Self {
            window_len: 24,
            daytime_range: DEFAULT_DAYTIME,
            utc_offset_secs: DEFAULT_UTC_OFFSET_SECS,
        }
    }
}

impl FeatureSpec {
    /// Fits vocabularies and normalization statistics on the rows of `d`
    /// that fall inside `train`.
    pub fn fit(d: &AlignedDataset, train: TimeRange, opts: FeatureOptions) -> Result<Self, FeatureError> {
        if opts.window_len == 0 {
            return Err(FeatureError::ZeroWindow);
        }
        let rows: Vec<_> = d.rows().iter().filter(|r| train.contains(r.time)).collect();
        if rows.is_empty() {
            return Err(FeatureError::EmptySplit("train"));
        }
        let vocab = |f: fn(&WeatherRow) -> &str| {
            let mut names: Vec<&str> = rows.iter().map(|r| f(&r.weather)).collect();
            names.sort_unstable();
            names.dedup();
            names
                .into_iter()
                .enumerate()
                .map(|(i, s)| (s.to_string(), i + 1))
                .collect::<BTreeMap<_, _>>()
        };
        let weather_stats = (0..11)
            .map(|k| Standardizer::fit(rows.iter().filter_map(|r| r.weather.numeric()[k])))
            .collect();
        Ok(Self {
            format_version: FEATURE_SPEC_VERSION,
            window_len: opts.window_len,
            summary_vocab: vocab(|w| w.summary.as_str()),
            icon_vocab: vocab(|w| w.icon.as_str()),
            weather_stats,
            consumption: Standardizer::fit(rows.iter().map(|r| r.consumption)),
            daytime_range: opts.daytime_range,
            utc_offset_secs: opts.utc_offset_secs,
        })
    }

    pub fn normalize_consumption(&self, kw: f64) -> f64 {
        self.consumption.normalize(kw)
    }

    pub fn denormalize_consumption(&self, z: f64) -> f64 {
        self.consumption.denormalize(z)
    }

    pub fn to_json(&self) -> Result<String, FeatureError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self, FeatureError> {
        let spec: FeatureSpec = serde_json::from_str(s)?;
        spec.check_version()?;
        Ok(spec)
    }

    pub fn check_version(&self) -> Result<(), FeatureError> {
        if self.format_version != FEATURE_SPEC_VERSION {
            return Err(FeatureError::VersionMismatch {
                found: self.format_version,
                expected: FEATURE_SPEC_VERSION,
            });
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), FeatureError> {
        Ok(std::fs::write(path, self.to_json()?)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, FeatureError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// `[day_of_month, day_of_week (Mon=0), hour, is_daytime, is_weekend]` in
/// the spec's local clock.
pub fn calendar_features(t: DateTime<Utc>, spec: &FeatureSpec) -> [f64; CALENDAR_FEATURES] {
    let local = t + Duration::seconds(spec.utc_offset_secs as i64);
    let dow = local.weekday().num_days_from_monday();
    let hour = local.hour();
    let (day_start, day_end) = spec.daytime_range;
    [
        local.day() as f64,
        dow as f64,
        hour as f64,
        if (day_start..day_end).contains(&hour) { 1.0 } else { 0.0 },
        if dow >= 5 { 1.0 } else { 0.0 },
    ]
}

/// `[summary_index, icon_index, 11 z-scored numeric fields]`. Missing
/// numeric values sit at the training mean (0).
pub fn weather_features(row: &WeatherRow, spec: &FeatureSpec) -> [f64; WEATHER_FEATURES] {
    let mut out = [0.0; WEATHER_FEATURES];
    out[0] = spec.summary_vocab.get(&row.summary).copied().unwrap_or(0) as f64;
    out[1] = spec.icon_vocab.get(&row.icon).copied().unwrap_or(0) as f64;
    for (k, v) in row.numeric().iter().enumerate() {
        out[2 + k] = v.map_or(0.0, |x| spec.weather_stats[k].normalize(x));
    }
    out
}

/// One supervised row; window and target are normalized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub window: Vec<f64>,
    pub weather: [f64; WEATHER_FEATURES],
    pub calendar: [f64; CALENDAR_FEATURES],
    pub target: f64,
    pub time: DateTime<Utc>,
}

impl Example {
    pub fn exogenous(&self) -> [f64; EXOGENOUS_FEATURES] {
        let mut out = [0.0; EXOGENOUS_FEATURES];
        out[..WEATHER_FEATURES].copy_from_slice(&self.weather);
        out[WEATHER_FEATURES..].copy_from_slice(&self.calendar);
        out
    }

    /// `[window; weather; calendar]`, the flat layout used by tree models.
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.window.len() + EXOGENOUS_FEATURES);
        out.extend_from_slice(&self.window);
        out.extend_from_slice(&self.weather);
        out.extend_from_slice(&self.calendar);
        out
    }
}

/// Builds an example for target hour `t` from a raw kW window ending at
/// `t - 1h`.
pub fn make_example(
    spec: &FeatureSpec,
    raw_window: &[f64],
    weather: &WeatherRow,
    t: DateTime<Utc>,
    raw_target: f64,
) -> Example {
    Example {
        window: raw_window.iter().map(|&v| spec.normalize_consumption(v)).collect(),
        weather: weather_features(weather, spec),
        calendar: calendar_features(t, spec),
        target: spec.normalize_consumption(raw_target),
        time: t,
    }
}

/// Half-open `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeRange {
    pub start: DateTime<Utc>,
    pub end: DateTime<Utc>,
}

impl TimeRange {
    pub fn new(start: DateTime<Utc>, end: DateTime<Utc>) -> Self {
        Self { start, end }
    }

    pub fn hours(start: DateTime<Utc>, hours: i64) -> Self {
        Self::new(start, start + Duration::hours(hours))
    }

    pub fn contains(&self, t: DateTime<Utc>) -> bool {
        t >= self.start && t < self.end
    }

    pub fn len_hours(&self) -> i64 {
        (self.end - self.start).num_hours()
    }

    pub fn iter_hours(&self) -> impl Iterator<Item = DateTime<Utc>> {
        let start = self.start;
        (0..self.len_hours().max(0)).map(move |h| start + Duration::hours(h))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: TimeRange,
    pub validation: TimeRange,
    pub test: TimeRange,
}

impl Splits {
    /// Back-to-back ranges starting at `start`.
    pub fn consecutive(start: DateTime<Utc>, train_hours: i64, validation_hours: i64, test_hours: i64) -> Self {
        let train = TimeRange::hours(start, train_hours);
        let validation = TimeRange::hours(train.end, validation_hours);
        let test = TimeRange::hours(validation.end, test_hours);
        Self {
            train,
            validation,
            test,
        }
    }

    pub fn validate(&self) -> Result<(), FeatureError> {
        let ranges = [self.train, self.validation, self.test];
        if ranges.iter().any(|r| r.end <= r.start) {
            return Err(FeatureError::BadSplits("every range must be non-empty".into()));
        }
        if self.train.end > self.validation.start || self.validation.end > self.test.start {
            return Err(FeatureError::BadSplits(
                "ranges must be chronological and non-overlapping".into(),
            ));
        }
        Ok(())
    }
}

/// Why candidate target hours produced no example.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipCounts {
    /// Window would reach before the first data hour.
    pub no_history: usize,
    /// Window contains a missing hour.
    pub window_gap: usize,
    /// Window complete but the target hour itself is missing.
    pub missing_target: usize,
}

impl SkipCounts {
    pub fn total(&self) -> usize {
        self.no_history + self.window_gap + self.missing_target
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleSet {
    pub spec: FeatureSpec,
    pub splits: Splits,
    pub train: Vec<Example>,
    pub validation: Vec<Example>,
    pub test: Vec<Example>,
    pub skips: [SkipCounts; 3],
}

/// Gap-aware view over the hourly grid of an aligned dataset.
struct HourGrid {
    start: DateTime<Utc>,
    /// `gaps_before[i]` = number of missing hours in grid `[0, i)`.
    gaps_before: Vec<usize>,
    row_at: Vec<Option<usize>>,
}

enum Slot {
    NoHistory,
    WindowGap,
    MissingTarget,
    Ready { window_first_row: usize, target_row: usize },
}

impl HourGrid {
    fn new(d: &AlignedDataset) -> Option<Self> {
        let start = d.start()?;
        let len = ((d.end()? - start).num_seconds() / HOUR_SECS) as usize;
        let mut row_at = vec![None; len];
        for (i, r) in d.rows().iter().enumerate() {
            row_at[((r.time - start).num_seconds() / HOUR_SECS) as usize] = Some(i);
        }
        let mut gaps_before = Vec::with_capacity(len + 1);
        gaps_before.push(0);
        for r in &row_at {
            gaps_before.push(gaps_before.last().unwrap() + usize::from(r.is_none()));
        }
        Some(Self {
            start,
            gaps_before,
            row_at,
        })
    }

    fn classify(&self, t: DateTime<Utc>, n: usize) -> Slot {
        let offset = (t - self.start).num_seconds();
        let g = offset.div_euclid(HOUR_SECS);
        if g < n as i64 {
            return Slot::NoHistory;
        }
        let g = g as usize;
        let len = self.row_at.len();
        let lo = g - n;
        // hours past the end of the data are missing
        let window_gaps = if g <= len {
            self.gaps_before[g] - self.gaps_before[lo]
        } else {
            let inside = if lo < len {
                self.gaps_before[len] - self.gaps_before[lo]
            } else {
                0
            };
            inside + (g - lo.max(len))
        };
        if window_gaps > 0 {
            return Slot::WindowGap;
        }
        match self.row_at.get(g).copied().flatten() {
            Some(target_row) => Slot::Ready {
                window_first_row: self.row_at[lo].expect("window is gap-free"),
                target_row,
            },
            None => Slot::MissingTarget,
        }
    }
}

/// One example per hour of each split whose preceding `n` hours are all
/// present. Windows may draw on data before the split they belong to.
pub fn build_examples(d: &AlignedDataset, spec: &FeatureSpec, splits: Splits) -> Result<ExampleSet, FeatureError> {
    splits.validate()?;
    let grid = HourGrid::new(d).ok_or(FeatureError::EmptySplit("train"))?;
    let n = spec.window_len;
    let rows = d.rows();
    let build = |range: TimeRange, name: &'static str| -> Result<(Vec<Example>, SkipCounts), FeatureError> {
        let mut out = Vec::new();
        let mut skips = SkipCounts::default();
        for t in range.iter_hours() {
            match grid.classify(t, n) {
                Slot::NoHistory => skips.no_history += 1,
                Slot::WindowGap => skips.window_gap += 1,
                Slot::MissingTarget => skips.missing_target += 1,
                Slot::Ready {
                    window_first_row,
                    target_row,
                } => {
                    let window: Vec<f64> = rows[window_first_row..target_row]
                        .iter()
                        .map(|r| r.consumption)
                        .collect();
                    let row = &rows[target_row];
                    out.push(make_example(spec, &window, &row.weather, t, row.consumption));
                }
            }
        }
        if out.is_empty() {
            return Err(FeatureError::EmptySplit(name));
        }
        Ok((out, skips))
    };
    let (train, s0) = build(splits.train, "train")?;
    let (validation, s1) = build(splits.validation, "validation")?;
    let (test, s2) = build(splits.test, "test")?;
    Ok(ExampleSet {
        spec: spec.clone(),
        splits,
        train,
        validation,
        test,
        skips: [s0, s1, s2],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{align, synth::synthetic_weather, TimeSeries};
    use chrono::TimeZone;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    /// Definitional O(N·K) autocorrelation.
    fn acf_oracle(x: &[f64], max_lag: usize) -> Vec<f64> {
        let n = x.len();
        let mean = x.iter().sum::<f64>() / n as f64;
        let mut denom = 0.0;
        for v in x {
            denom += (v - mean) * (v - mean);
        }
        (1..=max_lag)
            .map(|k| {
                let mut s = 0.0;
                for t in 0..n - k {
                    s += (x[t] - mean) * (x[t + k] - mean);
                }
                s / denom
            })
            .collect()
    }

    fn t0() -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2016, 4, 1, 5, 0, 0).unwrap()
    }

    fn spec_utc() -> FeatureSpec {
        FeatureSpec {
            format_version: FEATURE_SPEC_VERSION,
            window_len: 24,
            summary_vocab: BTreeMap::new(),
            icon_vocab: BTreeMap::new(),
            weather_stats: vec![Standardizer { mean: 0.0, std: 1.0 }; 11],
            consumption: Standardizer { mean: 0.0, std: 1.0 },
            daytime_range: DEFAULT_DAYTIME,
            utc_offset_secs: 0,
        }
    }

    #[test]
    fn acf_matches_oracle_on_spike() {
        let mut x = vec![1.0; 200];
        x[57] = 9.0;
        let got = acf(&x, 30).unwrap();
        for (g, e) in got.iter().zip(acf_oracle(&x, 30)) {
            assert!((g - e).abs() < 1e-10);
        }
    }

    #[test]
    fn acf_of_daily_sinusoid() {
        let x: Vec<f64> = (0..24 * 40)
            .map(|t| (2.0 * std::f64::consts::PI * t as f64 / 24.0).sin())
            .collect();
        let r = acf(&x, 48).unwrap();
        assert!(r[23] > 0.95 * (1.0 - 24.0 / x.len() as f64));
        assert!(r[11] < 0.0);
    }

    #[test]
    fn acf_of_white_noise_is_small() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let dist = Normal::new(0.0, 1.0).unwrap();
        let x: Vec<f64> = (0..10_000).map(|_| dist.sample(&mut rng)).collect();
        let r = acf(&x, 48).unwrap();
        assert!(r.iter().all(|v| v.abs() < 0.05), "{r:?}");
    }

    #[test]
    fn acf_errors() {
        assert!(matches!(acf(&[2.0; 50], 5), Err(FeatureError::ConstantSeries)));
        assert!(matches!(acf(&[0.1; 50], 5), Err(FeatureError::ConstantSeries)));
        assert!(matches!(acf(&[1.0, 2.0], 2), Err(FeatureError::TooShort { .. })));
    }

    #[test]
    fn window_selection_prefix_rule() {
        assert_eq!(
            select_window(&[0.9, 0.8, 0.3, 0.7], 0.5).unwrap(),
            WindowSelection { n: 2, floored: false }
        );
        assert_eq!(
            select_window(&[0.4, 0.9], 0.5).unwrap(),
            WindowSelection { n: 1, floored: true }
        );
        assert_eq!(select_window(&[0.9, 0.9], 0.5).unwrap().n, 2);
        assert!(select_window(&[0.9], 1.0).is_err());
    }

    #[test]
    fn calendar_reference_dates() {
        let spec = spec_utc();
        let fri = Utc.with_ymd_and_hms(2016, 4, 29, 13, 0, 0).unwrap();
        assert_eq!(calendar_features(fri, &spec), [29.0, 4.0, 13.0, 1.0, 0.0]);
        let sun = Utc.with_ymd_and_hms(2016, 5, 1, 2, 0, 0).unwrap();
        assert_eq!(calendar_features(sun, &spec), [1.0, 6.0, 2.0, 0.0, 1.0]);
        let ny = Utc.with_ymd_and_hms(2016, 1, 1, 0, 0, 0).unwrap();
        let f = calendar_features(ny, &spec);
        assert_eq!((f[2], f[3]), (0.0, 0.0));

        let local = FeatureSpec {
            utc_offset_secs: DEFAULT_UTC_OFFSET_SECS,
            ..spec
        };
        let fri_utc = Utc.with_ymd_and_hms(2016, 4, 29, 18, 0, 0).unwrap();
        assert_eq!(calendar_features(fri_utc, &local), [29.0, 4.0, 13.0, 1.0, 0.0]);
    }

    fn fixture(hours: usize) -> AlignedDataset {
        let values: Vec<f64> = (0..hours).map(|i| 1.0 + (i % 24) as f64 * 0.1).collect();
        let s = TimeSeries::from_values(t0(), 3600, &values);
        align(&s, &synthetic_weather(t0(), hours, 4)).unwrap().0
    }

    #[test]
    fn weather_features_hand_computed() {
        let d = fixture(72);
        let train = TimeRange::hours(t0(), 72);
        let spec = FeatureSpec::fit(&d, train, FeatureOptions::default()).unwrap();
        let row = &d.rows()[10].weather;
        let f = weather_features(row, &spec);

        let temps: Vec<f64> = d.rows().iter().map(|r| r.weather.temperature.unwrap()).collect();
        let mean = temps.iter().sum::<f64>() / temps.len() as f64;
        let sd = (temps.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / temps.len() as f64).sqrt();
        assert!((f[2] - (row.temperature.unwrap() - mean) / sd).abs() < 1e-12);
        let pres: Vec<f64> = d.rows().iter().map(|r| r.weather.pressure.unwrap()).collect();
        let pm = pres.iter().sum::<f64>() / pres.len() as f64;
        let psd = (pres.iter().map(|t| (t - pm).powi(2)).sum::<f64>() / pres.len() as f64).sqrt();
        assert!((f[11] - (row.pressure.unwrap() - pm) / psd).abs() < 1e-12);
        assert!(f[0] >= 1.0 && f[1] >= 1.0);

        let mut at_mean = row.clone();
        at_mean.temperature = Some(spec.weather_stats[0].mean);
        at_mean.summary = "Hurricane".into();
        at_mean.humidity = None;
        let f = weather_features(&at_mean, &spec);
        assert!(f[2].abs() < 1e-12);
        assert_eq!(f[0], 0.0);
        assert_eq!(f[10], 0.0);
    }

    #[test]
    fn default_split_sizes() {
        let d = fixture(720);
        let splits = Splits::consecutive(t0(), 624, 48, 48);
        let spec = FeatureSpec::fit(&d, splits.train, FeatureOptions::default()).unwrap();
        let set = build_examples(&d, &spec, splits).unwrap();
        assert_eq!(set.train.len(), 624 - set.skips[0].total());
        assert_eq!(set.skips[0].no_history, 24);
        assert_eq!(set.validation.len(), 48);
        assert_eq!(set.test.len(), 48);
        // no examples before hour 24
        assert_eq!(set.train[0].time, t0() + Duration::hours(24));
    }

    #[test]
    fn five_hour_gap_skips() {
        let full = fixture(300);
        let gap_start = t0() + Duration::hours(100);
        let rows: Vec<_> = full
            .rows()
            .iter()
            .filter(|r| !(r.time >= gap_start && r.time < gap_start + Duration::hours(5)))
            .cloned()
            .collect();
        let d = AlignedDataset::new(rows).unwrap();
        let splits = Splits::consecutive(t0(), 250, 25, 25);
        let spec = FeatureSpec::fit(&d, splits.train, FeatureOptions::default()).unwrap();
        let set = build_examples(&d, &spec, splits).unwrap();
        assert_eq!(set.skips[0].window_gap, 24 + 5 - 1);
        assert_eq!(set.skips[0].missing_target, 1);
        assert_eq!(set.train.len(), 250 - 24 - 29);
    }

    #[test]
    fn empty_split_is_error() {
        let d = fixture(48);
        let splits = Splits::consecutive(t0(), 24, 12, 12);
        let spec = FeatureSpec::fit(&d, splits.train, FeatureOptions::default()).unwrap();
        assert!(matches!(build_examples(&d, &spec, splits), Err(FeatureError::EmptySplit("train"))));
    }

    #[test]
    fn test_range_changes_do_not_leak_into_training() {
        let d = fixture(720);
        let splits = Splits::consecutive(t0(), 624, 48, 48);
        let spec = FeatureSpec::fit(&d, splits.train, FeatureOptions::default()).unwrap();
        let base = build_examples(&d, &spec, splits).unwrap();

        let perturbed_rows: Vec<_> = d
            .rows()
            .iter()
            .map(|r| {
                let mut r = r.clone();
                if splits.test.contains(r.time) {
                    r.consumption *= 7.0;
                    r.weather.temperature = Some(120.0);
                }
                r
            })
            .collect();
        let d2 = AlignedDataset::new(perturbed_rows).unwrap();
        let spec2 = FeatureSpec::fit(&d2, splits.train, FeatureOptions::default()).unwrap();
        assert_eq!(spec, spec2);
        let other = build_examples(&d2, &spec2, splits).unwrap();
        assert_eq!(base.train, other.train);
        assert_eq!(base.validation, other.validation);
        assert_ne!(base.test, other.test);
    }

    #[test]
    fn denormalize_recovers_raw_target() {
        let d = fixture(200);
        let splits = Splits::consecutive(t0(), 150, 25, 25);
        let spec = FeatureSpec::fit(&d, splits.train, FeatureOptions::default()).unwrap();
        let set = build_examples(&d, &spec, splits).unwrap();
        for ex in set.train.iter().chain(&set.test) {
            let raw = d.get(ex.time).unwrap().consumption;
            assert!((spec.denormalize_consumption(ex.target) - raw).abs() < 1e-9);
        }
    }

    #[test]
    fn spec_json_round_trip_and_version_check() {
        let d = fixture(72);
        let spec = FeatureSpec::fit(&d, TimeRange::hours(t0(), 72), FeatureOptions::default()).unwrap();
        let json = spec.to_json().unwrap();
        assert_eq!(FeatureSpec::from_json(&json).unwrap(), spec);
        let bumped = json.replacen("\"format_version\": 1", "\"format_version\": 9", 1);
        assert!(matches!(
            FeatureSpec::from_json(&bumped),
            Err(FeatureError::VersionMismatch { found: 9, .. })
        ));
    }

    proptest::proptest! {
        #[test]
        fn acf_matches_oracle(seed in 0u64..1000, len in 30usize..300) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let dist = Normal::new(3.0, 2.0).unwrap();
            let x: Vec<f64> = (0..len).map(|_| dist.sample(&mut rng)).collect();
            let max_lag = len / 3;
            let got = acf(&x, max_lag).unwrap();
            for (g, e) in got.iter().zip(acf_oracle(&x, max_lag)) {
                proptest::prop_assert!((g - e).abs() < 1e-10);
                proptest::prop_assert!(g.abs() <= 1.0 + 1e-12);
            }
        }

        #[test]
        fn calendar_is_pure(secs in 1_400_000_000i64..1_500_000_000) {
            let t = Utc.timestamp_opt(secs, 0).unwrap();
            let spec = spec_utc();
            proptest::prop_assert_eq!(calendar_features(t, &spec), calendar_features(t, &spec));
        }
    }
}
