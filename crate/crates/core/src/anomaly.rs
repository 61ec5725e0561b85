//! Theft simulation and detection at consumer and substation level.

use std::io::Write;

use chrono::{DateTime, Duration, Utc};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::{AlignedDataset, TimeSeries};
use crate::features::TimeRange;
use crate::forecast::{forecast_recursive, forecast_with_actuals, history_before, ForecastError, Forecaster};
use crate::metrics::{mape, MetricError, DEFAULT_ZERO_FLOOR};

pub const DEFAULT_TL_FRACTION: f64 = 0.05;
pub const DEFAULT_TL_NOISE: f64 = 0.005;

#[derive(Debug, Error)]
pub enum AnomalyError {
    #[error("theft fraction must lie in [0, 1), got {0}")]
    BadTheta(f64),
    #[error("theft range {start}+{hours} exceeds series of length {len}")]
    RangeOutOfSeries { start: usize, hours: usize, len: usize },
    #[error("series are misaligned: {0}")]
    Misaligned(String),
    #[error("detector needs window >= 1 and k > 0")]
    BadDetector,
    #[error("not enough clean data to calibrate")]
    NoCalibration,
    #[error("reported series has a gap at {0}")]
    Gap(DateTime<Utc>),
    #[error(transparent)]
    Forecast(#[from] ForecastError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

/// Multiplicative under-reporting over `hours` samples from `start_hour`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheftScenario {
    pub theta: f64,
    pub start_hour: usize,
    pub hours: usize,
}

pub fn apply_theft(series: &TimeSeries, scenario: &TheftScenario) -> Result<TimeSeries, AnomalyError> {
    if !(0.0..1.0).contains(&scenario.theta) {
        return Err(AnomalyError::BadTheta(scenario.theta));
    }
    let end = scenario.start_hour + scenario.hours;
    if end > series.len() {
        return Err(AnomalyError::RangeOutOfSeries {
            start: scenario.start_hour,
            hours: scenario.hours,
            len: series.len(),
        });
    }
    let mut out = series.clone();
    for v in out.values[scenario.start_hour..end].iter_mut().flatten() {
        *v *= 1.0 - scenario.theta;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub theta: f64,
    /// percent, against reported values
    pub mape: f64,
}

/// MAPE of clean-history predictions against reported values
/// `actual * (1 - θ)` over `range`, one row per θ.
pub fn theft_sweep(
    model: &impl Forecaster,
    clean: &AlignedDataset,
    range: TimeRange,
    thetas: &[f64],
) -> Result<Vec<SweepRow>, AnomalyError> {
    let report = forecast_with_actuals(model, clean, range, 24)?;
    thetas
        .iter()
        .map(|&theta| {
            if !(0.0..1.0).contains(&theta) {
                return Err(AnomalyError::BadTheta(theta));
            }
            let reported: Vec<f64> = report.actuals.iter().map(|a| a * (1.0 - theta)).collect();
            Ok(SweepRow {
                theta,
                mape: mape(&reported, &report.predictions, DEFAULT_ZERO_FLOOR)?,
            })
        })
        .collect()
}

/// `theta,mape`
pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], writer: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["theta", "mape"])?;
    for r in rows {
        w.write_record([r.theta.to_string(), r.mape.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    /// hours
    pub window: usize,
    pub k: f64,
    /// kW floor on the predicted value in the residual denominator.
    pub floor: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            window: 24,
            k: 3.0,
            floor: 0.05,
        }
    }
}

impl DetectorConfig {
    fn validate(&self) -> Result<(), AnomalyError> {
        if self.window == 0 || !(self.k > 0.0) || !(self.floor > 0.0) {
            return Err(AnomalyError::BadDetector);
        }
        Ok(())
    }
}

/// Mean of `100·|r − p| / max(p, floor)` over each full trailing window;
/// entry `i` covers samples `i .. i + window`.
pub fn window_residuals(reported: &[f64], predicted: &[f64], cfg: &DetectorConfig) -> Vec<f64> {
    assert_eq!(reported.len(), predicted.len());
    let w = cfg.window;
    if reported.len() < w {
        return Vec::new();
    }
    let hourly: Vec<f64> = reported
        .iter()
        .zip(predicted)
        .map(|(r, p)| 100.0 * (r - p).abs() / p.max(cfg.floor))
        .collect();
    hourly.windows(w).map(|win| win.iter().sum::<f64>() / w as f64).collect()
}

/// Alarm threshold `μ + kσ` of clean window residuals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub mean: f64,
    pub std: f64,
    pub threshold: f64,
    pub windows: usize,
}

pub fn calibrate(clean_stats: &[f64], cfg: &DetectorConfig) -> Result<Calibration, AnomalyError> {
    cfg.validate()?;
    if clean_stats.is_empty() {
        return Err(AnomalyError::NoCalibration);
    }
    let n = clean_stats.len() as f64;
    let mean = clean_stats.iter().sum::<f64>() / n;
    let std = (clean_stats.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    Ok(Calibration {
        mean,
        std,
        threshold: mean + cfg.k * std,
        windows: clean_stats.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowStat {
    /// Last hour covered by the window.
    pub end: DateTime<Utc>,
    /// percent
    pub residual_pct: f64,
    pub alarm: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub calibration: Calibration,
    pub windows: Vec<WindowStat>,
}

impl DetectionReport {
    pub fn alarms(&self) -> impl Iterator<Item = &WindowStat> {
        self.windows.iter().filter(|w| w.alarm)
    }

    pub fn alarm_count(&self) -> usize {
        self.alarms().count()
    }

    /// Share of windows lying fully inside `range` that raised an alarm.
    pub fn alarm_rate_within(&self, range: TimeRange, window: usize) -> Option<f64> {
        let inside: Vec<&WindowStat> = self
            .windows
            .iter()
            .filter(|w| range.contains(w.end) && range.contains(w.end - Duration::hours(window as i64 - 1)))
            .collect();
        (!inside.is_empty()).then(|| inside.iter().filter(|w| w.alarm).count() as f64 / inside.len() as f64)
    }

    /// `end,residual_pct,alarm`
    pub fn write_csv<W: Write>(&self, writer: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["end", "residual_pct", "alarm"])?;
        for s in &self.windows {
            w.write_record([
                crate::dataio::format_timestamp(s.end),
                s.residual_pct.to_string(),
                (s.alarm as u8).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Flags windows whose residual exceeds the calibrated threshold.
pub fn detect(
    start: DateTime<Utc>,
    reported: &[f64],
    predicted: &[f64],
    calibration: &Calibration,
    cfg: &DetectorConfig,
) -> Result<DetectionReport, AnomalyError> {
    cfg.validate()?;
    if reported.len() != predicted.len() {
        return Err(AnomalyError::Misaligned(format!(
            "{} reported values vs {} predictions",
            reported.len(),
            predicted.len()
        )));
    }
    let windows = window_residuals(reported, predicted, cfg)
        .into_iter()
        .enumerate()
        .map(|(i, residual_pct)| WindowStat {
            end: start + Duration::hours((i + cfg.window - 1) as i64),
            residual_pct,
            alarm: residual_pct > calibration.threshold,
        })
        .collect();
    Ok(DetectionReport {
        calibration: *calibration,
        windows,
    })
}

/// Expected consumption over `hours` from `start`, forecast recursively from
/// trusted history before `start` so tampered readings never enter a window.
pub fn expected_consumption(
    model: &impl Forecaster,
    trusted: &AlignedDataset,
    start: DateTime<Utc>,
    hours: usize,
) -> Result<Vec<f64>, AnomalyError> {
    let history = history_before(trusted, start);
    if history.end() != start {
        return Err(ForecastError::Window {
            needed: model.spec().window_len,
            at: start,
        }
        .into());
    }
    Ok(forecast_recursive(model, &history, &trusted.weather(), hours)?)
}

/// Window residuals of clean data over spans of `hours` starting at each
/// origin, predicted the same way detection predicts.
pub fn clean_window_stats(
    model: &impl Forecaster,
    clean: &AlignedDataset,
    origins: &[DateTime<Utc>],
    hours: usize,
    cfg: &DetectorConfig,
) -> Result<Vec<f64>, AnomalyError> {
    let mut stats = Vec::new();
    for &origin in origins {
        let predicted = expected_consumption(model, clean, origin, hours)?;
        let actual = dense_span(clean, origin, hours)?;
        stats.extend(window_residuals(&actual, &predicted, cfg));
    }
    Ok(stats)
}

fn dense_span(d: &AlignedDataset, start: DateTime<Utc>, hours: usize) -> Result<Vec<f64>, AnomalyError> {
    (0..hours)
        .map(|h| {
            let t = start + Duration::hours(h as i64);
            d.get(t).map(|r| r.consumption).ok_or(AnomalyError::Gap(t))
        })
        .collect()
}

fn series_values(s: &TimeSeries) -> Result<Vec<f64>, AnomalyError> {
    s.values
        .iter()
        .enumerate()
        .map(|(i, v)| v.ok_or_else(|| AnomalyError::Gap(s.time_at(i))))
        .collect()
}

/// Consumer-level detection: `reported` is compared with expected
/// consumption forecast from `trusted` history before `reported.start`.
pub fn detect_consumer(
    model: &impl Forecaster,
    trusted: &AlignedDataset,
    reported: &TimeSeries,
    calibration: &Calibration,
    cfg: &DetectorConfig,
) -> Result<DetectionReport, AnomalyError> {
    let values = series_values(reported)?;
    let predicted = expected_consumption(model, trusted, reported.start, values.len())?;
    detect(reported.start, &values, &predicted, calibration, cfg)
}

/// Simulated master meter and its technical loss.
#[derive(Debug, Clone, PartialEq)]
pub struct Substation {
    pub master: TimeSeries,
    pub technical_loss: TimeSeries,
}

fn check_aligned(series: &[&TimeSeries]) -> Result<(), AnomalyError> {
    let first = series.first().ok_or_else(|| AnomalyError::Misaligned("no series".into()))?;
    for s in series {
        if s.start != first.start || s.step_secs != first.step_secs || s.len() != first.len() {
            return Err(AnomalyError::Misaligned(format!(
                "series starting {} ({} values) vs {} ({} values)",
                s.start,
                s.len(),
                first.start,
                first.len()
            )));
        }
    }
    Ok(())
}

/// `M_s = Σ M_u + TL` with `TL = f · M_s`, `f ~ N(tl_fraction, tl_noise)`
/// drawn per hour.
pub fn simulate_substation(
    consumers: &[TimeSeries],
    tl_fraction: f64,
    tl_noise: f64,
    seed: u64,
) -> Result<Substation, AnomalyError> {
    let refs: Vec<&TimeSeries> = consumers.iter().collect();
    check_aligned(&refs)?;
    let first = &consumers[0];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, tl_noise.max(0.0)).map_err(|e| AnomalyError::Misaligned(e.to_string()))?;
    let mut master = Vec::with_capacity(first.len());
    let mut loss = Vec::with_capacity(first.len());
    for i in 0..first.len() {
        let f = (tl_fraction + noise.sample(&mut rng)).clamp(0.0, 0.5);
        let total: Option<f64> = consumers.iter().map(|c| c.values[i]).sum();
        match total {
            Some(sum) => {
                let tl = sum * f / (1.0 - f);
                master.push(Some(sum + tl));
                loss.push(Some(tl));
            }
            None => {
                master.push(None);
                loss.push(None);
            }
        }
    }
    Ok(Substation {
        master: TimeSeries::new(first.start, first.step_secs, master),
        technical_loss: TimeSeries::new(first.start, first.step_secs, loss),
    })
}

/// `TL_o = M_s − Σ M_r`.
pub fn observed_loss(master: &TimeSeries, reported: &[TimeSeries]) -> Result<TimeSeries, AnomalyError> {
    let mut refs = vec![master];
    refs.extend(reported.iter());
    check_aligned(&refs)?;
    let values = (0..master.len())
        .map(|i| {
            let sum: Option<f64> = reported.iter().map(|r| r.values[i]).sum();
            Some(master.values[i]? - sum?)
        })
        .collect();
    Ok(TimeSeries::new(master.start, master.step_secs, values))
}

/// Region-level detection on `TL_o` against a loss model trained on the
/// clean-period loss series `trusted_loss`.
pub fn detect_substation(
    master: &TimeSeries,
    reported: &[TimeSeries],
    tl_model: &impl Forecaster,
    trusted_loss: &AlignedDataset,
    calibration: &Calibration,
    cfg: &DetectorConfig,
) -> Result<DetectionReport, AnomalyError> {
    let observed = observed_loss(master, reported)?;
    detect_consumer(tl_model, trusted_loss, &observed, calibration, cfg)
}

/// Origins every `step_hours` from `first` whose `hours`-long span ends no
/// later than `end`.
pub fn span_origins(first: DateTime<Utc>, end: DateTime<Utc>, step_hours: usize, hours: usize) -> Vec<DateTime<Utc>> {
    assert!(step_hours > 0);
    (0..)
        .map(|i| first + Duration::hours((i * step_hours) as i64))
        .take_while(|&o| o + Duration::hours(hours as i64) <= end)
        .collect()
}

/// Clean and tampered detection over the same span, calibrated on clean
/// spans before it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsumerScenario {
    pub theta: f64,
    pub calibration: Calibration,
    pub clean: DetectionReport,
    pub tampered: DetectionReport,
}

impl ConsumerScenario {
    pub fn false_alarm_rate(&self) -> f64 {
        rate(&self.clean)
    }

    pub fn detection_rate(&self) -> f64 {
        rate(&self.tampered)
    }
}

fn rate(r: &DetectionReport) -> f64 {
    if r.windows.is_empty() {
        return 0.0;
    }
    r.alarm_count() as f64 / r.windows.len() as f64
}

/// Calibrates on clean spans of `span.len_hours()` starting at each of
/// `calibration_origins`, then runs the detector over `span` as recorded
/// and with every reading reduced by `theta`.
pub fn consumer_scenario(
    model: &impl Forecaster,
    clean: &AlignedDataset,
    calibration_origins: &[DateTime<Utc>],
    span: TimeRange,
    theta: f64,
    cfg: &DetectorConfig,
) -> Result<ConsumerScenario, AnomalyError> {
    let hours = span.len_hours().max(0) as usize;
    let stats = clean_window_stats(model, clean, calibration_origins, hours, cfg)?;
    let calibration = calibrate(&stats, cfg)?;
    let recorded = TimeSeries::new(
        span.start,
        crate::dataio::HOUR_SECS,
        dense_span(clean, span.start, hours)?.into_iter().map(Some).collect(),
    );
    let tampered = apply_theft(
        &recorded,
        &TheftScenario {
            theta,
            start_hour: 0,
            hours,
        },
    )?;
    Ok(ConsumerScenario {
        theta,
        calibration,
        clean: detect_consumer(model, clean, &recorded, &calibration, cfg)?,
        tampered: detect_consumer(model, clean, &tampered, &calibration, cfg)?,
    })
}
