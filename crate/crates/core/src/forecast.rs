//! Multi-step forecasting with trained models.
//!
//! Recursive mode feeds each prediction back into the window of the next
//! one; actual-history mode always uses observed consumption. Both take
//! weather from recorded rows.

use std::io::Write;

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::GbtModel;
use crate::dataio::{format_timestamp, AlignedDataset, TimeSeries, WeatherRow, WeatherTable, HOUR_SECS};
use crate::features::{make_example, Example, FeatureSpec, TimeRange, EXOGENOUS_FEATURES};
use crate::metrics::{error_curve, mape, mse, ErrorCurve, MetricError, DEFAULT_ZERO_FLOOR};
use crate::model::{self, ModelError, PowerNetParams};

/// Rolling window of emitted error curves.
pub const DEFAULT_CURVE_WINDOW: usize = 24;

#[derive(Debug, Error)]
pub enum ForecastError {
    #[error("no complete {needed}-hour window before {at}")]
    Window { needed: usize, at: DateTime<Utc> },
    #[error("no weather row for {0}")]
    MissingWeather(DateTime<Utc>),
    #[error("no observed consumption for {0}")]
    MissingActual(DateTime<Utc>),
    #[error("history must be hourly, got a {0} s step")]
    NotHourly(i64),
    #[error("horizon must be at least 1")]
    ZeroHorizon,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

/// A fitted point model working on normalized features.
pub trait Forecaster {
    fn spec(&self) -> &FeatureSpec;

    fn predict_normalized(&self, window: &[f64], exogenous: &[f64; EXOGENOUS_FEATURES]) -> Result<f64, ModelError>;

    /// Prediction in kW for hour `t`, clamped at zero.
    fn predict_kw(&self, raw_window: &[f64], weather: &WeatherRow, t: DateTime<Utc>) -> Result<f64, ModelError> {
        let spec = self.spec();
        let x = make_example(spec, raw_window, weather, t, 0.0);
        let y = self.predict_normalized(&x.window, &x.exogenous())?;
        Ok(spec.denormalize_consumption(y).max(0.0))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerNetModel {
    pub params: PowerNetParams,
    pub spec: FeatureSpec,
}

impl Forecaster for PowerNetModel {
    fn spec(&self) -> &FeatureSpec {
        &self.spec
    }

    fn predict_normalized(&self, window: &[f64], exogenous: &[f64; EXOGENOUS_FEATURES]) -> Result<f64, ModelError> {
        model::infer(window, exogenous, &self.params)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GbtForecaster {
    pub model: GbtModel,
    pub spec: FeatureSpec,
}

impl Forecaster for GbtForecaster {
    fn spec(&self) -> &FeatureSpec {
        &self.spec
    }

    fn predict_normalized(&self, window: &[f64], exogenous: &[f64; EXOGENOUS_FEATURES]) -> Result<f64, ModelError> {
        let mut flat = Vec::with_capacity(window.len() + EXOGENOUS_FEATURES);
        flat.extend_from_slice(window);
        flat.extend_from_slice(exogenous);
        if flat.len() != self.model.feature_len {
            return Err(ModelError::Shape(format!(
                "tree model expects {} features, got {}",
                self.model.feature_len,
                flat.len()
            )));
        }
        Ok(self.model.predict(&flat))
    }
}

/// Seasonal naive model: the value one `period` before the target hour.
#[derive(Debug, Clone, PartialEq)]
pub struct Persistence {
    pub spec: FeatureSpec,
    pub period: usize,
}

impl Forecaster for Persistence {
    fn spec(&self) -> &FeatureSpec {
        &self.spec
    }

    fn predict_normalized(&self, window: &[f64], _: &[f64; EXOGENOUS_FEATURES]) -> Result<f64, ModelError> {
        if self.period == 0 || window.len() < self.period {
            return Err(ModelError::Shape(format!(
                "persistence with period {} needs a window of at least that length, got {}",
                self.period,
                window.len()
            )));
        }
        Ok(window[window.len() - self.period])
    }
}

/// One-step errors over prepared examples, in kW.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub hours: usize,
    pub mse: f64,
    /// percent
    pub mape: f64,
}

/// Scores `model` on examples with the same denormalization and clamp as
/// [`Forecaster::predict_kw`].
pub fn score_examples(model: &impl Forecaster, examples: &[Example]) -> Result<Score, ForecastError> {
    let spec = model.spec();
    let mut predicted = Vec::with_capacity(examples.len());
    let mut actual = Vec::with_capacity(examples.len());
    for ex in examples {
        let y = model.predict_normalized(&ex.window, &ex.exogenous())?;
        predicted.push(spec.denormalize_consumption(y).max(0.0));
        actual.push(spec.denormalize_consumption(ex.target));
    }
    Ok(Score {
        hours: examples.len(),
        mse: mse(&actual, &predicted)?,
        mape: mape(&actual, &predicted, DEFAULT_ZERO_FLOOR)?,
    })
}

/// Forecasts `horizon` hours following `history`, feeding predictions back
/// as consumption history.
pub fn forecast_recursive(
    model: &impl Forecaster,
    history: &TimeSeries,
    future_weather: &WeatherTable,
    horizon: usize,
) -> Result<Vec<f64>, ForecastError> {
    if history.step_secs != HOUR_SECS {
        return Err(ForecastError::NotHourly(history.step_secs));
    }
    if horizon == 0 {
        return Err(ForecastError::ZeroHorizon);
    }
    let n = model.spec().window_len;
    let start = history.end();
    let len = history.len();
    let tail: Option<Vec<f64>> = if len >= n {
        history.values[len - n..].iter().copied().collect()
    } else {
        None
    };
    let mut buf = tail.ok_or(ForecastError::Window { needed: n, at: start })?;
    let mut out = Vec::with_capacity(horizon);
    for h in 0..horizon {
        let t = start + Duration::hours(h as i64);
        let weather = future_weather.find(t).ok_or(ForecastError::MissingWeather(t))?;
        let y = model.predict_kw(&buf[buf.len() - n..], weather, t)?;
        buf.push(y);
        out.push(y);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForecastMode {
    Recursive,
    ActualHistory,
}

impl std::str::FromStr for ForecastMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "recursive" => Ok(Self::Recursive),
            "actual" | "actual_history" | "actual-history" => Ok(Self::ActualHistory),
            other => Err(format!("unknown forecast mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastReport {
    pub mode: ForecastMode,
    pub start: DateTime<Utc>,
    pub horizon: usize,
    /// kW
    pub predictions: Vec<f64>,
    /// kW
    pub actuals: Vec<f64>,
    pub curve: ErrorCurve,
}

impl ForecastReport {
    pub fn new(
        mode: ForecastMode,
        start: DateTime<Utc>,
        predictions: Vec<f64>,
        actuals: Vec<f64>,
        curve_window: usize,
    ) -> Result<Self, ForecastError> {
        let curve = error_curve(&actuals, &predictions, curve_window, DEFAULT_ZERO_FLOOR)?;
        Ok(Self {
            mode,
            start,
            horizon: predictions.len(),
            predictions,
            actuals,
            curve,
        })
    }

    pub fn time_at(&self, i: usize) -> DateTime<Utc> {
        self.start + Duration::hours(i as i64)
    }

    /// `hour,time,actual,predicted` with 1-based hours.
    pub fn write_csv<W: Write>(&self, writer: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["hour", "time", "actual", "predicted"])?;
        for i in 0..self.horizon {
            w.write_record([
                (i + 1).to_string(),
                format_timestamp(self.time_at(i)),
                self.actuals[i].to_string(),
                self.predictions[i].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn actuals(d: &AlignedDataset, start: DateTime<Utc>, horizon: usize) -> Result<Vec<f64>, ForecastError> {
    (0..horizon)
        .map(|h| {
            let t = start + Duration::hours(h as i64);
            d.get(t).map(|r| r.consumption).ok_or(ForecastError::MissingActual(t))
        })
        .collect()
}

/// Observed hourly consumption strictly before `t`.
pub fn history_before(d: &AlignedDataset, t: DateTime<Utc>) -> TimeSeries {
    let series = d.consumption_series();
    let cut = ((t - series.start).num_seconds() / HOUR_SECS).clamp(0, series.len() as i64) as usize;
    TimeSeries::new(series.start, HOUR_SECS, series.values[..cut].to_vec())
}

/// Recursive forecast from `start` using the data before it as history and
/// the dataset's own weather and consumption as future inputs and actuals.
pub fn recursive_report(
    model: &impl Forecaster,
    d: &AlignedDataset,
    start: DateTime<Utc>,
    horizon: usize,
    curve_window: usize,
) -> Result<ForecastReport, ForecastError> {
    let history = history_before(d, start);
    if history.end() != start {
        return Err(ForecastError::Window {
            needed: model.spec().window_len,
            at: start,
        });
    }
    let predictions = forecast_recursive(model, &history, &d.weather(), horizon)?;
    let actual = actuals(d, start, horizon)?;
    ForecastReport::new(ForecastMode::Recursive, start, predictions, actual, curve_window)
}

/// One-step-ahead predictions for every hour of `range` from observed history.
pub fn forecast_with_actuals(
    model: &impl Forecaster,
    d: &AlignedDataset,
    range: TimeRange,
    curve_window: usize,
) -> Result<ForecastReport, ForecastError> {
    let n = model.spec().window_len;
    let series = d.consumption_series();
    let mut predictions = Vec::new();
    let mut actual = Vec::new();
    for t in range.iter_hours() {
        let row = d.get(t).ok_or(ForecastError::MissingActual(t))?;
        let idx = series.index_of(t).expect("row lies on the series grid");
        let window: Option<Vec<f64>> = if idx >= n {
            series.values[idx - n..idx].iter().copied().collect()
        } else {
            None
        };
        let window = window.ok_or(ForecastError::Window { needed: n, at: t })?;
        predictions.push(model.predict_kw(&window, &row.weather, t)?);
        actual.push(row.consumption);
    }
    if predictions.is_empty() {
        return Err(ForecastError::ZeroHorizon);
    }
    ForecastReport::new(ForecastMode::ActualHistory, range.start, predictions, actual, curve_window)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Crossing {
    /// percent
    pub threshold: f64,
    /// First elapsed hour with cumulative MAPE above the threshold.
    pub elapsed_hours: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrainingReport {
    pub start: DateTime<Utc>,
    pub span_hours: usize,
    pub crossings: Vec<Crossing>,
    pub curve: ErrorCurve,
}

/// How long a model trained once stays under each MAPE threshold when
/// predicting from observed history.
pub fn retraining_analysis(
    model: &impl Forecaster,
    d: &AlignedDataset,
    span: TimeRange,
    thresholds: &[f64],
) -> Result<RetrainingReport, ForecastError> {
    let report = forecast_with_actuals(model, d, span, DEFAULT_CURVE_WINDOW)?;
    let crossings = thresholds
        .iter()
        .map(|&threshold| Crossing {
            threshold,
            elapsed_hours: report.curve.first_crossing(threshold),
        })
        .collect();
    Ok(RetrainingReport {
        start: span.start,
        span_hours: report.horizon,
        crossings,
        curve: report.curve,
    })
}

impl RetrainingReport {
    /// `threshold,elapsed_hours`, empty when never crossed.
    pub fn write_csv<W: Write>(&self, writer: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["threshold", "elapsed_hours"])?;
        for c in &self.crossings {
            w.write_record([
                c.threshold.to_string(),
                c.elapsed_hours.map(|h| h.to_string()).unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}
