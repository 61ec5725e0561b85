use std::path::Path;

use chrono::{DateTime, Duration, Utc};
use serde::Serialize;

use powernet::anomaly::{consumer_scenario, span_origins, theft_sweep, write_sweep_csv, Calibration};
use powernet::features::{build_examples, Splits, TimeRange};
use powernet::forecast::{
    forecast_with_actuals, recursive_report, retraining_analysis, score_examples, Forecaster, ForecastMode,
    ForecastReport, Persistence, Score,
};
use powernet::training::SplitHours;

use crate::artifacts::{load_dataset, load_model, splits_for, LoadedModel};
use crate::cli::ModelArgs;
use crate::config::RunConfig;
use crate::error::{bail_input, CliResult, Failure, ResultExt};
use crate::output::Staged;

/// Model, dataset and splits for the reporting commands. Splits recorded
/// with the model apply unless `--splits` was given.
fn open(cfg: &RunConfig, args: &ModelArgs) -> CliResult<(LoadedModel, powernet::dataio::AlignedDataset, Splits)> {
    let (model, recorded) = load_model(args.model, &args.checkpoint)?;
    let d = load_dataset(cfg.data.dataset.as_deref())?;
    let hours: SplitHours = args.data.splits.unwrap_or(recorded);
    let splits = splits_for(&d, hours)?;
    Ok((model, d, splits))
}

#[derive(Debug, Serialize)]
struct SplitScores {
    train: Score,
    validation: Score,
    test: Score,
}

#[derive(Debug, Serialize)]
struct Evaluation {
    model: SplitScores,
    /// Value 24 hours before the target; absent when the window is shorter.
    persistence: Option<SplitScores>,
}

fn scores(model: &impl Forecaster, set: &powernet::features::ExampleSet) -> CliResult<SplitScores> {
    let score = |ex| score_examples(model, ex).map_err(Failure::input);
    Ok(SplitScores {
        train: score(&set.train)?,
        validation: score(&set.validation)?,
        test: score(&set.test)?,
    })
}

pub fn evaluate(cfg: &RunConfig, args: &ModelArgs, out: &Path) -> CliResult<()> {
    let (model, d, splits) = open(cfg, args)?;
    let set = build_examples(&d, model.spec(), splits).input("building examples")?;
    let model_scores = scores(&model, &set)?;
    let persistence = if model.spec().window_len >= 24 {
        let p = Persistence {
            spec: model.spec().clone(),
            period: 24,
        };
        Some(scores(&p, &set)?)
    } else {
        None
    };
    log::info!(
        "test MSE {} MAPE {}%",
        model_scores.test.mse,
        model_scores.test.mape
    );
    let mut staged = Staged::new();
    staged.json(
        "evaluation.json",
        &Evaluation {
            model: model_scores,
            persistence,
        },
    )?;
    staged.commit(out)
}

#[derive(Debug, Serialize)]
struct ForecastSummary {
    mode: ForecastMode,
    start: DateTime<Utc>,
    horizon: usize,
    cum_mape_24: Option<f64>,
    cum_mape_final: Option<f64>,
    cum_mse_final: f64,
}

fn summary(r: &ForecastReport) -> ForecastSummary {
    let last = r.curve.points.last().expect("non-empty forecast");
    ForecastSummary {
        mode: r.mode,
        start: r.start,
        horizon: r.horizon,
        cum_mape_24: r.curve.cum_mape_at(24),
        cum_mape_final: last.cum_mape,
        cum_mse_final: last.cum_mse,
    }
}

pub fn forecast(cfg: &RunConfig, args: &ModelArgs, out: &Path) -> CliResult<()> {
    let (model, d, splits) = open(cfg, args)?;
    let f = &cfg.forecast;
    if f.horizon == 0 {
        bail_input!("horizon must be at least 1");
    }
    let start = f.start.unwrap_or(splits.test.start);
    let span = TimeRange::hours(start, f.horizon as i64);
    let report = match f.mode {
        ForecastMode::Recursive => recursive_report(&model, &d, start, f.horizon, f.curve_window),
        ForecastMode::ActualHistory => forecast_with_actuals(&model, &d, span, f.curve_window),
    }
    .input("forecasting")?;
    let mut staged = Staged::new();
    staged.with("forecast.csv", |b| report.write_csv(b))?;
    staged.with("forecast_curve.csv", |b| report.curve.write_csv(b))?;
    staged.json("forecast_summary.json", &summary(&report))?;
    if !f.thresholds.is_empty() {
        let r = retraining_analysis(&model, &d, span, &f.thresholds).input("retraining analysis")?;
        staged.with("retraining.csv", |b| r.write_csv(b))?;
        staged.json("retraining.json", &r)?;
    }
    staged.commit(out)
}

#[derive(Debug, Serialize)]
struct AnomalySummary {
    sweep_range: TimeRange,
    detect_theta: f64,
    calibration: Calibration,
    calibration_spans: usize,
    false_alarm_rate: f64,
    detection_rate: f64,
}

pub fn anomaly(cfg: &RunConfig, args: &ModelArgs, out: &Path) -> CliResult<()> {
    let (model, d, splits) = open(cfg, args)?;
    let a = &cfg.anomaly;
    if a.thetas.is_empty() {
        bail_input!("no theft fractions given");
    }
    if a.calibration_step_hours == 0 {
        bail_input!("calibration_step_hours must be at least 1");
    }
    let sweep = theft_sweep(&model, &d, splits.test, &a.thetas).input("theft sweep")?;

    let first = splits.train.start + Duration::hours(model.spec().window_len as i64);
    let hours = splits.test.len_hours() as usize;
    let origins = span_origins(first, splits.test.start, a.calibration_step_hours, hours);
    if origins.is_empty() {
        bail_input!("no clean {hours}-hour span fits before the test split for calibration");
    }
    let scenario = consumer_scenario(&model, &d, &origins, splits.test, a.detect_theta, &a.detector)
        .input("consumer detection")?;
    log::info!(
        "false alarms {:.3}, detections {:.3} at theta {}",
        scenario.false_alarm_rate(),
        scenario.detection_rate(),
        a.detect_theta
    );

    let mut staged = Staged::new();
    staged.with("theft_sweep.csv", |b| write_sweep_csv(&sweep, b))?;
    staged.with("detection_clean.csv", |b| scenario.clean.write_csv(b))?;
    staged.with("detection_tampered.csv", |b| scenario.tampered.write_csv(b))?;
    staged.json(
        "anomaly.json",
        &AnomalySummary {
            sweep_range: splits.test,
            detect_theta: a.detect_theta,
            calibration: scenario.calibration,
            calibration_spans: origins.len(),
            false_alarm_rate: scenario.false_alarm_rate(),
            detection_rate: scenario.detection_rate(),
        },
    )?;
    staged.commit(out)
}
