use std::path::PathBuf;

use chrono::{DateTime, Utc};
use clap::{Args, Parser, Subcommand, ValueEnum};

use powernet::dataio::MeterFormat;
use powernet::forecast::ForecastMode;
use powernet::training::SplitHours;

use crate::config::{ListArg, RunConfig, ThetaArg, WindowArg};

#[derive(Debug, Parser)]
#[command(name = "powernet", version, about = "Short-term power demand forecasting and theft detection")]
pub struct Cli {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory [default: $POWERNET_OUT, then ./powernet-out].
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic meter and weather fixture.
    Synth(SynthArgs),
    /// Resample, aggregate and join meter files with weather.
    Ingest(IngestArgs),
    /// Train one model and write its checkpoint.
    Train(TrainArgs),
    /// Search the model's hyperparameter grid on the validation split.
    GridSearch(TrainArgs),
    /// One-step errors on every split.
    Evaluate(ModelArgs),
    /// Multi-step forecast with error curves.
    Forecast(ForecastArgs),
    /// Theft sweep and consumer-level detection.
    Anomaly(AnomalyArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelKind {
    Powernet,
    Gbt,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub days: Option<usize>,
    #[arg(long)]
    pub apartments: Option<usize>,
    /// `per_minute` or `per_quarter_hour`.
    #[arg(long)]
    pub format: Option<MeterFormat>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// RFC 3339 start of the first hour.
    #[arg(long)]
    pub start: Option<DateTime<Utc>>,
    #[arg(long)]
    pub missing_prob: Option<f64>,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Meter CSV files or directories of them.
    #[arg(long, num_args = 1..)]
    pub consumption: Vec<PathBuf>,
    #[arg(long)]
    pub weather: Option<PathBuf>,
    /// Sum all meters into one series.
    #[arg(long)]
    pub aggregate: bool,
    #[arg(long)]
    pub format: Option<MeterFormat>,
    #[arg(long, allow_hyphen_values = true)]
    pub utc_offset_secs: Option<i32>,
    #[arg(long)]
    pub max_fill_run: Option<usize>,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Aligned dataset written by `ingest`.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Split lengths in hours, `train:validation:test`.
    #[arg(long)]
    pub splits: Option<SplitHours>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_enum, default_value_t = ModelKind::Powernet)]
    pub model: ModelKind,
    #[command(flatten)]
    pub data: DataArgs,
    /// History window: a length in hours or `auto`.
    #[arg(long)]
    pub window: Option<WindowArg>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub memory_size: Option<usize>,
    /// Comma-separated memory sizes for `grid-search`.
    #[arg(long)]
    pub memory_grid: Option<ListArg<usize>>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub l2: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    #[arg(long, value_enum, default_value_t = ModelKind::Powernet)]
    pub model: ModelKind,
    /// Checkpoint (`powernet`) or tree bundle (`gbt`) written by `train`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
}

#[derive(Debug, Args)]
pub struct ForecastArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// `recursive` or `actual`.
    #[arg(long)]
    pub mode: Option<ForecastMode>,
    #[arg(long)]
    pub horizon: Option<usize>,
    /// RFC 3339 first forecast hour [default: start of the test split].
    #[arg(long)]
    pub start: Option<DateTime<Utc>>,
    /// Comma-separated cumulative MAPE thresholds in percent.
    #[arg(long)]
    pub thresholds: Option<ListArg<f64>>,
}

#[derive(Debug, Args)]
pub struct AnomalyArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// `a..b`, `a..b:step` or a comma-separated list.
    #[arg(long)]
    pub thetas: Option<ThetaArg>,
    #[arg(long)]
    pub detect_theta: Option<f64>,
    #[arg(long)]
    pub k: Option<f64>,
    #[arg(long)]
    pub window_hours: Option<usize>,
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

impl SynthArgs {
    pub fn apply(&self, cfg: &mut RunConfig) {
        let s = &mut cfg.synth;
        set(&mut s.days, self.days);
        set(&mut s.apartments, self.apartments);
        set(&mut s.format, self.format);
        set(&mut s.seed, self.seed);
        set(&mut s.start, self.start);
        set(&mut s.missing_prob, self.missing_prob);
    }
}

impl IngestArgs {
    pub fn apply(&self, cfg: &mut RunConfig) {
        let d = &mut cfg.data;
        if !self.consumption.is_empty() {
            d.consumption = self.consumption.clone();
        }
        if self.weather.is_some() {
            d.weather = self.weather.clone();
        }
        d.aggregate |= self.aggregate;
        set(&mut d.format, self.format);
        set(&mut d.utc_offset_secs, self.utc_offset_secs);
        set(&mut d.max_fill_run, self.max_fill_run);
    }
}

impl DataArgs {
    pub fn apply(&self, cfg: &mut RunConfig) {
        if self.dataset.is_some() {
            cfg.data.dataset = self.dataset.clone();
        }
        set(&mut cfg.train.splits, self.splits);
    }
}

impl TrainArgs {
    pub fn apply(&self, cfg: &mut RunConfig) {
        self.data.apply(cfg);
        if let Some(WindowArg(w)) = self.window {
            cfg.features.window_len = w;
        }
        let t = &mut cfg.train;
        set(&mut t.seed, self.seed);
        set(&mut t.memory_size, self.memory_size);
        set(&mut t.memory_size_grid, self.memory_grid.clone().map(|l| l.0));
        set(&mut t.learning_rate, self.learning_rate);
        set(&mut t.batch_size, self.batch_size);
        set(&mut t.max_epochs, self.max_epochs);
        set(&mut t.patience, self.patience);
        set(&mut t.dropout_rate, self.dropout);
        set(&mut t.l2_lambda, self.l2);
    }
}

impl ForecastArgs {
    pub fn apply(&self, cfg: &mut RunConfig) {
        self.model.data.apply(cfg);
        let f = &mut cfg.forecast;
        set(&mut f.mode, self.mode);
        set(&mut f.horizon, self.horizon);
        if self.start.is_some() {
            f.start = self.start;
        }
        set(&mut f.thresholds, self.thresholds.clone().map(|l| l.0));
    }
}

impl AnomalyArgs {
    pub fn apply(&self, cfg: &mut RunConfig) {
        self.model.data.apply(cfg);
        let a = &mut cfg.anomaly;
        set(&mut a.thetas, self.thetas.clone().map(|t| t.0));
        set(&mut a.detect_theta, self.detect_theta);
        set(&mut a.detector.k, self.k);
        set(&mut a.detector.window, self.window_hours);
    }
}
