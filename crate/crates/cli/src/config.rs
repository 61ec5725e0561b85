//! The JSON run configuration. Every field has a default and a matching
//! command-line flag; flags win over file values.

use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use powernet::anomaly::DetectorConfig;
use powernet::baselines::GbtGrid;
use powernet::dataio::{MeterFormat, DEFAULT_MAX_FILL_RUN, DEFAULT_UTC_OFFSET_SECS};
use powernet::features::{DEFAULT_ACF_THRESHOLD, DEFAULT_DAYTIME};
use powernet::forecast::{ForecastMode, DEFAULT_CURVE_WINDOW};
use powernet::training::TrainConfig;

use crate::error::{CliResult, ResultExt};

pub const DEFAULT_OUTPUT_DIR: &str = "powernet-out";
pub const OUTPUT_ENV: &str = "POWERNET_OUT";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub synth: SynthOptions,
    pub features: FeatureConfig,
    pub train: TrainConfig,
    pub gbt: GbtGrid,
    pub forecast: ForecastConfig,
    pub anomaly: AnomalyConfig,
    pub output_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).input(format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).input(format!("parsing config {}", path.display()))
    }

    /// Flag, then config file, then the environment, then the default.
    pub fn output_dir(&self, flag: Option<PathBuf>) -> PathBuf {
        flag.or_else(|| self.output_dir.clone())
            .or_else(|| std::env::var_os(OUTPUT_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Meter CSV files, or directories whose `*.csv` files are all read.
    pub consumption: Vec<PathBuf>,
    pub weather: Option<PathBuf>,
    /// Aligned dataset read by the modelling commands.
    pub dataset: Option<PathBuf>,
    pub format: MeterFormat,
    pub utc_offset_secs: i32,
    pub aggregate: bool,
    /// Longest interior hourly gap filled by interpolation.
    pub max_fill_run: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            consumption: Vec::new(),
            weather: None,
            dataset: None,
            format: MeterFormat::PerQuarterHour,
            utc_offset_secs: DEFAULT_UTC_OFFSET_SECS,
            aggregate: false,
            max_fill_run: DEFAULT_MAX_FILL_RUN,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthOptions {
    pub start: DateTime<Utc>,
    pub days: usize,
    pub apartments: usize,
    pub format: MeterFormat,
    pub seed: u64,
    pub missing_prob: f64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        let d = powernet::dataio::synth::SynthConfig::default();
        Self {
            start: d.start,
            days: d.days,
            apartments: d.apartments,
            format: d.format,
            seed: d.seed,
            missing_prob: d.missing_prob,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    /// `null` selects the window from the autocorrelation of the training split.
    pub window_len: Option<usize>,
    pub acf_threshold: f64,
    pub acf_max_lag: usize,
    pub daytime_range: (u32, u32),
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            window_len: Some(24),
            acf_threshold: DEFAULT_ACF_THRESHOLD,
            acf_max_lag: 168,
            daytime_range: DEFAULT_DAYTIME,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForecastConfig {
    pub mode: ForecastMode,
    pub horizon: usize,
    /// Defaults to the start of the test split.
    pub start: Option<DateTime<Utc>>,
    pub curve_window: usize,
    /// Cumulative MAPE thresholds (percent) for the retraining table.
    pub thresholds: Vec<f64>,
}

impl Default for ForecastConfig {
    fn default() -> Self {
        Self {
            mode: ForecastMode::Recursive,
            horizon: 720,
            start: None,
            curve_window: DEFAULT_CURVE_WINDOW,
            thresholds: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnomalyConfig {
    pub thetas: Vec<f64>,
    /// Theft fraction injected for the detector run.
    pub detect_theta: f64,
    /// Spacing of the clean calibration spans.
    pub calibration_step_hours: usize,
    pub detector: DetectorConfig,
}

impl Default for AnomalyConfig {
    fn default() -> Self {
        Self {
            thetas: theta_range(0.1, 0.9, 0.1),
            detect_theta: 0.5,
            calibration_step_hours: 6,
            detector: DetectorConfig::default(),
        }
    }
}

fn theta_range(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step + 1e-9).floor() as usize + 1;
    (0..n).map(|i| ((lo + i as f64 * step) * 1e12).round() / 1e12).collect()
}

/// Parses `a..b` (step 0.1), `a..b:step` or a comma-separated list.
pub fn parse_thetas(s: &str) -> Result<Vec<f64>, String> {
    let num = |p: &str| p.trim().parse::<f64>().map_err(|_| format!("bad number `{p}` in `{s}`"));
    if let Some((lo, rest)) = s.split_once("..") {
        let (hi, step) = match rest.split_once(':') {
            Some((hi, step)) => (num(hi)?, num(step)?),
            None => (num(rest)?, 0.1),
        };
        let lo = num(lo)?;
        if !(step > 0.0) || hi < lo {
            return Err(format!("empty or invalid range `{s}`"));
        }
        return Ok(theta_range(lo, hi, step));
    }
    s.split(',').map(num).collect()
}

/// Parses a comma-separated list.
pub fn parse_list<T: std::str::FromStr>(s: &str) -> Result<Vec<T>, String> {
    s.split(',')
        .map(|p| p.trim().parse::<T>().map_err(|_| format!("bad list entry `{p}`")))
        .collect()
}

/// Comma-separated flag value.
#[derive(Debug, Clone, PartialEq)]
pub struct ListArg<T>(pub Vec<T>);

impl<T: std::str::FromStr> std::str::FromStr for ListArg<T> {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_list(s).map(ListArg)
    }
}

/// Theft fractions in any form [`parse_thetas`] accepts.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaArg(pub Vec<f64>);

impl std::str::FromStr for ThetaArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_thetas(s).map(ThetaArg)
    }
}

/// `auto` or a positive window length.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowArg(pub Option<usize>);

impl std::str::FromStr for WindowArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "auto" {
            return Ok(WindowArg(None));
        }
        match s.parse::<usize>() {
            Ok(n) if n > 0 => Ok(WindowArg(Some(n))),
            _ => Err(format!("expected `auto` or a positive integer, got `{s}`")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn theta_ranges() {
        assert_eq!(
            parse_thetas("0.1..0.9").unwrap(),
            [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9]
        );
        assert_eq!(parse_thetas("0..1:0.25").unwrap(), [0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(parse_thetas("0.5, 0.2").unwrap(), [0.5, 0.2]);
        assert!(parse_thetas("0.9..0.1").is_err());
        assert!(parse_thetas("x").is_err());
        assert_eq!(AnomalyConfig::default().thetas.len(), 9);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"train": {"learning_rate": 0.01}}"#).is_ok());
        assert!(serde_json::from_str::<RunConfig>(r#"{"trian": {}}"#).is_err());
        assert!(serde_json::from_str::<RunConfig>(r#"{"train": {"lr": 0.01}}"#).is_err());
        assert!(serde_json::from_str::<RunConfig>(r#"{"anomaly": {"detector": {"kk": 3}}}"#).is_err());
    }

    #[test]
    fn default_round_trips() {
        let cfg = RunConfig::default();
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<RunConfig>(&text).unwrap(), cfg);
    }

    #[test]
    fn window_arg() {
        assert_eq!("auto".parse::<WindowArg>().unwrap(), WindowArg(None));
        assert_eq!("12".parse::<WindowArg>().unwrap(), WindowArg(Some(12)));
        assert!("0".parse::<WindowArg>().is_err());
    }
}
