//! Model artifacts on disk and the helpers shared by the modelling commands.

use std::path::Path;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use powernet::baselines::GbtModel;
use powernet::checkpoint::Checkpoint;
use powernet::dataio::{AlignedDataset, WeatherRow};
use powernet::features::{FeatureSpec, Splits, EXOGENOUS_FEATURES};
use powernet::forecast::{Forecaster, GbtForecaster, PowerNetModel};
use powernet::model::ModelError;
use powernet::training::SplitHours;

use crate::cli::ModelKind;
use crate::error::{bail_input, CliResult, ResultExt};

pub const GBT_BUNDLE_VERSION: u32 = 1;

/// A tree ensemble with the feature spec and splits it was fitted under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtBundle {
    pub format_version: u32,
    pub feature_spec: FeatureSpec,
    pub splits: SplitHours,
    pub model: GbtModel,
}

impl GbtBundle {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).input(format!("reading {}", path.display()))?;
        let bundle: GbtBundle = serde_json::from_str(&text).input(format!("parsing {}", path.display()))?;
        if bundle.format_version != GBT_BUNDLE_VERSION {
            bail_input!(
                "{}: unsupported tree bundle version {}, expected {}",
                path.display(),
                bundle.format_version,
                GBT_BUNDLE_VERSION
            );
        }
        bundle.feature_spec.check_version().input(format!("{}", path.display()))?;
        Ok(bundle)
    }
}

pub enum LoadedModel {
    PowerNet(PowerNetModel),
    Gbt(GbtForecaster),
}

impl Forecaster for LoadedModel {
    fn spec(&self) -> &FeatureSpec {
        match self {
            LoadedModel::PowerNet(m) => m.spec(),
            LoadedModel::Gbt(m) => m.spec(),
        }
    }

    fn predict_normalized(&self, window: &[f64], exogenous: &[f64; EXOGENOUS_FEATURES]) -> Result<f64, ModelError> {
        match self {
            LoadedModel::PowerNet(m) => m.predict_normalized(window, exogenous),
            LoadedModel::Gbt(m) => m.predict_normalized(window, exogenous),
        }
    }

    fn predict_kw(&self, raw_window: &[f64], weather: &WeatherRow, t: DateTime<Utc>) -> Result<f64, ModelError> {
        match self {
            LoadedModel::PowerNet(m) => m.predict_kw(raw_window, weather, t),
            LoadedModel::Gbt(m) => m.predict_kw(raw_window, weather, t),
        }
    }
}

/// Loads a model and the split lengths recorded with it.
pub fn load_model(kind: ModelKind, path: &Path) -> CliResult<(LoadedModel, SplitHours)> {
    if !path.is_file() {
        bail_input!("model file {} does not exist", path.display());
    }
    match kind {
        ModelKind::Powernet => {
            let ck = Checkpoint::load(path).input(format!("loading checkpoint {}", path.display()))?;
            let params = ck.params().input(format!("checkpoint {}", path.display()))?;
            let splits = ck.hyperparameters.splits;
            Ok((
                LoadedModel::PowerNet(PowerNetModel {
                    params,
                    spec: ck.feature_spec,
                }),
                splits,
            ))
        }
        ModelKind::Gbt => {
            let b = GbtBundle::load(path)?;
            Ok((
                LoadedModel::Gbt(GbtForecaster {
                    model: b.model,
                    spec: b.feature_spec,
                }),
                b.splits,
            ))
        }
    }
}

pub fn load_dataset(path: Option<&Path>) -> CliResult<AlignedDataset> {
    let Some(path) = path else {
        bail_input!("no dataset given; pass --dataset or set data.dataset in the config");
    };
    if !path.is_file() {
        bail_input!("dataset {} does not exist", path.display());
    }
    let d = AlignedDataset::load(path).input(format!("loading dataset {}", path.display()))?;
    if d.is_empty() {
        bail_input!("dataset {} has no rows", path.display());
    }
    Ok(d)
}

/// Consecutive splits anchored at the first hour of `d`.
pub fn splits_for(d: &AlignedDataset, hours: SplitHours) -> CliResult<Splits> {
    let start = d.start().expect("dataset checked non-empty");
    let splits = Splits::consecutive(start, hours.train, hours.validation, hours.test);
    let end = d.end().expect("dataset checked non-empty");
    if splits.test.end > end {
        bail_input!(
            "splits {}:{}:{} need data through {}, dataset ends at {}",
            hours.train,
            hours.validation,
            hours.test,
            splits.test.end,
            end
        );
    }
    Ok(splits)
}
