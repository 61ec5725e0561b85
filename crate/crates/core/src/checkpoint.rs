//! Versioned JSON checkpoints for trained PowerNet models.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{FeatureSpec, FEATURE_SPEC_VERSION};
use crate::model::{Architecture, PowerNetParams};
use crate::training::TrainConfig;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("unsupported checkpoint version {found}, expected {expected}")]
    Version { found: u32, expected: u32 },
    #[error("checkpoint feature spec has version {found}, this build reads {expected}")]
    FeatureVersion { found: u32, expected: u32 },
    #[error("parameter array `{name}`: {reason}")]
    Param { name: String, reason: String },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io error on {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamArray {
    pub name: String,
    /// Empty for scalars.
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub architecture: Architecture,
    pub hyperparameters: TrainConfig,
    pub feature_spec: FeatureSpec,
    pub parameters: Vec<ParamArray>,
    pub seed: u64,
}

impl Checkpoint {
    pub fn new(params: &PowerNetParams, spec: &FeatureSpec, cfg: &TrainConfig) -> Self {
        let parameters = params
            .named_slices()
            .into_iter()
            .map(|(name, shape, data)| ParamArray {
                name,
                shape,
                data: data.to_vec(),
            })
            .collect();
        Self {
            format_version: CHECKPOINT_VERSION,
            architecture: params.architecture(),
            hyperparameters: cfg.clone(),
            feature_spec: spec.clone(),
            parameters,
            seed: cfg.seed,
        }
    }

    /// Rebuilds the parameters, checking every declared shape.
    pub fn params(&self) -> Result<PowerNetParams, CheckpointError> {
        let mut p = PowerNetParams::zeros(self.architecture);
        let expected: Vec<(String, Vec<usize>)> = p
            .named_slices()
            .into_iter()
            .map(|(n, s, _)| (n, s))
            .collect();
        if expected.len() != self.parameters.len() {
            return Err(CheckpointError::Param {
                name: "*".into(),
                reason: format!("expected {} arrays, found {}", expected.len(), self.parameters.len()),
            });
        }
        for ((name, shape), arr) in expected.iter().zip(&self.parameters) {
            let bad = |reason: String| CheckpointError::Param {
                name: arr.name.clone(),
                reason,
            };
            if &arr.name != name {
                return Err(bad(format!("expected `{name}` at this position")));
            }
            if &arr.shape != shape {
                return Err(bad(format!("shape {:?} does not match {:?}", arr.shape, shape)));
            }
            if arr.data.len() != shape.iter().product::<usize>() {
                return Err(bad(format!("{} values for shape {:?}", arr.data.len(), shape)));
            }
        }
        let flat: Vec<f64> = self.parameters.iter().flat_map(|a| a.data.iter().copied()).collect();
        p.assign_flat(&flat);
        Ok(p)
    }

    pub fn to_json(&self) -> Result<String, CheckpointError> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self, CheckpointError> {
        #[derive(Deserialize)]
        struct Header {
            format_version: u32,
        }
        let header: Header = serde_json::from_str(s)?;
        if header.format_version != CHECKPOINT_VERSION {
            return Err(CheckpointError::Version {
                found: header.format_version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let ck: Checkpoint = serde_json::from_str(s)?;
        if ck.feature_spec.format_version != FEATURE_SPEC_VERSION {
            return Err(CheckpointError::FeatureVersion {
                found: ck.feature_spec.format_version,
                expected: FEATURE_SPEC_VERSION,
            });
        }
        Ok(ck)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|source| CheckpointError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CheckpointError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| CheckpointError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::synth::sinusoid_dataset;
    use crate::features::{FeatureOptions, TimeRange};
    use crate::model::init_params;
    use chrono::{TimeZone, Utc};

    fn fixture() -> (PowerNetParams, FeatureSpec, TrainConfig) {
        let start = Utc.with_ymd_and_hms(2016, 6, 1, 0, 0, 0).unwrap();
        let d = sinusoid_dataset(start, 100, 24.0, 2.0, 1.0, 0.05, 1);
        let spec = FeatureSpec::fit(&d, TimeRange::hours(start, 80), FeatureOptions::default()).unwrap();
        let cfg = TrainConfig::default();
        (init_params(Architecture::new(3, 4, 2, 5), 9), spec, cfg)
    }

    #[test]
    fn round_trip_is_lossless() {
        let (p, spec, cfg) = fixture();
        let ck = Checkpoint::new(&p, &spec, &cfg);
        let text = ck.to_json().unwrap();
        let back = Checkpoint::from_json(&text).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.params().unwrap(), p);
        assert_eq!(back.to_json().unwrap(), text);
    }

    #[test]
    fn version_mismatches_are_explicit() {
        let (p, spec, cfg) = fixture();
        let mut ck = Checkpoint::new(&p, &spec, &cfg);
        ck.format_version = 7;
        let err = Checkpoint::from_json(&serde_json::to_string(&ck).unwrap()).unwrap_err();
        assert!(matches!(err, CheckpointError::Version { found: 7, .. }));

        let mut ck = Checkpoint::new(&p, &spec, &cfg);
        ck.feature_spec.format_version = 0;
        let err = Checkpoint::from_json(&serde_json::to_string(&ck).unwrap()).unwrap_err();
        assert!(matches!(err, CheckpointError::FeatureVersion { found: 0, .. }));
    }

    #[test]
    fn shape_errors_are_reported() {
        let (p, spec, cfg) = fixture();
        let mut ck = Checkpoint::new(&p, &spec, &cfg);
        ck.parameters[3].data.pop();
        assert!(matches!(ck.params(), Err(CheckpointError::Param { .. })));
        let mut ck = Checkpoint::new(&p, &spec, &cfg);
        ck.parameters[0].shape = vec![1, 1];
        assert!(matches!(ck.params(), Err(CheckpointError::Param { .. })));
    }
}
