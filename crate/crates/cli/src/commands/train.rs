use std::path::Path;

use serde::Serialize;

use powernet::baselines::gbt_grid_search;
use powernet::checkpoint::Checkpoint;
use powernet::dataio::AlignedDataset;
use powernet::features::{acf, build_examples, select_window, ExampleSet, FeatureOptions, FeatureSpec, WindowSelection};
use powernet::training::{grid_search, train as train_powernet};

use crate::artifacts::{load_dataset, splits_for, GbtBundle, GBT_BUNDLE_VERSION};
use crate::cli::ModelKind;
use crate::config::RunConfig;
use crate::error::{bail_input, CliResult, Failure, ResultExt};
use crate::output::Staged;

#[derive(Debug, Serialize)]
struct AutoWindow {
    threshold: f64,
    selection: WindowSelection,
    acf: Vec<f64>,
}

/// Fits features on the training split, choosing the window from the
/// autocorrelation when none is configured.
pub fn prepare(cfg: &RunConfig, d: &AlignedDataset, staged: &mut Staged) -> CliResult<ExampleSet> {
    let splits = splits_for(d, cfg.train.splits)?;
    let window_len = match cfg.features.window_len {
        Some(0) => bail_input!("features.window_len must be at least 1"),
        Some(n) => n,
        None => {
            let train: Vec<f64> = d
                .rows()
                .iter()
                .filter(|r| splits.train.contains(r.time))
                .map(|r| r.consumption)
                .collect();
            let max_lag = cfg.features.acf_max_lag.min(train.len().saturating_sub(1));
            let r = acf(&train, max_lag).input("autocorrelation of the training split")?;
            let selection = select_window(&r, cfg.features.acf_threshold).input("window selection")?;
            log::info!("autocorrelation picked window length {}", selection.n);
            staged.json(
                "window_selection.json",
                &AutoWindow {
                    threshold: cfg.features.acf_threshold,
                    selection,
                    acf: r,
                },
            )?;
            selection.n
        }
    };
    let opts = FeatureOptions {
        window_len,
        daytime_range: cfg.features.daytime_range,
        utc_offset_secs: cfg.data.utc_offset_secs,
    };
    let spec = FeatureSpec::fit(d, splits.train, opts).input("fitting features")?;
    let set = build_examples(d, &spec, splits).input("building examples")?;
    log::info!(
        "{} train, {} validation, {} test examples (window {})",
        set.train.len(),
        set.validation.len(),
        set.test.len(),
        window_len
    );
    Ok(set)
}

pub fn train(cfg: &RunConfig, kind: ModelKind, search: bool, out: &Path) -> CliResult<()> {
    cfg.train.validate()?;
    let d = load_dataset(cfg.data.dataset.as_deref())?;
    let mut staged = Staged::new();
    let set = prepare(cfg, &d, &mut staged)?;
    match kind {
        ModelKind::Powernet if search => {
            let outcome = grid_search(&set, &cfg.train)?;
            log::info!(
                "best memory size {} with validation MSE {}",
                outcome.report.best_memory_size,
                outcome.report.best_val_mse
            );
            let ck = Checkpoint::new(&outcome.params, &set.spec, &outcome.config);
            staged.bytes("checkpoint.json", ck.to_json().internal("serializing checkpoint")?.into_bytes());
            staged.json("grid_report.json", &outcome.report)?;
            staged.with("grid_report.csv", |b| outcome.report.write_csv(b))?;
        }
        ModelKind::Powernet => {
            let (params, report) = train_powernet(&set, &cfg.train)?;
            log::info!(
                "best epoch {} with validation MSE {} after {:.1}s",
                report.best_epoch,
                report.best_val_mse,
                report.wall_clock_secs
            );
            let ck = Checkpoint::new(&params, &set.spec, &cfg.train);
            staged.bytes("checkpoint.json", ck.to_json().internal("serializing checkpoint")?.into_bytes());
            staged.json("train_report.json", &report)?;
            staged.with("train_curve.csv", |b| report.write_curve_csv(b))?;
        }
        ModelKind::Gbt => {
            let (model, report) = gbt_grid_search(&set.train, &set.validation, &cfg.gbt, &set.spec.consumption)
                .map_err(Failure::input)?;
            log::info!("best tree cell {:?}", report.best);
            let bundle = GbtBundle {
                format_version: GBT_BUNDLE_VERSION,
                feature_spec: set.spec.clone(),
                splits: cfg.train.splits,
                model,
            };
            let text = serde_json::to_string(&bundle).internal("serializing tree bundle")?;
            staged.bytes("gbt_model.json", text.into_bytes());
            staged.json("gbt_grid.json", &report)?;
            staged.with("gbt_grid.csv", |b| report.write_csv(b))?;
        }
    }
    staged.commit(out)
}
