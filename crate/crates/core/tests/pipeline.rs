//! File-based pipeline: synthetic meter files through ingestion, training,
//! checkpointing and forecasting.

use powernet::checkpoint::Checkpoint;
use powernet::dataio::synth::{generate, SynthConfig};
use powernet::dataio::{aggregate, align, load_consumption, load_weather, resample_hourly, AlignedDataset};
use powernet::features::{build_examples, FeatureOptions, FeatureSpec, Splits};
use powernet::forecast::{forecast_with_actuals, recursive_report, PowerNetModel};
use powernet::training::{train, TrainConfig};

#[test]
fn files_to_forecast() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SynthConfig {
        days: 30,
        missing_prob: 0.01,
        ..SynthConfig::default()
    };
    let synth = generate(&cfg);
    synth.write_dir(dir.path()).unwrap();

    let hourly: Vec<_> = (1..=cfg.apartments)
        .map(|i| {
            let path = dir.path().join(format!("apartments/apt_{i:03}.csv"));
            let (raw, report) = load_consumption(&path, cfg.format, cfg.utc_offset_secs).unwrap();
            assert_eq!(report.rows, report.parsed + report.malformed);
            assert_eq!(raw.values, synth.apartments[i - 1].values);
            resample_hourly(&raw).unwrap()
        })
        .collect();
    let weather = load_weather(dir.path().join("weather.csv"), cfg.utc_offset_secs).unwrap();
    let (d, report) = align(&aggregate(&hourly).unwrap(), &weather).unwrap();
    assert_eq!(report.aligned, d.len());
    assert_eq!(d, synth.aligned_aggregate().unwrap());

    let path = dir.path().join("dataset.csv");
    d.save(&path).unwrap();
    let d = AlignedDataset::load(&path).unwrap();

    let splits = Splits::consecutive(cfg.start, 624, 48, 48);
    let spec = FeatureSpec::fit(&d, splits.train, FeatureOptions::default()).unwrap();
    let set = build_examples(&d, &spec, splits).unwrap();
    let tcfg = TrainConfig {
        memory_size: 6,
        max_epochs: 3,
        ..TrainConfig::default()
    };
    let (params, report) = train(&set, &tcfg).unwrap();
    assert_eq!(report.epochs.len(), 3);

    let ck_path = dir.path().join("checkpoint.json");
    Checkpoint::new(&params, &spec, &tcfg).save(&ck_path).unwrap();
    let ck = Checkpoint::load(&ck_path).unwrap();
    let restored = PowerNetModel {
        params: ck.params().unwrap(),
        spec: ck.feature_spec.clone(),
    };
    let original = PowerNetModel { params, spec };

    let a = recursive_report(&original, &d, splits.test.start, 24, 24).unwrap();
    let b = recursive_report(&restored, &d, splits.test.start, 24, 24).unwrap();
    assert_eq!(a, b);
    let one = forecast_with_actuals(&restored, &d, splits.test, 24).unwrap();
    assert_eq!(one.predictions[0], a.predictions[0]);
    assert!(one.predictions.iter().all(|v| v.is_finite() && *v >= 0.0));
}
