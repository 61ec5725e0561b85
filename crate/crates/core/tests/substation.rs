//! Two-layer theft scenario: the substation raises the alarm and the
//! consumer layer points at the tampered meter.

use chrono::Duration;

use powernet::anomaly::{
    apply_theft, calibrate, clean_window_stats, detect_consumer, detect_substation, simulate_substation,
    span_origins, Calibration, DetectorConfig, TheftScenario, DEFAULT_TL_FRACTION, DEFAULT_TL_NOISE,
};
use powernet::baselines::fit_gbt_examples;
use powernet::dataio::synth::{generate, SynthConfig};
use powernet::dataio::{AlignedDataset, TimeSeries};
use powernet::features::{build_examples, FeatureOptions, FeatureSpec, Splits, TimeRange};
use powernet::forecast::GbtForecaster;

fn span_of(s: &TimeSeries, range: TimeRange) -> TimeSeries {
    let i = s.index_of(range.start).unwrap();
    let n = range.len_hours() as usize;
    TimeSeries::new(range.start, s.step_secs, s.values[i..i + n].to_vec())
}

/// Tree model and clean calibration for one hourly series.
fn model_for(d: &AlignedDataset, splits: Splits, cfg: &DetectorConfig) -> (GbtForecaster, Calibration) {
    let spec = FeatureSpec::fit(d, splits.train, FeatureOptions::default()).unwrap();
    let set = build_examples(d, &spec, splits).unwrap();
    let model = GbtForecaster {
        model: fit_gbt_examples(&set.train, 200, 3, 0.1).unwrap(),
        spec,
    };
    let origins = span_origins(splits.train.start + Duration::hours(24), splits.test.start, 6, 48);
    let stats = clean_window_stats(&model, d, &origins, 48, cfg).unwrap();
    (model, calibrate(&stats, cfg).unwrap())
}

#[test]
fn substation_alarm_and_consumer_localization() {
    let synth_cfg = SynthConfig::default();
    let synth = generate(&synth_cfg);
    let splits = Splits::consecutive(synth_cfg.start, 624, 48, 48);
    let cfg = DetectorConfig::default();

    let apartments: Vec<AlignedDataset> = (0..3).map(|i| synth.aligned_apartment(i).unwrap()).collect();
    let hourly: Vec<TimeSeries> = apartments.iter().map(|d| d.consumption_series()).collect();
    let sub = simulate_substation(&hourly, DEFAULT_TL_FRACTION, DEFAULT_TL_NOISE, 5).unwrap();
    for i in 0..hourly[0].len() {
        let sum: f64 = hourly.iter().map(|s| s.values[i].unwrap()).sum();
        assert!((sub.master.values[i].unwrap() - sum - sub.technical_loss.values[i].unwrap()).abs() < 1e-12);
    }

    // the loss model learns the clean observed loss
    let loss_data = apartments[0].with_consumption(&sub.technical_loss);
    let (tl_model, tl_cal) = model_for(&loss_data, splits, &cfg);

    let test = splits.test;
    let master = span_of(&sub.master, test);
    let clean: Vec<TimeSeries> = hourly.iter().map(|s| span_of(s, test)).collect();
    let thief = 1;
    let mut tampered = clean.clone();
    tampered[thief] = apply_theft(
        &clean[thief],
        &TheftScenario {
            theta: 0.5,
            start_hour: 0,
            hours: 48,
        },
    )
    .unwrap();

    let quiet = detect_substation(&master, &clean, &tl_model, &loss_data, &tl_cal, &cfg).unwrap();
    let loud = detect_substation(&master, &tampered, &tl_model, &loss_data, &tl_cal, &cfg).unwrap();
    // stolen energy shows up as loss far beyond the clean forecast error
    let worst_clean = quiet.windows.iter().map(|w| w.residual_pct).fold(0.0, f64::max);
    assert!(worst_clean < 2.0 * tl_cal.threshold, "clean residual {worst_clean}");
    assert_eq!(loud.alarm_count(), loud.windows.len());
    assert!(loud.windows.iter().all(|w| w.residual_pct > 5.0 * worst_clean));

    let mut mean_residual = Vec::new();
    for (k, d) in apartments.iter().enumerate() {
        let (model, cal) = model_for(d, splits, &cfg);
        let rep = detect_consumer(&model, d, &tampered[k], &cal, &cfg).unwrap();
        let rate = rep.alarm_count() as f64 / rep.windows.len() as f64;
        if k == thief {
            assert!(rate >= 0.9, "tampered meter alarm rate {rate}");
        }
        mean_residual.push(rep.windows.iter().map(|w| w.residual_pct).sum::<f64>() / rep.windows.len() as f64);
    }
    let top = (0..3).max_by(|&a, &b| mean_residual[a].total_cmp(&mean_residual[b])).unwrap();
    assert_eq!(top, thief, "residuals {mean_residual:?}");
}
