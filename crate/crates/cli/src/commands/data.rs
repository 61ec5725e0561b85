use std::path::{Path, PathBuf};

use serde::Serialize;

use powernet::dataio::synth::{generate, SynthConfig};
use powernet::dataio::{
    aggregate, align, fill_gaps, load_consumption, load_weather, resample_hourly, AlignReport, LoadReport,
    TimeSeries,
};

use crate::config::RunConfig;
use crate::error::{bail_input, CliResult, ResultExt};
use crate::output::Staged;

pub fn synth(cfg: &RunConfig, out: &Path) -> CliResult<()> {
    let s = &cfg.synth;
    if s.days == 0 || s.apartments == 0 {
        bail_input!("synth needs at least one day and one apartment");
    }
    if !(0.0..1.0).contains(&s.missing_prob) {
        bail_input!("missing_prob must lie in [0, 1), got {}", s.missing_prob);
    }
    let data = generate(&SynthConfig {
        start: s.start,
        days: s.days,
        apartments: s.apartments,
        format: s.format,
        seed: s.seed,
        utc_offset_secs: cfg.data.utc_offset_secs,
        missing_prob: s.missing_prob,
    });
    data.write_dir(out).internal(format!("writing fixture to {}", out.display()))?;
    log::info!("wrote {} apartments and weather under {}", s.apartments, out.display());
    Ok(())
}

#[derive(Debug, Serialize)]
struct FileReport {
    path: PathBuf,
    load: LoadReport,
    /// Hourly gaps left after interpolation.
    hourly_gaps: usize,
}

#[derive(Debug, Serialize)]
struct DatasetReport {
    file: String,
    align: AlignReport,
}

#[derive(Debug, Serialize)]
struct IngestReport {
    files: Vec<FileReport>,
    aggregate: bool,
    datasets: Vec<DatasetReport>,
}

/// Expands directories to their sorted `*.csv` entries.
fn meter_files(inputs: &[PathBuf]) -> CliResult<Vec<PathBuf>> {
    let mut files = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(p)
                .input(format!("listing {}", p.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.is_file() && f.extension().is_some_and(|x| x == "csv"))
                .collect();
            if found.is_empty() {
                bail_input!("directory {} has no .csv files", p.display());
            }
            found.sort();
            files.extend(found);
        } else if p.is_file() {
            files.push(p.clone());
        } else {
            bail_input!("consumption input {} does not exist", p.display());
        }
    }
    Ok(files)
}

pub fn ingest(cfg: &RunConfig, out: &Path) -> CliResult<()> {
    let d = &cfg.data;
    if d.consumption.is_empty() {
        bail_input!("no consumption input; pass --consumption");
    }
    let Some(weather_path) = d.weather.as_deref() else {
        bail_input!("no weather file; pass --weather");
    };
    let files = meter_files(&d.consumption)?;
    if !weather_path.is_file() {
        bail_input!("weather file {} does not exist", weather_path.display());
    }

    let weather = load_weather(weather_path, d.utc_offset_secs).input(format!("loading {}", weather_path.display()))?;
    let mut reports = Vec::new();
    let mut hourly: Vec<(String, TimeSeries)> = Vec::new();
    for f in &files {
        let (raw, load) =
            load_consumption(f, d.format, d.utc_offset_secs).input(format!("loading {}", f.display()))?;
        let series = fill_gaps(
            &resample_hourly(&raw).input(format!("resampling {}", f.display()))?,
            d.max_fill_run,
        );
        reports.push(FileReport {
            path: f.clone(),
            load,
            hourly_gaps: series.gap_count(),
        });
        let stem = f.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        hourly.push((stem, series));
    }

    let named: Vec<(String, TimeSeries)> = if d.aggregate || hourly.len() == 1 {
        let sum = aggregate(&hourly.iter().map(|(_, s)| s.clone()).collect::<Vec<_>>())
            .input("aggregating meters (inputs must share one hourly grid)")?;
        vec![("dataset.csv".to_string(), sum)]
    } else {
        hourly.into_iter().map(|(stem, s)| (format!("datasets/{stem}.csv"), s)).collect()
    };

    let mut staged = Staged::new();
    let mut datasets = Vec::new();
    for (name, series) in &named {
        let (aligned, align_report) = align(series, &weather).input("joining weather")?;
        if aligned.is_empty() {
            bail_input!("no hour of {name} has both consumption and weather");
        }
        staged.with(name, |buf| aligned.write_csv(buf))?;
        datasets.push(DatasetReport {
            file: name.clone(),
            align: align_report,
        });
    }
    staged.json(
        "ingest_report.json",
        &IngestReport {
            files: reports,
            aggregate: d.aggregate,
            datasets,
        },
    )?;
    staged.commit(out)
}
