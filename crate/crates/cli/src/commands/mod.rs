mod data;
mod report;
mod train;

use crate::cli::{Cli, Command};
use crate::config::RunConfig;
use crate::error::CliResult;

pub fn run(cli: Cli) -> CliResult<()> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let out = cfg.output_dir(cli.out.clone());
    match &cli.command {
        Command::Synth(a) => {
            a.apply(&mut cfg);
            data::synth(&cfg, &out)
        }
        Command::Ingest(a) => {
            a.apply(&mut cfg);
            data::ingest(&cfg, &out)
        }
        Command::Train(a) => {
            a.apply(&mut cfg);
            train::train(&cfg, a.model, false, &out)
        }
        Command::GridSearch(a) => {
            a.apply(&mut cfg);
            train::train(&cfg, a.model, true, &out)
        }
        Command::Evaluate(a) => {
            a.data.apply(&mut cfg);
            report::evaluate(&cfg, a, &out)
        }
        Command::Forecast(a) => {
            a.apply(&mut cfg);
            report::forecast(&cfg, &a.model, &out)
        }
        Command::Anomaly(a) => {
            a.apply(&mut cfg);
            report::anomaly(&cfg, &a.model, &out)
        }
    }
}
