//! Adam on the MSE + L2 objective, with early stopping and a grid search
//! over memory sizes.

use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{Example, ExampleSet, FeatureSpec};
use crate::model::{self, Architecture, Mode, ModelError, PowerNetParams};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Step between seeds of successive grid cells.
const SEED_STRIDE: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{0} split has no examples")]
    EmptySplit(&'static str),
    #[error("training diverged at epoch {epoch}, batch {batch}: loss {loss}")]
    Diverged { epoch: usize, batch: usize, loss: f64 },
    #[error("every grid cell was skipped")]
    AllCellsSkipped,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Hours in each consecutive split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitHours {
    pub train: i64,
    pub validation: i64,
    pub test: i64,
}

impl Default for SplitHours {
    fn default() -> Self {
        Self {
            train: 624,
            validation: 48,
            test: 48,
        }
    }
}

impl std::str::FromStr for SplitHours {
    type Err = String;

    /// Parses `train:validation:test`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(':').collect();
        let [a, b, c] = parts.as_slice() else {
            return Err(format!("expected train:validation:test, got `{s}`"));
        };
        let parse = |p: &str| {
            p.trim()
                .parse::<i64>()
                .ok()
                .filter(|v| *v > 0)
                .ok_or_else(|| format!("bad split length `{p}`"))
        };
        Ok(Self {
            train: parse(a)?,
            validation: parse(b)?,
            test: parse(c)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub dropout_rate: f64,
    pub l2_lambda: f64,
    /// Memory size for a single training run.
    pub memory_size: usize,
    pub memory_size_grid: Vec<usize>,
    pub lstm_layers: usize,
    pub d1: usize,
    pub d2: usize,
    pub d3: usize,
    pub seed: u64,
    pub splits: SplitHours,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 32,
            max_epochs: 500,
            patience: 10,
            dropout_rate: 0.1,
            l2_lambda: 1e-4,
            memory_size: 64,
            memory_size_grid: vec![64, 128, 256, 512],
            lstm_layers: 2,
            d1: 32,
            d2: 16,
            d3: 32,
            seed: 42,
            splits: SplitHours::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.patience == 0 {
            return bad("patience must be at least 1");
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be at least 1");
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad("dropout_rate must lie in [0, 1)");
        }
        if !(self.l2_lambda >= 0.0) {
            return bad("l2_lambda must be non-negative");
        }
        if self.memory_size_grid.is_empty() {
            return bad("memory_size_grid must not be empty");
        }
        if self.memory_size == 0 || self.memory_size_grid.contains(&0) {
            return bad("memory sizes must be at least 1");
        }
        if self.lstm_layers == 0 || self.d1 == 0 || self.d2 == 0 || self.d3 == 0 {
            return bad("layer sizes must be at least 1");
        }
        Ok(())
    }

    pub fn architecture(&self) -> Architecture {
        Architecture {
            memory_size: self.memory_size,
            lstm_layers: self.lstm_layers,
            d1: self.d1,
            d2: self.d2,
            d3: self.d3,
        }
    }
}

/// SplitMix64 finalizer over a combined key.
pub(crate) fn mix_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed
        .wrapping_add(a.wrapping_mul(0xBF58_476D_1CE4_E5B9))
        .wrapping_add(b.wrapping_mul(0x94D0_49BB_1331_11EB))
        .wrapping_add(SEED_STRIDE);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `L = (1/N) Σ (ŷ − y)² + λ Σ ||W||²` over `W1..W4`, with its gradient.
/// Example `i` draws its dropout mask from `mix_seed(seed, i, 0)`.
pub fn loss(
    batch: &[&Example],
    p: &PowerNetParams,
    dropout_rate: f64,
    l2_lambda: f64,
    seed: u64,
) -> Result<(f64, PowerNetParams), ModelError> {
    assert!(!batch.is_empty(), "batch must not be empty");
    let n = batch.len() as f64;
    let mut grads = p.zeros_like();
    let mut sq = 0.0;
    for (i, x) in batch.iter().enumerate() {
        let (y, trace) = model::forward(x, p, dropout_rate, Mode::Train, mix_seed(seed, i as u64, 0))?;
        let r = y - x.target;
        sq += r * r;
        model::backward_into(&trace, 2.0 * r / n, p, &mut grads);
    }
    let mut total = sq / n;
    if l2_lambda > 0.0 {
        total += l2_lambda * p.dense_weight_norm_sq();
        let ws = [&p.w1, &p.w2, &p.w3, &p.w4];
        for (g, w) in grads.dense_weights_mut().into_iter().zip(ws) {
            for (gv, wv) in g.data_mut().iter_mut().zip(w.data()) {
                *gv += 2.0 * l2_lambda * wv;
            }
        }
    }
    Ok((total, grads))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: PowerNetParams,
    pub v: PowerNetParams,
    pub t: u64,
}

impl AdamState {
    pub fn new(p: &PowerNetParams) -> Self {
        Self {
            m: p.zeros_like(),
            v: p.zeros_like(),
            t: 0,
        }
    }
}

pub fn adam_step(p: &mut PowerNetParams, grads: &PowerNetParams, state: &mut AdamState, lr: f64) {
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - ADAM_BETA1.powi(t);
    let c2 = 1.0 - ADAM_BETA2.powi(t);
    let g_all = grads.named_slices();
    let params = p.slices_mut();
    let ms = state.m.slices_mut();
    let vs = state.v.slices_mut();
    for (((theta, (_, _, g)), m), v) in params.into_iter().zip(g_all).zip(ms).zip(vs) {
        for k in 0..theta.len() {
            m[k] = ADAM_BETA1 * m[k] + (1.0 - ADAM_BETA1) * g[k];
            v[k] = ADAM_BETA2 * v[k] + (1.0 - ADAM_BETA2) * g[k] * g[k];
            let m_hat = m[k] / c1;
            let v_hat = v[k] / c2;
            theta[k] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// kW², on denormalized predictions.
    pub val_mse: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub architecture: Architecture,
    pub seed: u64,
    pub num_params: usize,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_mse: f64,
    pub stopped_early: bool,
    /// Not serialized, so reports from identical runs are byte-identical.
    #[serde(skip)]
    pub wall_clock_secs: f64,
    /// Where the best parameters were written, when they were.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<String>,
}

/// Equality ignores `wall_clock_secs`.
impl PartialEq for TrainReport {
    fn eq(&self, other: &Self) -> bool {
        self.architecture == other.architecture
            && self.seed == other.seed
            && self.num_params == other.num_params
            && self.epochs == other.epochs
            && self.best_epoch == other.best_epoch
            && self.best_val_mse == other.best_val_mse
            && self.stopped_early == other.stopped_early
            && self.checkpoint == other.checkpoint
    }
}

impl TrainReport {
    pub fn write_curve_csv<W: Write>(&self, writer: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["epoch", "train_loss", "val_mse"])?;
        for e in &self.epochs {
            w.write_record([e.epoch.to_string(), e.train_loss.to_string(), e.val_mse.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// MSE in kW² of infer-mode predictions, denormalized with `spec`.
pub fn evaluate_mse(examples: &[Example], p: &PowerNetParams, spec: &FeatureSpec) -> Result<f64, ModelError> {
    let mut sum = 0.0;
    for x in examples {
        let y = model::infer(&x.window, &x.exogenous(), p)?;
        let e = spec.denormalize_consumption(y) - spec.denormalize_consumption(x.target);
        sum += e * e;
    }
    Ok(sum / examples.len() as f64)
}

/// Outcome of one validation check.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Progress {
    Improved,
    Waiting,
    Stop,
}

/// Stops once `patience` epochs pass without a strictly lower value.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best: f64,
    pub best_epoch: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, value: f64) -> Progress {
        if value < self.best {
            self.best = value;
            self.best_epoch = epoch;
            Progress::Improved
        } else if epoch - self.best_epoch >= self.patience {
            Progress::Stop
        } else {
            Progress::Waiting
        }
    }
}

/// Trains one model with `cfg.memory_size`.
pub fn train(data: &ExampleSet, cfg: &TrainConfig) -> Result<(PowerNetParams, TrainReport), TrainError> {
    let init = model::init_params(cfg.architecture(), cfg.seed);
    train_from(data, cfg, init)
}

/// Trains starting from the given parameters.
pub fn train_from(
    data: &ExampleSet,
    cfg: &TrainConfig,
    init: PowerNetParams,
) -> Result<(PowerNetParams, TrainReport), TrainError> {
    cfg.validate()?;
    if data.train.is_empty() {
        return Err(TrainError::EmptySplit("train"));
    }
    if data.validation.is_empty() {
        return Err(TrainError::EmptySplit("validation"));
    }
    let clock = Instant::now();
    let mut p = init;
    let mut adam = AdamState::new(&p);
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut best = p.clone();
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut epochs = Vec::new();
    let mut stopped_early = false;

    for epoch in 1..=cfg.max_epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, epoch as u64, 1));
        order.shuffle(&mut rng);
        let mut weighted = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&Example> = chunk.iter().map(|&i| &data.train[i]).collect();
            let seed = mix_seed(cfg.seed, epoch as u64, 2 + b as u64);
            let (l, grads) = loss(&batch, &p, cfg.dropout_rate, cfg.l2_lambda, seed)?;
            if !l.is_finite() {
                return Err(TrainError::Diverged { epoch, batch: b, loss: l });
            }
            adam_step(&mut p, &grads, &mut adam, cfg.learning_rate);
            if !p.is_finite() {
                return Err(TrainError::Diverged {
                    epoch,
                    batch: b,
                    loss: f64::NAN,
                });
            }
            weighted += l * batch.len() as f64;
        }
        let train_loss = weighted / data.train.len() as f64;
        let val_mse = evaluate_mse(&data.validation, &p, &data.spec)?;
        if !val_mse.is_finite() {
            return Err(TrainError::Diverged {
                epoch,
                batch: usize::MAX,
                loss: val_mse,
            });
        }
        log::debug!("epoch {epoch}: train loss {train_loss:.6}, validation mse {val_mse:.6}");
        epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_mse,
        });
        match stopper.observe(epoch, val_mse) {
            Progress::Improved => best.clone_from(&p),
            Progress::Waiting => {}
            Progress::Stop => {
                stopped_early = true;
                break;
            }
        }
    }

    let report = TrainReport {
        architecture: best.architecture(),
        seed: cfg.seed,
        num_params: best.num_params(),
        epochs,
        best_epoch: stopper.best_epoch,
        best_val_mse: stopper.best,
        stopped_early,
        wall_clock_secs: clock.elapsed().as_secs_f64(),
        checkpoint: None,
    };
    Ok((best, report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum GridCell {
    Trained { memory_size: usize, seed: u64, report: TrainReport },
    Skipped { memory_size: usize, seed: u64, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    pub cells: Vec<GridCell>,
    pub best_memory_size: usize,
    pub best_val_mse: f64,
}

impl GridReport {
    /// `memory_size,seed,status,best_epoch,best_val_mse`; skipped cells
    /// leave the last two empty.
    pub fn write_csv<W: Write>(&self, writer: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["memory_size", "seed", "status", "best_epoch", "best_val_mse"])?;
        for c in &self.cells {
            let row = match c {
                GridCell::Trained { memory_size, seed, report } => [
                    memory_size.to_string(),
                    seed.to_string(),
                    "trained".to_string(),
                    report.best_epoch.to_string(),
                    report.best_val_mse.to_string(),
                ],
                GridCell::Skipped { memory_size, seed, .. } => [
                    memory_size.to_string(),
                    seed.to_string(),
                    "skipped".to_string(),
                    String::new(),
                    String::new(),
                ],
            };
            w.write_record(row)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct GridOutcome {
    pub params: PowerNetParams,
    /// `TrainConfig` of the winning cell, with its memory size and seed.
    pub config: TrainConfig,
    pub report: GridReport,
}

/// One training run per entry of `memory_size_grid`. Cell `i` uses seed
/// `cfg.seed + i * SEED_STRIDE`. Ties go to the smaller memory size.
pub fn grid_search(data: &ExampleSet, cfg: &TrainConfig) -> Result<GridOutcome, TrainError> {
    grid_search_with(data, cfg, train)
}

/// [`grid_search`] with the per-cell trainer supplied by the caller.
pub fn grid_search_with<F>(data: &ExampleSet, cfg: &TrainConfig, mut train_cell: F) -> Result<GridOutcome, TrainError>
where
    F: FnMut(&ExampleSet, &TrainConfig) -> Result<(PowerNetParams, TrainReport), TrainError>,
{
    cfg.validate()?;
    let mut cells = Vec::new();
    let mut best: Option<(f64, usize, PowerNetParams, TrainConfig)> = None;
    for (i, &m) in cfg.memory_size_grid.iter().enumerate() {
        let cell_cfg = TrainConfig {
            memory_size: m,
            seed: cfg.seed.wrapping_add((i as u64).wrapping_mul(SEED_STRIDE)),
            ..cfg.clone()
        };
        match train_cell(data, &cell_cfg) {
            Ok((params, report)) => {
                log::info!("grid cell m={m}: best validation mse {:.6}", report.best_val_mse);
                let v = report.best_val_mse;
                let better = match &best {
                    None => true,
                    Some((bv, bm, _, _)) => v < *bv || (v == *bv && m < *bm),
                };
                if better {
                    best = Some((v, m, params, cell_cfg.clone()));
                }
                cells.push(GridCell::Trained {
                    memory_size: m,
                    seed: cell_cfg.seed,
                    report,
                });
            }
            Err(e @ TrainError::Diverged { .. }) => {
                log::warn!("grid cell m={m} skipped: {e}");
                cells.push(GridCell::Skipped {
                    memory_size: m,
                    seed: cell_cfg.seed,
                    reason: e.to_string(),
                });
            }
            Err(e) => return Err(e),
        }
    }
    let (best_val_mse, best_memory_size, params, config) = best.ok_or(TrainError::AllCellsSkipped)?;
    Ok(GridOutcome {
        params,
        config,
        report: GridReport {
            cells,
            best_memory_size,
            best_val_mse,
        },
    })
}
