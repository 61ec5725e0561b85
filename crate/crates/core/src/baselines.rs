//! Comparison models: seasonal persistence and gradient-boosted CART trees.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::TimeSeries;
use crate::features::{Example, Standardizer};

pub const GBT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("history has {have} usable values, need {need}")]
    InsufficientHistory { have: usize, need: usize },
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("feature rows have inconsistent widths")]
    RaggedFeatures,
    #[error("grid `{0}` is empty")]
    EmptyGrid(&'static str),
    #[error("unsupported model format version {found}, expected {expected}")]
    Version { found: u32, expected: u32 },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Repeats the last `period` values: `ŷ[h] = hist[len − period + (h − 1) mod period]`.
pub fn persistence_forecast(history: &TimeSeries, horizon: usize, period: usize) -> Result<Vec<f64>, BaselineError> {
    let len = history.len();
    if period == 0 || len < period {
        return Err(BaselineError::InsufficientHistory { have: len, need: period.max(1) });
    }
    let tail: Option<Vec<f64>> = history.values[len - period..].iter().copied().collect();
    let tail = tail.ok_or(BaselineError::InsufficientHistory {
        have: history.values[len - period..].iter().flatten().count(),
        need: period,
    })?;
    Ok((0..horizon).map(|h| tail[h % period]).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Node {
    Leaf {
        value: f64,
    },
    Split {
        feature: usize,
        /// Rows with `x[feature] <= threshold` go left.
        threshold: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
}

impl Node {
    fn predict(&self, x: &[f64]) -> f64 {
        let mut node = self;
        loop {
            match node {
                Node::Leaf { value } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => node = if x[*feature] <= *threshold { left } else { right },
            }
        }
    }

    fn depth(&self) -> usize {
        match self {
            Node::Leaf { .. } => 0,
            Node::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub root: Node,
    pub max_depth: usize,
}

impl RegressionTree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.root.predict(x)
    }

    pub fn depth(&self) -> usize {
        self.root.depth()
    }
}

/// Best split of one node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitChoice {
    pub feature: usize,
    pub threshold: f64,
    /// Reduction in summed squared error.
    pub gain: f64,
}

/// Relative slack under which two candidate splits count as tied.
pub const SPLIT_TIE_TOL: f64 = 1e-9;

fn midpoint(a: f64, b: f64) -> f64 {
    let m = 0.5 * (a + b);
    if m < b {
        m
    } else {
        a
    }
}

/// Sum of squared deviations from the mean.
fn sse(sum: f64, sum_sq: f64, n: usize) -> f64 {
    (sum_sq - sum * sum / n as f64).max(0.0)
}

/// Scans presorted per-feature index lists of one node. Among splits whose
/// child SSE is within `SPLIT_TIE_TOL * node_sse` of the best, the lowest
/// feature and then the lowest threshold win.
fn best_split(x: &[Vec<f64>], r: &[f64], sorted: &[Vec<u32>]) -> Option<SplitChoice> {
    let idx0 = &sorted[0];
    let n = idx0.len();
    if n < 2 {
        return None;
    }
    let (sum, sum_sq) = idx0
        .iter()
        .fold((0.0, 0.0), |(s, q), &i| (s + r[i as usize], q + r[i as usize] * r[i as usize]));
    let node_sse = sse(sum, sum_sq, n);
    if node_sse <= 0.0 {
        return None;
    }
    let tol = SPLIT_TIE_TOL * node_sse;
    let mut best: Option<(f64, SplitChoice)> = None;
    for (f, idx) in sorted.iter().enumerate() {
        let (mut ls, mut lq) = (0.0, 0.0);
        for k in 0..n - 1 {
            let i = idx[k] as usize;
            ls += r[i];
            lq += r[i] * r[i];
            let (a, b) = (x[i][f], x[idx[k + 1] as usize][f]);
            if a >= b {
                continue;
            }
            let nl = k + 1;
            let child = sse(ls, lq, nl) + sse(sum - ls, sum_sq - lq, n - nl);
            if best.is_none_or(|(c, _)| child < c - tol) {
                best = Some((
                    child,
                    SplitChoice {
                        feature: f,
                        threshold: midpoint(a, b),
                        gain: node_sse - child,
                    },
                ));
            }
        }
    }
    best.map(|(_, s)| s).filter(|s| s.gain > tol)
}

fn grow(x: &[Vec<f64>], r: &[f64], sorted: Vec<Vec<u32>>, depth: usize, max_depth: usize) -> Node {
    let members = &sorted[0];
    let mean = members.iter().map(|&i| r[i as usize]).sum::<f64>() / members.len() as f64;
    if depth >= max_depth {
        return Node::Leaf { value: mean };
    }
    let Some(split) = best_split(x, r, &sorted) else {
        return Node::Leaf { value: mean };
    };
    let goes_left = |i: u32| x[i as usize][split.feature] <= split.threshold;
    let (mut left, mut right) = (Vec::with_capacity(sorted.len()), Vec::with_capacity(sorted.len()));
    for list in sorted {
        let (l, rr): (Vec<u32>, Vec<u32>) = list.into_iter().partition(|&i| goes_left(i));
        left.push(l);
        right.push(rr);
    }
    Node::Split {
        feature: split.feature,
        threshold: split.threshold,
        left: Box::new(grow(x, r, left, depth + 1, max_depth)),
        right: Box::new(grow(x, r, right, depth + 1, max_depth)),
    }
}

fn check_rows(x: &[Vec<f64>]) -> Result<usize, BaselineError> {
    let width = x.first().ok_or(BaselineError::EmptyTrainingSet)?.len();
    if x.iter().any(|row| row.len() != width) {
        return Err(BaselineError::RaggedFeatures);
    }
    Ok(width)
}

/// Index lists of every feature, each sorted by that feature's value.
fn presort(x: &[Vec<f64>], width: usize) -> Vec<Vec<u32>> {
    (0..width)
        .map(|f| {
            let mut idx: Vec<u32> = (0..x.len() as u32).collect();
            idx.sort_by(|&a, &b| x[a as usize][f].total_cmp(&x[b as usize][f]).then(a.cmp(&b)));
            idx
        })
        .collect()
}

/// Greedy CART regression tree on squared error.
pub fn fit_tree(x: &[Vec<f64>], residuals: &[f64], max_depth: usize) -> Result<RegressionTree, BaselineError> {
    let width = check_rows(x)?;
    assert_eq!(x.len(), residuals.len(), "one residual per row");
    let sorted = if width == 0 {
        vec![(0..x.len() as u32).collect()]
    } else {
        presort(x, width)
    };
    Ok(fit_presorted(x, residuals, &sorted, max_depth))
}

fn fit_presorted(x: &[Vec<f64>], residuals: &[f64], sorted: &[Vec<u32>], max_depth: usize) -> RegressionTree {
    RegressionTree {
        root: grow(x, residuals, sorted.to_vec(), 0, max_depth),
        max_depth,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtModel {
    pub format_version: u32,
    pub initial_prediction: f64,
    pub learning_rate: f64,
    pub max_depth: usize,
    /// Input width: window values followed by weather then calendar features.
    pub feature_len: usize,
    pub trees: Vec<RegressionTree>,
}

impl GbtModel {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.initial_prediction + self.learning_rate * self.trees.iter().map(|t| t.predict(x)).sum::<f64>()
    }

    /// Copy keeping only the first `n` trees.
    pub fn truncated(&self, n: usize) -> GbtModel {
        GbtModel {
            trees: self.trees[..n.min(self.trees.len())].to_vec(),
            ..self.clone()
        }
    }

    pub fn to_json(&self) -> Result<String, BaselineError> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self, BaselineError> {
        let m: GbtModel = serde_json::from_str(s)?;
        if m.format_version != GBT_FORMAT_VERSION {
            return Err(BaselineError::Version {
                found: m.format_version,
                expected: GBT_FORMAT_VERSION,
            });
        }
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), BaselineError> {
        Ok(std::fs::write(path, self.to_json()?)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, BaselineError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Boosting with squared loss. `on_stage(k, &train_predictions)` runs after
/// tree `k` (1-based) is added.
fn boost(
    x: &[Vec<f64>],
    y: &[f64],
    n_estimators: usize,
    max_depth: usize,
    learning_rate: f64,
    mut on_stage: impl FnMut(usize, &RegressionTree),
) -> Result<GbtModel, BaselineError> {
    let width = check_rows(x)?;
    assert_eq!(x.len(), y.len(), "one target per row");
    let f0 = y.iter().sum::<f64>() / y.len() as f64;
    let sorted = if width == 0 {
        vec![(0..x.len() as u32).collect()]
    } else {
        presort(x, width)
    };
    let mut f = vec![f0; y.len()];
    let mut trees = Vec::with_capacity(n_estimators);
    for k in 1..=n_estimators {
        let residuals: Vec<f64> = y.iter().zip(&f).map(|(a, b)| a - b).collect();
        let tree = fit_presorted(x, &residuals, &sorted, max_depth);
        for (fi, row) in f.iter_mut().zip(x) {
            *fi += learning_rate * tree.predict(row);
        }
        on_stage(k, &tree);
        trees.push(tree);
    }
    Ok(GbtModel {
        format_version: GBT_FORMAT_VERSION,
        initial_prediction: f0,
        learning_rate,
        max_depth,
        feature_len: width,
        trees,
    })
}

pub fn fit_gbt(
    x: &[Vec<f64>],
    y: &[f64],
    n_estimators: usize,
    max_depth: usize,
    learning_rate: f64,
) -> Result<GbtModel, BaselineError> {
    boost(x, y, n_estimators, max_depth, learning_rate, |_, _| {})
}

/// Flattened features and targets of a split.
pub fn example_matrix(examples: &[Example]) -> (Vec<Vec<f64>>, Vec<f64>) {
    (
        examples.iter().map(Example::flat).collect(),
        examples.iter().map(|e| e.target).collect(),
    )
}

pub fn fit_gbt_examples(
    train: &[Example],
    n_estimators: usize,
    max_depth: usize,
    learning_rate: f64,
) -> Result<GbtModel, BaselineError> {
    let (x, y) = example_matrix(train);
    fit_gbt(&x, &y, n_estimators, max_depth, learning_rate)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GbtGrid {
    pub n_estimators: Vec<usize>,
    pub max_depth: Vec<usize>,
    pub learning_rate: Vec<f64>,
}

impl Default for GbtGrid {
    fn default() -> Self {
        Self {
            n_estimators: (1..=10).map(|k| 50 * k).collect(),
            max_depth: vec![1, 2, 3, 4, 5],
            learning_rate: vec![0.001, 0.01, 0.1, 1.0],
        }
    }
}

impl GbtGrid {
    pub fn single(n_estimators: usize, max_depth: usize, learning_rate: f64) -> Self {
        Self {
            n_estimators: vec![n_estimators],
            max_depth: vec![max_depth],
            learning_rate: vec![learning_rate],
        }
    }

    pub fn cells(&self) -> usize {
        self.n_estimators.len() * self.max_depth.len() * self.learning_rate.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtCell {
    pub n_estimators: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    /// kW², on denormalized predictions.
    pub val_mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtGridReport {
    pub cells: Vec<GbtCell>,
    pub best: GbtCell,
}

impl GbtGridReport {
    /// `n_estimators,max_depth,learning_rate,val_mse`
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["n_estimators", "max_depth", "learning_rate", "val_mse"])?;
        for c in &self.cells {
            w.write_record([
                c.n_estimators.to_string(),
                c.max_depth.to_string(),
                c.learning_rate.to_string(),
                c.val_mse.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Exhaustive search scored on validation MSE in kW. Ties go to fewer
/// trees, then shallower trees, then the smaller learning rate. Each
/// `(depth, rate)` pair is boosted once to the largest tree count and its
/// prefixes are scored.
pub fn gbt_grid_search(
    train: &[Example],
    validation: &[Example],
    grid: &GbtGrid,
    scale: &Standardizer,
) -> Result<(GbtModel, GbtGridReport), BaselineError> {
    if grid.n_estimators.is_empty() {
        return Err(BaselineError::EmptyGrid("n_estimators"));
    }
    if grid.max_depth.is_empty() {
        return Err(BaselineError::EmptyGrid("max_depth"));
    }
    if grid.learning_rate.is_empty() {
        return Err(BaselineError::EmptyGrid("learning_rate"));
    }
    let (x, y) = example_matrix(train);
    let (vx, vy) = example_matrix(validation);
    let max_trees = *grid.n_estimators.iter().max().unwrap();
    let mut cells = Vec::with_capacity(grid.cells());
    let mut best: Option<(GbtCell, GbtModel)> = None;
    for &depth in &grid.max_depth {
        for &lr in &grid.learning_rate {
            let f0 = y.iter().sum::<f64>() / y.len().max(1) as f64;
            let mut vf = vec![f0; vx.len()];
            let mut stage_mse = vec![0.0; max_trees + 1];
            let val_mse = |vf: &[f64]| {
                vf.iter()
                    .zip(&vy)
                    .map(|(p, a)| (scale.denormalize(*p) - scale.denormalize(*a)).powi(2))
                    .sum::<f64>()
                    / vy.len().max(1) as f64
            };
            stage_mse[0] = val_mse(&vf);
            let model = boost(&x, &y, max_trees, depth, lr, |k, tree| {
                for (p, row) in vf.iter_mut().zip(&vx) {
                    *p += lr * tree.predict(row);
                }
                stage_mse[k] = val_mse(&vf);
            })?;
            for &n in &grid.n_estimators {
                let cell = GbtCell {
                    n_estimators: n,
                    max_depth: depth,
                    learning_rate: lr,
                    val_mse: stage_mse[n],
                };
                let better = match &best {
                    None => true,
                    Some((b, _)) => {
                        let key = |c: &GbtCell| (c.n_estimators, c.max_depth);
                        cell.val_mse < b.val_mse
                            || (cell.val_mse == b.val_mse
                                && (key(&cell) < key(b)
                                    || (key(&cell) == key(b) && cell.learning_rate < b.learning_rate)))
                    }
                };
                if better {
                    best = Some((cell.clone(), model.truncated(n)));
                }
                cells.push(cell);
            }
        }
    }
    let (best_cell, model) = best.expect("grid is non-empty");
    Ok((model, GbtGridReport { cells, best: best_cell }))
}
