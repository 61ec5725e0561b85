//! The PowerNet network.
//!
//! ```text
//! h_T        = LSTM_stack(e_1 .. e_T)                 consumption encoder
//! o          = ReLU(W2 ReLU(W1 [f_w; f_c] + b1) + b2) weather/calendar fusion
//! y_hat      = W4 ReLU(W3 [h_T; o] + b3) + b4         prediction head
//! ```
//!
//! Each LSTM layer is the standard forget-gate cell without peepholes, gate
//! blocks ordered `[input, forget, candidate, output]`. Training-mode
//! forward passes apply inverted dropout to the inputs of `W2`, `W3` and
//! `W4`; nothing inside the recurrence is dropped. Backward passes are
//! written out by hand, including backpropagation through time across the
//! whole stack.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{Example, EXOGENOUS_FEATURES};
use crate::numcore::{relu, sigmoid, Matrix, Vector};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("consumption window is empty")]
    EmptySequence,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("dropout rate must lie in [0, 1), got {0}")]
    BadDropout(f64),
}

/// Layer sizes. Both LSTM layers share `memory_size`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub memory_size: usize,
    pub lstm_layers: usize,
    pub d1: usize,
    pub d2: usize,
    pub d3: usize,
}

impl Architecture {
    pub fn new(memory_size: usize, d1: usize, d2: usize, d3: usize) -> Self {
        Self {
            memory_size,
            lstm_layers: 2,
            d1,
            d2,
            d3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Train,
    Infer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmLayerParams {
    /// `4m x input_dim`
    pub w_x: Matrix,
    /// `4m x m`
    pub w_h: Matrix,
    /// `4m`
    pub b: Vector,
}

impl LstmLayerParams {
    pub fn zeros(input_dim: usize, memory: usize) -> Self {
        Self {
            w_x: Matrix::zeros(4 * memory, input_dim),
            w_h: Matrix::zeros(4 * memory, memory),
            b: Vector::zeros(4 * memory),
        }
    }

    pub fn memory(&self) -> usize {
        self.w_h.cols()
    }

    pub fn input_dim(&self) -> usize {
        self.w_x.cols()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerNetParams {
    pub lstm: Vec<LstmLayerParams>,
    /// `d1 x 18`
    pub w1: Matrix,
    pub b1: Vector,
    /// `d2 x d1`
    pub w2: Matrix,
    pub b2: Vector,
    /// `d3 x (m + d2)`
    pub w3: Matrix,
    pub b3: Vector,
    /// `1 x d3`
    pub w4: Matrix,
    pub b4: f64,
}

impl PowerNetParams {
    pub fn zeros(arch: Architecture) -> Self {
        let m = arch.memory_size;
        let lstm = (0..arch.lstm_layers)
            .map(|l| LstmLayerParams::zeros(if l == 0 { 1 } else { m }, m))
            .collect();
        Self {
            lstm,
            w1: Matrix::zeros(arch.d1, EXOGENOUS_FEATURES),
            b1: Vector::zeros(arch.d1),
            w2: Matrix::zeros(arch.d2, arch.d1),
            b2: Vector::zeros(arch.d2),
            w3: Matrix::zeros(arch.d3, m + arch.d2),
            b3: Vector::zeros(arch.d3),
            w4: Matrix::zeros(1, arch.d3),
            b4: 0.0,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.architecture())
    }

    pub fn architecture(&self) -> Architecture {
        Architecture {
            memory_size: self.memory(),
            lstm_layers: self.lstm.len(),
            d1: self.w1.rows(),
            d2: self.w2.rows(),
            d3: self.w3.rows(),
        }
    }

    pub fn memory(&self) -> usize {
        self.lstm.last().map_or(0, |l| l.memory())
    }

    /// Named flat views in a fixed order.
    pub fn named_slices(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        let mut out: Vec<(String, Vec<usize>, &[f64])> = Vec::new();
        for (l, layer) in self.lstm.iter().enumerate() {
            out.push((format!("lstm{l}.w_x"), shape(&layer.w_x), layer.w_x.data()));
            out.push((format!("lstm{l}.w_h"), shape(&layer.w_h), layer.w_h.data()));
            out.push((format!("lstm{l}.b"), vec![layer.b.len()], &layer.b));
        }
        out.push(("w1".into(), shape(&self.w1), self.w1.data()));
        out.push(("b1".into(), vec![self.b1.len()], &self.b1));
        out.push(("w2".into(), shape(&self.w2), self.w2.data()));
        out.push(("b2".into(), vec![self.b2.len()], &self.b2));
        out.push(("w3".into(), shape(&self.w3), self.w3.data()));
        out.push(("b3".into(), vec![self.b3.len()], &self.b3));
        out.push(("w4".into(), shape(&self.w4), self.w4.data()));
        out.push(("b4".into(), vec![], std::slice::from_ref(&self.b4)));
        out
    }

    /// Mutable flat views, same order as [`named_slices`](Self::named_slices).
    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for layer in self.lstm.iter_mut() {
            out.push(layer.w_x.data_mut());
            out.push(layer.w_h.data_mut());
            out.push(&mut layer.b);
        }
        out.push(self.w1.data_mut());
        out.push(&mut self.b1);
        out.push(self.w2.data_mut());
        out.push(&mut self.b2);
        out.push(self.w3.data_mut());
        out.push(&mut self.b3);
        out.push(self.w4.data_mut());
        out.push(std::slice::from_mut(&mut self.b4));
        out
    }

    /// The fully-connected weight matrices `W1..W4`.
    pub fn dense_weights_mut(&mut self) -> [&mut Matrix; 4] {
        [&mut self.w1, &mut self.w2, &mut self.w3, &mut self.w4]
    }

    /// `Σ ||W||²` over `W1..W4`.
    pub fn dense_weight_norm_sq(&self) -> f64 {
        [&self.w1, &self.w2, &self.w3, &self.w4]
            .iter()
            .map(|w| w.sum_squares())
            .sum()
    }

    pub fn num_params(&self) -> usize {
        self.named_slices().iter().map(|(_, _, s)| s.len()).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.named_slices()
            .into_iter()
            .flat_map(|(_, _, s)| s.iter().copied())
            .collect()
    }

    pub fn assign_flat(&mut self, flat: &[f64]) {
        let mut offset = 0;
        for s in self.slices_mut() {
            let n = s.len();
            s.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        assert_eq!(offset, flat.len(), "flat parameter length mismatch");
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &PowerNetParams, scale: f64) {
        let theirs = other.flatten();
        let mut offset = 0;
        for s in self.slices_mut() {
            for v in s.iter_mut() {
                *v += scale * theirs[offset];
                offset += 1;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for s in self.slices_mut() {
            s.iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.named_slices()
            .iter()
            .all(|(_, _, s)| s.iter().all(|v| v.is_finite()))
    }
}

fn shape(m: &Matrix) -> Vec<usize> {
    vec![m.rows(), m.cols()]
}

/// Xavier-uniform weights, zero biases except LSTM forget gates at 1.
pub fn init_params(arch: Architecture, seed: u64) -> PowerNetParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = PowerNetParams::zeros(arch);
    let fill = |m: &mut Matrix, rng: &mut ChaCha8Rng| {
        let limit = (6.0 / (m.rows() + m.cols()) as f64).sqrt();
        for v in m.data_mut() {
            *v = rng.random_range(-limit..limit);
        }
    };
    let mem = arch.memory_size;
    for layer in p.lstm.iter_mut() {
        fill(&mut layer.w_x, &mut rng);
        fill(&mut layer.w_h, &mut rng);
        layer.b[mem..2 * mem].iter_mut().for_each(|b| *b = 1.0);
    }
    for w in p.dense_weights_mut() {
        fill(w, &mut rng);
    }
    p
}

/// Per-layer record of a forward run through the recurrence.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerTrace {
    pub steps: usize,
    pub input_dim: usize,
    pub memory: usize,
    /// `steps x input_dim`
    pub inputs: Vec<f64>,
    /// `(steps + 1) x m`, row 0 is `h_0 = 0`.
    pub h: Vec<f64>,
    /// `(steps + 1) x m`, row 0 is `c_0 = 0`.
    pub c: Vec<f64>,
    /// `steps x 4m` activated gates `[i, f, g, o]`.
    pub gates: Vec<f64>,
    /// `steps x m`
    pub tanh_c: Vec<f64>,
}

impl LayerTrace {
    pub fn h_at(&self, t: usize) -> &[f64] {
        &self.h[(t + 1) * self.memory..(t + 2) * self.memory]
    }

    pub fn c_at(&self, t: usize) -> &[f64] {
        &self.c[(t + 1) * self.memory..(t + 2) * self.memory]
    }

    /// All hidden states `h_1..h_T`, row-major.
    pub fn outputs(&self) -> &[f64] {
        &self.h[self.memory..]
    }
}

/// Everything backward needs from one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub layers: Vec<LayerTrace>,
    pub exogenous: [f64; EXOGENOUS_FEATURES],
    /// `ReLU(W1 x + b1)`
    pub a1: Vec<f64>,
    pub mask1: Vec<f64>,
    /// fusion output `o`
    pub o: Vec<f64>,
    /// `[h_T; o]` before dropout
    pub joint: Vec<f64>,
    pub mask_joint: Vec<f64>,
    /// `ReLU(W3 joint + b3)`
    pub a3: Vec<f64>,
    pub mask3: Vec<f64>,
    pub y: f64,
}

/// Intermediate state of the fusion MLP.
#[derive(Debug, Clone, PartialEq)]
pub struct FuseTrace {
    pub a1: Vec<f64>,
    pub o: Vec<f64>,
}

fn run_layer(p: &LstmLayerParams, inputs: &[f64], steps: usize) -> LayerTrace {
    let m = p.memory();
    let input_dim = p.input_dim();
    debug_assert_eq!(inputs.len(), steps * input_dim);
    let mut h = vec![0.0; (steps + 1) * m];
    let mut c = vec![0.0; (steps + 1) * m];
    let mut gates = vec![0.0; steps * 4 * m];
    let mut tanh_c = vec![0.0; steps * m];
    let mut z = vec![0.0; 4 * m];
    for t in 0..steps {
        let x = &inputs[t * input_dim..(t + 1) * input_dim];
        z.copy_from_slice(&p.b);
        p.w_x.gemv_acc(x, &mut z);
        p.w_h.gemv_acc(&h[t * m..(t + 1) * m], &mut z);
        let g = &mut gates[t * 4 * m..(t + 1) * 4 * m];
        for j in 0..m {
            let i_g = sigmoid(z[j]);
            let f_g = sigmoid(z[m + j]);
            let c_g = z[2 * m + j].tanh();
            let o_g = sigmoid(z[3 * m + j]);
            g[j] = i_g;
            g[m + j] = f_g;
            g[2 * m + j] = c_g;
            g[3 * m + j] = o_g;
            let c_new = f_g * c[t * m + j] + i_g * c_g;
            let tc = c_new.tanh();
            c[(t + 1) * m + j] = c_new;
            tanh_c[t * m + j] = tc;
            h[(t + 1) * m + j] = o_g * tc;
        }
    }
    LayerTrace {
        steps,
        input_dim,
        memory: m,
        inputs: inputs.to_vec(),
        h,
        c,
        gates,
        tanh_c,
    }
}

/// Backpropagation through time for one layer. `dh_ext` holds the loss
/// gradient arriving at each `h_t` from outside the layer. Returns the
/// gradient with respect to the layer inputs when `want_dx` is set.
fn backward_layer(
    p: &LstmLayerParams,
    tr: &LayerTrace,
    dh_ext: &[f64],
    grads: &mut LstmLayerParams,
    want_dx: bool,
) -> Option<Vec<f64>> {
    let m = tr.memory;
    let input_dim = tr.input_dim;
    let mut dx = want_dx.then(|| vec![0.0; tr.steps * input_dim]);
    let mut dh_next = vec![0.0; m];
    let mut dc_next = vec![0.0; m];
    let mut dz = vec![0.0; 4 * m];
    for t in (0..tr.steps).rev() {
        let g = &tr.gates[t * 4 * m..(t + 1) * 4 * m];
        let c_prev = &tr.c[t * m..(t + 1) * m];
        let tc = &tr.tanh_c[t * m..(t + 1) * m];
        for j in 0..m {
            let (i_g, f_g, c_g, o_g) = (g[j], g[m + j], g[2 * m + j], g[3 * m + j]);
            let dh = dh_ext[t * m + j] + dh_next[j];
            let d_o = dh * tc[j];
            let dc = dc_next[j] + dh * o_g * (1.0 - tc[j] * tc[j]);
            dz[j] = dc * c_g * i_g * (1.0 - i_g);
            dz[m + j] = dc * c_prev[j] * f_g * (1.0 - f_g);
            dz[2 * m + j] = dc * i_g * (1.0 - c_g * c_g);
            dz[3 * m + j] = d_o * o_g * (1.0 - o_g);
            dc_next[j] = dc * f_g;
        }
        let x = &tr.inputs[t * input_dim..(t + 1) * input_dim];
        let h_prev = &tr.h[t * m..(t + 1) * m];
        grads.w_x.add_outer(&dz, x);
        grads.w_h.add_outer(&dz, h_prev);
        for (b, d) in grads.b.iter_mut().zip(&dz) {
            *b += d;
        }
        dh_next.iter_mut().for_each(|v| *v = 0.0);
        p.w_h.gemv_t_acc(&dz, &mut dh_next);
        if let Some(dx) = dx.as_mut() {
            p.w_x.gemv_t_acc(&dz, &mut dx[t * input_dim..(t + 1) * input_dim]);
        }
    }
    dx
}

/// One cell update, returning `(h_t, c_t)`.
pub fn lstm_step(x: &[f64], h_prev: &[f64], c_prev: &[f64], p: &LstmLayerParams) -> (Vector, Vector) {
    let m = p.memory();
    assert_eq!(x.len(), p.input_dim(), "input width");
    assert_eq!(h_prev.len(), m, "h_prev width");
    assert_eq!(c_prev.len(), m, "c_prev width");
    let mut z = p.b.0.clone();
    p.w_x.gemv_acc(x, &mut z);
    p.w_h.gemv_acc(h_prev, &mut z);
    let mut h = vec![0.0; m];
    let mut c = vec![0.0; m];
    for j in 0..m {
        let i_g = sigmoid(z[j]);
        let f_g = sigmoid(z[m + j]);
        let c_g = z[2 * m + j].tanh();
        let o_g = sigmoid(z[3 * m + j]);
        c[j] = f_g * c_prev[j] + i_g * c_g;
        h[j] = o_g * c[j].tanh();
    }
    (Vector(h), Vector(c))
}

/// Runs the LSTM stack over the window from zero state.
pub fn encode(window: &[f64], p: &PowerNetParams) -> Result<(Vector, Vec<LayerTrace>), ModelError> {
    if window.is_empty() {
        return Err(ModelError::EmptySequence);
    }
    let steps = window.len();
    let mut traces: Vec<LayerTrace> = Vec::with_capacity(p.lstm.len());
    for (l, layer) in p.lstm.iter().enumerate() {
        let tr = if l == 0 {
            run_layer(layer, window, steps)
        } else {
            run_layer(layer, traces[l - 1].outputs(), steps)
        };
        traces.push(tr);
    }
    let last = traces.last().expect("at least one layer");
    Ok((Vector(last.h_at(steps - 1).to_vec()), traces))
}

fn check_exogenous(x: &[f64], p: &PowerNetParams) -> Result<(), ModelError> {
    if x.len() != p.w1.cols() {
        return Err(ModelError::Shape(format!(
            "fusion input has {} features, W1 expects {}",
            x.len(),
            p.w1.cols()
        )));
    }
    Ok(())
}

fn fuse_masked(x: &[f64], p: &PowerNetParams, mask1: &[f64]) -> FuseTrace {
    let mut a1 = p.b1.0.clone();
    p.w1.gemv_acc(x, &mut a1);
    a1.iter_mut().for_each(|v| *v = relu(*v));
    let dropped: Vec<f64> = a1.iter().zip(mask1).map(|(a, k)| a * k).collect();
    let mut o = p.b2.0.clone();
    p.w2.gemv_acc(&dropped, &mut o);
    o.iter_mut().for_each(|v| *v = relu(*v));
    FuseTrace { a1, o }
}

/// `o = ReLU(W2 ReLU(W1 [f_w; f_c] + b1) + b2)`.
pub fn fuse(f_w: &[f64], f_c: &[f64], p: &PowerNetParams) -> Result<(Vector, FuseTrace), ModelError> {
    let x = crate::numcore::concat(f_w, f_c);
    check_exogenous(&x, p)?;
    let tr = fuse_masked(&x, p, &vec![1.0; p.b1.len()]);
    Ok((Vector(tr.o.clone()), tr))
}

fn head_masked(joint: &[f64], p: &PowerNetParams, mask_joint: &[f64], mask3: &[f64]) -> (Vec<f64>, f64) {
    let dropped: Vec<f64> = joint.iter().zip(mask_joint).map(|(a, k)| a * k).collect();
    let mut a3 = p.b3.0.clone();
    p.w3.gemv_acc(&dropped, &mut a3);
    a3.iter_mut().for_each(|v| *v = relu(*v));
    let y = p.b4
        + p.w4
            .row(0)
            .iter()
            .zip(a3.iter().zip(mask3))
            .map(|(w, (a, k))| w * a * k)
            .sum::<f64>();
    (a3, y)
}

/// `y_hat = W4 ReLU(W3 [h; o] + b3) + b4`.
pub fn predict(h_final: &[f64], o: &[f64], p: &PowerNetParams) -> Result<f64, ModelError> {
    if h_final.len() + o.len() != p.w3.cols() {
        return Err(ModelError::Shape(format!(
            "head input has {} entries, W3 expects {}",
            h_final.len() + o.len(),
            p.w3.cols()
        )));
    }
    let joint = crate::numcore::concat(h_final, o);
    let (_, y) = head_masked(&joint, p, &vec![1.0; joint.len()], &vec![1.0; p.b3.len()]);
    Ok(y)
}

fn dropout_mask(rng: &mut ChaCha8Rng, len: usize, rate: f64) -> Vec<f64> {
    let keep = 1.0 / (1.0 - rate);
    (0..len)
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
        .collect()
}

/// Full forward pass on raw inputs. Train mode draws dropout masks from
/// `seed`; infer mode uses none and ignores the seed.
pub fn forward_inputs(
    window: &[f64],
    exogenous: &[f64; EXOGENOUS_FEATURES],
    p: &PowerNetParams,
    dropout_rate: f64,
    mode: Mode,
    seed: u64,
) -> Result<(f64, ForwardTrace), ModelError> {
    if !(0.0..1.0).contains(&dropout_rate) {
        return Err(ModelError::BadDropout(dropout_rate));
    }
    check_exogenous(exogenous, p)?;
    let (h_final, layers) = encode(window, p)?;
    let d1 = p.b1.len();
    let joint_len = p.w3.cols();
    let d3 = p.b3.len();
    let (mask1, mask_joint, mask3) = if mode == Mode::Train && dropout_rate > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (
            dropout_mask(&mut rng, d1, dropout_rate),
            dropout_mask(&mut rng, joint_len, dropout_rate),
            dropout_mask(&mut rng, d3, dropout_rate),
        )
    } else {
        (vec![1.0; d1], vec![1.0; joint_len], vec![1.0; d3])
    };
    let FuseTrace { a1, o } = fuse_masked(exogenous, p, &mask1);
    let joint = crate::numcore::concat(&h_final, &o).0;
    let (a3, y) = head_masked(&joint, p, &mask_joint, &mask3);
    Ok((
        y,
        ForwardTrace {
            layers,
            exogenous: *exogenous,
            a1,
            mask1,
            o,
            joint,
            mask_joint,
            a3,
            mask3,
            y,
        },
    ))
}

pub fn forward(
    x: &Example,
    p: &PowerNetParams,
    dropout_rate: f64,
    mode: Mode,
    seed: u64,
) -> Result<(f64, ForwardTrace), ModelError> {
    forward_inputs(&x.window, &x.exogenous(), p, dropout_rate, mode, seed)
}

/// Inference-mode prediction.
pub fn infer(window: &[f64], exogenous: &[f64; EXOGENOUS_FEATURES], p: &PowerNetParams) -> Result<f64, ModelError> {
    forward_inputs(window, exogenous, p, 0.0, Mode::Infer, 0).map(|(y, _)| y)
}

/// Accumulates `dL/dθ` into `grads` given `dL/dŷ`.
pub fn backward_into(tr: &ForwardTrace, dy: f64, p: &PowerNetParams, grads: &mut PowerNetParams) {
    let m = p.memory();
    let d3 = p.b3.len();

    // head
    grads.b4 += dy;
    let mut da3 = vec![0.0; d3];
    for k in 0..d3 {
        let dropped = tr.a3[k] * tr.mask3[k];
        grads.w4.data_mut()[k] += dy * dropped;
        da3[k] = if tr.a3[k] > 0.0 {
            dy * p.w4.get(0, k) * tr.mask3[k]
        } else {
            0.0
        };
    }
    let joint_dropped: Vec<f64> = tr.joint.iter().zip(&tr.mask_joint).map(|(a, k)| a * k).collect();
    grads.w3.add_outer(&da3, &joint_dropped);
    for (b, d) in grads.b3.iter_mut().zip(&da3) {
        *b += d;
    }
    let mut djoint = vec![0.0; tr.joint.len()];
    p.w3.gemv_t_acc(&da3, &mut djoint);
    for (d, k) in djoint.iter_mut().zip(&tr.mask_joint) {
        *d *= k;
    }
    let (dh_final, d_o) = djoint.split_at(m);

    // fusion MLP
    let dz2: Vec<f64> = d_o
        .iter()
        .zip(&tr.o)
        .map(|(d, o)| if *o > 0.0 { *d } else { 0.0 })
        .collect();
    let a1_dropped: Vec<f64> = tr.a1.iter().zip(&tr.mask1).map(|(a, k)| a * k).collect();
    grads.w2.add_outer(&dz2, &a1_dropped);
    for (b, d) in grads.b2.iter_mut().zip(&dz2) {
        *b += d;
    }
    let mut da1 = vec![0.0; tr.a1.len()];
    p.w2.gemv_t_acc(&dz2, &mut da1);
    let dz1: Vec<f64> = da1
        .iter()
        .zip(tr.a1.iter().zip(&tr.mask1))
        .map(|(d, (a, k))| if *a > 0.0 { d * k } else { 0.0 })
        .collect();
    grads.w1.add_outer(&dz1, &tr.exogenous);
    for (b, d) in grads.b1.iter_mut().zip(&dz1) {
        *b += d;
    }

    // recurrence, top layer first
    let steps = tr.layers[0].steps;
    let mut dh_ext = vec![0.0; steps * m];
    dh_ext[(steps - 1) * m..].copy_from_slice(dh_final);
    for l in (0..p.lstm.len()).rev() {
        let dx = backward_layer(&p.lstm[l], &tr.layers[l], &dh_ext, &mut grads.lstm[l], l > 0);
        if let Some(dx) = dx {
            dh_ext = dx;
        }
    }
}

pub fn backward(tr: &ForwardTrace, dy: f64, p: &PowerNetParams) -> PowerNetParams {
    let mut grads = p.zeros_like();
    backward_into(tr, dy, p, &mut grads);
    grads
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::grad_check;

    fn random_exo(rng: &mut ChaCha8Rng) -> [f64; EXOGENOUS_FEATURES] {
        let mut x = [0.0; EXOGENOUS_FEATURES];
        x.iter_mut().for_each(|v| *v = rng.random_range(-1.5..1.5));
        x
    }

    fn random_params(arch: Architecture, seed: u64) -> PowerNetParams {
        let mut p = init_params(arch, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xdead);
        for s in p.slices_mut() {
            for v in s.iter_mut() {
                *v += rng.random_range(-0.3..0.3);
            }
        }
        p
    }

    #[test]
    fn zero_weight_step_halves_cell() {
        let p = LstmLayerParams::zeros(2, 3);
        let c_prev = [0.4, -1.0, 2.0];
        let (h, c) = lstm_step(&[1.0, -1.0], &[0.3, 0.2, 0.1], &c_prev, &p);
        for j in 0..3 {
            assert!((c[j] - 0.5 * c_prev[j]).abs() < 1e-15);
            assert!((h[j] - 0.5 * (0.5 * c_prev[j]).tanh()).abs() < 1e-15);
        }
    }

    #[test]
    fn unit_weight_scalar_step() {
        let mut p = LstmLayerParams::zeros(1, 1);
        p.w_x.data_mut().iter_mut().for_each(|v| *v = 1.0);
        p.w_h.data_mut().iter_mut().for_each(|v| *v = 1.0);
        p.b.iter_mut().for_each(|v| *v = 1.0);
        let (h, c) = lstm_step(&[0.0], &[0.0], &[0.0], &p);
        // scalar oracle: every pre-activation equals the bias 1
        let s = 1.0 / (1.0 + (-1.0f64).exp());
        let g = 1.0f64.tanh();
        let c_exp = s * g;
        let h_exp = s * c_exp.tanh();
        assert!((c[0] - c_exp).abs() < 1e-12);
        assert!((h[0] - h_exp).abs() < 1e-12);
    }

    #[test]
    fn encode_single_step_is_stack_of_cells() {
        let arch = Architecture::new(4, 3, 3, 3);
        let p = random_params(arch, 3);
        let (h, _) = encode(&[0.7], &p).unwrap();
        let (h1, _) = lstm_step(&[0.7], &[0.0; 4], &[0.0; 4], &p.lstm[0]);
        let (h2, _) = lstm_step(&h1, &[0.0; 4], &[0.0; 4], &p.lstm[1]);
        assert_eq!(h, h2);
        assert!(matches!(encode(&[], &p), Err(ModelError::EmptySequence)));
    }

    #[test]
    fn encode_is_order_sensitive_and_causal() {
        let p = random_params(Architecture::new(5, 3, 3, 3), 8);
        let e = [0.1, -0.5, 1.2, 0.3, -0.9];
        let mut rev = e;
        rev.reverse();
        assert_ne!(encode(&e, &p).unwrap().0, encode(&rev, &p).unwrap().0);

        let (_, base) = encode(&e, &p).unwrap();
        let mut changed = e;
        changed[3] = 4.0;
        let (_, other) = encode(&changed, &p).unwrap();
        for (a, b) in base.iter().zip(&other) {
            for t in 0..3 {
                assert_eq!(a.h_at(t), b.h_at(t));
            }
            assert_ne!(a.h_at(3), b.h_at(3));
        }
    }

    #[test]
    fn zero_params_zero_input_stays_at_origin() {
        let p = PowerNetParams::zeros(Architecture::new(3, 2, 2, 2));
        // c_t = 0.5 c_{t-1} from c_0 = 0 keeps every state at 0
        let (h, traces) = encode(&[0.0; 6], &p).unwrap();
        assert!(h.iter().all(|&v| v == 0.0));
        assert!(traces[0].c.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn fuse_matches_loop_oracle() {
        let p = random_params(Architecture::new(3, 5, 4, 3), 21);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_exo(&mut rng);
        let (o, _) = fuse(&x[..13], &x[13..], &p).unwrap();
        let mut a1 = vec![0.0; 5];
        for i in 0..5 {
            let mut s = p.b1[i];
            for j in 0..18 {
                s += p.w1.get(i, j) * x[j];
            }
            a1[i] = s.max(0.0);
        }
        for k in 0..4 {
            let mut s = p.b2[k];
            for i in 0..5 {
                s += p.w2.get(k, i) * a1[i];
            }
            assert!((o[k] - s.max(0.0)).abs() < 1e-12);
            assert!(o[k] >= 0.0);
        }
        let zero = PowerNetParams::zeros(Architecture::new(3, 5, 4, 3));
        assert!(fuse(&[0.0; 13], &[0.0; 5], &zero).unwrap().0.iter().all(|&v| v == 0.0));
        assert!(fuse(&[0.0; 12], &[0.0; 5], &zero).is_err());
    }

    #[test]
    fn predict_matches_loop_oracle_and_linearity() {
        let arch = Architecture::new(4, 3, 3, 5);
        let mut p = random_params(arch, 5);
        let h = [0.2, -0.4, 0.1, 0.9];
        let o = [0.5, 0.0, 1.1];
        let joint: Vec<f64> = h.iter().chain(&o).copied().collect();
        let mut y = p.b4;
        for k in 0..5 {
            let mut s = p.b3[k];
            for (j, v) in joint.iter().enumerate() {
                s += p.w3.get(k, j) * v;
            }
            y += p.w4.get(0, k) * s.max(0.0);
        }
        let got = predict(&h, &o, &p).unwrap();
        assert!((got - y).abs() < 1e-12);

        p.w4.data_mut().iter_mut().for_each(|w| *w *= 2.0);
        let doubled = predict(&h, &o, &p).unwrap();
        assert!(((doubled - p.b4) - 2.0 * (got - p.b4)).abs() < 1e-12);

        let mut zero = PowerNetParams::zeros(arch);
        zero.b4 = 0.37;
        assert_eq!(predict(&h, &o, &zero).unwrap(), 0.37);
    }

    #[test]
    fn predict_is_affine_on_fixed_relu_pattern() {
        let arch = Architecture::new(3, 3, 3, 4);
        let p = random_params(arch, 17);
        let a = [0.1, 0.2, -0.1, 0.3, 0.2, 0.1];
        let b = [0.1001, 0.2002, -0.0999, 0.3001, 0.2, 0.1002];
        let mid: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 0.5 * (x + y)).collect();
        let f = |v: &[f64]| predict(&v[..3], &v[3..], &p).unwrap();
        assert!((f(&mid) - 0.5 * (f(&a) + f(&b))).abs() < 1e-12);
    }

    #[test]
    fn dropout_zero_matches_infer_and_seed_is_deterministic() {
        let p = random_params(Architecture::new(4, 5, 4, 3), 1);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = random_exo(&mut rng);
        let w = [0.1, 0.5, -0.2];
        let (yt, _) = forward_inputs(&w, &x, &p, 0.0, Mode::Train, 7).unwrap();
        let (yi, _) = forward_inputs(&w, &x, &p, 0.0, Mode::Infer, 8).unwrap();
        assert_eq!(yt.to_bits(), yi.to_bits());
        let (a, _) = forward_inputs(&w, &x, &p, 0.3, Mode::Train, 42).unwrap();
        let (b, _) = forward_inputs(&w, &x, &p, 0.3, Mode::Train, 42).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
        let (i1, _) = forward_inputs(&w, &x, &p, 0.3, Mode::Infer, 1).unwrap();
        let (i2, _) = forward_inputs(&w, &x, &p, 0.3, Mode::Infer, 2).unwrap();
        assert_eq!(i1.to_bits(), i2.to_bits());
        assert!(forward_inputs(&w, &x, &p, 1.0, Mode::Train, 0).is_err());
    }

    #[test]
    fn inverted_dropout_preserves_expectation_of_last_layer() {
        // With every ReLU active the output is multilinear in independent
        // masks of mean 1, so the train-mode mean equals the infer output.
        let arch = Architecture::new(3, 4, 4, 6);
        let mut p = random_params(arch, 12);
        // make every downstream unit active so the network is linear in the masks
        p.b1.iter_mut().for_each(|b| *b = 5.0);
        p.b2.iter_mut().for_each(|b| *b = 5.0);
        p.b3.iter_mut().for_each(|b| *b = 20.0);
        for w in [&mut p.w2, &mut p.w3] {
            w.data_mut().iter_mut().for_each(|v| *v = v.abs() * 0.1);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random_exo(&mut rng);
        let w = [0.3, -0.1, 0.2, 0.4];
        let infer_y = infer(&w, &x, &p).unwrap();
        let n = 10_000;
        let mean: f64 = (0..n)
            .map(|s| forward_inputs(&w, &x, &p, 0.2, Mode::Train, s).unwrap().0)
            .sum::<f64>()
            / n as f64;
        assert!(((mean - infer_y) / infer_y).abs() < 0.02, "{mean} vs {infer_y}");
    }

    #[test]
    fn init_rules() {
        let arch = Architecture::new(6, 5, 4, 3);
        assert_eq!(init_params(arch, 3), init_params(arch, 3));
        assert_ne!(init_params(arch, 3), init_params(arch, 4));
        let p = init_params(arch, 3);
        for layer in &p.lstm {
            assert!(layer.b[6..12].iter().all(|&b| b == 1.0));
            assert!(layer.b[..6].iter().chain(&layer.b[12..]).all(|&b| b == 0.0));
        }
        assert_eq!(p.b4, 0.0);

        // 10^4 draws from U(-a, a): the sample mean has sd a / sqrt(3 * 10^4)
        let big = init_params(Architecture::new(50, 50, 50, 50), 77);
        let w = big.lstm[1].w_h.data();
        let a = (6.0 / (200.0 + 50.0f64)).sqrt();
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        let sigma = a / (3.0 * w.len() as f64).sqrt();
        assert!(w.len() >= 10_000);
        assert!(mean.abs() < 3.0 * sigma, "{mean} vs 3σ={}", 3.0 * sigma);
        assert!(w.iter().all(|v| v.abs() <= a));
    }

    #[test]
    fn backward_basic_identities() {
        let p = random_params(Architecture::new(3, 4, 3, 3), 2);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_exo(&mut rng);
        let (_, tr) = forward_inputs(&[0.5, -0.3], &x, &p, 0.0, Mode::Infer, 0).unwrap();
        let g = backward(&tr, 0.0, &p);
        assert!(g.flatten().iter().all(|&v| v == 0.0));
        let g = backward(&tr, 1.7, &p);
        assert_eq!(g.b4, 1.7);
    }

    fn check_model_gradient(arch: Architecture, steps: usize, seed: u64, dropout: f64) -> f64 {
        let p = random_params(arch, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000);
        let window: Vec<f64> = (0..steps).map(|_| rng.random_range(-1.5..1.5)).collect();
        let x = random_exo(&mut rng);
        let target = rng.random_range(-1.0..1.0);
        let mask_seed = seed * 31 + 7;
        let (y, tr) = forward_inputs(&window, &x, &p, dropout, Mode::Train, mask_seed).unwrap();
        let grads = backward(&tr, 2.0 * (y - target), &p);
        let mut probe = p.clone();
        grad_check(
            |flat| {
                probe.assign_flat(flat);
                let (y, _) = forward_inputs(&window, &x, &probe, dropout, Mode::Train, mask_seed).unwrap();
                (y - target).powi(2)
            },
            &p.flatten(),
            &grads.flatten(),
            1e-5,
        )
        .unwrap()
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let err = check_model_gradient(Architecture::new(6, 5, 4, 3), 5, 3, 0.0);
        assert!(err < 1e-4, "{err}");
        let err = check_model_gradient(Architecture::new(10, 6, 5, 4), 5, 4, 0.0);
        assert!(err < 1e-4, "{err}");
        let err = check_model_gradient(Architecture::new(4, 5, 4, 6), 7, 5, 0.25);
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn single_lstm_layer_gradient() {
        let mut arch = Architecture::new(4, 3, 3, 3);
        arch.lstm_layers = 1;
        let err = check_model_gradient(arch, 6, 9, 0.0);
        assert!(err < 1e-4, "{err}");
        arch.lstm_layers = 3;
        let err = check_model_gradient(arch, 4, 10, 0.0);
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn flat_round_trip() {
        let p = random_params(Architecture::new(3, 2, 2, 2), 6);
        let mut q = p.zeros_like();
        q.assign_flat(&p.flatten());
        assert_eq!(p, q);
        assert_eq!(p.flatten().len(), p.num_params());
    }
}
