//! Stacked LSTM classifier with a dense softmax head.
//!
//! Gate blocks inside every stacked weight matrix are ordered
//! input, forget, cell candidate, output.

mod init;
mod io;

use serde::{Deserialize, Serialize};

use crate::dataio::NUM_CLASSES;
use crate::error::{Error, Result};
use crate::featsel::FeatureMask;
use crate::lossmetrics::{softmax, Loss};

pub use init::{glorot_limit, init_params};
pub use io::{load_model, save_model, FORMAT_VERSION};

pub const DEFAULT_LAYER_UNITS: [usize; 4] = [64, 64, 32, 16];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gate {
    Input = 0,
    Forget = 1,
    Cell = 2,
    Output = 3,
}

/// Parameters of one LSTM layer, the four gates stacked row-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmLayerParams {
    pub in_dim: usize,
    pub units: usize,
    /// `4*units x in_dim`, row-major.
    pub w: Vec<f64>,
    /// `4*units x units`, row-major.
    pub u: Vec<f64>,
    /// `4*units`.
    pub b: Vec<f64>,
}

impl LstmLayerParams {
    pub fn zeros(in_dim: usize, units: usize) -> Self {
        Self {
            in_dim,
            units,
            w: vec![0.0; 4 * units * in_dim],
            u: vec![0.0; 4 * units * units],
            b: vec![0.0; 4 * units],
        }
    }

    /// Input weights of one gate, `units x in_dim` row-major.
    pub fn gate_w(&self, gate: Gate) -> &[f64] {
        let n = self.units * self.in_dim;
        &self.w[gate as usize * n..(gate as usize + 1) * n]
    }

    pub fn gate_u(&self, gate: Gate) -> &[f64] {
        let n = self.units * self.units;
        &self.u[gate as usize * n..(gate as usize + 1) * n]
    }

    pub fn gate_b(&self, gate: Gate) -> &[f64] {
        &self.b[gate as usize * self.units..(gate as usize + 1) * self.units]
    }

    pub fn gate_b_mut(&mut self, gate: Gate) -> &mut [f64] {
        let u = self.units;
        &mut self.b[gate as usize * u..(gate as usize + 1) * u]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseParams {
    pub in_dim: usize,
    pub out_dim: usize,
    /// `out_dim x in_dim`, row-major.
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl DenseParams {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            w: vec![0.0; in_dim * out_dim],
            b: vec![0.0; out_dim],
        }
    }
}

/// Whether a tensor is a weight matrix or a bias vector; weight decay skips biases.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorKind {
    Weight,
    Bias,
}

/// All trainable tensors of the network. Also used to hold gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub layers: Vec<LstmLayerParams>,
    pub head: DenseParams,
}

/// Gradients share the parameter layout.
pub type Gradients = Params;

impl Params {
    /// All-zero parameters for the given architecture.
    pub fn zeros(in_dim: usize, layer_units: &[usize]) -> Result<Self> {
        check_architecture(in_dim, layer_units)?;
        let mut layers = Vec::with_capacity(layer_units.len());
        let mut d = in_dim;
        for &u in layer_units {
            layers.push(LstmLayerParams::zeros(d, u));
            d = u;
        }
        Ok(Self {
            layers,
            head: DenseParams::zeros(d, NUM_CLASSES),
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| LstmLayerParams::zeros(l.in_dim, l.units))
                .collect(),
            head: DenseParams::zeros(self.head.in_dim, self.head.out_dim),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.layers.first().map(|l| l.in_dim).unwrap_or(0)
    }

    pub fn layer_units(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.units).collect()
    }

    /// Tensors in serialization order: per layer `w, u, b`, then head `w, b`.
    pub fn tensors(&self) -> Vec<(&[f64], TensorKind)> {
        let mut out = Vec::with_capacity(self.layers.len() * 3 + 2);
        for l in &self.layers {
            out.push((l.w.as_slice(), TensorKind::Weight));
            out.push((l.u.as_slice(), TensorKind::Weight));
            out.push((l.b.as_slice(), TensorKind::Bias));
        }
        out.push((self.head.w.as_slice(), TensorKind::Weight));
        out.push((self.head.b.as_slice(), TensorKind::Bias));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(&mut [f64], TensorKind)> {
        let mut out = Vec::with_capacity(self.layers.len() * 3 + 2);
        for l in &mut self.layers {
            out.push((l.w.as_mut_slice(), TensorKind::Weight));
            out.push((l.u.as_mut_slice(), TensorKind::Weight));
            out.push((l.b.as_mut_slice(), TensorKind::Bias));
        }
        out.push((self.head.w.as_mut_slice(), TensorKind::Weight));
        out.push((self.head.b.as_mut_slice(), TensorKind::Bias));
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|(t, _)| t.len()).sum()
    }

    /// True when both sets have identical tensor shapes.
    pub fn same_shape(&self, other: &Params) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.in_dim == b.in_dim && a.units == b.units)
            && self.head.in_dim == other.head.in_dim
            && self.head.out_dim == other.head.out_dim
    }

    pub fn add_assign(&mut self, other: &Params) {
        for ((dst, _), (src, _)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for (t, _) in self.tensors_mut() {
            for v in t.iter_mut() {
                *v *= factor;
            }
        }
    }

    /// Euclidean norm over every entry of every tensor.
    pub fn global_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|(t, _)| t.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(t, _)| t.iter().all(|v| v.is_finite()))
    }

    /// Copies out every entry in serialization order.
    pub fn flatten(&self) -> Vec<f64> {
        self.tensors().iter().flat_map(|(t, _)| t.iter().copied()).collect()
    }

    /// Overwrites every entry from `flat` (serialization order).
    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        let n = self.num_params();
        if flat.len() != n {
            return Err(Error::shape("flat parameter vector", n, flat.len()));
        }
        let mut off = 0;
        for (t, _) in self.tensors_mut() {
            t.copy_from_slice(&flat[off..off + t.len()]);
            off += t.len();
        }
        Ok(())
    }
}

fn check_architecture(in_dim: usize, layer_units: &[usize]) -> Result<()> {
    if layer_units.is_empty() {
        return Err(Error::InvalidArchitecture("at least one LSTM layer is required".into()));
    }
    if in_dim == 0 {
        return Err(Error::InvalidArchitecture("input dimension is zero".into()));
    }
    if let Some(k) = layer_units.iter().position(|&u| u == 0) {
        return Err(Error::InvalidArchitecture(format!("layer {k} has zero units")));
    }
    Ok(())
}

/// Free-form provenance carried in the model file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelMetadata {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_config_digest: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_config: Option<serde_json::Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub created: Option<String>,
    #[serde(default, skip_serializing_if = "std::collections::BTreeMap::is_empty")]
    pub extra: std::collections::BTreeMap<String, String>,
}

/// A trained (or freshly initialised) classifier together with its input mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub params: Params,
    pub mask: FeatureMask,
    pub class_names: Vec<String>,
    pub metadata: ModelMetadata,
}

pub fn default_class_names() -> Vec<String> {
    crate::dataio::ClassLabel::ALL.iter().map(|c| c.name().to_string()).collect()
}

impl Model {
    pub fn new(params: Params, mask: FeatureMask) -> Result<Self> {
        if params.in_dim() != mask.len() {
            return Err(Error::Consistency(format!(
                "first layer expects {} inputs but the mask keeps {} blendshapes",
                params.in_dim(),
                mask.len()
            )));
        }
        Ok(Self {
            params,
            mask,
            class_names: default_class_names(),
            metadata: ModelMetadata::default(),
        })
    }

    /// Freshly initialised model whose input width equals the mask size.
    pub fn init(layer_units: &[usize], mask: FeatureMask, seed: u64) -> Result<Self> {
        let params = init_params(layer_units, mask.len(), seed)?;
        Model::new(params, mask)
    }

    /// Masks a full 52-score frame down to the model's input features.
    pub fn features(&self, scores: &[f64]) -> Result<Vec<f64>> {
        self.mask.apply(scores)
    }

    pub fn forward(&self, seq: &[Vec<f64>], state: Option<&HiddenState>) -> Result<(Vec<f64>, ForwardCache, HiddenState)> {
        forward(&self.params, seq, state)
    }
}

/// Per-layer hidden and cell state.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenState {
    pub h: Vec<Vec<f64>>,
    pub c: Vec<Vec<f64>>,
}

impl HiddenState {
    pub fn zeros(params: &Params) -> Self {
        Self {
            h: params.layers.iter().map(|l| vec![0.0; l.units]).collect(),
            c: params.layers.iter().map(|l| vec![0.0; l.units]).collect(),
        }
    }

    fn matches(&self, params: &Params) -> bool {
        self.h.len() == params.layers.len()
            && self.c.len() == params.layers.len()
            && params
                .layers
                .iter()
                .enumerate()
                .all(|(k, l)| self.h[k].len() == l.units && self.c[k].len() == l.units)
    }
}

/// Activated gate values of one cell evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct GateRecord {
    pub input: Vec<f64>,
    pub forget: Vec<f64>,
    pub cell: Vec<f64>,
    pub output: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepCache {
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub c_prev: Vec<f64>,
    pub gates: GateRecord,
    pub c: Vec<f64>,
    pub tanh_c: Vec<f64>,
    pub h: Vec<f64>,
}

/// Everything backpropagation needs from a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardCache {
    /// Indexed `[layer][timestep]`.
    pub steps: Vec<Vec<StepCache>>,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `out += m * v` for a row-major `rows x v.len()` matrix.
fn gemv_acc(m: &[f64], v: &[f64], out: &mut [f64]) {
    let cols = v.len();
    for (o, row) in out.iter_mut().zip(m.chunks_exact(cols)) {
        *o += row.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// `out += m^T * v` for a row-major `v.len() x out.len()` matrix.
fn gemv_t_acc(m: &[f64], v: &[f64], out: &mut [f64]) {
    let cols = out.len();
    for (&vi, row) in v.iter().zip(m.chunks_exact(cols)) {
        for (o, a) in out.iter_mut().zip(row) {
            *o += a * vi;
        }
    }
}

/// `m += a ⊗ b` (outer product), `m` row-major `a.len() x b.len()`.
fn outer_acc(m: &mut [f64], a: &[f64], b: &[f64]) {
    for (&ai, row) in a.iter().zip(m.chunks_exact_mut(b.len())) {
        for (r, bj) in row.iter_mut().zip(b) {
            *r += ai * bj;
        }
    }
}

/// One LSTM cell step.
pub fn lstm_cell_forward(
    x: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
    p: &LstmLayerParams,
) -> Result<(Vec<f64>, Vec<f64>, GateRecord)> {
    if x.len() != p.in_dim {
        return Err(Error::shape("lstm input", p.in_dim, x.len()));
    }
    if h_prev.len() != p.units {
        return Err(Error::shape("lstm hidden state", p.units, h_prev.len()));
    }
    if c_prev.len() != p.units {
        return Err(Error::shape("lstm cell state", p.units, c_prev.len()));
    }
    let n = p.units;
    let mut pre = p.b.clone();
    gemv_acc(&p.w, x, &mut pre);
    gemv_acc(&p.u, h_prev, &mut pre);

    let input: Vec<f64> = pre[..n].iter().map(|&v| sigmoid(v)).collect();
    let forget: Vec<f64> = pre[n..2 * n].iter().map(|&v| sigmoid(v)).collect();
    let cell: Vec<f64> = pre[2 * n..3 * n].iter().map(|&v| v.tanh()).collect();
    let output: Vec<f64> = pre[3 * n..].iter().map(|&v| sigmoid(v)).collect();

    let c: Vec<f64> = (0..n).map(|k| forget[k] * c_prev[k] + input[k] * cell[k]).collect();
    let h: Vec<f64> = (0..n).map(|k| output[k] * c[k].tanh()).collect();
    Ok((
        h,
        c,
        GateRecord {
            input,
            forget,
            cell,
            output,
        },
    ))
}

/// Runs every layer over every timestep, then the softmax head on the last
/// top-layer output. Starts from `state`, or zeros when `None`.
pub fn forward(
    params: &Params,
    seq: &[Vec<f64>],
    state: Option<&HiddenState>,
) -> Result<(Vec<f64>, ForwardCache, HiddenState)> {
    if seq.is_empty() {
        return Err(Error::shape("sequence length", 1, 0));
    }
    let mut state = match state {
        Some(s) if s.matches(params) => s.clone(),
        Some(_) => return Err(Error::Consistency("hidden state does not match the model".into())),
        None => HiddenState::zeros(params),
    };

    let mut steps: Vec<Vec<StepCache>> = Vec::with_capacity(params.layers.len());
    let mut inputs: Vec<Vec<f64>> = seq.to_vec();
    for (k, layer) in params.layers.iter().enumerate() {
        let mut layer_steps = Vec::with_capacity(seq.len());
        let mut outputs = Vec::with_capacity(seq.len());
        for x in inputs {
            let h_prev = std::mem::take(&mut state.h[k]);
            let c_prev = std::mem::take(&mut state.c[k]);
            let (h, c, gates) = lstm_cell_forward(&x, &h_prev, &c_prev, layer)?;
            state.h[k] = h.clone();
            state.c[k] = c.clone();
            outputs.push(h.clone());
            layer_steps.push(StepCache {
                x,
                h_prev,
                c_prev,
                gates,
                tanh_c: c.iter().map(|v| v.tanh()).collect(),
                c,
                h,
            });
        }
        steps.push(layer_steps);
        inputs = outputs;
    }

    let top = inputs.last().expect("non-empty sequence");
    let mut logits = params.head.b.clone();
    gemv_acc(&params.head.w, top, &mut logits);
    let probs = softmax(&logits);
    Ok((probs.clone(), ForwardCache { steps, logits, probs }, state))
}

/// Exact gradients of `loss(target, softmax(logits))` at the cached point.
pub fn backward(params: &Params, cache: &ForwardCache, target: &[f64], loss: &Loss) -> Result<Gradients> {
    let dlogits = loss.logit_gradient(target, &cache.probs)?;
    backward_from_logits(params, cache, &dlogits)
}

/// Backpropagation through time given the gradient at the logits.
pub fn backward_from_logits(params: &Params, cache: &ForwardCache, dlogits: &[f64]) -> Result<Gradients> {
    check_cache(params, cache)?;
    if dlogits.len() != params.head.out_dim {
        return Err(Error::shape("logit gradient", params.head.out_dim, dlogits.len()));
    }
    let mut grads = params.zeros_like();
    let seq_len = cache.steps[0].len();
    let top = cache.steps.len() - 1;

    let last_h = &cache.steps[top][seq_len - 1].h;
    outer_acc(&mut grads.head.w, dlogits, last_h);
    grads.head.b.copy_from_slice(dlogits);

    // Gradient arriving at each timestep's output from the layer above.
    let mut dh_above: Vec<Vec<f64>> = vec![vec![0.0; params.layers[top].units]; seq_len];
    gemv_t_acc(&params.head.w, dlogits, &mut dh_above[seq_len - 1]);

    for k in (0..params.layers.len()).rev() {
        let layer = &params.layers[k];
        let g = &mut grads.layers[k];
        let n = layer.units;
        let mut dh_next = vec![0.0; n];
        let mut dc_next = vec![0.0; n];
        let mut dx_all = vec![vec![0.0; layer.in_dim]; seq_len];
        let mut dpre = vec![0.0; 4 * n];

        for t in (0..seq_len).rev() {
            let s = &cache.steps[k][t];
            let GateRecord {
                input,
                forget,
                cell,
                output,
            } = &s.gates;
            for j in 0..n {
                let dh = dh_above[t][j] + dh_next[j];
                let d_out = dh * s.tanh_c[j];
                let dc = dc_next[j] + dh * output[j] * (1.0 - s.tanh_c[j] * s.tanh_c[j]);
                let d_in = dc * cell[j];
                let d_cell = dc * input[j];
                let d_forget = dc * s.c_prev[j];
                dc_next[j] = dc * forget[j];

                dpre[j] = d_in * input[j] * (1.0 - input[j]);
                dpre[n + j] = d_forget * forget[j] * (1.0 - forget[j]);
                dpre[2 * n + j] = d_cell * (1.0 - cell[j] * cell[j]);
                dpre[3 * n + j] = d_out * output[j] * (1.0 - output[j]);
            }
            outer_acc(&mut g.w, &dpre, &s.x);
            outer_acc(&mut g.u, &dpre, &s.h_prev);
            for (b, d) in g.b.iter_mut().zip(&dpre) {
                *b += d;
            }
            dh_next.iter_mut().for_each(|v| *v = 0.0);
            gemv_t_acc(&layer.u, &dpre, &mut dh_next);
            gemv_t_acc(&layer.w, &dpre, &mut dx_all[t]);
        }
        dh_above = dx_all;
    }
    Ok(grads)
}

fn check_cache(params: &Params, cache: &ForwardCache) -> Result<()> {
    let bad = |what: &str| Err(Error::Consistency(format!("forward cache does not match the model: {what}")));
    if cache.steps.len() != params.layers.len() {
        return bad("layer count");
    }
    let seq_len = cache.steps[0].len();
    if seq_len == 0 {
        return bad("empty sequence");
    }
    for (layer, steps) in params.layers.iter().zip(&cache.steps) {
        if steps.len() != seq_len {
            return bad("sequence length");
        }
        if steps
            .iter()
            .any(|s| s.x.len() != layer.in_dim || s.h.len() != layer.units || s.c_prev.len() != layer.units)
        {
            return bad("layer width");
        }
    }
    if cache.probs.len() != params.head.out_dim || cache.logits.len() != params.head.out_dim {
        return bad("output width");
    }
    Ok(())
}
