//! Fixtures and independent oracles shared by the integration tests.
#![allow(dead_code)]

use emoblend::dataio::{
    canonical_names, BlendshapeDataset, BlendshapeFrame, ClassLabel, LabeledSample, SourceLabel, Split,
    NUM_BLENDSHAPES,
};
use emoblend::nn::{Gate, Params};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Blendshapes that light up for each class in the separable fixture.
pub const CLASS_CUES: [[&str; 2]; 3] = [
    ["mouthSmileLeft", "mouthSmileRight"],
    ["jawOpen", "eyeWideLeft"],
    ["mouthFrownLeft", "mouthFrownRight"],
];

fn name_index(name: &str) -> usize {
    canonical_names().iter().position(|n| n == name).unwrap()
}

/// `per_class` samples of each class. Each class drives its two cue
/// blendshapes to 0.7..0.95; everything else is noise in 0..0.2.
pub fn separable_dataset(per_class: usize, split: Split, seed: u64) -> BlendshapeDataset {
    let mut r = rng(seed);
    let sources = [SourceLabel::Happy, SourceLabel::Surprise, SourceLabel::Sad];
    let mut samples = Vec::new();
    let mut index = 0u64;
    for _ in 0..per_class {
        for (c, &src) in sources.iter().enumerate() {
            let mut scores: Vec<f64> = (0..NUM_BLENDSHAPES).map(|_| r.random_range(0.0..0.2)).collect();
            for cue in CLASS_CUES[c] {
                scores[name_index(cue)] = r.random_range(0.7..0.95);
            }
            samples.push(LabeledSample::from_source(BlendshapeFrame::new(scores, Some(index)).unwrap(), src));
            index += 1;
        }
    }
    BlendshapeDataset::new(split, samples)
}

/// Uniform random scores with random labels.
pub fn random_dataset(n: usize, split: Split, seed: u64) -> BlendshapeDataset {
    let mut r = rng(seed);
    let samples = (0..n)
        .map(|i| {
            let scores = (0..NUM_BLENDSHAPES).map(|_| r.random_range(0.0..=1.0)).collect();
            let src = SourceLabel::ALL[r.random_range(0..7)];
            LabeledSample::from_source(BlendshapeFrame::new(scores, Some(i as u64)).unwrap(), src)
        })
        .collect();
    BlendshapeDataset::new(split, samples)
}

pub fn random_frame(r: &mut ChaCha8Rng) -> BlendshapeFrame {
    BlendshapeFrame::new((0..NUM_BLENDSHAPES).map(|_| r.random_range(0.0..=1.0)).collect(), None).unwrap()
}

pub fn random_seq(r: &mut ChaCha8Rng, len: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..len).map(|_| (0..dim).map(|_| r.random_range(0.0..1.0)).collect()).collect()
}

/// Draws every parameter uniformly from `[-scale, scale]`.
pub fn randomize(params: &mut Params, r: &mut ChaCha8Rng, scale: f64) {
    for (t, _) in params.tensors_mut() {
        t.iter_mut().for_each(|v| *v = r.random_range(-scale..scale));
    }
}

pub fn label_of(code: usize) -> ClassLabel {
    ClassLabel::from_code(code).unwrap()
}

// ---------------------------------------------------------------------------
// Straight-line reference forward pass, written gate by gate from the cell
// equations without sharing code with the library.

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn gate_pre(params: &Params, layer: usize, gate: Gate, x: &[f64], h: &[f64], unit: usize) -> f64 {
    let l = &params.layers[layer];
    let w = l.gate_w(gate);
    let u = l.gate_u(gate);
    let mut acc = l.gate_b(gate)[unit];
    for (k, xk) in x.iter().enumerate() {
        acc += w[unit * l.in_dim + k] * xk;
    }
    for (k, hk) in h.iter().enumerate() {
        acc += u[unit * l.units + k] * hk;
    }
    acc
}

/// Reference probabilities for `seq` from a zero state.
pub fn reference_forward(params: &Params, seq: &[Vec<f64>]) -> Vec<f64> {
    let mut hs: Vec<Vec<f64>> = params.layers.iter().map(|l| vec![0.0; l.units]).collect();
    let mut cs = hs.clone();
    let mut top = Vec::new();
    for x in seq {
        let mut input = x.clone();
        for k in 0..params.layers.len() {
            let n = params.layers[k].units;
            let mut h_new = vec![0.0; n];
            let mut c_new = vec![0.0; n];
            for j in 0..n {
                let i = sig(gate_pre(params, k, Gate::Input, &input, &hs[k], j));
                let f = sig(gate_pre(params, k, Gate::Forget, &input, &hs[k], j));
                let g = gate_pre(params, k, Gate::Cell, &input, &hs[k], j).tanh();
                let o = sig(gate_pre(params, k, Gate::Output, &input, &hs[k], j));
                c_new[j] = f * cs[k][j] + i * g;
                h_new[j] = o * c_new[j].tanh();
            }
            hs[k] = h_new.clone();
            cs[k] = c_new;
            input = h_new;
        }
        top = input;
    }
    let head = &params.head;
    let logits: Vec<f64> = (0..head.out_dim)
        .map(|r| head.b[r] + (0..head.in_dim).map(|k| head.w[r * head.in_dim + k] * top[k]).sum::<f64>())
        .collect();
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

// ---------------------------------------------------------------------------
// Loss oracles written as plain loops.

pub fn naive_mse(y: &[f64], p: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..y.len() {
        let d = y[i] - p[i];
        s += d * d;
    }
    s / y.len() as f64
}

pub fn naive_cce(y: &[f64], p: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..y.len() {
        if y[i] != 0.0 {
            s -= y[i] * p[i].max(1e-12).ln();
        }
    }
    s
}

// ---------------------------------------------------------------------------

/// Max relative error between analytic gradients and central differences
/// over every parameter; `loss_at` evaluates the loss for a flat vector.
///
/// Entries smaller than [`FD_FLOOR`] are measured against the floor: at a
/// 1e-5 step the difference quotient carries ~1e-11 of rounding noise, so a
/// relative error below 1e-4 is not resolvable under that magnitude.
pub const FD_FLOOR: f64 = 1e-6;

pub fn max_fd_relative_error(analytic: &[f64], base: &[f64], step: f64, mut loss_at: impl FnMut(&[f64]) -> f64) -> f64 {
    let mut worst: f64 = 0.0;
    let mut probe = base.to_vec();
    for i in 0..base.len() {
        probe[i] = base[i] + step;
        let up = loss_at(&probe);
        probe[i] = base[i] - step;
        let down = loss_at(&probe);
        probe[i] = base[i];
        let numeric = (up - down) / (2.0 * step);
        let denom = analytic[i].abs().max(numeric.abs()).max(FD_FLOOR);
        worst = worst.max((analytic[i] - numeric).abs() / denom);
    }
    worst
}

/// Brute-force feature selection: count then threshold, nested loops.
pub fn brute_force_mask(ds: &BlendshapeDataset, threshold: f64, min_count: usize) -> Vec<usize> {
    let mut kept = Vec::new();
    for j in 0..ds.blendshape_names.len() {
        let mut count = 0;
        for s in &ds.samples {
            if s.frame.scores[j] > threshold {
                count += 1;
            }
        }
        if count > min_count {
            kept.push(j);
        }
    }
    kept
}
