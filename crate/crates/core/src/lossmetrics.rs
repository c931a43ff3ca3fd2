//! Training losses (MSE, categorical cross-entropy, focal) and the
//! classification metrics reported during evaluation.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dataio::{ClassLabel, NUM_CLASSES};
use crate::error::{Error, Result};

/// Lower clamp applied to probabilities before taking a logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(p: &[f64]) -> usize {
    argmax_with_tolerance(p, 0.0)
}

/// Lowest index whose value is within `tol` of the maximum.
pub fn argmax_with_tolerance(p: &[f64], tol: f64) -> usize {
    let max = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    p.iter().position(|&v| v >= max - tol).unwrap_or(0)
}

fn check_len(context: &'static str, y: &[f64], yhat: &[f64]) -> Result<()> {
    if y.len() != yhat.len() {
        return Err(Error::shape(context, y.len(), yhat.len()));
    }
    if y.is_empty() {
        return Err(Error::shape(context, 1, 0));
    }
    Ok(())
}

/// Position of the single 1 in a one-hot target.
fn true_class(y: &[f64]) -> Result<usize> {
    let mut hot = None;
    for (i, &v) in y.iter().enumerate() {
        if v == 1.0 {
            if hot.is_some() {
                return Err(Error::InvalidTarget(format!("{y:?} has more than one hot entry")));
            }
            hot = Some(i);
        } else if v != 0.0 {
            return Err(Error::InvalidTarget(format!("{y:?} is not one-hot")));
        }
    }
    hot.ok_or_else(|| Error::InvalidTarget(format!("{y:?} has no hot entry")))
}

/// Mean squared error.
pub fn mse(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check_len("mse", y, yhat)?;
    let sum: f64 = y.iter().zip(yhat).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(sum / y.len() as f64)
}

/// Categorical cross-entropy against a one-hot target.
pub fn cce(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check_len("cce", y, yhat)?;
    let t = true_class(y)?;
    Ok(-clamp_prob(yhat[t]).ln())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FocalConfig {
    pub alpha: f64,
    pub gamma: f64,
}

impl Default for FocalConfig {
    fn default() -> Self {
        Self { alpha: 0.25, gamma: 2.0 }
    }
}

impl FocalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha >= 0.0 && self.gamma.is_finite() && self.gamma >= 0.0) {
            return Err(Error::Config(format!(
                "focal parameters must be finite and non-negative (alpha {}, gamma {})",
                self.alpha, self.gamma
            )));
        }
        Ok(())
    }
}

/// Focal loss `alpha * (1 - p_true)^gamma * cce`.
pub fn focal(y: &[f64], yhat: &[f64], cfg: FocalConfig) -> Result<f64> {
    check_len("focal", y, yhat)?;
    let t = true_class(y)?;
    let p = clamp_prob(yhat[t]);
    Ok(cfg.alpha * (1.0 - p).powf(cfg.gamma) * -p.ln())
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_FLOOR, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Mse,
    Cce,
    Focal,
}

impl std::str::FromStr for LossKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "mse" => Ok(LossKind::Mse),
            "cce" => Ok(LossKind::Cce),
            "focal" => Ok(LossKind::Focal),
            other => Err(format!("unknown loss `{other}` (expected mse, cce or focal)")),
        }
    }
}

/// A loss on softmax probabilities, with its gradient with respect to the logits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Loss {
    Mse,
    Cce,
    Focal(FocalConfig),
}

impl Loss {
    pub fn new(kind: LossKind, focal: FocalConfig) -> Self {
        match kind {
            LossKind::Mse => Loss::Mse,
            LossKind::Cce => Loss::Cce,
            LossKind::Focal => Loss::Focal(focal),
        }
    }

    pub fn value(&self, y: &[f64], probs: &[f64]) -> Result<f64> {
        match *self {
            Loss::Mse => mse(y, probs),
            Loss::Cce => cce(y, probs),
            Loss::Focal(cfg) => focal(y, probs, cfg),
        }
    }

    /// Gradient of the loss with respect to the logits that produced `probs`
    /// through a softmax.
    pub fn logit_gradient(&self, y: &[f64], probs: &[f64]) -> Result<Vec<f64>> {
        check_len("loss gradient", y, probs)?;
        match *self {
            Loss::Mse => {
                let n = y.len() as f64;
                let dp: Vec<f64> = probs.iter().zip(y).map(|(p, t)| 2.0 * (p - t) / n).collect();
                Ok(softmax_vjp(probs, &dp))
            }
            Loss::Cce => {
                let t = true_class(y)?;
                if probs[t] < PROB_FLOOR {
                    return Ok(vec![0.0; probs.len()]);
                }
                Ok(probs.iter().zip(y).map(|(p, t)| p - t).collect())
            }
            Loss::Focal(cfg) => {
                let t = true_class(y)?;
                let p = probs[t];
                if p < PROB_FLOOR {
                    return Ok(vec![0.0; probs.len()]);
                }
                let q = 1.0 - p;
                let log_term = -p.ln();
                // d/dp [alpha q^gamma (-ln p)]
                let modulating_grad = if cfg.gamma == 0.0 || q == 0.0 {
                    0.0
                } else {
                    -cfg.gamma * q.powf(cfg.gamma - 1.0) * log_term
                };
                let dl_dp = cfg.alpha * (modulating_grad - q.powf(cfg.gamma) / p);
                let mut dp = vec![0.0; probs.len()];
                dp[t] = dl_dp;
                Ok(softmax_vjp(probs, &dp))
            }
        }
    }
}

/// Vector-Jacobian product of the softmax: `dz_j = p_j (dp_j - sum_k p_k dp_k)`.
fn softmax_vjp(probs: &[f64], dp: &[f64]) -> Vec<f64> {
    let dot: f64 = probs.iter().zip(dp).map(|(p, d)| p * d).sum();
    probs.iter().zip(dp).map(|(p, d)| p * (d - dot)).collect()
}

/// 3x3 confusion counts, rows = ground truth, columns = prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub cells: [[u64; NUM_CLASSES]; NUM_CLASSES],
}

impl ConfusionMatrix {
    pub fn from_cells(cells: [[u64; NUM_CLASSES]; NUM_CLASSES]) -> Self {
        Self { cells }
    }

    pub fn record(&mut self, truth: ClassLabel, pred: ClassLabel) {
        self.cells[truth.code()][pred.code()] += 1;
    }

    pub fn total(&self) -> u64 {
        self.cells.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..NUM_CLASSES).map(|i| self.cells[i][i]).sum()
    }

    pub fn row_sum(&self, class: usize) -> u64 {
        self.cells[class].iter().sum()
    }

    pub fn col_sum(&self, class: usize) -> u64 {
        self.cells.iter().map(|r| r[class]).sum()
    }

    pub fn categorical_accuracy(&self) -> Result<f64> {
        let total = self.total();
        if total == 0 {
            return Err(Error::EmptyDataset);
        }
        Ok(self.trace() as f64 / total as f64)
    }

    /// Per-class F1; a class with zero precision and recall scores 0.
    pub fn f1(&self, class: usize) -> f64 {
        let tp = self.cells[class][class] as f64;
        let predicted = self.col_sum(class) as f64;
        let actual = self.row_sum(class) as f64;
        let precision = if predicted > 0.0 { tp / predicted } else { 0.0 };
        let recall = if actual > 0.0 { tp / actual } else { 0.0 };
        if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        }
    }

    /// Unweighted mean of the per-class F1 scores.
    pub fn macro_f1(&self) -> Result<f64> {
        if self.total() == 0 {
            return Err(Error::EmptyDataset);
        }
        Ok((0..NUM_CLASSES).map(|c| self.f1(c)).sum::<f64>() / NUM_CLASSES as f64)
    }
}

pub fn confusion(preds: &[ClassLabel], truths: &[ClassLabel]) -> Result<ConfusionMatrix> {
    if preds.len() != truths.len() {
        return Err(Error::shape("confusion matrix", truths.len(), preds.len()));
    }
    if preds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut cm = ConfusionMatrix::default();
    for (&p, &t) in preds.iter().zip(truths) {
        cm.record(t, p);
    }
    Ok(cm)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub loss: f64,
    pub cce: f64,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub confusion: ConfusionMatrix,
}

impl Metrics {
    /// Builds metrics from a confusion matrix and already-averaged losses.
    pub fn from_confusion(confusion: ConfusionMatrix, loss: f64, cce: f64) -> Result<Self> {
        Ok(Self {
            loss,
            cce,
            accuracy: confusion.categorical_accuracy()?,
            macro_f1: confusion.macro_f1()?,
            confusion,
        })
    }

    /// Plain-text report. Losses that were not computed (NaN) print as `n/a`.
    pub fn report(&self, class_names: &[String]) -> String {
        let fmt_loss = |v: f64| if v.is_nan() { "n/a".to_string() } else { format!("{v:.4}") };
        let mut out = String::new();
        let _ = writeln!(out, "loss: {}", fmt_loss(self.loss));
        let _ = writeln!(out, "cce: {}", fmt_loss(self.cce));
        let _ = writeln!(out, "accuracy: {:.4}", self.accuracy);
        let _ = writeln!(out, "macro_f1: {:.4}", self.macro_f1);
        let _ = writeln!(out, "samples: {}", self.confusion.total());
        let _ = writeln!(out, "confusion (rows = truth, columns = predicted):");
        let width = class_names.iter().map(|n| n.len()).max().unwrap_or(0).max(8);
        let _ = write!(out, "{:width$}", "");
        for name in class_names {
            let _ = write!(out, " {name:>width$}");
        }
        out.push('\n');
        for (row, name) in self.confusion.cells.iter().zip(class_names) {
            let _ = write!(out, "{name:width$}");
            for v in row {
                let _ = write!(out, " {v:>width$}");
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn mse_examples() {
        assert_eq!(mse(&[1.0, 0.0, 0.0], &[1.0, 0.0, 0.0]).unwrap(), 0.0);
        assert_abs_diff_eq!(mse(&[1.0, 0.0, 0.0], &[0.5, 0.25, 0.25]).unwrap(), 0.125, epsilon = 1e-15);
        assert!(mse(&[1.0, 0.0], &[1.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn cce_examples() {
        assert_abs_diff_eq!(cce(&[0.0, 1.0, 0.0], &[0.25, 0.5, 0.25]).unwrap(), 2f64.ln(), epsilon = 1e-15);
        assert_eq!(cce(&[1.0, 0.0, 0.0], &[1.0, 0.0, 0.0]).unwrap(), 0.0);
        let clamped = cce(&[1.0, 0.0, 0.0], &[1e-20, 0.5, 0.5]).unwrap();
        assert_abs_diff_eq!(clamped, -(1e-12f64).ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(clamped, 27.631021115928547, epsilon = 1e-9);
        assert!(matches!(cce(&[0.5, 0.5, 0.0], &[0.3, 0.3, 0.4]), Err(Error::InvalidTarget(_))));
        assert!(matches!(cce(&[0.0, 0.0, 0.0], &[0.3, 0.3, 0.4]), Err(Error::InvalidTarget(_))));
    }

    #[test]
    fn focal_examples() {
        let y = [0.0, 1.0, 0.0];
        let p = [0.25, 0.5, 0.25];
        let plain = FocalConfig { alpha: 1.0, gamma: 0.0 };
        assert_eq!(focal(&y, &p, plain).unwrap(), cce(&y, &p).unwrap());
        let v = focal(&y, &p, FocalConfig::default()).unwrap();
        assert_abs_diff_eq!(v, 0.25 * 0.25 * 2f64.ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(v, 0.04332, epsilon = 1e-5);

        // Focal vanishes faster than cce as p_true -> 1.
        let near = [0.0, 0.999, 0.001];
        let far_y = [0.0, 1.0, 0.0];
        let ratio_near = focal(&far_y, &near, FocalConfig::default()).unwrap() / cce(&far_y, &near).unwrap();
        assert!(ratio_near < 1e-6);
    }

    #[test]
    fn softmax_is_shift_invariant() {
        let a = softmax(&[0.3, -1.2, 2.0]);
        let b = softmax(&[100.3, 98.8, 102.0]);
        for (x, y) in a.iter().zip(&b) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(a.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[1.0 / 3.0; 3]), 0);
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
        assert_eq!(argmax_with_tolerance(&[0.3, 0.34, 0.36], 0.05), 1);
    }

    #[test]
    fn confusion_examples() {
        use ClassLabel::*;
        let truths = vec![Happy, Unknown, Sad, Sad, Happy, Unknown, Unknown, Sad, Happy, Happy];
        let cm = confusion(&truths, &truths).unwrap();
        assert_eq!(cm.total(), 10);
        assert_eq!(cm.trace(), 10);

        let cm = confusion(&[Happy], &[Sad]).unwrap();
        let mut expected = [[0; 3]; 3];
        expected[2][0] = 1;
        assert_eq!(cm.cells, expected);
        assert!(confusion(&[Happy], &[]).is_err());
        assert!(matches!(confusion(&[], &[]), Err(Error::EmptyDataset)));
    }

    #[test]
    fn accuracy_edges() {
        let eye = ConfusionMatrix::from_cells([[4, 0, 0], [0, 3, 0], [0, 0, 2]]);
        assert_eq!(eye.categorical_accuracy().unwrap(), 1.0);
        assert_eq!(eye.macro_f1().unwrap(), 1.0);
        let off = ConfusionMatrix::from_cells([[0, 4, 0], [0, 0, 3], [2, 0, 0]]);
        assert_eq!(off.categorical_accuracy().unwrap(), 0.0);
        assert!(ConfusionMatrix::default().categorical_accuracy().is_err());
        assert!(ConfusionMatrix::default().macro_f1().is_err());
    }

    #[test]
    fn absent_class_contributes_zero_f1() {
        // Sad is neither true nor predicted anywhere.
        let cm = ConfusionMatrix::from_cells([[3, 1, 0], [2, 4, 0], [0, 0, 0]]);
        // Hand oracle: happy P=3/5 R=3/4, unknown P=4/5 R=4/6.
        let f_happy = 2.0 * (3.0 / 5.0) * (3.0 / 4.0) / (3.0 / 5.0 + 3.0 / 4.0);
        let f_unknown = 2.0 * (4.0 / 5.0) * (4.0 / 6.0) / (4.0 / 5.0 + 4.0 / 6.0);
        assert_eq!(cm.f1(2), 0.0);
        assert_abs_diff_eq!(cm.macro_f1().unwrap(), (f_happy + f_unknown) / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn report_lists_classes() {
        let cm = ConfusionMatrix::from_cells([[251, 35, 5], [110, 850, 150], [21, 140, 84]]);
        let m = Metrics::from_confusion(cm, f64::NAN, f64::NAN).unwrap();
        let names: Vec<String> = ["happy", "unknown", "sad"].iter().map(|s| s.to_string()).collect();
        let r = m.report(&names);
        assert!(r.contains("accuracy: 0.7199"));
        assert!(r.contains("macro_f1: 0.6298"));
        assert!(r.contains("loss: n/a"));
        assert!(r.contains("unknown"));
    }
}
