//! Single-frame prediction and frame-by-frame streaming classification.

use std::collections::HashMap;

use crate::dataio::{BlendshapeFrame, ClassLabel, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::lossmetrics::argmax_with_tolerance;
use crate::nn::{HiddenState, Model};

/// Stateless prediction: zero initial state, length-1 sequence. Ties go to
/// the lowest class code.
pub fn predict(model: &Model, frame: &BlendshapeFrame) -> Result<(ClassLabel, Vec<f64>)> {
    let x = model.features(&frame.scores)?;
    let (probs, _, _) = model.forward(&[x], None)?;
    Ok((ClassLabel::from_code(argmax_with_tolerance(&probs, 0.0))?, probs))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StreamOptions {
    /// Carry LSTM state from one frame to the next.
    pub stateful: bool,
    /// EMA coefficient on the previous smoothed distribution, in `[0, 1)`.
    pub smoothing: Option<f64>,
    /// Classes whose probability is within this margin of the maximum count
    /// as tied; ties go to the lowest class code.
    pub tie_tolerance: f64,
}

impl Default for StreamOptions {
    fn default() -> Self {
        Self {
            stateful: false,
            smoothing: None,
            tie_tolerance: 0.0,
        }
    }
}

impl StreamOptions {
    pub fn validate(&self) -> Result<()> {
        if let Some(beta) = self.smoothing {
            if !(0.0..1.0).contains(&beta) {
                return Err(Error::Config(format!("smoothing coefficient {beta} outside [0, 1)")));
            }
        }
        if !(self.tie_tolerance >= 0.0 && self.tie_tolerance.is_finite()) {
            return Err(Error::Config("tie tolerance must be a non-negative number".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreamOutput {
    pub label: ClassLabel,
    /// Smoothed distribution when smoothing is on, raw otherwise.
    pub probs: Vec<f64>,
    pub raw_probs: Vec<f64>,
    /// 1-based index of this frame within the session.
    pub frame: u64,
}

/// One consumer's view of a live stream over a shared model.
#[derive(Debug, Clone)]
pub struct StreamSession<'m> {
    model: &'m Model,
    options: StreamOptions,
    hidden: HiddenState,
    smoothed: Option<Vec<f64>>,
    frames_seen: u64,
}

impl<'m> StreamSession<'m> {
    pub fn new(model: &'m Model, options: StreamOptions) -> Result<Self> {
        options.validate()?;
        Ok(Self {
            model,
            options,
            hidden: HiddenState::zeros(&model.params),
            smoothed: None,
            frames_seen: 0,
        })
    }

    pub fn frames_seen(&self) -> u64 {
        self.frames_seen
    }

    pub fn hidden(&self) -> &HiddenState {
        &self.hidden
    }

    pub fn smoothed_probs(&self) -> Option<&[f64]> {
        self.smoothed.as_deref()
    }

    pub fn step(&mut self, frame: &BlendshapeFrame) -> Result<StreamOutput> {
        let x = self.model.features(&frame.scores)?;
        let state = self.options.stateful.then_some(&self.hidden);
        let (raw, _, next) = self.model.forward(&[x], state)?;
        if self.options.stateful {
            self.hidden = next;
        }

        let probs = match (self.options.smoothing, &self.smoothed) {
            (Some(beta), Some(prev)) if beta > 0.0 => {
                let mixed: Vec<f64> = prev.iter().zip(&raw).map(|(p, r)| beta * p + (1.0 - beta) * r).collect();
                let sum: f64 = mixed.iter().sum();
                mixed.into_iter().map(|v| v / sum).collect()
            }
            _ => raw.clone(),
        };
        if self.options.smoothing.is_some() {
            self.smoothed = Some(probs.clone());
        }
        self.frames_seen += 1;
        Ok(StreamOutput {
            label: ClassLabel::from_code(argmax_with_tolerance(&probs, self.options.tie_tolerance))?,
            probs,
            raw_probs: raw,
            frame: self.frames_seen,
        })
    }

    /// Zeroes the hidden state, clears smoothing and the frame counter.
    pub fn reset(&mut self) {
        self.hidden = HiddenState::zeros(&self.model.params);
        self.smoothed = None;
        self.frames_seen = 0;
    }
}

/// Parses one stream line: either comma-separated scores in the model's
/// blendshape order, or a JSON object mapping every blendshape name to its
/// score. Returns `None` for blank and `#` comment lines.
pub fn parse_frame_line(line: &str, names: &[String]) -> std::result::Result<Option<BlendshapeFrame>, String> {
    let line = line.trim();
    if line.is_empty() || line.starts_with('#') {
        return Ok(None);
    }
    let scores: Vec<f64> = if line.starts_with('{') {
        let map: HashMap<String, f64> = serde_json::from_str(line).map_err(|e| format!("invalid JSON frame: {e}"))?;
        if let Some(extra) = map.keys().find(|k| !names.contains(k)) {
            return Err(format!("unknown blendshape `{extra}`"));
        }
        names
            .iter()
            .map(|n| map.get(n).copied().ok_or_else(|| format!("missing blendshape `{n}`")))
            .collect::<std::result::Result<_, _>>()?
    } else {
        line.split(',')
            .enumerate()
            .map(|(j, s)| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| format!("field {}: invalid score `{}`", j + 1, s.trim()))
            })
            .collect::<std::result::Result<_, _>>()?
    };
    if scores.len() != names.len() {
        return Err(format!("expected {} scores, got {}", names.len(), scores.len()));
    }
    BlendshapeFrame::new(scores, None).map(Some).map_err(|e| e.to_string())
}

/// `frame,class_name,class_code,p0,p1,p2` with six decimals.
pub fn format_output_line(frame: u64, label: ClassLabel, probs: &[f64], class_names: &[String]) -> String {
    debug_assert_eq!(probs.len(), NUM_CLASSES);
    let name = class_names.get(label.code()).map(String::as_str).unwrap_or(label.name());
    format!(
        "{frame},{name},{},{:.6},{:.6},{:.6}",
        label.code(),
        probs[0],
        probs[1],
        probs[2]
    )
}
