//! Blendshape dataset model, label handling and the on-disk CSV format.
//!
//! A dataset file has the header `index,label7,label3,<52 blendshape names>`
//! and one row per face observation. `index` and `label7` may be empty.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const NUM_BLENDSHAPES: usize = 52;
pub const NUM_CLASSES: usize = 3;

/// Blendshape categories in the order the face-landmark engine emits them.
pub const BLENDSHAPE_NAMES: [&str; NUM_BLENDSHAPES] = [
    "_neutral",
    "browDownLeft",
    "browDownRight",
    "browInnerUp",
    "browOuterUpLeft",
    "browOuterUpRight",
    "cheekPuff",
    "cheekSquintLeft",
    "cheekSquintRight",
    "eyeBlinkLeft",
    "eyeBlinkRight",
    "eyeLookDownLeft",
    "eyeLookDownRight",
    "eyeLookInLeft",
    "eyeLookInRight",
    "eyeLookOutLeft",
    "eyeLookOutRight",
    "eyeLookUpLeft",
    "eyeLookUpRight",
    "eyeSquintLeft",
    "eyeSquintRight",
    "eyeWideLeft",
    "eyeWideRight",
    "jawForward",
    "jawLeft",
    "jawOpen",
    "jawRight",
    "mouthClose",
    "mouthDimpleLeft",
    "mouthDimpleRight",
    "mouthFrownLeft",
    "mouthFrownRight",
    "mouthFunnel",
    "mouthLeft",
    "mouthLowerDownLeft",
    "mouthLowerDownRight",
    "mouthPressLeft",
    "mouthPressRight",
    "mouthPucker",
    "mouthRight",
    "mouthRollLower",
    "mouthRollUpper",
    "mouthShrugLower",
    "mouthShrugUpper",
    "mouthSmileLeft",
    "mouthSmileRight",
    "mouthStretchLeft",
    "mouthStretchRight",
    "mouthUpperUpLeft",
    "mouthUpperUpRight",
    "noseSneerLeft",
    "noseSneerRight",
];

/// The canonical name list as owned strings.
pub fn canonical_names() -> Vec<String> {
    BLENDSHAPE_NAMES.iter().map(|s| s.to_string()).collect()
}

/// Three-way target class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ClassLabel {
    Happy = 0,
    Unknown = 1,
    Sad = 2,
}

impl ClassLabel {
    pub const ALL: [ClassLabel; NUM_CLASSES] = [ClassLabel::Happy, ClassLabel::Unknown, ClassLabel::Sad];

    pub fn code(self) -> usize {
        self as usize
    }

    pub fn from_code(code: usize) -> Result<Self> {
        match code {
            0 => Ok(ClassLabel::Happy),
            1 => Ok(ClassLabel::Unknown),
            2 => Ok(ClassLabel::Sad),
            _ => Err(Error::InvalidLabel {
                code,
                num_classes: NUM_CLASSES,
            }),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ClassLabel::Happy => "happy",
            ClassLabel::Unknown => "unknown",
            ClassLabel::Sad => "sad",
        }
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// The seven emotion classes of the source image dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SourceLabel {
    Happy,
    Sad,
    Angry,
    Afraid,
    Surprise,
    Disgust,
    Neutral,
}

impl SourceLabel {
    pub const ALL: [SourceLabel; 7] = [
        SourceLabel::Happy,
        SourceLabel::Sad,
        SourceLabel::Angry,
        SourceLabel::Afraid,
        SourceLabel::Surprise,
        SourceLabel::Disgust,
        SourceLabel::Neutral,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SourceLabel::Happy => "happy",
            SourceLabel::Sad => "sad",
            SourceLabel::Angry => "angry",
            SourceLabel::Afraid => "afraid",
            SourceLabel::Surprise => "surprise",
            SourceLabel::Disgust => "disgust",
            SourceLabel::Neutral => "neutral",
        }
    }
}

impl fmt::Display for SourceLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SourceLabel {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        SourceLabel::ALL
            .into_iter()
            .find(|l| l.name() == s)
            .ok_or_else(|| format!("unknown source label `{s}`"))
    }
}

/// Collapses a source emotion onto the three target classes.
pub fn remap_label(src: SourceLabel) -> ClassLabel {
    match src {
        SourceLabel::Happy => ClassLabel::Happy,
        SourceLabel::Sad => ClassLabel::Sad,
        _ => ClassLabel::Unknown,
    }
}

pub fn one_hot(label: ClassLabel, num_classes: usize) -> Result<Vec<f64>> {
    let code = label.code();
    if code >= num_classes {
        return Err(Error::InvalidLabel { code, num_classes });
    }
    let mut v = vec![0.0; num_classes];
    v[code] = 1.0;
    Ok(v)
}

/// One face observation: 52 blendshape scores plus an optional tracking index.
#[derive(Debug, Clone, PartialEq)]
pub struct BlendshapeFrame {
    pub scores: Vec<f64>,
    pub index: Option<u64>,
}

impl BlendshapeFrame {
    pub fn new(scores: Vec<f64>, index: Option<u64>) -> Result<Self> {
        if scores.len() != NUM_BLENDSHAPES {
            return Err(Error::shape("blendshape frame", NUM_BLENDSHAPES, scores.len()));
        }
        if let Some(j) = scores.iter().position(|s| !(0.0..=1.0).contains(s)) {
            return Err(Error::Config(format!(
                "blendshape `{}` score {} outside [0, 1]",
                BLENDSHAPE_NAMES[j], scores[j]
            )));
        }
        Ok(Self { scores, index })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub frame: BlendshapeFrame,
    pub label3: ClassLabel,
    pub label7: Option<SourceLabel>,
}

impl LabeledSample {
    pub fn new(frame: BlendshapeFrame, label3: ClassLabel, label7: Option<SourceLabel>) -> Result<Self> {
        if let Some(src) = label7 {
            if remap_label(src) != label3 {
                return Err(Error::InvalidTarget(format!(
                    "source label `{src}` maps to {}, not {}",
                    remap_label(src).code(),
                    label3.code()
                )));
            }
        }
        Ok(Self { frame, label3, label7 })
    }

    /// Sample carrying its source label; the 3-class label is derived.
    pub fn from_source(frame: BlendshapeFrame, label7: SourceLabel) -> Self {
        Self {
            frame,
            label3: remap_label(label7),
            label7: Some(label7),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub fn file_name(self) -> &'static str {
        match self {
            Split::Train => "train.csv",
            Split::Validation => "val.csv",
            Split::Test => "test.csv",
        }
    }

    pub fn from_file_name(name: &str) -> Option<Self> {
        [Split::Train, Split::Validation, Split::Test]
            .into_iter()
            .find(|s| s.file_name() == name)
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "val" | "validation" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split `{other}` (expected train, val or test)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlendshapeDataset {
    pub split: Split,
    pub blendshape_names: Vec<String>,
    pub samples: Vec<LabeledSample>,
}

impl BlendshapeDataset {
    /// Builds a dataset over the canonical blendshape name list.
    pub fn new(split: Split, samples: Vec<LabeledSample>) -> Self {
        Self {
            split,
            blendshape_names: canonical_names(),
            samples,
        }
    }

    pub fn with_names(split: Split, blendshape_names: Vec<String>, samples: Vec<LabeledSample>) -> Result<Self> {
        validate_names(&blendshape_names)?;
        let mut seen = HashSet::new();
        for s in &samples {
            if let Some(idx) = s.frame.index {
                if !seen.insert(idx) {
                    return Err(Error::Config(format!("duplicate sample index {idx}")));
                }
            }
        }
        Ok(Self {
            split,
            blendshape_names,
            samples,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Number of samples per 3-class label.
    pub fn class_counts(&self) -> [usize; NUM_CLASSES] {
        let mut counts = [0; NUM_CLASSES];
        for s in &self.samples {
            counts[s.label3.code()] += 1;
        }
        counts
    }

    /// Number of samples per source label; samples without one are skipped.
    pub fn source_counts(&self) -> BTreeMap<SourceLabel, usize> {
        let mut counts = BTreeMap::new();
        for s in &self.samples {
            if let Some(l) = s.label7 {
                *counts.entry(l).or_insert(0) += 1;
            }
        }
        counts
    }
}

fn validate_names(names: &[String]) -> Result<()> {
    if names.len() != NUM_BLENDSHAPES {
        return Err(Error::shape("blendshape name list", NUM_BLENDSHAPES, names.len()));
    }
    let mut seen = HashSet::new();
    for n in names {
        if !seen.insert(n.as_str()) {
            return Err(Error::Config(format!("duplicate blendshape name `{n}`")));
        }
    }
    Ok(())
}

/// Per-class sample budget for [`subsample_per_class`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Quota {
    Count(usize),
    All,
}

/// Training-set class budget: 4000 happy and sad, 1500 of each other class,
/// and every available disgust sample.
pub fn default_training_quota() -> BTreeMap<SourceLabel, Quota> {
    use SourceLabel::*;
    BTreeMap::from([
        (Happy, Quota::Count(4000)),
        (Sad, Quota::Count(4000)),
        (Angry, Quota::Count(1500)),
        (Afraid, Quota::Count(1500)),
        (Surprise, Quota::Count(1500)),
        (Disgust, Quota::All),
        (Neutral, Quota::Count(1500)),
    ])
}

/// Draws up to `quota[class]` samples of each source class uniformly at random.
///
/// Classes absent from `quota`, and samples without a source label, are not
/// selected. Selected samples keep their original relative order.
pub fn subsample_per_class(
    ds: &BlendshapeDataset,
    quota: &BTreeMap<SourceLabel, Quota>,
    seed: u64,
) -> Result<BlendshapeDataset> {
    if ds.split != Split::Train {
        return Err(Error::Config("per-class subsampling applies to the training split only".into()));
    }
    let mut by_class: BTreeMap<SourceLabel, Vec<usize>> = BTreeMap::new();
    for (i, s) in ds.samples.iter().enumerate() {
        if let Some(l) = s.label7 {
            by_class.entry(l).or_default().push(i);
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = Vec::new();
    for (&class, &q) in quota {
        let available = by_class.get(&class).map(Vec::as_slice).unwrap_or(&[]);
        let wanted = match q {
            Quota::Count(0) => continue,
            Quota::Count(n) => n,
            Quota::All => available.len(),
        };
        if available.is_empty() {
            return Err(Error::MissingClass(class.name().to_string()));
        }
        let mut picks = available.to_vec();
        picks.shuffle(&mut rng);
        picks.truncate(wanted.min(available.len()));
        chosen.extend(picks);
    }
    chosen.sort_unstable();

    Ok(BlendshapeDataset {
        split: ds.split,
        blendshape_names: ds.blendshape_names.clone(),
        samples: chosen.into_iter().map(|i| ds.samples[i].clone()).collect(),
    })
}

const FIXED_COLUMNS: [&str; 3] = ["index", "label7", "label3"];

/// Loads a dataset file, inferring the split from its file name
/// (`train.csv`, `val.csv` or `test.csv`).
pub fn load_dataset(path: impl AsRef<Path>) -> Result<BlendshapeDataset> {
    let path = path.as_ref();
    let split = path
        .file_name()
        .and_then(|n| n.to_str())
        .and_then(Split::from_file_name)
        .ok_or_else(|| {
            Error::Config(format!(
                "{}: cannot infer split from file name (expected train.csv, val.csv or test.csv)",
                path.display()
            ))
        })?;
    load_dataset_as(path, split)
}

/// Loads `<dir>/<split file name>`.
pub fn load_split(dir: impl AsRef<Path>, split: Split) -> Result<BlendshapeDataset> {
    load_dataset_as(dir.as_ref().join(split.file_name()), split)
}

pub fn load_dataset_as(path: impl AsRef<Path>, split: Split) -> Result<BlendshapeDataset> {
    let path = path.as_ref();
    let file = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path)
        .map_err(|e| csv_error(&file, e))?;

    let mut records = reader.records();
    let header = match records.next() {
        Some(r) => r.map_err(|e| csv_error(&file, e))?,
        None => {
            return Err(parse_err(&file, 1, None, "missing header row"));
        }
    };
    let expected_cols = FIXED_COLUMNS.len() + NUM_BLENDSHAPES;
    if header.len() != expected_cols {
        return Err(parse_err(
            &file,
            1,
            None,
            format!("header has {} columns, expected {expected_cols}", header.len()),
        ));
    }
    for (i, want) in FIXED_COLUMNS.iter().enumerate() {
        if &header[i] != *want {
            return Err(parse_err(
                &file,
                1,
                Some(i.to_string()),
                format!("expected column `{want}`, found `{}`", &header[i]),
            ));
        }
    }
    let names: Vec<String> = header.iter().skip(FIXED_COLUMNS.len()).map(str::to_string).collect();
    validate_names(&names).map_err(|e| parse_err(&file, 1, None, e.to_string()))?;

    let mut samples = Vec::new();
    let mut seen_index = HashSet::new();
    for (i, rec) in records.enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| csv_error(&file, e))?;
        if rec.len() != expected_cols {
            return Err(parse_err(
                &file,
                row,
                None,
                format!("row has {} columns, expected {expected_cols}", rec.len()),
            ));
        }
        let index = match rec[0].trim() {
            "" => None,
            s => {
                let v: u64 = s
                    .parse()
                    .map_err(|_| parse_err(&file, row, Some("index".into()), format!("invalid index `{s}`")))?;
                if !seen_index.insert(v) {
                    return Err(parse_err(&file, row, Some("index".into()), format!("duplicate index {v}")));
                }
                Some(v)
            }
        };
        let label7 = match rec[1].trim() {
            "" => None,
            s => Some(
                s.parse::<SourceLabel>()
                    .map_err(|e| parse_err(&file, row, Some("label7".into()), e))?,
            ),
        };
        let label3 = rec[2]
            .trim()
            .parse::<usize>()
            .ok()
            .and_then(|c| ClassLabel::from_code(c).ok())
            .ok_or_else(|| {
                parse_err(
                    &file,
                    row,
                    Some("label3".into()),
                    format!("invalid class code `{}`", &rec[2]),
                )
            })?;
        let mut scores = Vec::with_capacity(NUM_BLENDSHAPES);
        for (j, cell) in rec.iter().skip(FIXED_COLUMNS.len()).enumerate() {
            let col = || Some(names[j].clone());
            let v: f64 = cell
                .trim()
                .parse()
                .map_err(|_| parse_err(&file, row, col(), format!("invalid score `{cell}`")))?;
            if !(0.0..=1.0).contains(&v) {
                return Err(parse_err(&file, row, col(), format!("score {v} outside [0, 1]")));
            }
            scores.push(v);
        }
        let sample = LabeledSample::new(BlendshapeFrame { scores, index }, label3, label7)
            .map_err(|e| parse_err(&file, row, Some("label3".into()), e.to_string()))?;
        samples.push(sample);
    }

    Ok(BlendshapeDataset {
        split,
        blendshape_names: names,
        samples,
    })
}

pub fn save_dataset(ds: &BlendshapeDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = path.display().to_string();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(&file, e))?;
    let header = FIXED_COLUMNS
        .iter()
        .map(|s| s.to_string())
        .chain(ds.blendshape_names.iter().cloned());
    w.write_record(header).map_err(|e| csv_error(&file, e))?;
    for s in &ds.samples {
        let mut row = Vec::with_capacity(FIXED_COLUMNS.len() + s.frame.scores.len());
        row.push(s.frame.index.map(|i| i.to_string()).unwrap_or_default());
        row.push(s.label7.map(|l| l.name().to_string()).unwrap_or_default());
        row.push(s.label3.code().to_string());
        // `{}` on f64 prints the shortest string that parses back to the same value.
        row.extend(s.frame.scores.iter().map(|v| format!("{v}")));
        w.write_record(&row).map_err(|e| csv_error(&file, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn parse_err(file: &str, row: usize, column: Option<String>, msg: impl Into<String>) -> Error {
    Error::Parse {
        file: file.to_string(),
        row,
        column,
        msg: msg.into(),
    }
}

fn csv_error(file: &str, e: csv::Error) -> Error {
    let row = e.position().map(|p| p.line() as usize).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(file, io),
        other => parse_err(file, row, None, format!("{other:?}")),
    }
}
