//! Blendshape pruning: count how often each blendshape is strongly active
//! and keep only those that are active often enough.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataio::BlendshapeDataset;
use crate::error::{Error, Result};
use crate::par;

pub const DEFAULT_THRESHOLD: f64 = 0.4;
pub const DEFAULT_MIN_COUNT: usize = 100;

const COUNT_CHUNK: usize = 1024;

#[derive(Debug, Clone, PartialEq)]
pub struct ActivationCounts {
    pub counts: Vec<usize>,
    pub threshold: f64,
    pub dataset_size: usize,
}

/// Counts, per blendshape, the samples whose score is strictly above `threshold`.
pub fn count_activations(ds: &BlendshapeDataset, threshold: f64) -> Result<ActivationCounts> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Config(format!("activation threshold {threshold} outside (0, 1)")));
    }
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let width = ds.blendshape_names.len();
    let partials = par::map_chunks(&ds.samples, COUNT_CHUNK, |chunk| {
        let mut counts = vec![0usize; width];
        for s in chunk {
            for (c, &v) in counts.iter_mut().zip(&s.frame.scores) {
                if v > threshold {
                    *c += 1;
                }
            }
        }
        counts
    });
    let mut counts = vec![0usize; width];
    for p in partials {
        for (c, v) in counts.iter_mut().zip(p) {
            *c += v;
        }
    }
    Ok(ActivationCounts {
        counts,
        threshold,
        dataset_size: ds.len(),
    })
}

/// Ordered subset of blendshape indices fed to the model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureMask {
    pub kept_indices: Vec<usize>,
    pub source_names: Vec<String>,
}

impl FeatureMask {
    pub fn new(kept_indices: Vec<usize>, source_names: Vec<String>) -> Result<Self> {
        if kept_indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::MaskMismatch("kept indices must be strictly increasing".into()));
        }
        if let Some(&last) = kept_indices.last() {
            if last >= source_names.len() {
                return Err(Error::MaskMismatch(format!(
                    "index {last} out of range for {} blendshapes",
                    source_names.len()
                )));
            }
        }
        Ok(Self {
            kept_indices,
            source_names,
        })
    }

    pub fn identity(source_names: Vec<String>) -> Self {
        Self {
            kept_indices: (0..source_names.len()).collect(),
            source_names,
        }
    }

    pub fn len(&self) -> usize {
        self.kept_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kept_indices.is_empty()
    }

    pub fn kept_names(&self) -> Vec<&str> {
        self.kept_indices.iter().map(|&i| self.source_names[i].as_str()).collect()
    }

    /// Fails unless `names` is exactly the list this mask indexes.
    pub fn check_names(&self, names: &[String]) -> Result<()> {
        if names != self.source_names.as_slice() {
            return Err(Error::MaskMismatch(
                "blendshape name list differs from the one the mask was built on".into(),
            ));
        }
        Ok(())
    }

    /// Gathers the kept scores of one frame.
    pub fn apply(&self, scores: &[f64]) -> Result<Vec<f64>> {
        if scores.len() != self.source_names.len() {
            return Err(Error::MaskMismatch(format!(
                "frame has {} scores, mask indexes {}",
                scores.len(),
                self.source_names.len()
            )));
        }
        Ok(self.kept_indices.iter().map(|&i| scores[i]).collect())
    }

    /// Writes the kept blendshape names, one per line.
    pub fn export(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = String::new();
        for name in self.kept_names() {
            text.push_str(name);
            text.push('\n');
        }
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Reads a name-per-line mask file against the given name list.
    pub fn import(path: impl AsRef<Path>, source_names: Vec<String>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut kept = Vec::new();
        for (line_no, line) in text.lines().enumerate() {
            let name = line.trim();
            if name.is_empty() {
                continue;
            }
            let idx = source_names.iter().position(|n| n == name).ok_or_else(|| Error::Parse {
                file: path.display().to_string(),
                row: line_no + 1,
                column: None,
                msg: format!("unknown blendshape `{name}`"),
            })?;
            kept.push(idx);
        }
        kept.sort_unstable();
        kept.dedup();
        FeatureMask::new(kept, source_names)
    }
}

/// Keeps every blendshape whose count is strictly above `min_count`.
pub fn select_features(ac: &ActivationCounts, min_count: usize, source_names: Vec<String>) -> Result<FeatureMask> {
    if source_names.len() != ac.counts.len() {
        return Err(Error::shape("feature selection name list", ac.counts.len(), source_names.len()));
    }
    let kept = ac
        .counts
        .iter()
        .enumerate()
        .filter(|(_, &c)| c > min_count)
        .map(|(j, _)| j)
        .collect();
    Ok(FeatureMask {
        kept_indices: kept,
        source_names,
    })
}

/// Counts activations on `ds` and selects features in one go.
pub fn build_mask(ds: &BlendshapeDataset, threshold: f64, min_count: usize) -> Result<FeatureMask> {
    let ac = count_activations(ds, threshold)?;
    select_features(&ac, min_count, ds.blendshape_names.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{canonical_names, BlendshapeFrame, ClassLabel, LabeledSample, Split, NUM_BLENDSHAPES};

    fn dataset(rows: &[Vec<f64>]) -> BlendshapeDataset {
        let samples = rows
            .iter()
            .map(|r| LabeledSample::new(BlendshapeFrame::new(r.clone(), None).unwrap(), ClassLabel::Unknown, None).unwrap())
            .collect();
        BlendshapeDataset::new(Split::Train, samples)
    }

    fn toy_names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("b{i}")).collect()
    }

    #[test]
    fn counts_are_strict() {
        let rows: Vec<Vec<f64>> = [0.5, 0.39, 0.41, 0.4]
            .iter()
            .map(|&v| {
                let mut r = vec![0.0; NUM_BLENDSHAPES];
                r[7] = v;
                r
            })
            .collect();
        let ac = count_activations(&dataset(&rows), 0.4).unwrap();
        assert_eq!(ac.counts[7], 2);
        assert_eq!(ac.dataset_size, 4);
    }

    #[test]
    fn zero_dataset_counts_nothing() {
        let ac = count_activations(&dataset(&vec![vec![0.0; NUM_BLENDSHAPES]; 5]), 0.4).unwrap();
        assert!(ac.counts.iter().all(|&c| c == 0));
    }

    #[test]
    fn empty_dataset_is_an_error() {
        assert!(matches!(count_activations(&dataset(&[]), 0.4), Err(Error::EmptyDataset)));
    }

    #[test]
    fn bad_threshold_is_rejected() {
        let ds = dataset(&[vec![0.0; NUM_BLENDSHAPES]]);
        assert!(count_activations(&ds, 0.0).is_err());
        assert!(count_activations(&ds, 1.0).is_err());
    }

    #[test]
    fn select_uses_strict_min_count() {
        let ac = ActivationCounts {
            counts: vec![150, 100, 101],
            threshold: 0.4,
            dataset_size: 200,
        };
        let m = select_features(&ac, 100, toy_names(3)).unwrap();
        assert_eq!(m.kept_indices, vec![0, 2]);

        let ac = ActivationCounts {
            counts: vec![0; 3],
            threshold: 0.4,
            dataset_size: 200,
        };
        assert!(select_features(&ac, 100, toy_names(3)).unwrap().is_empty());
    }

    #[test]
    fn apply_mask_gathers() {
        let mut scores = vec![0.0; NUM_BLENDSHAPES];
        scores[0] = 0.7;
        let identity = FeatureMask::identity(canonical_names());
        assert_eq!(identity.apply(&scores).unwrap(), scores);
        let single = FeatureMask::new(vec![0], canonical_names()).unwrap();
        assert_eq!(single.apply(&scores).unwrap(), vec![0.7]);
        assert!(matches!(single.apply(&scores[..51]), Err(Error::MaskMismatch(_))));
    }

    #[test]
    fn mask_validation() {
        assert!(FeatureMask::new(vec![2, 1], toy_names(3)).is_err());
        assert!(FeatureMask::new(vec![1, 1], toy_names(3)).is_err());
        assert!(FeatureMask::new(vec![3], toy_names(3)).is_err());
        let m = FeatureMask::identity(toy_names(3));
        assert!(m.check_names(&toy_names(4)).is_err());
    }

    #[test]
    fn export_import_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mask.txt");
        let m = FeatureMask::new(vec![3, 10, 44], canonical_names()).unwrap();
        m.export(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "browInnerUp\neyeBlinkRight\nmouthSmileLeft\n");
        assert_eq!(FeatureMask::import(&path, canonical_names()).unwrap(), m);
    }
}
