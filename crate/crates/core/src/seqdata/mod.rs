//! Labelled sequences, datasets and dataset-level transition statistics.
//!
//! Class ids live in `0..L`. The previous-action index `L` stands for the
//! implicit `start` class that precedes the first segment of every sequence.

mod io;
mod synth;

pub use io::{load_dataset, save_dataset, write_label_file, Manifest, ManifestEntry};
pub use synth::{generate_synthetic, DurationConfig, SynthConfig};

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A maximal run of frames sharing one label. `end` is inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub start: usize,
    pub end: usize,
    pub label: usize,
}

impl Segment {
    /// Number of frames in the segment.
    pub fn duration(&self) -> usize {
        self.end + 1 - self.start
    }
}

/// Segment-wise view of a frame labelling.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Segmentation {
    segments: Vec<Segment>,
}

impl Segmentation {
    /// Builds a segmentation from explicit segments, checking contiguity,
    /// coverage from frame 0 and distinct adjacent labels.
    pub fn new(segments: Vec<Segment>) -> Result<Self> {
        let mut next = 0;
        for (n, s) in segments.iter().enumerate() {
            if s.start != next || s.end < s.start {
                return Err(Error::config(format!(
                    "segment {n} spans [{}, {}] but must start at frame {next}",
                    s.start, s.end
                )));
            }
            if n > 0 && segments[n - 1].label == s.label {
                return Err(Error::config(format!(
                    "segments {} and {n} share label {}",
                    n - 1,
                    s.label
                )));
            }
            next = s.end + 1;
        }
        Ok(Self { segments })
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    /// Total number of frames covered.
    pub fn num_frames(&self) -> usize {
        self.segments.last().map_or(0, |s| s.end + 1)
    }

    /// Segment labels in temporal order, durations dropped.
    pub fn labels(&self) -> Vec<usize> {
        self.segments.iter().map(|s| s.label).collect()
    }

    /// Expands back to one label per frame.
    pub fn expand(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.num_frames());
        for s in &self.segments {
            out.extend(std::iter::repeat_n(s.label, s.duration()));
        }
        out
    }
}

/// Run-length encodes frame labels into segments.
pub fn segmentation_from_frames(frame_labels: &[usize]) -> Result<Segmentation> {
    if frame_labels.is_empty() {
        return Err(Error::EmptySequence);
    }
    let mut segments = Vec::new();
    let mut start = 0;
    for t in 1..=frame_labels.len() {
        if t == frame_labels.len() || frame_labels[t] != frame_labels[start] {
            segments.push(Segment {
                start,
                end: t - 1,
                label: frame_labels[start],
            });
            start = t;
        }
    }
    Ok(Segmentation { segments })
}

/// Per-frame previous-action indices; `start_index` for the first segment.
pub fn previous_actions(segmentation: &Segmentation, start_index: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(segmentation.num_frames());
    let mut prev = start_index;
    for s in segmentation.segments() {
        out.extend(std::iter::repeat_n(prev, s.duration()));
        prev = s.label;
    }
    out
}

/// A feature sequence with frame labels.
///
/// Features are stored frame-major: frame `t` occupies
/// `features[t * feature_dim..(t + 1) * feature_dim]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSequence {
    id: String,
    feature_dim: usize,
    features: Vec<f32>,
    frame_labels: Vec<usize>,
    prev_action: Vec<usize>,
    segmentation: Segmentation,
}

impl LabeledSequence {
    pub fn new(
        id: impl Into<String>,
        feature_dim: usize,
        features: Vec<f32>,
        frame_labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self> {
        if feature_dim == 0 {
            return Err(Error::config("feature dimension must be positive"));
        }
        let segmentation = segmentation_from_frames(&frame_labels)?;
        if features.len() != feature_dim * frame_labels.len() {
            return Err(Error::LengthMismatch {
                left: features.len(),
                right: feature_dim * frame_labels.len(),
            });
        }
        if let Some(&bad) = frame_labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::Range {
                what: "label",
                value: bad,
                bound: num_classes,
            });
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("feature entries must be finite"));
        }
        let prev_action = previous_actions(&segmentation, num_classes);
        Ok(Self {
            id: id.into(),
            feature_dim,
            features,
            frame_labels,
            prev_action,
            segmentation,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn len(&self) -> usize {
        self.frame_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frame_labels.is_empty()
    }

    pub fn features(&self) -> &[f32] {
        &self.features
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        &self.features[t * self.feature_dim..(t + 1) * self.feature_dim]
    }

    pub fn frame_labels(&self) -> &[usize] {
        &self.frame_labels
    }

    pub fn prev_action(&self) -> &[usize] {
        &self.prev_action
    }

    pub fn segmentation(&self) -> &Segmentation {
        &self.segmentation
    }
}

/// A collection of sequences sharing the class count and feature dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    sequences: Vec<LabeledSequence>,
    num_classes: usize,
    feature_dim: usize,
    class_names: Vec<String>,
    class_frame_counts: Vec<u64>,
}

impl Dataset {
    /// Class names default to `c0`, `c1`, ...
    pub fn new(sequences: Vec<LabeledSequence>, num_classes: usize, feature_dim: usize) -> Result<Self> {
        let names = (0..num_classes).map(|i| format!("c{i}")).collect();
        Self::with_class_names(sequences, num_classes, feature_dim, names)
    }

    pub fn with_class_names(
        sequences: Vec<LabeledSequence>,
        num_classes: usize,
        feature_dim: usize,
        class_names: Vec<String>,
    ) -> Result<Self> {
        if num_classes == 0 || feature_dim == 0 {
            return Err(Error::config("class count and feature dimension must be positive"));
        }
        if class_names.len() != num_classes {
            return Err(Error::LengthMismatch {
                left: class_names.len(),
                right: num_classes,
            });
        }
        let mut class_frame_counts = vec![0u64; num_classes];
        for seq in &sequences {
            if seq.feature_dim() != feature_dim {
                return Err(Error::config(format!(
                    "sequence '{}' has feature dimension {} (dataset uses {feature_dim})",
                    seq.id(),
                    seq.feature_dim()
                )));
            }
            for &y in seq.frame_labels() {
                if y >= num_classes {
                    return Err(Error::Range {
                        what: "label",
                        value: y,
                        bound: num_classes,
                    });
                }
                class_frame_counts[y] += 1;
            }
            if seq.prev_action().first() != Some(&num_classes) {
                return Err(Error::config(format!(
                    "sequence '{}' was built for a different class count",
                    seq.id()
                )));
            }
        }
        Ok(Self {
            sequences,
            num_classes,
            feature_dim,
            class_names,
            class_frame_counts,
        })
    }

    pub fn sequences(&self) -> &[LabeledSequence] {
        &self.sequences
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn class_frame_counts(&self) -> &[u64] {
        &self.class_frame_counts
    }

    pub fn total_frames(&self) -> u64 {
        self.class_frame_counts.iter().sum()
    }

    /// Classes with no frames. They are kept but excluded from per-class averages.
    pub fn absent_classes(&self) -> Vec<usize> {
        (0..self.num_classes)
            .filter(|&i| self.class_frame_counts[i] == 0)
            .collect()
    }

    /// Splits off the trailing `test_fraction` of sequences, keeping order.
    /// Both parts are non-empty whenever the dataset has two or more sequences.
    pub fn split(&self, test_fraction: f64) -> Result<(Dataset, Dataset)> {
        if !(0.0..1.0).contains(&test_fraction) {
            return Err(Error::config("test fraction must lie in [0, 1)"));
        }
        let n = self.sequences.len();
        let mut n_test = (n as f64 * test_fraction).round() as usize;
        if test_fraction > 0.0 && n >= 2 {
            n_test = n_test.clamp(1, n - 1);
        }
        let (train, test) = self.sequences.split_at(n - n_test);
        let make = |seqs: &[LabeledSequence]| {
            Dataset::with_class_names(
                seqs.to_vec(),
                self.num_classes,
                self.feature_dim,
                self.class_names.clone(),
            )
        };
        Ok((make(train)?, make(test)?))
    }
}

/// Dataset-level transition statistics, fixed for a training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionStats {
    num_classes: usize,
    counts: Vec<u64>,
    total_frames: u64,
    transition: Vec<f64>,
    prior: Vec<f64>,
    valid_mask: Vec<bool>,
}

impl TransitionStats {
    /// Builds the statistics from raw `(class, previous action)` frame counts,
    /// laid out row-major as `L × (L + 1)`.
    pub fn from_counts(num_classes: usize, counts: Vec<u64>) -> Result<Self> {
        let cols = num_classes + 1;
        if counts.len() != num_classes * cols {
            return Err(Error::LengthMismatch {
                left: counts.len(),
                right: num_classes * cols,
            });
        }
        let total_frames: u64 = counts.iter().sum();
        if total_frames == 0 {
            return Err(Error::EmptySequence);
        }
        let total = total_frames as f64;
        let transition: Vec<f64> = counts.iter().map(|&c| c as f64 / total).collect();
        let prior = (0..num_classes)
            .map(|i| counts[i * cols..(i + 1) * cols].iter().sum::<u64>() as f64 / total)
            .collect();
        let valid_mask = counts.iter().map(|&c| c > 0).collect();
        Ok(Self {
            num_classes,
            counts,
            total_frames,
            transition,
            prior,
            valid_mask,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Number of previous-action columns, `L + 1`.
    pub fn num_prev(&self) -> usize {
        self.num_classes + 1
    }

    pub fn start_index(&self) -> usize {
        self.num_classes
    }

    pub fn total_frames(&self) -> u64 {
        self.total_frames
    }

    pub fn count(&self, class: usize, prev: usize) -> u64 {
        self.counts[class * self.num_prev() + prev]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    /// `T[i][k]`: fraction of frames with truth `i` and previous action `k`.
    pub fn transition(&self, class: usize, prev: usize) -> f64 {
        self.transition[class * self.num_prev() + prev]
    }

    pub fn transition_matrix(&self) -> &[f64] {
        &self.transition
    }

    pub fn prior(&self) -> &[f64] {
        &self.prior
    }

    pub fn is_valid(&self, class: usize, prev: usize) -> bool {
        self.valid_mask[class * self.num_prev() + prev]
    }

    pub fn valid_mask(&self) -> &[bool] {
        &self.valid_mask
    }

    /// Iterator over observed transitions as `(class, prev)` pairs.
    pub fn valid_transitions(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let cols = self.num_prev();
        self.valid_mask
            .iter()
            .enumerate()
            .filter(|(_, &v)| v)
            .map(move |(idx, _)| (idx / cols, idx % cols))
    }

    pub fn num_valid(&self) -> usize {
        self.valid_mask.iter().filter(|&&v| v).count()
    }
}

/// Frame-wise transition statistics of a dataset.
pub fn compute_transition_stats(dataset: &Dataset) -> Result<TransitionStats> {
    let l = dataset.num_classes();
    let cols = l + 1;
    let mut counts = vec![0u64; l * cols];
    for seq in dataset.sequences() {
        for (&y, &u) in seq.frame_labels().iter().zip(seq.prev_action()) {
            counts[y * cols + u] += 1;
        }
    }
    TransitionStats::from_counts(l, counts)
}

/// Partitions classes by total frame count; counts equal to the threshold go to the head.
pub fn head_tail_split(class_frame_counts: &[u64], threshold: u64) -> (BTreeSet<usize>, BTreeSet<usize>) {
    let mut head = BTreeSet::new();
    let mut tail = BTreeSet::new();
    for (i, &c) in class_frame_counts.iter().enumerate() {
        if c >= threshold {
            head.insert(i);
        } else {
            tail.insert(i);
        }
    }
    (head, tail)
}
