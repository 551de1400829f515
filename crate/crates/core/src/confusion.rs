//! Transition-aware confusion counts and the learning states derived from them.

use std::io::Write;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::seqdata::{Dataset, LabeledSequence, TransitionStats};

/// Anything that labels every frame of a sequence.
pub trait FramePredictor: Sync {
    fn num_classes(&self) -> usize;

    /// Feature dimension expected by the predictor, if it inspects features.
    fn feature_dim(&self) -> Option<usize> {
        None
    }

    fn predict(&self, seq: &LabeledSequence) -> Vec<usize>;
}

/// Frame counts of (truth `i`, prediction `j`, previous action `k`) triples,
/// shape `L × L × (L + 1)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionTensor {
    num_classes: usize,
    counts: Vec<u64>,
    total_frames: u64,
}

impl ConfusionTensor {
    pub fn zeros(num_classes: usize) -> Self {
        Self {
            num_classes,
            counts: vec![0; num_classes * num_classes * (num_classes + 1)],
            total_frames: 0,
        }
    }

    #[inline]
    fn index(&self, truth: usize, pred: usize, prev: usize) -> usize {
        (truth * self.num_classes + pred) * (self.num_classes + 1) + prev
    }

    /// Tallies one sequence given its per-frame predictions.
    pub fn add_sequence(&mut self, seq: &LabeledSequence, predictions: &[usize]) -> Result<()> {
        if predictions.len() != seq.len() {
            return Err(Error::LengthMismatch {
                left: predictions.len(),
                right: seq.len(),
            });
        }
        for ((&y, &u), &p) in seq.frame_labels().iter().zip(seq.prev_action()).zip(predictions) {
            if p >= self.num_classes {
                return Err(Error::Range {
                    what: "prediction",
                    value: p,
                    bound: self.num_classes,
                });
            }
            let idx = self.index(y, p, u);
            self.counts[idx] += 1;
        }
        self.total_frames += seq.len() as u64;
        Ok(())
    }

    /// Adds another tensor's counts. Order-independent.
    pub fn merge(&mut self, other: &ConfusionTensor) {
        assert_eq!(self.num_classes, other.num_classes);
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.total_frames += other.total_frames;
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn total_frames(&self) -> u64 {
        self.total_frames
    }

    pub fn count(&self, truth: usize, pred: usize, prev: usize) -> u64 {
        self.counts[self.index(truth, pred, prev)]
    }

    /// Raw counts in `(truth, pred, prev)` row-major order.
    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    /// Counts summed over predictions, `L × (L + 1)`: the dataset transition counts.
    pub fn transition_counts(&self) -> Vec<u64> {
        let l = self.num_classes;
        let mut out = vec![0; l * (l + 1)];
        for i in 0..l {
            for j in 0..l {
                for k in 0..=l {
                    out[i * (l + 1) + k] += self.count(i, j, k);
                }
            }
        }
        out
    }

    /// Ordinary `L × L` confusion matrix (counts summed over previous actions).
    pub fn confusion_matrix(&self) -> Vec<u64> {
        let l = self.num_classes;
        let mut out = vec![0; l * l];
        for i in 0..l {
            for j in 0..l {
                out[i * l + j] = (0..=l).map(|k| self.count(i, j, k)).sum();
            }
        }
        out
    }

    /// Number of correctly classified frames with truth `i` and previous action `k`.
    pub fn correct(&self, truth: usize, prev: usize) -> u64 {
        self.count(truth, truth, prev)
    }

    /// Number of frames with truth `i` and previous action `k`.
    pub fn support(&self, truth: usize, prev: usize) -> u64 {
        (0..self.num_classes).map(|j| self.count(truth, j, prev)).sum()
    }

    /// Writes `i,j,k,count` rows for every nonzero entry.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "truth,pred,prev,count")?;
        let l = self.num_classes;
        for i in 0..l {
            for j in 0..l {
                for k in 0..=l {
                    let c = self.count(i, j, k);
                    if c > 0 {
                        writeln!(out, "{i},{j},{k},{c}")?;
                    }
                }
            }
        }
        Ok(())
    }
}

fn check_compat<P: FramePredictor + ?Sized>(predictor: &P, dataset: &Dataset) -> Result<()> {
    if predictor.num_classes() != dataset.num_classes() {
        return Err(Error::config(format!(
            "predictor has {} classes, dataset has {}",
            predictor.num_classes(),
            dataset.num_classes()
        )));
    }
    if let Some(d) = predictor.feature_dim() {
        if d != dataset.feature_dim() {
            return Err(Error::config(format!(
                "predictor expects feature dimension {d}, dataset has {}",
                dataset.feature_dim()
            )));
        }
    }
    Ok(())
}

fn tally<'a, P, I>(predictor: &P, num_classes: usize, seqs: I) -> Result<ConfusionTensor>
where
    P: FramePredictor + ?Sized,
    I: IntoParallelIterator<Item = &'a LabeledSequence>,
{
    seqs.into_par_iter()
        .map(|seq| {
            let mut c = ConfusionTensor::zeros(num_classes);
            c.add_sequence(seq, &predictor.predict(seq))?;
            Ok(c)
        })
        .try_reduce(
            || ConfusionTensor::zeros(num_classes),
            |mut a, b| {
                a.merge(&b);
                Ok(a)
            },
        )
}

/// Confusion tensor of `predictor` over every frame of `dataset`.
pub fn compute_confusion<P: FramePredictor + ?Sized>(predictor: &P, dataset: &Dataset) -> Result<ConfusionTensor> {
    check_compat(predictor, dataset)?;
    tally(predictor, dataset.num_classes(), dataset.sequences())
}

/// Confusion tensor over a seeded random subset of sequences
/// (`fraction` of them, at least one).
pub fn compute_confusion_subset<P: FramePredictor + ?Sized>(
    predictor: &P,
    dataset: &Dataset,
    fraction: f64,
    seed: u64,
) -> Result<ConfusionTensor> {
    check_compat(predictor, dataset)?;
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::config("confusion subset fraction must lie in (0, 1]"));
    }
    let n = dataset.sequences().len();
    let m = ((n as f64 * fraction).ceil() as usize).clamp(1.min(n), n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = sample(&mut rng, n, m).into_vec();
    picked.sort_unstable();
    let seqs: Vec<&LabeledSequence> = picked.iter().map(|&i| &dataset.sequences()[i]).collect();
    tally(predictor, dataset.num_classes(), seqs)
}

/// Class and transition accuracies. `None` marks zero support.
#[derive(Debug, Clone, PartialEq)]
pub struct LearningState {
    num_classes: usize,
    pub class_acc: Vec<Option<f64>>,
    /// `L × (L + 1)`, defined only on observed transitions with support.
    pub trans_acc: Vec<Option<f64>>,
    /// Unweighted mean of the defined transition accuracies.
    pub mean_trans_acc: Option<f64>,
}

impl LearningState {
    pub fn trans(&self, class: usize, prev: usize) -> Option<f64> {
        self.trans_acc[class * (self.num_classes + 1) + prev]
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }
}

/// Derives learning states from a confusion tensor and the dataset's valid transitions.
pub fn learning_state(confusion: &ConfusionTensor, stats: &TransitionStats) -> LearningState {
    let l = confusion.num_classes();
    assert_eq!(l, stats.num_classes(), "class count mismatch");
    let mut class_acc = Vec::with_capacity(l);
    let mut trans_acc = vec![None; l * (l + 1)];
    let mut sum = 0.0;
    let mut n = 0usize;
    for i in 0..l {
        let mut correct = 0u64;
        let mut support = 0u64;
        for k in 0..=l {
            let c = confusion.correct(i, k);
            let s = confusion.support(i, k);
            correct += c;
            support += s;
            if stats.is_valid(i, k) && s > 0 {
                let acc = c as f64 / s as f64;
                trans_acc[i * (l + 1) + k] = Some(acc);
                sum += acc;
                n += 1;
            }
        }
        class_acc.push((support > 0).then(|| correct as f64 / support as f64));
    }
    LearningState {
        num_classes: l,
        class_acc,
        trans_acc,
        mean_trans_acc: (n > 0).then(|| sum / n as f64),
    }
}
