//! Segmentation metrics: frame accuracy, edit score and segmental F1, each
//! in a global and a per-class (balanced) flavour.
//!
//! All scores are percentages.

use std::collections::BTreeSet;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seqdata::{segmentation_from_frames, Segment, Segmentation};

pub const DEFAULT_THRESHOLDS: [f64; 3] = [0.10, 0.25, 0.50];
/// IoU threshold used by the head/tail group summaries.
pub const GROUP_THRESHOLD: f64 = 0.25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameAccuracy {
    pub global: f64,
    /// Mean recall over classes with ground-truth support.
    pub per_class: f64,
    pub recall: Vec<Option<f64>>,
    pub support: Vec<u64>,
}

pub fn frame_accuracy(pred: &[usize], truth: &[usize], num_classes: usize) -> Result<FrameAccuracy> {
    if pred.len() != truth.len() {
        return Err(Error::LengthMismatch {
            left: pred.len(),
            right: truth.len(),
        });
    }
    let mut support = vec![0u64; num_classes];
    let mut correct = vec![0u64; num_classes];
    for (&p, &y) in pred.iter().zip(truth) {
        if y >= num_classes {
            return Err(Error::Range {
                what: "label",
                value: y,
                bound: num_classes,
            });
        }
        support[y] += 1;
        if p == y {
            correct[y] += 1;
        }
    }
    let recall: Vec<Option<f64>> = support
        .iter()
        .zip(&correct)
        .map(|(&s, &c)| (s > 0).then(|| c as f64 / s as f64))
        .collect();
    let total: u64 = support.iter().sum();
    let hits: u64 = correct.iter().sum();
    Ok(FrameAccuracy {
        global: if total == 0 { 0.0 } else { 100.0 * hits as f64 / total as f64 },
        per_class: 100.0 * mean_defined(&recall).unwrap_or(0.0),
        recall,
        support,
    })
}

fn mean_defined(values: &[Option<f64>]) -> Option<f64> {
    let defined: Vec<f64> = values.iter().flatten().copied().collect();
    (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64)
}

/// Unit-cost edit distance.
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut row: Vec<usize> = (0..=b.len()).collect();
    for (i, x) in a.iter().enumerate() {
        let mut diag = row[0];
        row[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let above = row[j + 1];
            row[j + 1] = if x == y { diag } else { 1 + diag.min(above).min(row[j]) };
            diag = above;
        }
    }
    row[b.len()]
}

/// Normalized edit similarity between segment label strings; 100 when both are empty.
pub fn edit_score(pred: &[usize], truth: &[usize]) -> f64 {
    let longest = pred.len().max(truth.len());
    if longest == 0 {
        return 100.0;
    }
    100.0 * (1.0 - levenshtein(pred, truth) as f64 / longest as f64)
}

fn iou(a: &Segment, b: &Segment) -> f64 {
    let lo = a.start.max(b.start);
    let hi = a.end.min(b.end);
    let inter = if hi >= lo { hi - lo + 1 } else { 0 };
    let union = a.duration() + b.duration() - inter;
    inter as f64 / union as f64
}

/// Per-class true/false positive and false negative segment counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentCounts {
    pub tp: Vec<u64>,
    pub fp: Vec<u64>,
    pub fn_: Vec<u64>,
}

impl SegmentCounts {
    pub fn zeros(num_classes: usize) -> Self {
        Self {
            tp: vec![0; num_classes],
            fp: vec![0; num_classes],
            fn_: vec![0; num_classes],
        }
    }

    pub fn merge(&mut self, other: &SegmentCounts) {
        for (a, b) in [(&mut self.tp, &other.tp), (&mut self.fp, &other.fp), (&mut self.fn_, &other.fn_)] {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    /// F1 over all classes pooled.
    pub fn global_f1(&self) -> f64 {
        f1(self.tp.iter().sum(), self.fp.iter().sum(), self.fn_.iter().sum())
    }

    /// F1 of each class that has ground-truth segments.
    pub fn class_f1(&self) -> Vec<Option<f64>> {
        (0..self.tp.len())
            .map(|c| (self.tp[c] + self.fn_[c] > 0).then(|| f1(self.tp[c], self.fp[c], self.fn_[c])))
            .collect()
    }

    pub fn per_class_f1(&self) -> f64 {
        mean_defined(&self.class_f1()).unwrap_or(0.0)
    }
}

fn f1(tp: u64, fp: u64, fn_: u64) -> f64 {
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        100.0
    } else {
        100.0 * 2.0 * tp as f64 / denom as f64
    }
}

/// Greedy segment matching: predicted segments in temporal order each claim
/// the unmatched same-label ground-truth segment of highest IoU (earliest on
/// ties) and count as a true positive when that IoU reaches `threshold`.
pub fn segment_counts(pred: &Segmentation, truth: &Segmentation, threshold: f64, num_classes: usize) -> SegmentCounts {
    let mut counts = SegmentCounts::zeros(num_classes);
    let gt = truth.segments();
    let mut used = vec![false; gt.len()];
    for p in pred.segments() {
        let mut best: Option<(usize, f64)> = None;
        for (g_idx, g) in gt.iter().enumerate() {
            if used[g_idx] || g.label != p.label {
                continue;
            }
            let v = iou(p, g);
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((g_idx, v));
            }
        }
        match best {
            Some((g_idx, v)) if v >= threshold => {
                used[g_idx] = true;
                counts.tp[p.label] += 1;
            }
            _ => counts.fp[p.label] += 1,
        }
    }
    for (g, &u) in gt.iter().zip(&used) {
        if !u {
            counts.fn_[g.label] += 1;
        }
    }
    counts
}

/// `(global F1, per-class F1)` for one sequence.
pub fn segmental_f1(pred: &Segmentation, truth: &Segmentation, threshold: f64) -> (f64, f64) {
    let l = pred
        .segments()
        .iter()
        .chain(truth.segments())
        .map(|s| s.label + 1)
        .max()
        .unwrap_or(0);
    let c = segment_counts(pred, truth, threshold, l);
    (c.global_f1(), c.per_class_f1())
}

/// How global F1 is aggregated over several sequences.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum F1Pooling {
    /// Sum TP/FP/FN over all sequences first.
    #[default]
    Pooled,
    /// Average the per-sequence F1 values.
    PerVideo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F1Score {
    pub threshold: f64,
    pub global: f64,
    pub per_class: f64,
    pub class_f1: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupReport {
    pub classes: Vec<usize>,
    pub per_class_acc: f64,
    pub per_class_f1_25: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub num_classes: usize,
    pub global_acc: f64,
    pub per_class_acc: f64,
    pub edit_score: f64,
    pub f1: Vec<F1Score>,
    pub class_recall: Vec<Option<f64>>,
    pub support: Vec<u64>,
    pub num_pred_segments: usize,
    pub num_true_segments: usize,
    #[serde(default)]
    pub head: Option<GroupReport>,
    #[serde(default)]
    pub tail: Option<GroupReport>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    pub thresholds: Vec<f64>,
    pub pooling: F1Pooling,
    pub head_tail: Option<(BTreeSet<usize>, BTreeSet<usize>)>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            thresholds: DEFAULT_THRESHOLDS.to_vec(),
            pooling: F1Pooling::Pooled,
            head_tail: None,
        }
    }
}

/// Evaluates `(prediction, truth)` frame-label pairs, one per sequence.
pub fn evaluate(pairs: &[(Vec<usize>, Vec<usize>)], num_classes: usize, opts: &EvalOptions) -> Result<MetricsReport> {
    if let Some(&t) = opts.thresholds.iter().find(|&&t| !(t > 0.0 && t < 1.0)) {
        return Err(Error::config(format!("IoU threshold {t} outside (0, 1)")));
    }
    let mut all_pred = Vec::new();
    let mut all_truth = Vec::new();
    let mut edit_sum = 0.0;
    let mut num_pred_segments = 0;
    let mut num_true_segments = 0;
    let mut counts = vec![SegmentCounts::zeros(num_classes); opts.thresholds.len()];
    let mut per_video = vec![0.0; opts.thresholds.len()];
    for (pred, truth) in pairs {
        if pred.len() != truth.len() {
            return Err(Error::LengthMismatch {
                left: pred.len(),
                right: truth.len(),
            });
        }
        if let Some(&p) = pred.iter().find(|&&p| p >= num_classes) {
            return Err(Error::Range {
                what: "prediction",
                value: p,
                bound: num_classes,
            });
        }
        all_pred.extend_from_slice(pred);
        all_truth.extend_from_slice(truth);
        let ps = segmentation_from_frames(pred)?;
        let ts = segmentation_from_frames(truth)?;
        num_pred_segments += ps.len();
        num_true_segments += ts.len();
        edit_sum += edit_score(&ps.labels(), &ts.labels());
        for (n, &thr) in opts.thresholds.iter().enumerate() {
            let c = segment_counts(&ps, &ts, thr, num_classes);
            per_video[n] += c.global_f1();
            counts[n].merge(&c);
        }
    }
    let acc = frame_accuracy(&all_pred, &all_truth, num_classes)?;
    let videos = pairs.len().max(1) as f64;
    let f1 = opts
        .thresholds
        .iter()
        .zip(&counts)
        .zip(&per_video)
        .map(|((&threshold, c), &pv)| F1Score {
            threshold,
            global: match opts.pooling {
                F1Pooling::Pooled => c.global_f1(),
                F1Pooling::PerVideo => pv / videos,
            },
            per_class: c.per_class_f1(),
            class_f1: c.class_f1(),
        })
        .collect();
    let mut report = MetricsReport {
        num_classes,
        global_acc: acc.global,
        per_class_acc: acc.per_class,
        edit_score: if pairs.is_empty() { 100.0 } else { edit_sum / videos },
        f1,
        class_recall: acc.recall,
        support: acc.support,
        num_pred_segments,
        num_true_segments,
        head: None,
        tail: None,
    };
    if let Some((head, tail)) = &opts.head_tail {
        report.head = group_report(&report, head);
        report.tail = group_report(&report, tail);
    }
    Ok(report)
}

/// Per-class accuracy and per-class F1@0.25 averaged over `classes`; `None`
/// when no class of the group has ground-truth support.
pub fn group_report(report: &MetricsReport, classes: &BTreeSet<usize>) -> Option<GroupReport> {
    let f1 = report.f1_at(GROUP_THRESHOLD)?;
    let pick = |v: &[Option<f64>]| -> Vec<Option<f64>> {
        classes.iter().filter_map(|&c| v.get(c).copied()).collect()
    };
    let acc = mean_defined(&pick(&report.class_recall))?;
    Some(GroupReport {
        classes: classes.iter().copied().collect(),
        per_class_acc: 100.0 * acc,
        per_class_f1_25: mean_defined(&pick(&f1.class_f1)).unwrap_or(0.0),
    })
}

fn round2(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

impl MetricsReport {
    pub fn f1_at(&self, threshold: f64) -> Option<&F1Score> {
        self.f1.iter().find(|f| (f.threshold - threshold).abs() < 1e-9)
    }

    /// Copy with every score rounded to two decimals (recalls to four, as fractions).
    pub fn rounded(&self) -> Self {
        let mut r = self.clone();
        r.global_acc = round2(r.global_acc);
        r.per_class_acc = round2(r.per_class_acc);
        r.edit_score = round2(r.edit_score);
        for f in &mut r.f1 {
            f.global = round2(f.global);
            f.per_class = round2(f.per_class);
            f.class_f1.iter_mut().flatten().for_each(|v| *v = round2(*v));
        }
        r.class_recall
            .iter_mut()
            .flatten()
            .for_each(|v| *v = (*v * 1e4).round() / 1e4);
        for g in [&mut r.head, &mut r.tail].into_iter().flatten() {
            g.per_class_acc = round2(g.per_class_acc);
            g.per_class_f1_25 = round2(g.per_class_f1_25);
        }
        r
    }

    /// `(metric, value)` rows in a fixed order.
    pub fn rows(&self) -> Vec<(String, f64)> {
        let mut rows = vec![
            ("global_acc".to_string(), self.global_acc),
            ("per_class_acc".to_string(), self.per_class_acc),
            ("edit".to_string(), self.edit_score),
        ];
        for f in &self.f1 {
            let pct = (f.threshold * 100.0).round() as u32;
            rows.push((format!("f1@{pct}"), f.global));
            rows.push((format!("per_class_f1@{pct}"), f.per_class));
        }
        for (name, g) in [("head", &self.head), ("tail", &self.tail)] {
            if let Some(g) = g {
                rows.push((format!("{name}_acc"), g.per_class_acc));
                rows.push((format!("{name}_f1@25"), g.per_class_f1_25));
            }
        }
        rows
    }

    /// Writes `method,metric,value` rows, values with two decimals.
    pub fn write_csv<W: Write>(&self, method: &str, mut out: W, header: bool) -> std::io::Result<()> {
        if header {
            writeln!(out, "method,metric,value")?;
        }
        for (metric, value) in self.rows() {
            writeln!(out, "{method},{metric},{value:.2}")?;
        }
        Ok(())
    }
}
