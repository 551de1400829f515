//! Inference-time decoders.
//!
//! * `Argmax` takes the classifier's per-frame argmax.
//! * `Ncm` labels each frame with the nearest class mean of its representation.
//! * `Sncm` cuts the sequence at the classifier's label changes and gives each
//!   resulting run the most frequent NCM label inside it.

use serde::{Deserialize, Serialize};

use crate::classifier::{predict_sequence, window_representation, ClassifierParams};
use crate::error::{Error, Result};
use crate::seqdata::{Dataset, LabeledSequence};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Decoder {
    #[default]
    Argmax,
    Ncm,
    Sncm,
}

impl std::str::FromStr for Decoder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "argmax" => Ok(Self::Argmax),
            "ncm" => Ok(Self::Ncm),
            "sncm" => Ok(Self::Sncm),
            other => Err(Error::config(format!("unknown decoder '{other}'"))),
        }
    }
}

impl std::fmt::Display for Decoder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Argmax => "argmax",
            Self::Ncm => "ncm",
            Self::Sncm => "sncm",
        })
    }
}

/// Per-class mean representations. Rows with zero support are unusable.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassMeans {
    dim: usize,
    means: Vec<f64>,
    support: Vec<u64>,
}

impl ClassMeans {
    pub fn from_parts(dim: usize, means: Vec<f64>, support: Vec<u64>) -> Result<Self> {
        if means.len() != dim * support.len() {
            return Err(Error::LengthMismatch {
                left: means.len(),
                right: dim * support.len(),
            });
        }
        if means.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("class means must be finite"));
        }
        Ok(Self { dim, means, support })
    }

    pub fn num_classes(&self) -> usize {
        self.support.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mean(&self, class: usize) -> &[f64] {
        &self.means[class * self.dim..(class + 1) * self.dim]
    }

    pub fn support(&self) -> &[u64] {
        &self.support
    }

    pub fn is_usable(&self, class: usize) -> bool {
        self.support[class] > 0
    }
}

/// Averages `extract(seq)` (one vector per frame) over the frames of each class.
pub fn compute_class_means<F>(dataset: &Dataset, extract: F) -> Result<ClassMeans>
where
    F: Fn(&LabeledSequence) -> Vec<Vec<f64>>,
{
    let l = dataset.num_classes();
    let mut dim = None;
    let mut sums: Vec<f64> = Vec::new();
    let mut support = vec![0u64; l];
    for seq in dataset.sequences() {
        let reps = extract(seq);
        if reps.len() != seq.len() {
            return Err(Error::LengthMismatch {
                left: reps.len(),
                right: seq.len(),
            });
        }
        for (rep, &y) in reps.iter().zip(seq.frame_labels()) {
            let d = *dim.get_or_insert_with(|| {
                sums = vec![0.0; l * rep.len()];
                rep.len()
            });
            if rep.len() != d {
                return Err(Error::LengthMismatch { left: rep.len(), right: d });
            }
            for (s, v) in sums[y * d..(y + 1) * d].iter_mut().zip(rep) {
                *s += v;
            }
            support[y] += 1;
        }
    }
    let d = dim.ok_or(Error::EmptySequence)?;
    for (c, &n) in support.iter().enumerate() {
        if n > 0 {
            sums[c * d..(c + 1) * d].iter_mut().for_each(|s| *s /= n as f64);
        }
    }
    ClassMeans::from_parts(d, sums, support)
}

/// Nearest usable class mean (squared Euclidean) for every frame; ties go to
/// the smallest class id.
pub fn ncm_predict(means: &ClassMeans, reps: &[Vec<f64>]) -> Result<Vec<usize>> {
    let usable: Vec<usize> = (0..means.num_classes()).filter(|&c| means.is_usable(c)).collect();
    if usable.is_empty() {
        return Err(Error::config("no class has a usable mean"));
    }
    reps.iter()
        .map(|rep| {
            if rep.len() != means.dim() {
                return Err(Error::LengthMismatch {
                    left: rep.len(),
                    right: means.dim(),
                });
            }
            let mut best = usable[0];
            let mut best_dist = f64::INFINITY;
            for &c in &usable {
                let dist: f64 = means.mean(c).iter().zip(rep).map(|(m, x)| (m - x) * (m - x)).sum();
                if dist < best_dist {
                    best = c;
                    best_dist = dist;
                }
            }
            Ok(best)
        })
        .collect()
}

/// Frames `t` where the prediction changes between `t` and `t + 1`.
pub fn segment_boundaries(predictions: &[usize]) -> Vec<usize> {
    predictions
        .windows(2)
        .enumerate()
        .filter(|(_, w)| w[0] != w[1])
        .map(|(t, _)| t)
        .collect()
}

/// Most frequent value; ties go to the smallest.
fn mode(values: &[usize]) -> usize {
    let mut counts = std::collections::BTreeMap::new();
    for &v in values {
        *counts.entry(v).or_insert(0usize) += 1;
    }
    let mut best = (0, 0);
    for (v, n) in counts {
        if n > best.1 {
            best = (v, n);
        }
    }
    best.0
}

/// Labels each maximal run of `classifier` with the mode of `ncm` over that run.
pub fn sncm_decode(classifier: &[usize], ncm: &[usize]) -> Result<Vec<usize>> {
    if classifier.len() != ncm.len() {
        return Err(Error::LengthMismatch {
            left: classifier.len(),
            right: ncm.len(),
        });
    }
    let mut out = Vec::with_capacity(ncm.len());
    let mut start = 0;
    let ends = segment_boundaries(classifier)
        .into_iter()
        .chain((!classifier.is_empty()).then(|| classifier.len() - 1));
    for end in ends {
        let label = mode(&ncm[start..=end]);
        out.extend(std::iter::repeat_n(label, end + 1 - start));
        start = end + 1;
    }
    Ok(out)
}

/// Number of maximal equal-label runs.
pub fn num_segments(labels: &[usize]) -> usize {
    if labels.is_empty() {
        0
    } else {
        segment_boundaries(labels).len() + 1
    }
}

/// Class means of the classifier's input representation over a training set.
pub fn classifier_class_means(params: &ClassifierParams, train: &Dataset) -> Result<ClassMeans> {
    let radius = params.context_radius();
    compute_class_means(train, |s| window_representation(s, radius))
}

/// Decodes one sequence. `means` is required for the NCM-based decoders.
pub fn decode_sequence(
    params: &ClassifierParams,
    means: Option<&ClassMeans>,
    seq: &LabeledSequence,
    decoder: Decoder,
) -> Result<Vec<usize>> {
    if seq.feature_dim() != params.feature_dim() {
        return Err(Error::config(format!(
            "classifier expects feature dimension {}, sequence '{}' has {}",
            params.feature_dim(),
            seq.id(),
            seq.feature_dim()
        )));
    }
    let ncm = || -> Result<Vec<usize>> {
        let means = means.ok_or_else(|| Error::config("NCM decoding needs class means"))?;
        ncm_predict(means, &window_representation(seq, params.context_radius()))
    };
    match decoder {
        Decoder::Argmax => Ok(predict_sequence(params, seq)),
        Decoder::Ncm => ncm(),
        Decoder::Sncm => sncm_decode(&predict_sequence(params, seq), &ncm()?),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn boundary_examples() {
        assert!(segment_boundaries(&[4, 4, 4]).is_empty());
        assert_eq!(segment_boundaries(&[0, 0, 1, 1, 2]), vec![1, 3]);
        assert_eq!(segment_boundaries(&[0, 1, 0, 1]), vec![0, 1, 2]);
    }

    #[test]
    fn sncm_examples() {
        assert_eq!(sncm_decode(&[0, 1, 1], &[0, 1, 1]).unwrap(), vec![0, 1, 1]);
        assert_eq!(
            sncm_decode(&[0, 0, 0, 1, 1], &[0, 2, 2, 1, 0]).unwrap(),
            vec![2, 2, 2, 0, 0]
        );
        assert!(matches!(sncm_decode(&[0, 1], &[0]), Err(Error::LengthMismatch { .. })));
    }

    fn means_of(points: &[[f64; 2]]) -> ClassMeans {
        ClassMeans::from_parts(2, points.iter().flatten().copied().collect(), vec![1; points.len()]).unwrap()
    }

    #[test]
    fn ncm_ties_and_exact_hits() {
        let m = means_of(&[[9.0, 9.0], [5.0, 5.0], [1.0, 0.0], [4.0, 4.0], [7.0, 7.0], [-1.0, 0.0]]);
        assert_eq!(ncm_predict(&m, &[vec![5.0, 5.0]]).unwrap(), vec![1]);
        // equidistant from classes 2 and 5
        assert_eq!(ncm_predict(&m, &[vec![0.0, 0.0]]).unwrap(), vec![2]);
    }

    #[test]
    fn ncm_skips_unusable_classes() {
        let m = ClassMeans::from_parts(1, vec![0.0, 10.0], vec![0, 3]).unwrap();
        assert_eq!(ncm_predict(&m, &[vec![0.0]]).unwrap(), vec![1]);
        let none = ClassMeans::from_parts(1, vec![0.0, 0.0], vec![0, 0]).unwrap();
        assert!(matches!(ncm_predict(&none, &[vec![0.0]]), Err(Error::Config(_))));
    }

    #[test]
    fn class_means_simple() {
        let s = LabeledSequence::new("a", 2, vec![0.0, 0.0, 0.0, 0.0, 1.0, 1.0], vec![0, 0, 1], 2).unwrap();
        let ds = Dataset::new(vec![s], 2, 2).unwrap();
        let m = compute_class_means(&ds, |s| crate::classifier::window_representation(s, 0)).unwrap();
        assert_eq!(m.mean(0), &[0.0, 0.0]);
        assert_eq!(m.mean(1), &[1.0, 1.0]);
        assert_eq!(m.support(), &[2, 1]);
    }

    proptest! {
        #[test]
        fn sncm_properties(pairs in proptest::collection::vec((0usize..4, 0usize..4), 1..40)) {
            let (yhat, vhat): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
            let out = sncm_decode(&yhat, &vhat).unwrap();
            prop_assert!(num_segments(&out) <= num_segments(&yhat));
            prop_assert_eq!(sncm_decode(&out, &vhat).unwrap(), out.clone());
            for (a, b) in yhat.windows(2).zip(out.windows(2)) {
                if a[0] == a[1] {
                    prop_assert_eq!(b[0], b[1]);
                }
            }
        }

        #[test]
        fn sncm_returns_ncm_when_constant_within_runs(runs in proptest::collection::vec((0usize..3, 0usize..3, 1usize..5), 1..8)) {
            let mut yhat = Vec::new();
            let mut vhat = Vec::new();
            for (n, (_, v, len)) in runs.iter().enumerate() {
                yhat.extend(std::iter::repeat_n(n, *len));
                vhat.extend(std::iter::repeat_n(*v, *len));
            }
            prop_assert_eq!(sncm_decode(&yhat, &vhat).unwrap(), vhat);
        }
    }
}
