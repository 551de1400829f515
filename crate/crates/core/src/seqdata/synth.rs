use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Dataset, LabeledSequence};
use crate::error::{Error, Result};

/// Segment duration model, in frames.
///
/// Class `c` draws durations from a normal with mean
/// `mean * (c + 1)^(-tail_decay)` and standard deviation `spread`, rounded
/// and clamped to at least one frame. `per_class` overrides both, as
/// `[mean, spread]` pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DurationConfig {
    pub mean: f64,
    pub spread: f64,
    pub tail_decay: f64,
    pub per_class: Option<Vec<[f64; 2]>>,
}

impl Default for DurationConfig {
    fn default() -> Self {
        Self {
            mean: 20.0,
            spread: 5.0,
            tail_decay: 0.0,
            per_class: None,
        }
    }
}

impl DurationConfig {
    fn for_class(&self, class: usize) -> (f64, f64) {
        match &self.per_class {
            Some(v) => (v[class][0], v[class][1]),
            None => (self.mean * ((class + 1) as f64).powf(-self.tail_decay), self.spread),
        }
    }
}

/// Parameters of the synthetic long-tailed sequence generator.
///
/// Segment labels follow a Markov chain whose next-label distribution given
/// predecessor `k` is proportional to `prior_i * w_{k,i}`, where the prior is
/// Zipf with exponent `class_skew` and each predecessor row `w_{k,.}` is a
/// Dirichlet draw with concentration `1 / transition_skew`. Larger
/// `transition_skew` therefore concentrates each predecessor on fewer
/// successors. Frames emit `mean_label + noise * N(0, I)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub num_classes: usize,
    pub feature_dim: usize,
    pub num_sequences: usize,
    pub mean_segments_per_sequence: f64,
    pub class_skew: f64,
    /// Explicit class prior; replaces the Zipf prior when set.
    pub class_priors: Option<Vec<f64>>,
    pub duration: DurationConfig,
    /// Explicit emitter means (`L` rows of `D` values); drawn as
    /// `N(0, mean_scale^2)` per component when unset.
    pub class_means: Option<Vec<Vec<f64>>>,
    pub mean_scale: f64,
    pub noise: f64,
    pub transition_skew: f64,
    pub rng_seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_classes: 12,
            feature_dim: 16,
            num_sequences: 200,
            mean_segments_per_sequence: 8.0,
            class_skew: 1.5,
            class_priors: None,
            duration: DurationConfig::default(),
            class_means: None,
            mean_scale: 1.0,
            noise: 1.0,
            transition_skew: 1.0,
            rng_seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let l = self.num_classes;
        if l == 0 || self.feature_dim == 0 || self.num_sequences == 0 {
            return Err(Error::config(
                "num_classes, feature_dim and num_sequences must be positive",
            ));
        }
        if self.mean_segments_per_sequence.is_nan() || self.mean_segments_per_sequence < 1.0 {
            return Err(Error::config("mean_segments_per_sequence must be at least 1"));
        }
        if [self.class_skew, self.transition_skew].iter().any(|v| v.is_nan() || *v < 0.0) {
            return Err(Error::config("skew parameters must be non-negative"));
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) || self.mean_scale.is_nan() || self.mean_scale < 0.0 {
            return Err(Error::config("noise and mean_scale must be finite and non-negative"));
        }
        if let Some(p) = &self.class_priors {
            if p.len() != l || p.iter().any(|&v| !(v.is_finite() && v > 0.0)) {
                return Err(Error::config("class_priors needs num_classes positive entries"));
            }
        }
        if let Some(m) = &self.class_means {
            if m.len() != l || m.iter().any(|row| row.len() != self.feature_dim) {
                return Err(Error::config("class_means must be num_classes x feature_dim"));
            }
            if m.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::config("class_means must be finite"));
            }
        }
        if let Some(d) = &self.duration.per_class {
            if d.len() != l {
                return Err(Error::config("duration.per_class needs num_classes entries"));
            }
        }
        for c in 0..l {
            let (mean, spread) = self.duration.for_class(c);
            if !(mean.is_finite() && mean > 0.0 && spread.is_finite() && spread >= 0.0) {
                return Err(Error::config(format!("invalid duration model for class {c}")));
            }
        }
        Ok(())
    }

    /// Normalized segment-label prior.
    pub fn prior(&self) -> Vec<f64> {
        let raw: Vec<f64> = match &self.class_priors {
            Some(p) => p.clone(),
            None => (0..self.num_classes)
                .map(|c| ((c + 1) as f64).powf(-self.class_skew))
                .collect(),
        };
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / total).collect()
    }
}

fn sample_index<R: Rng>(rng: &mut R, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut x = rng.random::<f64>() * total;
    let mut last = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w <= 0.0 {
            continue;
        }
        last = i;
        if x < w {
            return i;
        }
        x -= w;
    }
    last
}

/// Generates a dataset from `config`. Output depends only on the config.
pub fn generate_synthetic(config: &SynthConfig) -> Result<Dataset> {
    config.validate()?;
    let l = config.num_classes;
    let d = config.feature_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);

    let prior = config.prior();
    let means: Vec<Vec<f64>> = match &config.class_means {
        Some(m) => m.clone(),
        None => {
            let normal = Normal::new(0.0, config.mean_scale).map_err(|e| Error::config(e.to_string()))?;
            (0..l)
                .map(|_| (0..d).map(|_| normal.sample(&mut rng)).collect())
                .collect()
        }
    };

    // successor weights for each predecessor, including 'start' at index l
    let gamma = if config.transition_skew > 0.0 {
        Some(Gamma::new(1.0 / config.transition_skew, 1.0).map_err(|e| Error::config(e.to_string()))?)
    } else {
        None
    };
    let successor: Vec<Vec<f64>> = (0..=l)
        .map(|k| {
            (0..l)
                .map(|i| {
                    if i == k {
                        return 0.0;
                    }
                    let w = gamma.as_ref().map_or(1.0, |g| g.sample(&mut rng));
                    // keep every transition reachable
                    prior[i] * w.max(1e-6)
                })
                .collect()
        })
        .collect();

    let extra_segments = if l > 1 && config.mean_segments_per_sequence > 1.0 {
        Some(Poisson::new(config.mean_segments_per_sequence - 1.0).map_err(|e| Error::config(e.to_string()))?)
    } else {
        None
    };

    let mut sequences = Vec::with_capacity(config.num_sequences);
    for n in 0..config.num_sequences {
        let num_segments = 1 + extra_segments.as_ref().map_or(0, |p| p.sample(&mut rng) as usize);
        let mut labels = Vec::new();
        let mut prev = l;
        for _ in 0..num_segments {
            let label = sample_index(&mut rng, &successor[prev]);
            let (mean, spread) = config.duration.for_class(label);
            let z: f64 = rng.sample(StandardNormal);
            let dur = (mean + spread * z).round().max(1.0) as usize;
            labels.extend(std::iter::repeat_n(label, dur));
            prev = label;
        }
        let mut features = Vec::with_capacity(labels.len() * d);
        for &y in &labels {
            for &m in &means[y] {
                let z: f64 = rng.sample(StandardNormal);
                features.push((m + config.noise * z) as f32);
            }
        }
        sequences.push(LabeledSequence::new(format!("seq{n:05}"), d, features, labels, l)?);
    }
    Dataset::new(sequences, l, d)
}
