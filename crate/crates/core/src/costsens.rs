//! Lagrangian cost-sensitive weighting.
//!
//! The training objective maximizes the sum of per-class accuracies subject to
//! one constraint per observed transition `k -> i`:
//!
//! ```text
//! Tacc[k->i] >= epsilon * mean(Tacc)
//! ```
//!
//! Relaxing the constraints with multipliers `lambda[i][k] >= 0` turns the
//! classifier step into a weighted cross-entropy with per-frame weight
//!
//! ```text
//! gain[i][k] = (1 + 1[T[i][k] > 0] * lambda[i][k]) / prior[i]
//! ```
//!
//! raised to a tempering power `tau`. The multiplier step is projected
//! gradient descent on the Lagrangian with the mean transition accuracy held
//! fixed at its last measured value.

use serde::{Deserialize, Serialize};

use crate::confusion::{learning_state, ConfusionTensor};
use crate::error::{Error, Result};
use crate::seqdata::TransitionStats;

/// Lower bound applied to probabilities inside `log`.
pub const PROB_FLOOR: f64 = 1e-12;

pub const DEFAULT_EPSILON: f64 = 0.9;
pub const DEFAULT_GAMMA: f64 = 0.01;
pub const DEFAULT_TAU: f64 = 0.3;
pub const TAU_GRID: [f64; 4] = [0.1, 0.3, 0.5, 0.7];

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for p in &mut out {
        *p /= sum;
    }
    out
}

/// Lagrange multipliers, one per `(class, previous action)` pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiplierState {
    num_classes: usize,
    lambda: Vec<f64>,
    step_size: f64,
    epsilon: f64,
    detached_mean_trans_acc: f64,
}

impl MultiplierState {
    /// All-zero multipliers.
    pub fn new(stats: &TransitionStats, step_size: f64, epsilon: f64) -> Result<Self> {
        let l = stats.num_classes();
        Self::from_parts(stats, vec![0.0; l * (l + 1)], step_size, epsilon, 0.0)
    }

    pub fn from_parts(
        stats: &TransitionStats,
        lambda: Vec<f64>,
        step_size: f64,
        epsilon: f64,
        detached_mean_trans_acc: f64,
    ) -> Result<Self> {
        let l = stats.num_classes();
        if lambda.len() != l * (l + 1) {
            return Err(Error::LengthMismatch {
                left: lambda.len(),
                right: l * (l + 1),
            });
        }
        if !(step_size.is_finite() && step_size > 0.0) {
            return Err(Error::config("multiplier step size must be positive"));
        }
        if !(epsilon > 0.0 && epsilon <= 1.0) {
            return Err(Error::config("epsilon must lie in (0, 1]"));
        }
        for (idx, &v) in lambda.iter().enumerate() {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config("multipliers must be finite and non-negative"));
            }
            if v != 0.0 && !stats.valid_mask()[idx] {
                return Err(Error::config("multipliers must vanish outside observed transitions"));
            }
        }
        Ok(Self {
            num_classes: l,
            lambda,
            step_size,
            epsilon,
            detached_mean_trans_acc,
        })
    }

    pub fn lambda(&self, class: usize, prev: usize) -> f64 {
        self.lambda[class * (self.num_classes + 1) + prev]
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambda
    }

    pub fn step_size(&self) -> f64 {
        self.step_size
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn detached_mean_trans_acc(&self) -> f64 {
        self.detached_mean_trans_acc
    }

    /// `(min, mean, max)` over observed transitions.
    pub fn summary(&self, stats: &TransitionStats) -> (f64, f64, f64) {
        let vals: Vec<f64> = stats
            .valid_transitions()
            .map(|(i, k)| self.lambda(i, k))
            .collect();
        if vals.is_empty() {
            return (0.0, 0.0, 0.0);
        }
        let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
        let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (min, vals.iter().sum::<f64>() / vals.len() as f64, max)
    }
}

/// Per-`(class, previous action)` loss weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainWeights {
    num_classes: usize,
    gain: Vec<f64>,
    tempered: Vec<f64>,
    active: Vec<bool>,
    tau: f64,
}

impl GainWeights {
    /// Unit weights everywhere: plain cross-entropy.
    pub fn uniform(num_classes: usize) -> Self {
        let n = num_classes * (num_classes + 1);
        Self {
            num_classes,
            gain: vec![1.0; n],
            tempered: vec![1.0; n],
            active: vec![true; num_classes],
            tau: 1.0,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn gain(&self, class: usize, prev: usize) -> f64 {
        self.gain[class * (self.num_classes + 1) + prev]
    }

    /// The weight applied to a frame with truth `class` and previous action `prev`.
    pub fn weight(&self, class: usize, prev: usize) -> f64 {
        self.tempered[class * (self.num_classes + 1) + prev]
    }

    pub fn tempered(&self) -> &[f64] {
        &self.tempered
    }

    pub fn is_active(&self, class: usize) -> bool {
        self.active[class]
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// Diagonal of the gain slice for previous action `prev` (untempered).
    pub fn diagonal(&self, prev: usize) -> Vec<f64> {
        (0..self.num_classes).map(|i| self.gain(i, prev)).collect()
    }

    fn check_indices(&self, y: usize, u: usize) -> Result<()> {
        if y >= self.num_classes {
            return Err(Error::Range {
                what: "class",
                value: y,
                bound: self.num_classes,
            });
        }
        if u > self.num_classes {
            return Err(Error::Range {
                what: "previous action",
                value: u,
                bound: self.num_classes + 1,
            });
        }
        Ok(())
    }
}

/// Gain weights with every class of positive prior marked active.
pub fn compute_gain(stats: &TransitionStats, mult: &MultiplierState, tau: f64) -> Result<GainWeights> {
    let active: Vec<bool> = stats.prior().iter().map(|&p| p > 0.0).collect();
    compute_gain_masked(stats, mult, tau, &active)
}

/// Gain weights for an explicit set of active classes. Inactive classes get
/// zero weight.
pub fn compute_gain_masked(
    stats: &TransitionStats,
    mult: &MultiplierState,
    tau: f64,
    active: &[bool],
) -> Result<GainWeights> {
    let l = stats.num_classes();
    if mult.num_classes != l || active.len() != l {
        return Err(Error::config("gain inputs disagree on the class count"));
    }
    if !(tau.is_finite() && tau >= 0.0) {
        return Err(Error::config("tau must be finite and non-negative"));
    }
    let mut gain = vec![0.0; l * (l + 1)];
    let mut tempered = vec![0.0; l * (l + 1)];
    for (i, &is_active) in active.iter().enumerate() {
        let prior = stats.prior()[i];
        if !is_active {
            continue;
        }
        if prior <= 0.0 {
            return Err(Error::config(format!("active class {i} has zero prior")));
        }
        for k in 0..=l {
            let idx = i * (l + 1) + k;
            let lambda = if stats.is_valid(i, k) { mult.lambda[idx] } else { 0.0 };
            gain[idx] = (1.0 + lambda) / prior;
            tempered[idx] = gain[idx].powf(tau);
        }
    }
    Ok(GainWeights {
        num_classes: l,
        gain,
        tempered,
        active: active.to_vec(),
        tau,
    })
}

/// Weighted cross-entropy of one frame: `-w[y][u] * log(max(p_y, floor))`.
pub fn weighted_ce_loss(probs: &[f64], y: usize, u: usize, weights: &GainWeights) -> Result<f64> {
    weights.check_indices(y, u)?;
    if probs.len() != weights.num_classes {
        return Err(Error::LengthMismatch {
            left: probs.len(),
            right: weights.num_classes,
        });
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > 1e-6 {
        return Err(Error::config(format!("probabilities sum to {total}")));
    }
    Ok(-weights.weight(y, u) * probs[y].max(PROB_FLOOR).ln())
}

/// Gradient of `weighted_ce_loss(softmax(logits))` with respect to the logits.
pub fn weighted_ce_grad_logits(logits: &[f64], y: usize, u: usize, weights: &GainWeights) -> Result<Vec<f64>> {
    weights.check_indices(y, u)?;
    if logits.len() != weights.num_classes {
        return Err(Error::LengthMismatch {
            left: logits.len(),
            right: weights.num_classes,
        });
    }
    let w = weights.weight(y, u);
    let mut grad = softmax(logits);
    grad[y] -= 1.0;
    for g in &mut grad {
        *g *= w;
    }
    Ok(grad)
}

/// Value of the Lagrangian at the current classifier (via its confusion
/// tensor) and multipliers, using the detached mean transition accuracy.
pub fn lagrangian_value(confusion: &ConfusionTensor, stats: &TransitionStats, mult: &MultiplierState) -> f64 {
    let l = stats.num_classes();
    let n = confusion.total_frames().max(1) as f64;
    let tbar = mult.detached_mean_trans_acc;
    let mut value = 0.0;
    for i in 0..l {
        let prior = stats.prior()[i];
        if prior <= 0.0 {
            continue;
        }
        for k in 0..=l {
            let c = confusion.correct(i, k) as f64 / n;
            value += c / prior;
            if stats.is_valid(i, k) {
                let t = stats.transition(i, k);
                value += mult.lambda(i, k) * (c / t - mult.epsilon * tbar) * (t / prior);
            }
        }
    }
    value
}

/// One projected gradient step on the multipliers.
///
/// The mean transition accuracy snapshot is refreshed from `confusion` first
/// and then treated as a constant. Transitions without support in
/// `confusion` keep their multiplier.
pub fn update_multipliers(
    mult: &MultiplierState,
    confusion: &ConfusionTensor,
    stats: &TransitionStats,
) -> MultiplierState {
    let l = stats.num_classes();
    let state = learning_state(confusion, stats);
    let mut next = mult.clone();
    if let Some(tbar) = state.mean_trans_acc {
        next.detached_mean_trans_acc = tbar;
    }
    let target = next.epsilon * next.detached_mean_trans_acc;
    for (i, k) in stats.valid_transitions() {
        let Some(tacc) = state.trans(i, k) else { continue };
        let grad = (tacc - target) * stats.transition(i, k) / stats.prior()[i];
        let idx = i * (l + 1) + k;
        next.lambda[idx] = (next.lambda[idx] - next.step_size * grad).max(0.0);
    }
    next
}

/// Number of observed transitions whose accuracy is below `epsilon * mean`.
pub fn violated_constraints(confusion: &ConfusionTensor, stats: &TransitionStats, epsilon: f64) -> usize {
    let state = learning_state(confusion, stats);
    let Some(tbar) = state.mean_trans_acc else { return 0 };
    stats
        .valid_transitions()
        .filter(|&(i, k)| state.trans(i, k).is_some_and(|a| a < epsilon * tbar))
        .count()
}

/// One line of training telemetry. Multiplier fields are absent for plain CE.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochTelemetry {
    pub epoch: usize,
    pub mean_loss: f64,
    pub train_acc: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub lagrangian: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mean_trans_acc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub lambda_min: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub lambda_mean: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub lambda_max: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub violated: Option<usize>,
}
