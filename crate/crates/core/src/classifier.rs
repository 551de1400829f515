//! Context-window linear softmax classifier and the alternating training loop.
//!
//! Each frame is represented by the concatenation of the features of frames
//! `t - w ..= t + w` (edges replicate the first/last frame), followed by an
//! affine map and a softmax. Gradients are analytic.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::confusion::{
    compute_confusion, compute_confusion_subset, learning_state, ConfusionTensor, FramePredictor,
};
use crate::costsens::{
    compute_gain, lagrangian_value, softmax, update_multipliers, violated_constraints, EpochTelemetry, GainWeights,
    MultiplierState, DEFAULT_EPSILON, DEFAULT_GAMMA, DEFAULT_TAU, PROB_FLOOR,
};
use crate::error::{Error, Result};
use crate::seqdata::{compute_transition_stats, Dataset, LabeledSequence, TransitionStats};

/// Parameters of the linear softmax model.
///
/// `weights` is row-major `L × (D · (2w + 1))`; the input block for offset
/// `o ∈ -w..=w` starts at column `(o + w) · D`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierParams {
    num_classes: usize,
    feature_dim: usize,
    context_radius: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ClassifierParams {
    pub fn zeros(num_classes: usize, feature_dim: usize, context_radius: usize) -> Self {
        let input = feature_dim * (2 * context_radius + 1);
        Self {
            num_classes,
            feature_dim,
            context_radius,
            weights: vec![0.0; num_classes * input],
            bias: vec![0.0; num_classes],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn context_radius(&self) -> usize {
        self.context_radius
    }

    pub fn input_dim(&self) -> usize {
        self.feature_dim * (2 * self.context_radius + 1)
    }

    fn check_sequence(&self, seq: &LabeledSequence) -> Result<()> {
        if seq.feature_dim() != self.feature_dim {
            return Err(Error::config(format!(
                "classifier expects feature dimension {}, sequence '{}' has {}",
                self.feature_dim,
                seq.id(),
                seq.feature_dim()
            )));
        }
        Ok(())
    }

    /// Logits for a windowed input vector.
    pub fn logits_from_input(&self, input: &[f64]) -> Vec<f64> {
        let p = self.input_dim();
        (0..self.num_classes)
            .map(|c| {
                let row = &self.weights[c * p..(c + 1) * p];
                self.bias[c] + row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>()
            })
            .collect()
    }

    fn logits(&self, seq: &LabeledSequence, t: usize, buf: &mut Vec<f64>) -> Vec<f64> {
        window_input(seq, t, self.context_radius, buf);
        self.logits_from_input(buf)
    }
}

/// Fills `out` with the replication-padded context window around frame `t`.
pub fn window_input(seq: &LabeledSequence, t: usize, radius: usize, out: &mut Vec<f64>) {
    out.clear();
    let last = seq.len() - 1;
    for s in t as isize - radius as isize..=(t + radius) as isize {
        let s = s.clamp(0, last as isize) as usize;
        out.extend(seq.frame(s).iter().map(|&v| v as f64));
    }
}

/// Windowed inputs for every frame of a sequence.
pub fn window_representation(seq: &LabeledSequence, radius: usize) -> Vec<Vec<f64>> {
    let mut buf = Vec::new();
    (0..seq.len())
        .map(|t| {
            window_input(seq, t, radius, &mut buf);
            buf.clone()
        })
        .collect()
}

/// Index of the largest entry; ties go to the smallest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Class probabilities for frame `t`.
pub fn forward(params: &ClassifierParams, seq: &LabeledSequence, t: usize) -> Result<Vec<f64>> {
    params.check_sequence(seq)?;
    if t >= seq.len() {
        return Err(Error::Range {
            what: "frame",
            value: t,
            bound: seq.len(),
        });
    }
    Ok(softmax(&params.logits(seq, t, &mut Vec::new())))
}

/// Argmax label for every frame.
pub fn predict_sequence(params: &ClassifierParams, seq: &LabeledSequence) -> Vec<usize> {
    let mut buf = Vec::new();
    (0..seq.len())
        .map(|t| argmax(&params.logits(seq, t, &mut buf)))
        .collect()
}

impl FramePredictor for ClassifierParams {
    fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn feature_dim(&self) -> Option<usize> {
        Some(self.feature_dim)
    }

    fn predict(&self, seq: &LabeledSequence) -> Vec<usize> {
        predict_sequence(self, seq)
    }
}

/// Gradient with the same layout as [`ClassifierParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Gradient {
    fn zeros_like(params: &ClassifierParams) -> Self {
        Self {
            weights: vec![0.0; params.weights.len()],
            bias: vec![0.0; params.bias.len()],
        }
    }

    fn add(&mut self, other: &Gradient) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += b;
        }
        for (a, b) in self.bias.iter_mut().zip(&other.bias) {
            *a += b;
        }
    }
}

/// Summed weighted loss and gradient over one sequence.
fn sequence_loss_grad(params: &ClassifierParams, seq: &LabeledSequence, weights: &GainWeights) -> (f64, Gradient) {
    let p = params.input_dim();
    let mut grad = Gradient::zeros_like(params);
    let mut loss = 0.0;
    let mut buf = Vec::with_capacity(p);
    for t in 0..seq.len() {
        let y = seq.frame_labels()[t];
        let u = seq.prev_action()[t];
        let w = weights.weight(y, u);
        if w == 0.0 {
            continue;
        }
        let mut probs = softmax(&params.logits(seq, t, &mut buf));
        // NaN must survive the floor so divergence is detected
        let py = if probs[y].is_nan() { f64::NAN } else { probs[y].max(PROB_FLOOR) };
        loss -= w * py.ln();
        probs[y] -= 1.0;
        for (c, &pc) in probs.iter().enumerate() {
            let g = w * pc;
            grad.bias[c] += g;
            for (gw, &x) in grad.weights[c * p..(c + 1) * p].iter_mut().zip(&buf) {
                *gw += g * x;
            }
        }
    }
    (loss, grad)
}

/// Mean weighted loss over all frames of `seqs` and its gradient.
pub fn loss_and_gradient(
    params: &ClassifierParams,
    seqs: &[&LabeledSequence],
    weights: &GainWeights,
) -> Result<(f64, Gradient)> {
    for s in seqs {
        params.check_sequence(s)?;
    }
    let frames: usize = seqs.iter().map(|s| s.len()).sum();
    let parts: Vec<(f64, Gradient)> = seqs
        .par_iter()
        .map(|s| sequence_loss_grad(params, s, weights))
        .collect();
    let mut loss = 0.0;
    let mut grad = Gradient::zeros_like(params);
    // fixed reduction order keeps results bit-reproducible
    for (l, g) in &parts {
        loss += l;
        grad.add(g);
    }
    let scale = 1.0 / frames.max(1) as f64;
    grad.weights.iter_mut().for_each(|g| *g *= scale);
    grad.bias.iter_mut().for_each(|g| *g *= scale);
    Ok((loss * scale, grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    /// Unit weights, no multipliers.
    PlainCe,
    /// Tempered inverse-prior weights with multipliers fixed at zero.
    InversePrior,
    /// Full alternating classifier / multiplier optimization.
    #[default]
    CostSensitive,
}

impl std::str::FromStr for LossMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plain_ce" => Ok(Self::PlainCe),
            "inverse_prior" => Ok(Self::InversePrior),
            "cost_sensitive" => Ok(Self::CostSensitive),
            other => Err(Error::config(format!("unknown loss mode '{other}'"))),
        }
    }
}

impl std::fmt::Display for LossMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::PlainCe => "plain_ce",
            Self::InversePrior => "inverse_prior",
            Self::CostSensitive => "cost_sensitive",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Sequences per gradient step.
    pub batch_size: usize,
    pub context_radius: usize,
    pub tau: f64,
    pub epsilon: f64,
    pub gamma: f64,
    pub rng_seed: u64,
    pub loss_mode: LossMode,
    /// When set, each epoch's confusion tensor is estimated on this fraction
    /// of the training sequences instead of all of them.
    pub confusion_subset: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            learning_rate: 0.5,
            batch_size: 8,
            context_radius: 2,
            tau: DEFAULT_TAU,
            epsilon: DEFAULT_EPSILON,
            gamma: DEFAULT_GAMMA,
            rng_seed: 0,
            loss_mode: LossMode::CostSensitive,
            confusion_subset: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::config("learning_rate must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        if !(self.tau.is_finite() && self.tau >= 0.0) {
            return Err(Error::config("tau must be non-negative"));
        }
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            return Err(Error::config("epsilon must lie in (0, 1]"));
        }
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return Err(Error::config("gamma must be positive"));
        }
        if let Some(f) = self.confusion_subset {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::config("confusion_subset must lie in (0, 1]"));
            }
        }
        Ok(())
    }
}

/// Epoch-by-epoch driver for the alternating optimization.
///
/// Every epoch: build the loss weights from the current multipliers, run one
/// pass of mini-batch SGD, measure the confusion tensor on the training set,
/// refresh the mean transition accuracy and take one projected step on the
/// multipliers.
pub struct Trainer<'a> {
    dataset: &'a Dataset,
    config: TrainConfig,
    stats: TransitionStats,
    params: ClassifierParams,
    multipliers: MultiplierState,
    gain: Option<GainWeights>,
    epoch: usize,
    rng: ChaCha8Rng,
    order: Vec<usize>,
}

impl<'a> Trainer<'a> {
    pub fn new(dataset: &'a Dataset, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        if dataset.sequences().is_empty() {
            return Err(Error::EmptySequence);
        }
        let stats = compute_transition_stats(dataset)?;
        let multipliers = MultiplierState::new(&stats, config.gamma, config.epsilon)?;
        let params = ClassifierParams::zeros(dataset.num_classes(), dataset.feature_dim(), config.context_radius);
        Ok(Self {
            dataset,
            rng: ChaCha8Rng::seed_from_u64(config.rng_seed),
            order: (0..dataset.sequences().len()).collect(),
            config,
            stats,
            params,
            multipliers,
            gain: None,
            epoch: 0,
        })
    }

    pub fn params(&self) -> &ClassifierParams {
        &self.params
    }

    pub fn into_params(self) -> ClassifierParams {
        self.params
    }

    pub fn multipliers(&self) -> &MultiplierState {
        &self.multipliers
    }

    pub fn stats(&self) -> &TransitionStats {
        &self.stats
    }

    /// Weights used by the most recent epoch.
    pub fn last_gain(&self) -> Option<&GainWeights> {
        self.gain.as_ref()
    }

    pub fn epochs_done(&self) -> usize {
        self.epoch
    }

    /// Weights for the next epoch, from the current multipliers.
    pub fn current_gain(&self) -> Result<GainWeights> {
        match self.config.loss_mode {
            LossMode::PlainCe => Ok(GainWeights::uniform(self.dataset.num_classes())),
            LossMode::InversePrior => {
                let zero = MultiplierState::new(&self.stats, self.config.gamma, self.config.epsilon)?;
                compute_gain(&self.stats, &zero, self.config.tau)
            }
            LossMode::CostSensitive => compute_gain(&self.stats, &self.multipliers, self.config.tau),
        }
    }

    fn confusion(&self) -> Result<ConfusionTensor> {
        match self.config.confusion_subset {
            Some(f) if f < 1.0 => compute_confusion_subset(
                &self.params,
                self.dataset,
                f,
                self.config.rng_seed.wrapping_add(self.epoch as u64),
            ),
            _ => compute_confusion(&self.params, self.dataset),
        }
    }

    pub fn run_epoch(&mut self) -> Result<EpochTelemetry> {
        let gain = self.current_gain()?;
        let seqs = self.dataset.sequences();
        self.order.shuffle(&mut self.rng);

        let mut loss_sum = 0.0;
        let mut frames = 0usize;
        for batch in self.order.chunks(self.config.batch_size) {
            let batch: Vec<&LabeledSequence> = batch.iter().map(|&i| &seqs[i]).collect();
            let n: usize = batch.iter().map(|s| s.len()).sum();
            let (loss, grad) = loss_and_gradient(&self.params, &batch, &gain)?;
            loss_sum += loss * n as f64;
            frames += n;
            let lr = self.config.learning_rate;
            for (w, g) in self.params.weights.iter_mut().zip(&grad.weights) {
                *w -= lr * g;
            }
            for (b, g) in self.params.bias.iter_mut().zip(&grad.bias) {
                *b -= lr * g;
            }
        }
        let epoch = self.epoch;
        let mean_loss = loss_sum / frames.max(1) as f64;
        let params_finite = self.params.weights.iter().chain(&self.params.bias).all(|v| v.is_finite());
        if !mean_loss.is_finite() || !params_finite {
            return Err(Error::Diverged { epoch, loss: mean_loss });
        }

        let confusion = self.confusion()?;
        let correct: u64 = (0..self.dataset.num_classes())
            .flat_map(|i| (0..=self.dataset.num_classes()).map(move |k| (i, k)))
            .map(|(i, k)| confusion.correct(i, k))
            .sum();
        let mut record = EpochTelemetry {
            epoch,
            mean_loss,
            train_acc: correct as f64 / confusion.total_frames().max(1) as f64,
            lagrangian: None,
            mean_trans_acc: None,
            lambda_min: None,
            lambda_mean: None,
            lambda_max: None,
            violated: None,
        };
        match self.config.loss_mode {
            LossMode::PlainCe => {}
            LossMode::InversePrior => {
                // lambda stays zero; only the accuracy snapshot is refreshed
                let tbar = learning_state(&confusion, &self.stats).mean_trans_acc.unwrap_or(0.0);
                let l = self.dataset.num_classes();
                let snapshot = MultiplierState::from_parts(
                    &self.stats,
                    vec![0.0; l * (l + 1)],
                    self.config.gamma,
                    self.config.epsilon,
                    tbar,
                )?;
                self.fill_multiplier_fields(&mut record, &confusion, &snapshot);
            }
            LossMode::CostSensitive => {
                self.multipliers = update_multipliers(&self.multipliers, &confusion, &self.stats);
                let snapshot = self.multipliers.clone();
                self.fill_multiplier_fields(&mut record, &confusion, &snapshot);
            }
        }
        self.gain = Some(gain);
        self.epoch += 1;
        Ok(record)
    }

    fn fill_multiplier_fields(&self, record: &mut EpochTelemetry, confusion: &ConfusionTensor, mult: &MultiplierState) {
        let (min, mean, max) = mult.summary(&self.stats);
        record.lagrangian = Some(lagrangian_value(confusion, &self.stats, mult));
        record.mean_trans_acc = Some(mult.detached_mean_trans_acc());
        record.lambda_min = Some(min);
        record.lambda_mean = Some(mean);
        record.lambda_max = Some(max);
        record.violated = Some(violated_constraints(confusion, &self.stats, self.config.epsilon));
    }
}

/// Runs `config.epochs` epochs from zero-initialized parameters.
pub fn train(dataset: &Dataset, config: &TrainConfig) -> Result<(ClassifierParams, Vec<EpochTelemetry>)> {
    let mut trainer = Trainer::new(dataset, config.clone())?;
    let mut telemetry = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        telemetry.push(trainer.run_epoch()?);
    }
    Ok((trainer.into_params(), telemetry))
}

/// A gain slice for one previous action.
#[derive(Debug, Clone, Copy)]
pub enum GainSlice<'a> {
    /// Diagonal entries `G[i][i]`.
    Diagonal(&'a [f64]),
    /// Full row-major `L × L` matrix `G[i][j]`: gain of predicting `j` when the truth is `i`.
    Full(&'a [f64]),
}

/// Decision maximizing the expected gain `sum_i p_i G[i][j]` over `j`.
/// Ties go to the smallest class id.
pub fn bayes_optimal_decision(posteriors: &[f64], gain: GainSlice<'_>) -> usize {
    let l = posteriors.len();
    let scores: Vec<f64> = match gain {
        GainSlice::Diagonal(d) => posteriors.iter().zip(d).map(|(p, g)| p * g).collect(),
        GainSlice::Full(m) => (0..l)
            .map(|j| (0..l).map(|i| posteriors[i] * m[i * l + j]).sum())
            .collect(),
    };
    argmax(&scores)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
struct CheckpointHeader {
    num_classes: usize,
    feature_dim: usize,
    context_radius: usize,
    epoch: usize,
}

/// Writes a checkpoint: one JSON header line, then weights and bias as
/// little-endian f32.
pub fn save_checkpoint(path: &Path, params: &ClassifierParams, epoch: usize) -> Result<()> {
    let header = CheckpointHeader {
        num_classes: params.num_classes,
        feature_dim: params.feature_dim,
        context_radius: params.context_radius,
        epoch,
    };
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    for &v in params.weights.iter().chain(&params.bias) {
        out.write_all(&(v as f32).to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a checkpoint written by [`save_checkpoint`]; returns the parameters and epoch.
pub fn load_checkpoint(path: &Path) -> Result<(ClassifierParams, usize)> {
    let mut reader = BufReader::new(fs::File::open(path)?);
    let mut line = String::new();
    reader.read_line(&mut line)?;
    let header: CheckpointHeader = serde_json::from_str(line.trim_end())
        .map_err(|e| Error::parse_line(path, 1, format!("bad checkpoint header: {e}")))?;
    let mut params = ClassifierParams::zeros(header.num_classes, header.feature_dim, header.context_radius);
    let mut payload = Vec::new();
    reader.read_to_end(&mut payload)?;
    let expected = 4 * (params.weights.len() + params.bias.len());
    if payload.len() != expected {
        return Err(Error::parse_offset(
            path,
            line.len() + payload.len().min(expected),
            format!("expected {expected} payload bytes, found {}", payload.len()),
        ));
    }
    let mut values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64);
    for w in params.weights.iter_mut().chain(params.bias.iter_mut()) {
        *w = values.next().unwrap();
    }
    Ok((params, header.epoch))
}
