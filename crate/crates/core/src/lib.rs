//! Cost-sensitive learning for long-tailed temporal action segmentation.
//!
//! The crate is organised around the training loop:
//!
//! * [`seqdata`] holds labelled feature sequences, the synthetic long-tail
//!   generator, on-disk formats and the dataset transition statistics.
//! * [`confusion`] counts (truth, prediction, previous action) triples and
//!   derives per-class and per-transition accuracies.
//! * [`costsens`] turns those learning states into loss weights through a
//!   Lagrangian with one non-negative multiplier per observed transition.
//! * [`classifier`] is a context-window linear softmax model with analytic
//!   gradients and the alternating classifier/multiplier training loop.
//! * [`decode`] provides argmax, nearest-class-mean and segment
//!   nearest-class-mean decoders.
//! * [`metrics`] implements frame accuracy, edit score and segmental F1,
//!   both globally and per class, plus head/tail group summaries.

pub mod classifier;
pub mod confusion;
pub mod costsens;
pub mod decode;
mod error;
pub mod metrics;
pub mod seqdata;

pub use classifier::{
    bayes_optimal_decision, forward, predict_sequence, train, ClassifierParams, GainSlice,
    LossMode, TrainConfig, Trainer,
};
pub use confusion::{compute_confusion, learning_state, ConfusionTensor, FramePredictor, LearningState};
pub use costsens::{
    compute_gain, lagrangian_value, update_multipliers, weighted_ce_grad_logits, weighted_ce_loss,
    EpochTelemetry, GainWeights, MultiplierState,
};
pub use decode::{
    classifier_class_means, compute_class_means, decode_sequence, ncm_predict, segment_boundaries, sncm_decode,
    ClassMeans, Decoder,
};
pub use error::{Error, Result};
pub use metrics::{edit_score, evaluate, frame_accuracy, segmental_f1, EvalOptions, MetricsReport};
pub use seqdata::{
    compute_transition_stats, generate_synthetic, head_tail_split, load_dataset, save_dataset,
    segmentation_from_frames, Dataset, LabeledSequence, Segment, Segmentation, SynthConfig,
    TransitionStats,
};
