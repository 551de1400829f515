//! Experiment plumbing behind the `ltseg` binary: config files, the
//! gen/train/eval commands and report comparison.

pub mod commands;
pub mod compare;
pub mod config;

pub use commands::{cmd_eval, cmd_gen, cmd_train, decode_dataset, run_dir, score, EvalReport, Split};
pub use compare::{compare, Comparison};
pub use config::{DatasetSource, ExperimentConfig};
