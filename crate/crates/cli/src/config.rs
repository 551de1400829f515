//! Experiment configuration files.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context};
use ltseg_core::metrics::{F1Pooling, DEFAULT_THRESHOLDS};
use ltseg_core::{head_tail_split, load_dataset, Dataset, Decoder, SynthConfig, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    Synthetic(SynthConfig),
    /// A manifest file or a directory holding `manifest.json`.
    Manifest(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    pub train: TrainConfig,
    pub decode: Decoder,
    /// IoU thresholds for segmental F1.
    pub thresholds: Vec<f64>,
    pub f1_pooling: F1Pooling,
    /// Classes with at least this many training frames form the head group.
    /// Defaults to the mean per-class frame count of the training split.
    pub head_tail_threshold: Option<u64>,
    /// Trailing fraction of the sequences held out for evaluation.
    pub test_fraction: f64,
    pub output_dir: Option<PathBuf>,
    /// Overrides both the generator and the training seed.
    pub seed: Option<u64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetSource::Synthetic(SynthConfig::default()),
            train: TrainConfig::default(),
            decode: Decoder::Argmax,
            thresholds: DEFAULT_THRESHOLDS.to_vec(),
            f1_pooling: F1Pooling::Pooled,
            head_tail_threshold: None,
            test_fraction: 0.25,
            output_dir: None,
            seed: None,
        }
    }
}

impl ExperimentConfig {
    /// Reads a config file. A relative manifest path is taken relative to the
    /// config file's directory.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: Self =
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        if let DatasetSource::Manifest(p) = &mut cfg.dataset {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    /// Applies the seed override and checks every field.
    pub fn resolve(mut self) -> anyhow::Result<Self> {
        if let Some(seed) = self.seed {
            self.train.rng_seed = seed;
            if let DatasetSource::Synthetic(s) = &mut self.dataset {
                s.rng_seed = seed;
            }
        }
        match &self.dataset {
            DatasetSource::Synthetic(s) => s.validate()?,
            DatasetSource::Manifest(p) => ensure!(p.exists(), "dataset manifest {} does not exist", p.display()),
        }
        self.train.validate()?;
        ensure!(!self.thresholds.is_empty(), "at least one IoU threshold is required");
        if let Some(t) = self.thresholds.iter().find(|t| !(**t > 0.0 && **t < 1.0)) {
            bail!("IoU threshold {t} outside (0, 1)");
        }
        ensure!(
            (0.0..1.0).contains(&self.test_fraction),
            "test_fraction must lie in [0, 1)"
        );
        ensure!(self.head_tail_threshold != Some(0), "head_tail_threshold must be positive");
        Ok(self)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    /// First 12 hex digits of the SHA-256 of the effective config.
    pub fn hash(&self) -> String {
        Sha256::digest(self.to_json().as_bytes())
            .iter()
            .take(6)
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn load_dataset(&self) -> anyhow::Result<Dataset> {
        Ok(match &self.dataset {
            DatasetSource::Synthetic(s) => ltseg_core::generate_synthetic(s)?,
            DatasetSource::Manifest(p) => load_dataset(p).with_context(|| format!("loading {}", p.display()))?,
        })
    }

    /// Loads the dataset and cuts it into training and test splits.
    pub fn splits(&self) -> anyhow::Result<(Dataset, Dataset)> {
        Ok(self.load_dataset()?.split(self.test_fraction)?)
    }

    pub fn head_tail(&self, class_frame_counts: &[u64]) -> (BTreeSet<usize>, BTreeSet<usize>) {
        let threshold = self.head_tail_threshold.unwrap_or_else(|| {
            let total: u64 = class_frame_counts.iter().sum();
            (total / class_frame_counts.len().max(1) as u64).max(1)
        });
        head_tail_split(class_frame_counts, threshold)
    }
}
