//! The `gen`, `train` and `eval` commands.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, ensure, Context};
use ltseg_core::classifier::{load_checkpoint, save_checkpoint};
use ltseg_core::seqdata::write_label_file;
use ltseg_core::{
    classifier_class_means, decode_sequence, evaluate, ClassifierParams, Dataset, Decoder, EpochTelemetry,
    EvalOptions, MetricsReport, Trainer,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{DatasetSource, ExperimentConfig};

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const TELEMETRY_FILE: &str = "telemetry.jsonl";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_CSV: &str = "report.csv";
pub const CLASS_COUNTS_FILE: &str = "class_counts.csv";

/// Picks the output directory: the explicit one, the config's, or
/// `runs/<config hash>-<unix seconds>`.
pub fn run_dir(cfg: &ExperimentConfig, out: Option<&Path>) -> PathBuf {
    if let Some(dir) = out.or(cfg.output_dir.as_deref()) {
        return dir.to_path_buf();
    }
    let secs = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    PathBuf::from("runs").join(format!("{}-{secs}", cfg.hash()))
}

fn prepare_dir(dir: &Path, cfg: &ExperimentConfig, command: &str) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(format!("{command}_config.json"));
    fs::write(&path, cfg.to_json()).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Writes the generated dataset under `dir/data` and returns the class
/// frame-count table as CSV.
pub fn cmd_gen(cfg: &ExperimentConfig, dir: &Path) -> anyhow::Result<String> {
    let DatasetSource::Synthetic(_) = &cfg.dataset else {
        bail!("gen needs a synthetic dataset source");
    };
    prepare_dir(dir, cfg, "gen")?;
    let ds = cfg.load_dataset()?;
    ltseg_core::save_dataset(&ds, &dir.join("data"))?;
    let csv = class_count_csv(&ds, cfg);
    fs::write(dir.join(CLASS_COUNTS_FILE), &csv)?;
    Ok(csv)
}

fn class_count_csv(ds: &Dataset, cfg: &ExperimentConfig) -> String {
    let counts = ds.class_frame_counts();
    let (head, _) = cfg.head_tail(counts);
    let mut csv = String::from("class,name,frames,group\n");
    for (c, (&n, name)) in counts.iter().zip(ds.class_names()).enumerate() {
        let group = if head.contains(&c) { "head" } else { "tail" };
        csv.push_str(&format!("{c},{name},{n},{group}\n"));
    }
    csv
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ClassifierParams,
    pub telemetry: Vec<EpochTelemetry>,
}

/// Trains on the training split, streaming one telemetry line per epoch, and
/// writes the final checkpoint.
pub fn cmd_train(cfg: &ExperimentConfig, dir: &Path) -> anyhow::Result<TrainOutcome> {
    prepare_dir(dir, cfg, "train")?;
    let (train, _) = cfg.splits()?;
    let mut trainer = Trainer::new(&train, cfg.train.clone())?;
    let mut log = BufWriter::new(fs::File::create(dir.join(TELEMETRY_FILE))?);
    let mut telemetry = Vec::with_capacity(cfg.train.epochs);
    for _ in 0..cfg.train.epochs {
        let t = match trainer.run_epoch() {
            Ok(t) => t,
            Err(e) => {
                log.flush()?;
                return Err(e).context("training failed");
            }
        };
        serde_json::to_writer(&mut log, &t)?;
        log.write_all(b"\n")?;
        telemetry.push(t);
    }
    log.flush()?;
    let epochs = trainer.epochs_done();
    let params = trainer.into_params();
    save_checkpoint(&dir.join(CHECKPOINT_FILE), &params, epochs)?;
    Ok(TrainOutcome { params, telemetry })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Split {
    #[default]
    Test,
    Train,
}

/// Contents of `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub decoder: Decoder,
    pub split: String,
    pub checkpoint_epoch: usize,
    pub metrics: MetricsReport,
    /// Frame-wise NCM on the same checkpoint, reported alongside S-NCM.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame_ncm: Option<MetricsReport>,
}

/// Decodes every sequence of `ds`. Class means come from `train`.
pub fn decode_dataset(
    params: &ClassifierParams,
    train: &Dataset,
    ds: &Dataset,
    decoder: Decoder,
) -> anyhow::Result<Vec<Vec<usize>>> {
    let means = match decoder {
        Decoder::Argmax => None,
        Decoder::Ncm | Decoder::Sncm => Some(classifier_class_means(params, train)?),
    };
    let preds = ds
        .sequences()
        .par_iter()
        .map(|s| decode_sequence(params, means.as_ref(), s, decoder))
        .collect::<ltseg_core::Result<Vec<_>>>()?;
    Ok(preds)
}

/// Scores `preds` against `ds`, with head/tail groups from the training counts.
pub fn score(
    cfg: &ExperimentConfig,
    train: &Dataset,
    ds: &Dataset,
    preds: Vec<Vec<usize>>,
) -> anyhow::Result<MetricsReport> {
    let pairs: Vec<_> = preds
        .into_iter()
        .zip(ds.sequences())
        .map(|(p, s)| (p, s.frame_labels().to_vec()))
        .collect();
    let opts = EvalOptions {
        thresholds: cfg.thresholds.clone(),
        pooling: cfg.f1_pooling,
        head_tail: Some(cfg.head_tail(train.class_frame_counts())),
    };
    Ok(evaluate(&pairs, ds.num_classes(), &opts)?)
}

/// Evaluates a checkpoint and writes `report.json`, `report.csv` and one
/// predicted label file per sequence under `predictions/`.
pub fn cmd_eval(cfg: &ExperimentConfig, dir: &Path, checkpoint: &Path, split: Split) -> anyhow::Result<EvalReport> {
    let (params, epoch) =
        load_checkpoint(checkpoint).with_context(|| format!("loading checkpoint {}", checkpoint.display()))?;
    let (train, test) = cfg.splits()?;
    ensure!(
        params.num_classes() == train.num_classes() && params.feature_dim() == train.feature_dim(),
        "checkpoint has {} classes and feature dimension {}, dataset has {} and {}",
        params.num_classes(),
        params.feature_dim(),
        train.num_classes(),
        train.feature_dim()
    );
    let (ds, split_name) = match split {
        Split::Test => (&test, "test"),
        Split::Train => (&train, "train"),
    };
    ensure!(!ds.sequences().is_empty(), "the {split_name} split is empty");
    prepare_dir(dir, cfg, "eval")?;

    let preds = decode_dataset(&params, &train, ds, cfg.decode)?;
    let pred_dir = dir.join("predictions");
    fs::create_dir_all(&pred_dir)?;
    for (p, s) in preds.iter().zip(ds.sequences()) {
        write_label_file(&pred_dir.join(format!("{}.txt", s.id())), p, ds.class_names())?;
    }
    let metrics = score(cfg, &train, ds, preds)?;
    let frame_ncm = if cfg.decode == Decoder::Sncm {
        let ncm = decode_dataset(&params, &train, ds, Decoder::Ncm)?;
        Some(score(cfg, &train, ds, ncm)?)
    } else {
        None
    };
    let report = EvalReport {
        decoder: cfg.decode,
        split: split_name.to_string(),
        checkpoint_epoch: epoch,
        metrics: metrics.rounded(),
        frame_ncm: frame_ncm.map(|m| m.rounded()),
    };

    let mut json = serde_json::to_string_pretty(&report)?;
    json.push('\n');
    fs::write(dir.join(REPORT_JSON), json)?;
    let mut csv = Vec::new();
    report.metrics.write_csv(&cfg.decode.to_string(), &mut csv, true)?;
    if let Some(ncm) = &report.frame_ncm {
        ncm.write_csv("ncm", &mut csv, false)?;
    }
    fs::write(dir.join(REPORT_CSV), csv)?;
    Ok(report)
}
