use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use ltseg_cli::commands::CHECKPOINT_FILE;
use ltseg_cli::{cmd_eval, cmd_gen, cmd_train, compare, run_dir, ExperimentConfig, Split};
use ltseg_core::{Decoder, LossMode};

/// Long-tail temporal action segmentation experiments.
#[derive(Parser)]
#[command(name = "ltseg", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON experiment config; defaults apply to missing fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: runs/<config hash>-<timestamp>).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset and print its class frame counts.
    Gen(Common),
    /// Train the frame classifier on the training split.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        loss: Option<Loss>,
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Decode a split with a trained checkpoint and write metric reports.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        decode: Option<Dec>,
        /// Defaults to checkpoint.bin in the output directory.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
    },
    /// Compare report.json files against the first one.
    Report {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
        /// Write the table here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum Loss {
    PlainCe,
    InversePrior,
    CostSensitive,
}

#[derive(Clone, Copy, ValueEnum)]
enum Dec {
    Argmax,
    Ncm,
    Sncm,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Test,
    Train,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

fn load_config(common: &Common) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if common.seed.is_some() {
        cfg.seed = common.seed;
    }
    Ok(cfg)
}

fn init_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("LTSEG_THREADS") {
        let n: usize = v.parse().with_context(|| format!("LTSEG_THREADS='{v}' is not a count"))?;
        if n == 0 {
            bail!("LTSEG_THREADS must be positive");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    init_threads()?;
    match cli.command {
        Command::Gen(common) => {
            let cfg = load_config(&common)?.resolve()?;
            let dir = run_dir(&cfg, common.out.as_deref());
            print!("{}", cmd_gen(&cfg, &dir)?);
            eprintln!("dataset written to {}", dir.join("data").display());
        }
        Command::Train {
            common,
            loss,
            tau,
            epsilon,
            gamma,
            epochs,
        } => {
            let mut cfg = load_config(&common)?;
            if let Some(l) = loss {
                cfg.train.loss_mode = match l {
                    Loss::PlainCe => LossMode::PlainCe,
                    Loss::InversePrior => LossMode::InversePrior,
                    Loss::CostSensitive => LossMode::CostSensitive,
                };
            }
            cfg.train.tau = tau.unwrap_or(cfg.train.tau);
            cfg.train.epsilon = epsilon.unwrap_or(cfg.train.epsilon);
            cfg.train.gamma = gamma.unwrap_or(cfg.train.gamma);
            cfg.train.epochs = epochs.unwrap_or(cfg.train.epochs);
            let cfg = cfg.resolve()?;
            let dir = run_dir(&cfg, common.out.as_deref());
            let outcome = cmd_train(&cfg, &dir)?;
            if let Some(last) = outcome.telemetry.last() {
                eprintln!(
                    "epoch {}: loss {:.4}, train acc {:.2}",
                    last.epoch,
                    last.mean_loss,
                    100.0 * last.train_acc
                );
            }
            eprintln!("checkpoint written to {}", dir.join(CHECKPOINT_FILE).display());
        }
        Command::Eval {
            common,
            decode,
            checkpoint,
            split,
        } => {
            let mut cfg = load_config(&common)?;
            if let Some(d) = decode {
                cfg.decode = match d {
                    Dec::Argmax => Decoder::Argmax,
                    Dec::Ncm => Decoder::Ncm,
                    Dec::Sncm => Decoder::Sncm,
                };
            }
            let cfg = cfg.resolve()?;
            let dir = run_dir(&cfg, common.out.as_deref());
            let checkpoint = match (checkpoint, common.out.as_ref().or(cfg.output_dir.as_ref())) {
                (Some(c), _) => c,
                (None, Some(out)) => out.join(CHECKPOINT_FILE),
                (None, None) => bail!("--checkpoint is required when no output directory is given"),
            };
            let split = match split {
                SplitArg::Test => Split::Test,
                SplitArg::Train => Split::Train,
            };
            let report = cmd_eval(&cfg, &dir, &checkpoint, split)?;
            let m = &report.metrics;
            let f25 = m.f1_at(0.25);
            eprintln!(
                "{}: acc {:.2}, per-class acc {:.2}, edit {:.2}, F1@25 {:.2}",
                report.decoder,
                m.global_acc,
                m.per_class_acc,
                m.edit_score,
                f25.map_or(f64::NAN, |f| f.global)
            );
        }
        Command::Report { reports, format, out } => {
            let named = reports
                .iter()
                .map(|p| Ok((p.display().to_string(), compare::load_report(p)?)))
                .collect::<anyhow::Result<Vec<_>>>()?;
            let table = compare::compare(&named)?;
            let text = match format {
                Format::Csv => table.to_csv(),
                Format::Json => table.to_json(),
            };
            match out {
                Some(path) => std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?,
                None => print!("{text}"),
            }
        }
    }
    Ok(())
}
