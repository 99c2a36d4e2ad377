//! Command-line front end. All logic lives in the library; this binary
//! parses arguments, loads configuration, and dispatches.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use segadapt::adapt::checkpoint::load_checkpoint;
use segadapt::error::{Error, Result};
use segadapt::segcore::io::{confusion_to_csv, iou_report_to_csv, write_text};
use segadapt::workbench::plot::{plot_miou_curves, Series};
use segadapt::workbench::{
    ablation_suite, generate_dataset, parse_eval_csv, run_experiment, AblationGrid,
    DomainPairDataset, ExperimentConfig, SplitKind,
};

#[derive(Parser)]
#[command(
    name = "segadapt",
    about = "Uncertainty-gated Mean-Teacher domain adaptation workbench",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Experiment config (TOML); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Dot-path config overrides, e.g. --override lambda0=0.05
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        for entry in &self.overrides {
            let (key, value) = entry
                .split_once('=')
                .ok_or_else(|| Error::config(format!("override '{entry}' is not KEY=VALUE")))?;
            cfg.apply_override(key, value)?;
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Render the synthetic domain-pair dataset onto disk.
    GenerateData {
        #[command(flatten)]
        config: ConfigArgs,
        /// Output directory; defaults to the config's dataset_dir.
        #[arg(long, env = "SEGADAPT_OUT")]
        out: Option<PathBuf>,
    },
    /// Train one configuration, writing metrics, checkpoints and a summary.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// Run directory.
        #[arg(long, env = "SEGADAPT_OUT")]
        out: Option<PathBuf>,
        /// Resume from a checkpoint directory (config digests must match).
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Score a checkpoint on a labeled dataset split.
    Evaluate {
        #[command(flatten)]
        config: ConfigArgs,
        /// Checkpoint directory (e.g. <run>/checkpoints/final).
        #[arg(long)]
        checkpoint: PathBuf,
        /// Split to score: source or target-eval.
        #[arg(long, default_value = "target-eval")]
        split: String,
        /// Evaluate the teacher snapshot instead of the student.
        #[arg(long)]
        teacher: bool,
        /// Where to write iou.csv and confusion.csv (printed regardless).
        #[arg(long, env = "SEGADAPT_OUT")]
        out: Option<PathBuf>,
    },
    /// Run an ablation grid: every cell on the same data over shared seeds.
    Ablate {
        #[command(flatten)]
        config: ConfigArgs,
        /// Grid file (TOML: seeds, axes, cells); defaults to the component
        /// ablation with seeds 1,2,3.
        #[arg(long)]
        grid: Option<PathBuf>,
        #[arg(long, env = "SEGADAPT_OUT")]
        out: Option<PathBuf>,
    },
    /// Emit an SVG of mIoU-vs-step curves from run directories.
    Plot {
        /// Run directories (each containing eval.csv).
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        /// Output SVG path.
        #[arg(long, env = "SEGADAPT_OUT")]
        out: Option<PathBuf>,
    },
}

fn default_out(out: Option<PathBuf>, fallback: &str) -> PathBuf {
    out.unwrap_or_else(|| PathBuf::from(fallback))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenerateData { config, out } => {
            let mut cfg = config.resolve()?;
            if let Some(seed) = config.seed {
                cfg.dataset.scene.seed = seed;
            }
            let out = out.unwrap_or_else(|| PathBuf::from(&cfg.dataset_dir));
            let manifest = generate_dataset(
                &cfg.dataset.scene,
                &cfg.dataset.source_style,
                &cfg.dataset.target_style,
                &cfg.dataset.counts,
                &out,
            )?;
            println!(
                "generated {} source / {} target-train / {} target-eval images ({} classes) under {}",
                manifest.counts.source,
                manifest.counts.target_train,
                manifest.counts.target_eval,
                manifest.num_classes,
                out.display()
            );
            Ok(())
        }
        Command::Train {
            config,
            out,
            resume,
        } => {
            let cfg = config.resolve()?;
            let out = default_out(out, "runs/train");
            let summary = run_experiment(&cfg, &out, resume.as_deref())?;
            println!(
                "{}: final miou {:.4}, best miou {:.4} at step {} -> {}",
                summary.method,
                summary.final_miou,
                summary.best_miou,
                summary.best_step,
                out.display()
            );
            Ok(())
        }
        Command::Evaluate {
            config,
            checkpoint,
            split,
            teacher,
            out,
        } => {
            let cfg = config.resolve()?;
            let split = match split.as_str() {
                "source" => SplitKind::Source,
                "target-eval" => SplitKind::TargetEval,
                "target-train" => SplitKind::TargetTrain,
                other => {
                    return Err(Error::config(format!(
                        "unknown split '{other}' (expected source or target-eval)"
                    )))
                }
            };
            let dataset = DomainPairDataset::load(&cfg.dataset_dir)?;
            let labeled = dataset.labeled_split(split)?;
            // any config may score any checkpoint; shapes are validated when
            // the model is built
            let (state, manifest) = load_checkpoint(&checkpoint, None)?;
            let params = if teacher { &state.teacher } else { &state.student };
            let report = segadapt::workbench::evaluate(params, &cfg.model, labeled)?;
            println!(
                "checkpoint step {} on {}: mIoU {:.4}",
                manifest.step,
                split.dir_name(),
                report.mean
            );
            for (k, iou) in report.per_class.iter().enumerate() {
                match iou {
                    Some(v) => println!("  class {k}: {v:.4}"),
                    None => println!("  class {k}: (absent)"),
                }
            }
            if let Some(out) = out {
                let model = segadapt::adapt::Model::new(&cfg.model, params)?;
                let mut total = segadapt::segcore::ConfusionMatrix::zeros(cfg.model.num_classes);
                for (image, labels) in labeled {
                    let logits = model.forward(image)?;
                    let pred =
                        segadapt::segcore::argmax_labels(&segadapt::segcore::normalize(&logits));
                    total.merge(&segadapt::segcore::confusion(&pred, labels)?)?;
                }
                write_text(out.join("iou.csv"), &iou_report_to_csv(&report))?;
                write_text(out.join("confusion.csv"), &confusion_to_csv(&total))?;
                println!("wrote {}/iou.csv and confusion.csv", out.display());
            }
            Ok(())
        }
        Command::Ablate { config, grid, out } => {
            let cfg = config.resolve()?;
            let grid = match grid {
                Some(path) => AblationGrid::load(path)?,
                None => AblationGrid::component_ablation(vec![1, 2, 3]),
            };
            let out = default_out(out, "runs/ablation");
            let outcome = ablation_suite(&cfg, &grid, &out)?;
            println!("{}", outcome.to_csv());
            println!("table written to {}/ablation.csv", out.display());
            Ok(())
        }
        Command::Plot { runs, out } => {
            let mut series = Vec::new();
            for run in &runs {
                let eval = run.join("eval.csv");
                let points = parse_eval_csv(&eval)?;
                let label = match load_run_label(run) {
                    Some(label) => label,
                    None => run.display().to_string(),
                };
                series.push(Series { label, points });
            }
            let out = default_out(out, "runs/miou.svg");
            let out = if out.extension().is_some() {
                out
            } else {
                out.join("miou.svg")
            };
            plot_miou_curves(&series, "target-eval mIoU vs step", &out)?;
            println!("wrote {}", out.display());
            Ok(())
        }
    }
}

fn load_run_label(run: &std::path::Path) -> Option<String> {
    let text = std::fs::read_to_string(run.join("summary.json")).ok()?;
    let v: serde_json::Value = serde_json::from_str(&text).ok()?;
    let method = v.get("method")?.as_str()?;
    let seed = v.get("seed")?.as_u64()?;
    Some(format!("{method} (seed {seed})"))
}
