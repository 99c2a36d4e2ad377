//! Training runs: wiring the dataset, trainer configuration and state into
//! a full run directory with metrics/eval CSV streams, best/final
//! checkpoints and a JSON summary whose digest is reproducible.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::adapt::checkpoint::{load_checkpoint, save_checkpoint};
use crate::adapt::{augment::CropGeometry, train_step, Model, ParameterSnapshot, SegModelSpec, TrainState};
use crate::error::{Error, Result};
use crate::rng;
use crate::segcore::{argmax_labels, confusion, miou, normalize, ConfusionMatrix, ImageTensor, IouReport, LabelMap};
use crate::workbench::config::{ClassDropFill, ExperimentConfig};
use crate::workbench::dataset::DomainPairDataset;

/// Evaluates a parameter snapshot on a labeled split: accumulated confusion
/// over all images, then per-class IoU and the mean. Images larger than the
/// model input are center-cropped together with their labels.
pub fn evaluate(
    params: &ParameterSnapshot,
    spec: &SegModelSpec,
    split: &[(ImageTensor, LabelMap)],
) -> Result<IouReport> {
    if split.is_empty() {
        return Err(Error::EmptyInput("evaluation split"));
    }
    let model = Model::new(spec, params)?;
    let matrices: Vec<ConfusionMatrix> = split
        .par_iter()
        .map(|(image, labels)| {
            let (image, labels) = center_crop_pair(image, labels, spec.input_size)?;
            let logits = model.forward(&image)?;
            let pred = argmax_labels(&normalize(&logits));
            confusion(&pred, &labels)
        })
        .collect::<Result<_>>()?;
    let mut total = ConfusionMatrix::zeros(spec.num_classes);
    for m in &matrices {
        total.merge(m)?;
    }
    miou(&total)
}

fn center_crop_pair(
    image: &ImageTensor,
    labels: &LabelMap,
    size: (usize, usize),
) -> Result<(ImageTensor, LabelMap)> {
    let (h, w) = (image.height(), image.width());
    let (th, tw) = size;
    if h < th || w < tw {
        return Err(Error::Dataset(format!(
            "evaluation image {h}x{w} smaller than model input {th}x{tw}"
        )));
    }
    if (h, w) == (th, tw) {
        return Ok((image.clone(), labels.clone()));
    }
    let geom = CropGeometry {
        top: (h - th) / 2,
        left: (w - tw) / 2,
        height: th,
        width: tw,
    };
    Ok((geom.apply_to_image(image)?, geom.apply_to_labels(labels)?))
}

/// Outcome of a completed run, persisted as `summary.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub method: String,
    pub seed: u64,
    pub t_max: u64,
    pub config_digest: String,
    pub final_miou: f64,
    pub final_teacher_miou: f64,
    pub final_per_class: Vec<Option<f64>>,
    pub best_miou: f64,
    pub best_step: u64,
    /// SHA-256 over the metrics and eval CSV bytes.
    pub summary_digest: String,
}

/// Trains for `t_max` steps with periodic evaluation, writing into
/// `out_dir`:
///
/// - `config.toml` — the resolved configuration
/// - `metrics.csv` — one row per step: losses, weight, gate fraction
/// - `eval.csv` — mIoU-vs-step curve for student and teacher
/// - `checkpoints/best`, `checkpoints/final`
/// - `summary.json`
///
/// `resume` restores a checkpoint directory; it is refused when the config
/// digest stored there differs from this configuration's.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    out_dir: impl AsRef<Path>,
    resume: Option<&Path>,
) -> Result<RunSummary> {
    cfg.validate()?;
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let digest = cfg.digest();

    let dataset = DomainPairDataset::load(&cfg.dataset_dir)?;
    if dataset.num_classes() != cfg.model.num_classes {
        return Err(Error::Dataset(format!(
            "dataset has {} classes but the model expects {}",
            dataset.num_classes(),
            cfg.model.num_classes
        )));
    }
    if cfg.batch_size_source > dataset.source().len()
        || cfg.batch_size_target > dataset.target_train().len()
    {
        return Err(Error::Dataset(
            "batch size exceeds the number of images in a split".into(),
        ));
    }

    let fill = match cfg.classdrop_fill {
        ClassDropFill::Zero => 0.0,
        ClassDropFill::DatasetMean => dataset.target_train_mean(),
    };
    let trainer_cfg = cfg.trainer(fill);

    let mut state = match resume {
        Some(ckpt) => {
            let (state, _) = load_checkpoint(ckpt, Some(&digest))?;
            if state.t_max != cfg.t_max {
                return Err(Error::CheckpointMismatch(format!(
                    "checkpoint t_max {} differs from config t_max {}",
                    state.t_max, cfg.t_max
                )));
            }
            state
        }
        None => TrainState::new(cfg.model.init_parameters()?, cfg.t_max, cfg.seed)?,
    };

    crate::segcore::io::write_text(out_dir.join("config.toml"), &cfg.to_toml())?;

    let metrics_path = out_dir.join("metrics.csv");
    let eval_path = out_dir.join("eval.csv");
    let mut best_miou = f64::MIN;
    let mut best_step = 0;
    let (mut metrics_rows, mut eval_rows) = if state.step > 0 {
        resume_rows(&metrics_path, &eval_path, state.step, &mut best_miou, &mut best_step)?
    } else {
        (
            vec!["step,seg_loss,con_loss,lambda_con,total,masked_fraction".to_string()],
            vec!["step,miou,teacher_miou".to_string()],
        )
    };

    let method = cfg.method_label().to_string();
    let mut final_report: Option<IouReport> = None;
    let mut final_teacher_miou = 0.0;

    while state.step < cfg.t_max {
        let t = state.step;
        let source_batch = sample_pairs(dataset.source(), cfg.batch_size_source, cfg.seed, "batch-source", t);
        let target_batch = sample_images(dataset.target_train(), cfg.batch_size_target, cfg.seed, "batch-target", t);
        let report = train_step(&mut state, &source_batch, &target_batch, &trainer_cfg)?;
        metrics_rows.push(format!(
            "{},{},{},{},{},{}",
            t, report.seg_loss, report.con_loss, report.lambda_con, report.total, report.masked_fraction
        ));

        let completed = state.step;
        if completed % cfg.eval_every == 0 || completed == cfg.t_max {
            let student_eval = evaluate(&state.student, &cfg.model, dataset.target_eval())?;
            let teacher_eval = evaluate(&state.teacher, &cfg.model, dataset.target_eval())?;
            eval_rows.push(format!(
                "{},{},{}",
                completed, student_eval.mean, teacher_eval.mean
            ));
            println!(
                "[{method} seed {}] step {completed}: miou {:.4} (teacher {:.4})",
                cfg.seed, student_eval.mean, teacher_eval.mean
            );
            if student_eval.mean > best_miou {
                best_miou = student_eval.mean;
                best_step = completed;
                save_checkpoint(
                    out_dir.join("checkpoints/best"),
                    &state,
                    &digest,
                    serde_json::json!({ "miou": student_eval.mean, "step": completed }),
                )?;
            }
            if completed == cfg.t_max {
                final_teacher_miou = teacher_eval.mean;
                final_report = Some(student_eval);
            }
        }
    }

    write_lines(&metrics_path, &metrics_rows)?;
    write_lines(&eval_path, &eval_rows)?;

    let final_report = match final_report {
        Some(r) => r,
        None => evaluate(&state.student, &cfg.model, dataset.target_eval())?,
    };
    save_checkpoint(
        out_dir.join("checkpoints/final"),
        &state,
        &digest,
        serde_json::json!({ "miou": final_report.mean, "step": state.step }),
    )?;

    let mut hasher = Sha256::new();
    hasher.update(std::fs::read(&metrics_path).map_err(|e| Error::io(&metrics_path, e))?);
    hasher.update(std::fs::read(&eval_path).map_err(|e| Error::io(&eval_path, e))?);
    let summary_digest = format!("{:x}", hasher.finalize());

    let summary = RunSummary {
        method,
        seed: cfg.seed,
        t_max: cfg.t_max,
        config_digest: digest,
        final_miou: final_report.mean,
        final_teacher_miou,
        final_per_class: final_report.per_class,
        best_miou,
        best_step,
        summary_digest,
    };
    let summary_path = out_dir.join("summary.json");
    let mut f = BufWriter::new(File::create(&summary_path).map_err(|e| Error::io(&summary_path, e))?);
    serde_json::to_writer_pretty(&mut f, &summary)
        .map_err(|e| Error::invalid(format!("summary serialization: {e}")))?;
    f.write_all(b"\n").map_err(|e| Error::io(&summary_path, e))?;
    Ok(summary)
}

fn sample_pairs(
    split: &[(ImageTensor, LabelMap)],
    k: usize,
    seed: u64,
    label: &str,
    t: u64,
) -> Vec<(ImageTensor, LabelMap)> {
    let mut r = rng::stream(seed, label, &[t]);
    rand::seq::index::sample(&mut r, split.len(), k)
        .into_iter()
        .map(|ix| split[ix].clone())
        .collect()
}

fn sample_images(split: &[ImageTensor], k: usize, seed: u64, label: &str, t: u64) -> Vec<ImageTensor> {
    let mut r = rng::stream(seed, label, &[t]);
    rand::seq::index::sample(&mut r, split.len(), k)
        .into_iter()
        .map(|ix| split[ix].clone())
        .collect()
}

fn write_lines(path: &Path, lines: &[String]) -> Result<()> {
    let mut f = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    for line in lines {
        writeln!(f, "{line}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

/// Re-reads CSV rows from an interrupted run, keeping only rows from before
/// the resume point and recovering the best-so-far evaluation.
fn resume_rows(
    metrics_path: &Path,
    eval_path: &Path,
    resume_step: u64,
    best_miou: &mut f64,
    best_step: &mut u64,
) -> Result<(Vec<String>, Vec<String>)> {
    let mut metrics_rows = vec!["step,seg_loss,con_loss,lambda_con,total,masked_fraction".to_string()];
    let mut eval_rows = vec!["step,miou,teacher_miou".to_string()];
    if let Ok(text) = std::fs::read_to_string(metrics_path) {
        for line in text.lines().skip(1) {
            if let Some(step) = line.split(',').next().and_then(|s| s.parse::<u64>().ok()) {
                if step < resume_step {
                    metrics_rows.push(line.to_string());
                }
            }
        }
    }
    if let Ok(text) = std::fs::read_to_string(eval_path) {
        for line in text.lines().skip(1) {
            let mut parts = line.split(',');
            let step = parts.next().and_then(|s| s.parse::<u64>().ok());
            let miou = parts.next().and_then(|s| s.parse::<f64>().ok());
            if let (Some(step), Some(miou)) = (step, miou) {
                if step <= resume_step {
                    eval_rows.push(line.to_string());
                    if miou > *best_miou {
                        *best_miou = miou;
                        *best_step = step;
                    }
                }
            }
        }
    }
    Ok((metrics_rows, eval_rows))
}

/// Parses an `eval.csv` written by [`run_experiment`] into
/// `(step, miou)` points (the student column).
pub fn parse_eval_csv(path: impl AsRef<Path>) -> Result<Vec<(u64, f64)>> {
    let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
    let mut points = Vec::new();
    for line in text.lines().skip(1) {
        let mut parts = line.split(',');
        let step = parts
            .next()
            .and_then(|s| s.parse::<u64>().ok())
            .ok_or_else(|| Error::invalid(format!("bad eval row: {line}")))?;
        let miou = parts
            .next()
            .and_then(|s| s.parse::<f64>().ok())
            .ok_or_else(|| Error::invalid(format!("bad eval row: {line}")))?;
        points.push((step, miou));
    }
    Ok(points)
}
