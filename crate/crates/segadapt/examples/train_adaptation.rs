//! End-to-end adaptation on a miniature dataset: generates data, trains the
//! uncertainty-gated Mean-Teacher for a few hundred steps, and prints the
//! loss and mIoU trajectory. Finishes in well under a minute on a laptop.

use segadapt::workbench::{generate_dataset, run_experiment, ExperimentConfig, SplitCounts};

fn main() -> segadapt::Result<()> {
    let root = std::env::temp_dir().join("segadapt-examples/train");
    let data_dir = root.join("data");

    let mut cfg = ExperimentConfig::default();
    cfg.dataset_dir = data_dir.display().to_string();
    cfg.dataset.scene.height = 32;
    cfg.dataset.scene.width = 32;
    cfg.dataset.counts = SplitCounts {
        source: 48,
        target_train: 48,
        target_eval: 16,
    };
    cfg.model.input_size = (32, 32);
    cfg.model.widths = [8, 12, 16];
    cfg.t_max = 300;
    cfg.eval_every = 50;
    cfg.batch_size_source = 4;
    cfg.batch_size_target = 4;
    cfg.uncertainty.num_passes = 4;
    cfg.seed = 1;

    generate_dataset(
        &cfg.dataset.scene,
        &cfg.dataset.source_style,
        &cfg.dataset.target_style,
        &cfg.dataset.counts,
        &data_dir,
    )?;

    let run_dir = root.join("run");
    let summary = run_experiment(&cfg, &run_dir, None)?;
    println!();
    println!(
        "method {:?}: final target mIoU {:.4}, best {:.4} at step {}",
        summary.method, summary.final_miou, summary.best_miou, summary.best_step
    );
    println!("metrics.csv / eval.csv / checkpoints under {}", run_dir.display());
    Ok(())
}
