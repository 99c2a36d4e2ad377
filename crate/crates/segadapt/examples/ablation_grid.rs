//! A miniature ablation: the component grid (source-only, plain
//! Mean-Teacher, uncertainty gate, full method) on a tiny dataset with one
//! seed, printing the comparison table. Directional only at this scale;
//! the real sweep uses the `ablate` CLI command with the default config.

use segadapt::workbench::{
    ablation_suite, generate_dataset, AblationGrid, ExperimentConfig, SplitCounts,
};

fn main() -> segadapt::Result<()> {
    let root = std::env::temp_dir().join("segadapt-examples/ablation");
    let data_dir = root.join("data");

    let mut cfg = ExperimentConfig::default();
    cfg.dataset_dir = data_dir.display().to_string();
    cfg.dataset.scene.height = 32;
    cfg.dataset.scene.width = 32;
    cfg.dataset.counts = SplitCounts {
        source: 32,
        target_train: 32,
        target_eval: 12,
    };
    cfg.model.input_size = (32, 32);
    cfg.model.widths = [8, 12, 16];
    cfg.t_max = 200;
    cfg.eval_every = 50;
    cfg.batch_size_source = 4;
    cfg.batch_size_target = 4;
    cfg.uncertainty.num_passes = 4;

    generate_dataset(
        &cfg.dataset.scene,
        &cfg.dataset.source_style,
        &cfg.dataset.target_style,
        &cfg.dataset.counts,
        &data_dir,
    )?;

    let grid = AblationGrid::component_ablation(vec![1]);
    let outcome = ablation_suite(&cfg, &grid, root.join("runs"))?;
    println!();
    println!("{}", outcome.to_csv());
    println!("per-run outputs under {}", root.join("runs").display());
    Ok(())
}
