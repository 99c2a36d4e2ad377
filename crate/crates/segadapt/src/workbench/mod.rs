//! Desk-scale experiment harness: synthetic domain-pair dataset generation,
//! experiment configuration, training runs with periodic evaluation,
//! checkpointing, and ablation grids.

pub mod ablation;
pub mod config;
pub mod dataset;
pub mod experiment;
pub mod plot;
pub mod scene;

pub use ablation::{ablation_suite, AblationGrid, AblationOutcome};
pub use config::ExperimentConfig;
pub use dataset::{generate_dataset, DomainPairDataset, SplitCounts, SplitKind};
pub use experiment::{evaluate, parse_eval_csv, run_experiment, RunSummary};
pub use scene::{DomainStyle, SceneSpec};
