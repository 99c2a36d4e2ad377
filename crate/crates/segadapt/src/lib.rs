//! Uncertainty-gated Mean-Teacher consistency training for domain-adaptive
//! semantic segmentation, plus a procedurally generated domain-shift
//! workbench for exercising it end to end on a CPU.
//!
//! The crate is organized around the training mechanism:
//!
//! - [`segcore`]: image/label/probability/mask types and IoU metrics
//! - [`uncertainty`]: stochastic-ensemble predictive entropy and the
//!   time-dependent confidence threshold that gates consistency
//! - [`classdrop`]: class-wise perturbation masks and mask composition
//! - [`losses`]: gated consistency loss, supervised cross-entropy, ramp-up
//! - [`adapt`]: the reference segmentation model, EMA teacher updates, input
//!   augmentation, and the per-iteration training step
//! - [`workbench`]: synthetic dataset generation, experiment configuration,
//!   training runs, evaluation, and ablation grids
//!
//! See the `examples/` directory for one runnable example per capability.

pub mod adapt;
pub mod classdrop;
pub(crate) mod color;
pub mod error;
pub mod losses;
pub mod rng;
pub mod segcore;
pub mod uncertainty;
pub mod workbench;

pub use error::{Error, Result};
