//! Mean-Teacher orchestration: named parameter collections, EMA teacher
//! updates, input augmentation, the reference model, and the per-iteration
//! training step that wires supervision, uncertainty gating and class-wise
//! perturbation together.

use ndarray::ArrayD;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classdrop::{apply_mask, combine_masks, generate_classdrop_mask, ClassDropConfig};
use crate::error::{Error, Result};
use crate::losses::{
    ce_grad_wrt_logits, consistency_grad_wrt_student_logits, masked_consistency_loss_with_norm,
    ramp_weight, supervised_ce, ConsistencyNorm, LossReport, RampSchedule,
};
use crate::rng;
use crate::segcore::{argmax_labels, normalize, BinaryMask, ImageTensor, LabelMap};
use crate::uncertainty::{
    dynamic_threshold, predictive_entropy, stochastic_ensemble, uncertainty_mask, z_sup_batch,
    ThresholdSchedule, UncertaintyConfig,
};

pub mod augment;
pub mod checkpoint;
pub mod model;
pub mod optim;

pub use augment::{augment, augment_with_geometry, AugmentationConfig, CropGeometry};
pub use model::{model_forward, Model, SegModelSpec};
pub use optim::{AdamConfig, AdamState};

/// An ordered collection of uniquely named parameter arrays.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSnapshot {
    entries: Vec<(String, ArrayD<f64>)>,
}

impl ParameterSnapshot {
    pub fn new(entries: Vec<(String, ArrayD<f64>)>) -> Result<Self> {
        for (ix, (name, _)) in entries.iter().enumerate() {
            if entries[..ix].iter().any(|(n, _)| n == name) {
                return Err(Error::invalid(format!("duplicate parameter name {name}")));
            }
        }
        Ok(Self { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ArrayD<f64>)> {
        self.entries.iter().map(|(n, a)| (n.as_str(), a))
    }

    pub fn get(&self, name: &str) -> Result<&ArrayD<f64>> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, a)| a)
            .ok_or_else(|| Error::invalid(format!("missing parameter {name}")))
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|(_, a)| a.len()).sum()
    }

    /// Zeroes one named array in place.
    pub fn zero_entry(&mut self, name: &str) -> Result<()> {
        let arr = self
            .entries
            .iter_mut()
            .find(|(n, _)| n == name)
            .map(|(_, a)| a)
            .ok_or_else(|| Error::invalid(format!("missing parameter {name}")))?;
        arr.fill(0.0);
        Ok(())
    }

    /// Adds `delta` to one scalar, addressed by flat index within the array.
    pub fn perturb_flat(&mut self, name: &str, flat_ix: usize, delta: f64) -> Result<()> {
        let arr = self
            .entries
            .iter_mut()
            .find(|(n, _)| n == name)
            .map(|(_, a)| a)
            .ok_or_else(|| Error::invalid(format!("missing parameter {name}")))?;
        let slice = arr
            .as_slice_mut()
            .ok_or_else(|| Error::invalid("non-contiguous parameter array"))?;
        if flat_ix >= slice.len() {
            return Err(Error::invalid(format!(
                "flat index {flat_ix} out of range for {name}"
            )));
        }
        slice[flat_ix] += delta;
        Ok(())
    }

    /// Same names, same order, same shapes.
    pub fn check_compatible(&self, other: &ParameterSnapshot) -> Result<()> {
        if self.entries.len() != other.entries.len() {
            return Err(Error::invalid(format!(
                "snapshot length mismatch: {} vs {}",
                self.entries.len(),
                other.entries.len()
            )));
        }
        for ((na, aa), (nb, ab)) in self.entries.iter().zip(other.entries.iter()) {
            if na != nb {
                return Err(Error::invalid(format!(
                    "snapshot name mismatch: {na} vs {nb}"
                )));
            }
            if aa.shape() != ab.shape() {
                return Err(Error::ShapeMismatch {
                    context: "snapshot entry",
                    expected: format!("{na} {:?}", aa.shape()),
                    actual: format!("{nb} {:?}", ab.shape()),
                });
            }
        }
        Ok(())
    }

    /// All-zero snapshot with the same names and shapes.
    pub fn zeros_like(&self) -> Self {
        Self {
            entries: self
                .entries
                .iter()
                .map(|(n, a)| (n.clone(), ArrayD::zeros(a.raw_dim())))
                .collect(),
        }
    }

    /// `self += other`, entry-wise.
    pub fn add_assign(&mut self, other: &ParameterSnapshot) -> Result<()> {
        self.check_compatible(other)?;
        for ((_, a), (_, b)) in self.entries.iter_mut().zip(other.entries.iter()) {
            *a += b;
        }
        Ok(())
    }

    /// Euclidean norm of the entry-wise difference.
    pub fn l2_distance(&self, other: &ParameterSnapshot) -> Result<f64> {
        self.check_compatible(other)?;
        let mut sum = 0.0;
        for ((_, a), (_, b)) in self.entries.iter().zip(other.entries.iter()) {
            for (x, y) in a.iter().zip(b.iter()) {
                let d = x - y;
                sum += d * d;
            }
        }
        Ok(sum.sqrt())
    }

    pub(crate) fn entries_mut(&mut self) -> &mut [(String, ArrayD<f64>)] {
        &mut self.entries
    }

    pub(crate) fn entries(&self) -> &[(String, ArrayD<f64>)] {
        &self.entries
    }
}

/// EMA decay for the teacher parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmaConfig {
    pub decay: f64,
}

impl EmaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.decay) {
            return Err(Error::config("ema decay must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// `teacher <- decay * teacher + (1 - decay) * student`, entry-wise.
pub fn ema_update(
    teacher: &ParameterSnapshot,
    student: &ParameterSnapshot,
    cfg: &EmaConfig,
) -> Result<ParameterSnapshot> {
    cfg.validate()?;
    teacher.check_compatible(student)?;
    let decay = cfg.decay;
    let entries = teacher
        .entries
        .iter()
        .zip(student.entries.iter())
        .map(|((name, t), (_, s))| {
            let mut out = t.clone();
            if decay != 1.0 {
                out.zip_mut_with(s, |tv, &sv| *tv = decay * *tv + (1.0 - decay) * sv);
            }
            (name.clone(), out)
        })
        .collect();
    Ok(ParameterSnapshot { entries })
}

/// Everything `train_step` needs besides the data and the mutable state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerConfig {
    pub model: SegModelSpec,
    pub optimizer: AdamConfig,
    pub ema: EmaConfig,
    pub augment: AugmentationConfig,
    /// Apply photometric augmentation to source images too (never geometric).
    pub augment_source: bool,
    pub uncertainty: UncertaintyConfig,
    pub threshold: ThresholdSchedule,
    /// Initial consistency weight; 0 switches the consistency path off
    /// entirely (source-only training).
    pub lambda0: f64,
    pub classdrop: ClassDropConfig,
    pub use_uncertainty_mask: bool,
    pub use_classdrop_mask: bool,
    pub consistency_norm: ConsistencyNorm,
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.optimizer.validate()?;
        self.ema.validate()?;
        self.augment.validate()?;
        self.uncertainty.validate()?;
        self.threshold.validate()?;
        self.classdrop.validate()?;
        if !self.lambda0.is_finite() || self.lambda0 < 0.0 {
            return Err(Error::config("lambda0 must be finite and >= 0"));
        }
        if let Some(crop) = self.augment.crop {
            if crop != self.model.input_size {
                return Err(Error::config(format!(
                    "crop size {:?} must match model input size {:?}",
                    crop, self.model.input_size
                )));
            }
        }
        Ok(())
    }

    fn ramp(&self, t_max: u64) -> RampSchedule {
        RampSchedule {
            lambda0: self.lambda0,
            t_max,
        }
    }
}

/// Mutable training state: step counter, both parameter snapshots, the
/// optimizer moments, and the master seed all randomness derives from.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub step: u64,
    pub t_max: u64,
    pub student: ParameterSnapshot,
    pub teacher: ParameterSnapshot,
    pub optimizer: AdamState,
    pub seed: u64,
}

impl TrainState {
    /// Fresh state; the teacher starts as an exact copy of the student.
    pub fn new(student: ParameterSnapshot, t_max: u64, seed: u64) -> Result<Self> {
        if t_max < 1 {
            return Err(Error::config("t_max must be >= 1"));
        }
        let optimizer = AdamState::new(&student);
        let teacher = student.clone();
        Ok(Self {
            step: 0,
            t_max,
            student,
            teacher,
            optimizer,
            seed,
        })
    }
}

/// One training iteration.
///
/// Order of operations: supervised loss on the source batch; teacher
/// ensemble, entropy, threshold and masks on the target batch; student
/// forward on the perturbed target views; gated consistency loss; one Adam
/// step on the student; EMA update of the teacher; step increment. Any
/// failure leaves `state` untouched.
pub fn train_step(
    state: &mut TrainState,
    source_batch: &[(ImageTensor, LabelMap)],
    target_batch: &[ImageTensor],
    cfg: &TrainerConfig,
) -> Result<LossReport> {
    cfg.validate()?;
    if state.step >= state.t_max {
        return Err(Error::invalid(format!(
            "step {} has reached t_max {}",
            state.step, state.t_max
        )));
    }
    if cfg.threshold.t_max != state.t_max {
        return Err(Error::config(
            "threshold schedule t_max disagrees with the training state",
        ));
    }
    if source_batch.is_empty() {
        return Err(Error::EmptyInput("source batch"));
    }
    let consistency_active = cfg.lambda0 > 0.0;
    if consistency_active && target_batch.is_empty() {
        return Err(Error::EmptyInput("target batch"));
    }
    state.teacher.check_compatible(&state.student)?;

    let t = state.step;
    let seed = state.seed;
    let student_model = Model::new(&cfg.model, &state.student)?;
    let teacher_model = Model::new(&cfg.model, &state.teacher)?;

    // supervised path
    let src_scale = 1.0 / source_batch.len() as f64;
    let source_results: Vec<(f64, ParameterSnapshot)> = source_batch
        .par_iter()
        .enumerate()
        .map(|(i, (image, labels))| {
            let view;
            let image = if cfg.augment_source {
                let mut r = rng::stream(seed, "augment-source", &[t, i as u64]);
                view = augment::photometric_only(image, &cfg.augment, &mut r);
                &view
            } else {
                image
            };
            let (logits, trace) = student_model.forward_traced(image)?;
            let probs = normalize(&logits);
            let loss = supervised_ce(&probs, labels)?;
            let mut d_logits = ce_grad_wrt_logits(&probs, labels)?;
            d_logits.mapv_inplace(|g| g * src_scale);
            let grads = student_model.backward(&trace, &d_logits, false)?;
            Ok((loss, grads.params))
        })
        .collect::<Result<_>>()?;

    let mut seg_loss = 0.0;
    let mut grad_sum = state.student.zeros_like();
    for (loss, grads) in &source_results {
        seg_loss += loss * src_scale;
        grad_sum.add_assign(grads)?;
    }

    // consistency path
    let mut con_loss = 0.0;
    let mut lambda_con = 0.0;
    let mut masked_fraction = 0.0;
    if consistency_active {
        lambda_con = ramp_weight(t, &cfg.ramp(state.t_max))?;
        let tgt_scale = 1.0 / target_batch.len() as f64;

        struct TeacherSide {
            student_view: ImageTensor,
            target_pred: crate::segcore::ProbMap,
            entropy: Option<crate::uncertainty::EntropyMap>,
        }
        let ensemble_cfg = if cfg.use_uncertainty_mask {
            cfg.uncertainty
        } else {
            // one stochastic pass still serves as the consistency target;
            // seeds are drawn in member order, so member 0 matches the
            // full-ensemble run bit for bit
            UncertaintyConfig {
                num_passes: 1,
                ..cfg.uncertainty
            }
        };
        let teacher_sides: Vec<TeacherSide> = target_batch
            .par_iter()
            .enumerate()
            .map(|(j, image)| {
                let mut teacher_rng = rng::stream(seed, "augment-teacher", &[t, j as u64]);
                let (teacher_view, geometry) = augment(image, &cfg.augment, &mut teacher_rng)?;
                let mut student_rng = rng::stream(seed, "augment-student", &[t, j as u64]);
                let student_view =
                    augment_with_geometry(image, &cfg.augment, &mut student_rng, &geometry)?;

                let mut ens_rng = rng::stream(seed, "ensemble", &[t, j as u64]);
                let (mean, mut members) = stochastic_ensemble(
                    |img| teacher_model.forward(img),
                    &teacher_view,
                    &ensemble_cfg,
                    &mut ens_rng,
                )?;
                // the consistency target is one stochastic prediction, not
                // the ensemble mean; the mean only feeds the entropy path
                let target_pred = members.swap_remove(0);
                let entropy = cfg.use_uncertainty_mask.then(|| predictive_entropy(&mean));
                Ok(TeacherSide {
                    student_view,
                    target_pred,
                    entropy,
                })
            })
            .collect::<Result<_>>()?;

        // batch-level threshold from the pooled entropy bound
        let mut threshold = None;
        if cfg.use_uncertainty_mask {
            let entropies: Vec<crate::uncertainty::EntropyMap> = teacher_sides
                .iter()
                .map(|s| s.entropy.clone().expect("entropy present"))
                .collect();
            let z = z_sup_batch(&entropies, cfg.threshold.z_sup_mode, cfg.model.num_classes)?;
            threshold = Some(dynamic_threshold(t, &cfg.threshold, z)?);
        }

        let target_results: Vec<(f64, f64, ParameterSnapshot)> = teacher_sides
            .par_iter()
            .enumerate()
            .map(|(j, side)| {
                let (h, w) = cfg.model.input_size;
                let unc_mask = match (&side.entropy, threshold) {
                    (Some(entropy), Some(r)) => uncertainty_mask(entropy, r),
                    _ => BinaryMask::ones(h, w),
                };
                let (cd_mask, student_input) = if cfg.use_classdrop_mask {
                    let pseudo = argmax_labels(&side.target_pred);
                    let mut cd_rng = rng::stream(seed, "classdrop", &[t, j as u64]);
                    let outcome = generate_classdrop_mask(&pseudo, &cfg.classdrop, &mut cd_rng)?;
                    let masked =
                        apply_mask(&side.student_view, &outcome.mask, cfg.classdrop.fill_value)?;
                    (outcome.mask, masked)
                } else {
                    (BinaryMask::ones(h, w), side.student_view.clone())
                };
                let gate = combine_masks(&cd_mask, &unc_mask)?;

                let (logits, trace) = student_model.forward_traced(&student_input)?;
                let probs = normalize(&logits);
                let loss = masked_consistency_loss_with_norm(
                    &probs,
                    &side.target_pred,
                    &gate,
                    cfg.consistency_norm,
                )?;
                let mut d_logits = consistency_grad_wrt_student_logits(
                    &probs,
                    &side.target_pred,
                    &gate,
                    cfg.consistency_norm,
                )?;
                let scale = lambda_con * tgt_scale;
                d_logits.mapv_inplace(|g| g * scale);
                let grads = student_model.backward(&trace, &d_logits, false)?;
                Ok((loss, gate.fraction_ones(), grads.params))
            })
            .collect::<Result<_>>()?;

        for (loss, fraction, grads) in &target_results {
            con_loss += loss * tgt_scale;
            masked_fraction += fraction * tgt_scale;
            grad_sum.add_assign(grads)?;
        }
    }

    // mutation zone: all fallible work already succeeded, and the update is
    // computed on copies so an error cannot leave the state half-written
    let mut new_student = state.student.clone();
    let mut new_optimizer = state.optimizer.clone();
    new_optimizer.step(&mut new_student, &grad_sum, &cfg.optimizer)?;
    let new_teacher = ema_update(&state.teacher, &new_student, &cfg.ema)?;
    state.student = new_student;
    state.teacher = new_teacher;
    state.optimizer = new_optimizer;
    state.step += 1;

    Ok(LossReport::new(
        seg_loss,
        con_loss,
        lambda_con,
        masked_fraction,
    ))
}
