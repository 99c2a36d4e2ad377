//! Training objectives: gated consistency between student and teacher
//! predictions, supervised cross-entropy on source labels, the consistency
//! ramp-up weight, and their composition into the total loss.
//!
//! Gradients with respect to student logits (i.e. through the softmax) are
//! provided here as well; the teacher side is always treated as a constant.

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::error::{check_same_shape, Error, Result};
use crate::segcore::{BinaryMask, LabelMap, ProbMap};

/// Probabilities are floored at this value inside logarithms.
pub const LOG_FLOOR: f64 = 1e-12;

/// Consistency ramp-up: `lambda_con(t) = lambda0 * exp(-5 (1 - t/t_max)^2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RampSchedule {
    pub lambda0: f64,
    pub t_max: u64,
}

impl RampSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda0 > 0.0) || !self.lambda0.is_finite() {
            return Err(Error::config("lambda0 must be positive"));
        }
        if self.t_max < 1 {
            return Err(Error::config("t_max must be >= 1"));
        }
        Ok(())
    }
}

/// How the gated squared difference is normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConsistencyNorm {
    /// Divide by H*W*C; gate-0 pixels stay in the denominator.
    AllPixels,
    /// Divide by (#gate-1 pixels)*C; an all-zero gate yields loss 0.
    GatedPixels,
}

/// Per-step loss summary; `total = seg_loss + lambda_con * con_loss`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub seg_loss: f64,
    pub con_loss: f64,
    pub lambda_con: f64,
    pub total: f64,
    /// Fraction of gate pixels equal to 1 (pixels participating in the
    /// consistency loss).
    pub masked_fraction: f64,
}

impl LossReport {
    pub fn new(seg_loss: f64, con_loss: f64, lambda_con: f64, masked_fraction: f64) -> Self {
        Self {
            seg_loss,
            con_loss,
            lambda_con,
            total: total_loss(seg_loss, con_loss, lambda_con),
            masked_fraction,
        }
    }
}

/// Gated mean squared difference between two probability maps:
/// `(1/(H*W*C)) * sum gate(h,w) * (student - teacher)^2`.
///
/// Gate-0 pixels contribute exactly zero to the sum while remaining in the
/// denominator, so the scale is resolution-independent.
pub fn masked_consistency_loss(
    student: &ProbMap,
    teacher: &ProbMap,
    gate: &BinaryMask,
) -> Result<f64> {
    masked_consistency_loss_with_norm(student, teacher, gate, ConsistencyNorm::AllPixels)
}

/// Same gated squared difference under a selectable normalization.
pub fn masked_consistency_loss_with_norm(
    student: &ProbMap,
    teacher: &ProbMap,
    gate: &BinaryMask,
    norm: ConsistencyNorm,
) -> Result<f64> {
    check_same_shape(
        "consistency predictions",
        student.probs().shape(),
        teacher.probs().shape(),
    )?;
    check_same_shape(
        "consistency gate",
        &[student.height(), student.width()],
        &[gate.height(), gate.width()],
    )?;
    let c = student.num_classes();
    let mut sum = 0.0;
    for ((s_lane, t_lane), &g) in student
        .probs()
        .rows()
        .into_iter()
        .zip(teacher.probs().rows())
        .zip(gate.mask().iter())
    {
        if g == 0 {
            continue;
        }
        for (&s, &t) in s_lane.iter().zip(t_lane.iter()) {
            let d = s - t;
            sum += d * d;
        }
    }
    let denom = match norm {
        ConsistencyNorm::AllPixels => (student.height() * student.width() * c) as f64,
        ConsistencyNorm::GatedPixels => {
            let ones = gate.count_ones();
            if ones == 0 {
                return Ok(0.0);
            }
            (ones * c) as f64
        }
    };
    Ok(sum / denom)
}

/// Gradient of [`masked_consistency_loss_with_norm`] with respect to the
/// student logits, i.e. through the softmax; the teacher is a constant.
pub fn consistency_grad_wrt_student_logits(
    student: &ProbMap,
    teacher: &ProbMap,
    gate: &BinaryMask,
    norm: ConsistencyNorm,
) -> Result<Array3<f64>> {
    check_same_shape(
        "consistency predictions",
        student.probs().shape(),
        teacher.probs().shape(),
    )?;
    check_same_shape(
        "consistency gate",
        &[student.height(), student.width()],
        &[gate.height(), gate.width()],
    )?;
    let (h, w, c) = student.probs().dim();
    let denom = match norm {
        ConsistencyNorm::AllPixels => (h * w * c) as f64,
        ConsistencyNorm::GatedPixels => {
            let ones = gate.count_ones();
            if ones == 0 {
                return Ok(Array3::zeros((h, w, c)));
            }
            (ones * c) as f64
        }
    };
    let scale = 2.0 / denom;
    let mut grad = Array3::zeros((h, w, c));
    for (((s_lane, t_lane), mut g_lane), &g) in student
        .probs()
        .rows()
        .into_iter()
        .zip(teacher.probs().rows())
        .zip(grad.rows_mut())
        .zip(gate.mask().iter())
    {
        if g == 0 {
            continue;
        }
        // dL/dp, then the softmax backward p .* (dL/dp - <dL/dp, p>)
        let mut dot = 0.0;
        for k in 0..c {
            let dp = scale * (s_lane[k] - t_lane[k]);
            g_lane[k] = dp;
            dot += dp * s_lane[k];
        }
        for k in 0..c {
            g_lane[k] = s_lane[k] * (g_lane[k] - dot);
        }
    }
    Ok(grad)
}

/// Mean over non-ignored pixels of `-ln p(true class)`, probabilities
/// floored at [`LOG_FLOOR`].
pub fn supervised_ce(student: &ProbMap, labels: &LabelMap) -> Result<f64> {
    check_same_shape(
        "cross-entropy inputs",
        &[student.height(), student.width()],
        &[labels.height(), labels.width()],
    )?;
    if labels.num_classes() != student.num_classes() {
        return Err(Error::invalid(format!(
            "class count mismatch: probs {} vs labels {}",
            student.num_classes(),
            labels.num_classes()
        )));
    }
    let ignore = labels.ignore_value();
    let mut sum = 0.0;
    let mut count = 0usize;
    for (lane, &y) in student.probs().rows().into_iter().zip(labels.labels().iter()) {
        if y == ignore {
            continue;
        }
        sum -= lane[y as usize].max(LOG_FLOOR).ln();
        count += 1;
    }
    if count == 0 {
        return Err(Error::EmptyInput("no non-ignored pixels for cross-entropy"));
    }
    Ok(sum / count as f64)
}

/// Gradient of [`supervised_ce`] with respect to the student logits:
/// `(p - onehot(y)) / #evaluated` at non-ignored pixels, zero elsewhere.
pub fn ce_grad_wrt_logits(student: &ProbMap, labels: &LabelMap) -> Result<Array3<f64>> {
    check_same_shape(
        "cross-entropy inputs",
        &[student.height(), student.width()],
        &[labels.height(), labels.width()],
    )?;
    let (h, w, c) = student.probs().dim();
    let ignore = labels.ignore_value();
    let count = labels.num_evaluated();
    if count == 0 {
        return Err(Error::EmptyInput("no non-ignored pixels for cross-entropy"));
    }
    let inv = 1.0 / count as f64;
    let mut grad = Array3::zeros((h, w, c));
    for ((lane, mut g_lane), &y) in student
        .probs()
        .rows()
        .into_iter()
        .zip(grad.rows_mut())
        .zip(labels.labels().iter())
    {
        if y == ignore {
            continue;
        }
        // flat region of the floored log has zero gradient
        if lane[y as usize] <= LOG_FLOOR {
            continue;
        }
        for k in 0..c {
            g_lane[k] = lane[k] * inv;
        }
        g_lane[y as usize] -= inv;
    }
    Ok(grad)
}

/// Time-dependent consistency weight `lambda0 * exp(-5 (1 - t/t_max)^2)`.
pub fn ramp_weight(t: u64, sched: &RampSchedule) -> Result<f64> {
    sched.validate()?;
    if t > sched.t_max {
        return Err(Error::invalid(format!(
            "step {t} exceeds t_max {}",
            sched.t_max
        )));
    }
    let progress = 1.0 - t as f64 / sched.t_max as f64;
    Ok(sched.lambda0 * (-5.0 * progress * progress).exp())
}

/// `L_total = L_seg + lambda_con * L_con`.
pub fn total_loss(seg: f64, con: f64, lambda_con: f64) -> f64 {
    seg + lambda_con * con
}
