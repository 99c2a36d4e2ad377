//! Class-wise perturbation masks: keep a random subset of the classes
//! present in a pseudo-label map, drop everything else, and compose the
//! result with other gates.

use rand::distributions::{Distribution, Uniform};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_same_shape, Error, Result};
use crate::segcore::{BinaryMask, ImageTensor, LabelMap};

/// Ratio bounds for how many of the present classes survive, plus the fill
/// value painted over dropped pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassDropConfig {
    pub min_ratio: f64,
    pub max_ratio: f64,
    pub fill_value: f64,
}

impl Default for ClassDropConfig {
    fn default() -> Self {
        Self {
            min_ratio: 0.5,
            max_ratio: 0.9,
            fill_value: 0.0,
        }
    }
}

impl ClassDropConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.min_ratio && self.min_ratio <= self.max_ratio && self.max_ratio <= 1.0) {
            return Err(Error::config(format!(
                "class ratios must satisfy 0 <= min <= max <= 1, got [{}, {}]",
                self.min_ratio, self.max_ratio
            )));
        }
        if !(0.0..=1.0).contains(&self.fill_value) {
            return Err(Error::config("fill_value must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// A drawn perturbation: the mask, which classes survived, and the ratio
/// sampled for this draw.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassDropOutcome {
    pub mask: BinaryMask,
    pub kept_classes: Vec<u8>,
    pub ratio_drawn: f64,
}

/// Samples a class subset and builds the keep-mask over a pseudo-label map.
///
/// With `C` the classes present, `ratio ~ U(min, max)` selects
/// `clamp(round(ratio * |C|), 1, |C|)` classes uniformly without
/// replacement; mask pixels are 1 exactly where the pseudo-label is one of
/// the kept classes. Ignored pixels always get 0.
pub fn generate_classdrop_mask(
    pseudo: &LabelMap,
    cfg: &ClassDropConfig,
    rng: &mut impl Rng,
) -> Result<ClassDropOutcome> {
    cfg.validate()?;
    let present = pseudo.present_classes();
    if present.is_empty() {
        return Err(Error::EmptyInput("pseudo-label map has no non-ignored pixels"));
    }
    let ratio = Uniform::new_inclusive(cfg.min_ratio, cfg.max_ratio).sample(rng);
    let num_keep = ((ratio * present.len() as f64).round() as usize).clamp(1, present.len());

    let mut kept_classes: Vec<u8> = rand::seq::index::sample(rng, present.len(), num_keep)
        .into_iter()
        .map(|ix| present[ix])
        .collect();
    kept_classes.sort_unstable();

    let mut keep_table = [false; 256];
    for &c in &kept_classes {
        keep_table[c as usize] = true;
    }
    let ignore = pseudo.ignore_value();
    let mask = pseudo
        .labels()
        .mapv(|l| u8::from(l != ignore && keep_table[l as usize]));

    Ok(ClassDropOutcome {
        mask: BinaryMask::new(mask)?,
        kept_classes,
        ratio_drawn: ratio,
    })
}

/// Keeps pixels where the mask is 1 and paints `fill_value` over all
/// channels elsewhere.
pub fn apply_mask(image: &ImageTensor, mask: &BinaryMask, fill_value: f64) -> Result<ImageTensor> {
    check_same_shape(
        "apply_mask",
        &[image.height(), image.width()],
        &[mask.height(), mask.width()],
    )?;
    if !(0.0..=1.0).contains(&fill_value) {
        return Err(Error::invalid("fill_value must lie in [0, 1]"));
    }
    let mut pixels = image.pixels().clone();
    for (mut lane, &keep) in pixels.rows_mut().into_iter().zip(mask.mask().iter()) {
        if keep == 0 {
            lane.fill(fill_value);
        }
    }
    Ok(ImageTensor::from_clipped(pixels))
}

/// Element-wise product of two masks (logical AND).
pub fn combine_masks(m1: &BinaryMask, m2: &BinaryMask) -> Result<BinaryMask> {
    check_same_shape(
        "combine_masks",
        &[m1.height(), m1.width()],
        &[m2.height(), m2.width()],
    )?;
    Ok(BinaryMask::from_bits(m1.mask() * m2.mask()))
}
