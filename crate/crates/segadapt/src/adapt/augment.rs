//! Input augmentation: random crop with a shareable geometry record, color
//! jitter, and Gaussian pixel noise. Photometric draws are independent per
//! call; geometry is emitted so a paired view can be cropped identically.

use ndarray::{Array2, Array3, s};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::color::rotate_hue;
use crate::error::{Error, Result};
use crate::segcore::{ImageTensor, LabelMap};

/// Strengths of the photometric ops (0 disables) and the optional crop size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentationConfig {
    /// Std. dev. of additive Gaussian pixel noise.
    pub noise_sigma: f64,
    /// Brightness offset drawn from `U(-b, b)`.
    pub jitter_brightness: f64,
    /// Contrast factor drawn from `U(1-c, 1+c)` about mid-gray.
    pub jitter_contrast: f64,
    /// Hue rotation drawn from `U(-h, h)`, in turns.
    pub jitter_hue: f64,
    /// Random-crop output size; `None` leaves geometry untouched.
    pub crop: Option<(usize, usize)>,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        // jitter ranges sized to span the default workbench domain shift,
        // so the two branch views can bridge the style gap
        Self {
            noise_sigma: 0.05,
            jitter_brightness: 0.15,
            jitter_contrast: 0.1,
            jitter_hue: 0.15,
            crop: None,
        }
    }
}

impl AugmentationConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("noise_sigma", self.noise_sigma),
            ("jitter_brightness", self.jitter_brightness),
            ("jitter_contrast", self.jitter_contrast),
            ("jitter_hue", self.jitter_hue),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::config(format!("{name} must be finite and >= 0")));
            }
        }
        if let Some((h, w)) = self.crop {
            if h == 0 || w == 0 {
                return Err(Error::config("crop size must be positive"));
            }
        }
        Ok(())
    }

    /// The identity transform: no noise, no jitter, no crop.
    pub fn disabled() -> Self {
        Self {
            noise_sigma: 0.0,
            jitter_brightness: 0.0,
            jitter_contrast: 0.0,
            jitter_hue: 0.0,
            crop: None,
        }
    }
}

/// Where a view was cut from its source frame; paired views reuse it so
/// their pixels stay aligned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropGeometry {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

impl CropGeometry {
    pub fn full_frame(height: usize, width: usize) -> Self {
        Self {
            top: 0,
            left: 0,
            height,
            width,
        }
    }

    /// Maps cropped-view coordinates back to source coordinates.
    pub fn to_source(&self, row: usize, col: usize) -> (usize, usize) {
        (self.top + row, self.left + col)
    }

    pub fn is_identity_for(&self, height: usize, width: usize) -> bool {
        self.top == 0 && self.left == 0 && self.height == height && self.width == width
    }

    pub fn apply_to_image(&self, image: &ImageTensor) -> Result<ImageTensor> {
        self.check_fits(image.height(), image.width())?;
        let view = image.pixels().slice(s![
            self.top..self.top + self.height,
            self.left..self.left + self.width,
            ..
        ]);
        let mut out = Array3::zeros((self.height, self.width, 3));
        out.assign(&view);
        Ok(ImageTensor::from_clipped(out))
    }

    pub fn apply_to_labels(&self, labels: &LabelMap) -> Result<LabelMap> {
        self.check_fits(labels.height(), labels.width())?;
        let view = labels.labels().slice(s![
            self.top..self.top + self.height,
            self.left..self.left + self.width
        ]);
        let mut out = Array2::zeros((self.height, self.width));
        out.assign(&view);
        LabelMap::new(out, labels.num_classes(), labels.ignore_value())
    }

    fn check_fits(&self, height: usize, width: usize) -> Result<()> {
        if self.top + self.height > height || self.left + self.width > width {
            return Err(Error::invalid(format!(
                "crop {}x{}+{}+{} exceeds {}x{} frame",
                self.height, self.width, self.top, self.left, height, width
            )));
        }
        Ok(())
    }
}

/// Augments one view: draws a crop (if configured), then applies color
/// jitter and Gaussian noise, clipping back to `[0, 1]`. Returns the view
/// and the geometry so a paired view can share the crop.
pub fn augment(
    image: &ImageTensor,
    cfg: &AugmentationConfig,
    rng: &mut impl Rng,
) -> Result<(ImageTensor, CropGeometry)> {
    cfg.validate()?;
    let geometry = draw_geometry(image, cfg, rng)?;
    let view = augment_with_geometry(image, cfg, rng, &geometry)?;
    Ok((view, geometry))
}

/// Augments a paired view: the crop comes from `geometry`, photometric
/// draws come from this call's own `rng`.
pub fn augment_with_geometry(
    image: &ImageTensor,
    cfg: &AugmentationConfig,
    rng: &mut impl Rng,
    geometry: &CropGeometry,
) -> Result<ImageTensor> {
    cfg.validate()?;
    let cropped = if geometry.is_identity_for(image.height(), image.width()) {
        image.clone()
    } else {
        geometry.apply_to_image(image)?
    };
    Ok(photometric_only(&cropped, cfg, rng))
}

/// Color jitter then Gaussian noise, no geometry. Draw order: brightness,
/// contrast, hue, then per-pixel noise.
pub fn photometric_only(
    image: &ImageTensor,
    cfg: &AugmentationConfig,
    rng: &mut impl Rng,
) -> ImageTensor {
    let mut pixels = image.pixels().clone();

    let brightness = if cfg.jitter_brightness > 0.0 {
        rng.gen_range(-cfg.jitter_brightness..=cfg.jitter_brightness)
    } else {
        0.0
    };
    let contrast = if cfg.jitter_contrast > 0.0 {
        rng.gen_range(1.0 - cfg.jitter_contrast..=1.0 + cfg.jitter_contrast)
    } else {
        1.0
    };
    let hue = if cfg.jitter_hue > 0.0 {
        rng.gen_range(-cfg.jitter_hue..=cfg.jitter_hue)
    } else {
        0.0
    };

    if brightness != 0.0 || contrast != 1.0 || hue != 0.0 {
        for mut lane in pixels.rows_mut() {
            let (mut r, mut g, mut b) = (lane[0], lane[1], lane[2]);
            if hue != 0.0 {
                (r, g, b) = rotate_hue(r, g, b, hue);
            }
            lane[0] = (r - 0.5) * contrast + 0.5 + brightness;
            lane[1] = (g - 0.5) * contrast + 0.5 + brightness;
            lane[2] = (b - 0.5) * contrast + 0.5 + brightness;
        }
    }

    if cfg.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, cfg.noise_sigma).expect("validated sigma");
        for v in pixels.iter_mut() {
            *v += normal.sample(rng);
        }
    }

    pixels.mapv_inplace(|v| v.clamp(0.0, 1.0));
    ImageTensor::from_clipped(pixels)
}

fn draw_geometry(
    image: &ImageTensor,
    cfg: &AugmentationConfig,
    rng: &mut impl Rng,
) -> Result<CropGeometry> {
    let (h, w) = (image.height(), image.width());
    match cfg.crop {
        None => Ok(CropGeometry::full_frame(h, w)),
        Some((ch, cw)) => {
            if ch > h || cw > w {
                return Err(Error::invalid(format!(
                    "crop {ch}x{cw} larger than image {h}x{w}"
                )));
            }
            let top = if ch == h { 0 } else { rng.gen_range(0..=h - ch) };
            let left = if cw == w { 0 } else { rng.gen_range(0..=w - cw) };
            Ok(CropGeometry {
                top,
                left,
                height: ch,
                width: cw,
            })
        }
    }
}
