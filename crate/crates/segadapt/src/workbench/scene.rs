//! Procedural scenes: a styled background with occluding shapes (circle,
//! rectangle, triangle, stripe), rasterized together with a pixel-exact
//! label map, then pushed through a domain style (hue rotation, brightness
//! and contrast offsets, additive texture).

use ndarray::{Array2, Array3};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

use crate::color::{hsv_to_rgb, rotate_hue};
use crate::error::{Error, Result};
use crate::segcore::{ImageTensor, LabelMap, DEFAULT_IGNORE};

/// Scene sampling parameters. The class inventory is background (0) plus
/// `num_shape_classes` shape classes, so `C = num_shape_classes + 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    pub num_shape_classes: usize,
    pub shapes_per_image: (usize, usize),
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            num_shape_classes: 4,
            shapes_per_image: (3, 6),
            seed: 0,
        }
    }
}

impl SceneSpec {
    pub fn num_classes(&self) -> usize {
        self.num_shape_classes + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::config("scene size must be positive"));
        }
        if self.num_shape_classes < 1 || self.num_shape_classes > 8 {
            return Err(Error::config("num_shape_classes must lie in [1, 8]"));
        }
        let (lo, hi) = self.shapes_per_image;
        if lo < 1 || lo > hi {
            return Err(Error::config("shapes_per_image must satisfy 1 <= min <= max"));
        }
        Ok(())
    }
}

/// Photometric identity of a domain. Pixels are clipped to `[0, 1]` after
/// styling, so any offsets are admissible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainStyle {
    /// Hue rotation in turns.
    pub hue_rotation: f64,
    /// Additive brightness offset.
    pub brightness: f64,
    /// Offset to the unit contrast factor (applied about mid-gray).
    pub contrast: f64,
    /// Amplitude of the additive low-frequency texture.
    pub texture_amplitude: f64,
    /// Background colors drawn per scene.
    pub background_palette: Vec<[f64; 3]>,
}

impl DomainStyle {
    /// The untransformed rendering style.
    pub fn neutral() -> Self {
        Self {
            hue_rotation: 0.0,
            brightness: 0.0,
            contrast: 0.0,
            texture_amplitude: 0.0,
            background_palette: default_palette(),
        }
    }

    /// Default target-domain shift: visible but recoverable.
    pub fn shifted() -> Self {
        Self {
            hue_rotation: 0.15,
            brightness: -0.1,
            contrast: 0.0,
            texture_amplitude: 0.1,
            background_palette: default_palette(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for v in [
            self.hue_rotation,
            self.brightness,
            self.contrast,
            self.texture_amplitude,
        ] {
            if !v.is_finite() {
                return Err(Error::config("style parameters must be finite"));
            }
        }
        if self.background_palette.is_empty() {
            return Err(Error::config("background palette must not be empty"));
        }
        for c in &self.background_palette {
            if c.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::config("palette colors must lie in [0, 1]"));
            }
        }
        Ok(())
    }
}

fn default_palette() -> Vec<[f64; 3]> {
    vec![
        [0.32, 0.34, 0.38],
        [0.45, 0.42, 0.36],
        [0.28, 0.40, 0.33],
    ]
}

/// One placed shape: its geometry, class, and fill color.
#[derive(Debug, Clone, PartialEq)]
pub struct PlacedShape {
    pub class_id: u8,
    pub color: [f64; 3],
    pub geometry: ShapeGeometry,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ShapeGeometry {
    Circle {
        cy: f64,
        cx: f64,
        radius: f64,
    },
    Rectangle {
        top: f64,
        left: f64,
        bottom: f64,
        right: f64,
    },
    Triangle {
        vertices: [(f64, f64); 3],
    },
    Stripe {
        cy: f64,
        cx: f64,
        angle: f64,
        thickness: f64,
    },
}

impl ShapeGeometry {
    /// Membership test at a pixel center.
    pub fn contains(&self, y: f64, x: f64) -> bool {
        match *self {
            ShapeGeometry::Circle { cy, cx, radius } => {
                let dy = y - cy;
                let dx = x - cx;
                dy * dy + dx * dx <= radius * radius
            }
            ShapeGeometry::Rectangle {
                top,
                left,
                bottom,
                right,
            } => y >= top && y <= bottom && x >= left && x <= right,
            ShapeGeometry::Triangle { vertices } => {
                let [a, b, c] = vertices;
                let sign = |p: (f64, f64), q: (f64, f64), r: (f64, f64)| {
                    (p.0 - r.0) * (q.1 - r.1) - (q.0 - r.0) * (p.1 - r.1)
                };
                let d1 = sign((y, x), a, b);
                let d2 = sign((y, x), b, c);
                let d3 = sign((y, x), c, a);
                let has_neg = d1 < 0.0 || d2 < 0.0 || d3 < 0.0;
                let has_pos = d1 > 0.0 || d2 > 0.0 || d3 > 0.0;
                !(has_neg && has_pos)
            }
            ShapeGeometry::Stripe {
                cy,
                cx,
                angle,
                thickness,
            } => {
                let n = (angle.cos(), angle.sin());
                let d = (y - cy) * n.0 + (x - cx) * n.1;
                d.abs() <= thickness / 2.0
            }
        }
    }
}

/// A sampled scene before styling.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub background: [f64; 3],
    pub shapes: Vec<PlacedShape>,
}

/// Base fill color for a shape class: hues spread around the circle with
/// alternating saturation/value, so classes whose hues become ambiguous
/// under a hue-rotating domain shift stay separable.
pub fn class_base_color(class_id: u8, num_shape_classes: usize) -> [f64; 3] {
    let ix = class_id as usize - 1;
    let hue = ix as f64 / num_shape_classes as f64;
    let (s, v) = if ix % 2 == 0 { (0.9, 0.72) } else { (0.45, 0.95) };
    let (r, g, b) = hsv_to_rgb(hue, s, v);
    [r, g, b]
}

/// Samples shape placements and colors for one image.
pub fn sample_scene(
    spec: &SceneSpec,
    palette: &[[f64; 3]],
    rng: &mut impl Rng,
) -> Result<Scene> {
    spec.validate()?;
    let h = spec.height as f64;
    let w = spec.width as f64;
    let min_dim = h.min(w);

    let background = palette[rng.gen_range(0..palette.len())];

    let (lo, hi) = spec.shapes_per_image;
    let count = rng.gen_range(lo..=hi);
    let mut shapes = Vec::with_capacity(count);
    for _ in 0..count {
        let class_id = rng.gen_range(1..=spec.num_shape_classes) as u8;
        let base = class_base_color(class_id, spec.num_shape_classes);
        let jitter = rng.gen_range(-0.08..0.08);
        let color = [
            (base[0] + jitter).clamp(0.0, 1.0),
            (base[1] + jitter).clamp(0.0, 1.0),
            (base[2] + jitter).clamp(0.0, 1.0),
        ];
        // four geometry families, cycled when there are more classes
        let geometry = match (class_id as usize - 1) % 4 {
            0 => ShapeGeometry::Circle {
                cy: rng.gen_range(0.1 * h..0.9 * h),
                cx: rng.gen_range(0.1 * w..0.9 * w),
                radius: rng.gen_range(0.08 * min_dim..0.22 * min_dim),
            },
            1 => {
                let cy = rng.gen_range(0.1 * h..0.9 * h);
                let cx = rng.gen_range(0.1 * w..0.9 * w);
                let hh = rng.gen_range(0.06 * h..0.18 * h);
                let hw = rng.gen_range(0.06 * w..0.18 * w);
                ShapeGeometry::Rectangle {
                    top: cy - hh,
                    left: cx - hw,
                    bottom: cy + hh,
                    right: cx + hw,
                }
            }
            2 => {
                let cy = rng.gen_range(0.15 * h..0.85 * h);
                let cx = rng.gen_range(0.15 * w..0.85 * w);
                let size = rng.gen_range(0.1 * min_dim..0.25 * min_dim);
                let mut vertices = [(0.0, 0.0); 3];
                for v in &mut vertices {
                    let angle = rng.gen_range(0.0..TAU);
                    let dist = rng.gen_range(0.5 * size..size);
                    *v = (cy + dist * angle.sin(), cx + dist * angle.cos());
                }
                ShapeGeometry::Triangle { vertices }
            }
            _ => ShapeGeometry::Stripe {
                cy: rng.gen_range(0.0..h),
                cx: rng.gen_range(0.0..w),
                angle: rng.gen_range(0.0..TAU),
                thickness: rng.gen_range(0.04 * min_dim..0.12 * min_dim),
            },
        };
        shapes.push(PlacedShape {
            class_id,
            color,
            geometry,
        });
    }
    Ok(Scene { background, shapes })
}

/// Rasterizes a scene (later shapes occlude earlier ones) and applies the
/// style. Labels are untouched by styling.
pub fn render_scene(
    spec: &SceneSpec,
    scene: &Scene,
    style: &DomainStyle,
    rng: &mut impl Rng,
) -> Result<(ImageTensor, LabelMap)> {
    spec.validate()?;
    style.validate()?;
    let (h, w) = (spec.height, spec.width);
    let mut pixels = Array3::zeros((h, w, 3));
    let mut labels = Array2::zeros((h, w));

    for i in 0..h {
        for j in 0..w {
            let (y, x) = (i as f64 + 0.5, j as f64 + 0.5);
            let mut color = scene.background;
            let mut label = 0u8;
            for shape in &scene.shapes {
                if shape.geometry.contains(y, x) {
                    color = shape.color;
                    label = shape.class_id;
                }
            }
            pixels[(i, j, 0)] = color[0];
            pixels[(i, j, 1)] = color[1];
            pixels[(i, j, 2)] = color[2];
            labels[(i, j)] = label;
        }
    }

    apply_style(&mut pixels, style, rng);
    let image = ImageTensor::new(pixels)?;
    let labels = LabelMap::new(labels, spec.num_classes(), DEFAULT_IGNORE)?;
    Ok((image, labels))
}

fn apply_style(pixels: &mut Array3<f64>, style: &DomainStyle, rng: &mut impl Rng) {
    let (h, w, _) = pixels.dim();

    // texture parameters are drawn even at zero amplitude so that toggling
    // the amplitude alone compares identical scenes
    let freq_scale = TAU / h.max(w) as f64;
    let waves: Vec<(f64, f64, f64)> = (0..2)
        .map(|_| {
            (
                rng.gen_range(1.0..4.0) * freq_scale,
                rng.gen_range(1.0..4.0) * freq_scale,
                rng.gen_range(0.0..TAU),
            )
        })
        .collect();

    let contrast = 1.0 + style.contrast;
    for i in 0..h {
        for j in 0..w {
            let texture: f64 = waves
                .iter()
                .map(|&(fy, fx, phase)| (fy * i as f64 + fx * j as f64 + phase).sin())
                .sum::<f64>()
                / 2.0;
            let bump = style.texture_amplitude * texture;
            let (mut r, mut g, mut b) = (pixels[(i, j, 0)], pixels[(i, j, 1)], pixels[(i, j, 2)]);
            if style.hue_rotation != 0.0 {
                (r, g, b) = rotate_hue(r, g, b, style.hue_rotation);
            }
            let adjust = |v: f64| ((v - 0.5) * contrast + 0.5 + style.brightness + bump).clamp(0.0, 1.0);
            pixels[(i, j, 0)] = adjust(r);
            pixels[(i, j, 1)] = adjust(g);
            pixels[(i, j, 2)] = adjust(b);
        }
    }
}
