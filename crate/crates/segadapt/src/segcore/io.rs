//! On-disk formats: PNG for images/labels/masks/entropy, CSV for metrics.
//!
//! Images are 8-bit RGB (channel values mapped linearly to `[0, 1]` on
//! load), label maps single-channel 8-bit, binary masks 1-bit. Entropy maps
//! are scaled to `[0, 255]` with the scale stored in a JSON sidecar.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::{Array2, Array3};

use crate::error::{Error, Result};
use crate::segcore::{BinaryMask, ConfusionMatrix, ImageTensor, IouReport, LabelMap};
use crate::uncertainty::EntropyMap;

fn png_encode_err(e: png::EncodingError) -> Error {
    Error::Png(e.to_string())
}

fn png_decode_err(e: png::DecodingError) -> Error {
    Error::Png(e.to_string())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    Ok(BufWriter::new(
        File::create(path).map_err(|e| Error::io(path, e))?,
    ))
}

fn write_png(
    path: &Path,
    width: u32,
    height: u32,
    color: png::ColorType,
    depth: png::BitDepth,
    data: &[u8],
) -> Result<()> {
    let w = create(path)?;
    let mut encoder = png::Encoder::new(w, width, height);
    encoder.set_color(color);
    encoder.set_depth(depth);
    let mut writer = encoder.write_header().map_err(png_encode_err)?;
    writer.write_image_data(data).map_err(png_encode_err)?;
    writer.finish().map_err(png_encode_err)?;
    Ok(())
}

struct DecodedPng {
    width: usize,
    height: usize,
    color: png::ColorType,
    depth: png::BitDepth,
    data: Vec<u8>,
}

fn read_png(path: &Path) -> Result<DecodedPng> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = png::Decoder::new(file);
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder.read_info().map_err(png_decode_err)?;
    let mut data = vec![0u8; reader.output_buffer_size()];
    let info = reader.next_frame(&mut data).map_err(png_decode_err)?;
    data.truncate(info.buffer_size());
    Ok(DecodedPng {
        width: info.width as usize,
        height: info.height as usize,
        color: info.color_type,
        depth: info.bit_depth,
        data,
    })
}

/// Writes an image as 8-bit RGB PNG; values are scaled by 255 and rounded.
pub fn save_image_png(image: &ImageTensor, path: impl AsRef<Path>) -> Result<()> {
    let (h, w) = (image.height(), image.width());
    let mut data = Vec::with_capacity(h * w * 3);
    for v in image.pixels().iter() {
        data.push((v * 255.0).round() as u8);
    }
    write_png(
        path.as_ref(),
        w as u32,
        h as u32,
        png::ColorType::Rgb,
        png::BitDepth::Eight,
        &data,
    )
}

/// Loads an 8-bit RGB PNG, mapping bytes linearly to `[0, 1]`.
pub fn load_image_png(path: impl AsRef<Path>) -> Result<ImageTensor> {
    let png = read_png(path.as_ref())?;
    if png.color != png::ColorType::Rgb || png.depth != png::BitDepth::Eight {
        return Err(Error::Png(format!(
            "{}: expected 8-bit RGB, got {:?}/{:?}",
            path.as_ref().display(),
            png.color,
            png.depth
        )));
    }
    let (h, w) = (png.height, png.width);
    let mut pixels = Array3::zeros((h, w, 3));
    for (slot, &byte) in pixels.iter_mut().zip(png.data.iter()) {
        *slot = byte as f64 / 255.0;
    }
    ImageTensor::new(pixels)
}

/// Writes a label map as single-channel 8-bit PNG.
pub fn save_label_png(labels: &LabelMap, path: impl AsRef<Path>) -> Result<()> {
    let data: Vec<u8> = labels.labels().iter().copied().collect();
    write_png(
        path.as_ref(),
        labels.width() as u32,
        labels.height() as u32,
        png::ColorType::Grayscale,
        png::BitDepth::Eight,
        &data,
    )
}

/// Loads a label map from single-channel 8-bit PNG.
pub fn load_label_png(
    path: impl AsRef<Path>,
    num_classes: usize,
    ignore_value: u8,
) -> Result<LabelMap> {
    let png = read_png(path.as_ref())?;
    if png.color != png::ColorType::Grayscale || png.depth != png::BitDepth::Eight {
        return Err(Error::Png(format!(
            "{}: expected 8-bit grayscale, got {:?}/{:?}",
            path.as_ref().display(),
            png.color,
            png.depth
        )));
    }
    let labels = Array2::from_shape_vec((png.height, png.width), png.data)
        .map_err(|e| Error::invalid(e.to_string()))?;
    LabelMap::new(labels, num_classes, ignore_value)
}

/// Writes a binary mask as 1-bit grayscale PNG.
pub fn save_mask_png(mask: &BinaryMask, path: impl AsRef<Path>) -> Result<()> {
    let (h, w) = (mask.height(), mask.width());
    let row_bytes = w.div_ceil(8);
    let mut data = vec![0u8; row_bytes * h];
    for (i, row) in mask.mask().rows().into_iter().enumerate() {
        for (j, &bit) in row.iter().enumerate() {
            if bit == 1 {
                data[i * row_bytes + j / 8] |= 0x80 >> (j % 8);
            }
        }
    }
    write_png(
        path.as_ref(),
        w as u32,
        h as u32,
        png::ColorType::Grayscale,
        png::BitDepth::One,
        &data,
    )
}

/// Loads a binary mask from 1-bit grayscale PNG.
pub fn load_mask_png(path: impl AsRef<Path>) -> Result<BinaryMask> {
    let png = read_png(path.as_ref())?;
    if png.color != png::ColorType::Grayscale || png.depth != png::BitDepth::One {
        return Err(Error::Png(format!(
            "{}: expected 1-bit grayscale, got {:?}/{:?}",
            path.as_ref().display(),
            png.color,
            png.depth
        )));
    }
    let (h, w) = (png.height, png.width);
    let row_bytes = w.div_ceil(8);
    let mut mask = Array2::zeros((h, w));
    for i in 0..h {
        for j in 0..w {
            let byte = png.data[i * row_bytes + j / 8];
            mask[(i, j)] = (byte >> (7 - j % 8)) & 1;
        }
    }
    BinaryMask::new(mask)
}

/// Writes an entropy map as 8-bit grayscale PNG, linearly scaled so the map
/// maximum lands on 255, plus a `<file>.json` sidecar recording the scale.
pub fn save_entropy_png(entropy: &EntropyMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let max = entropy
        .values()
        .iter()
        .cloned()
        .fold(0.0f64, f64::max);
    let data: Vec<u8> = entropy
        .values()
        .iter()
        .map(|&v| {
            if max > 0.0 {
                ((v / max) * 255.0).round() as u8
            } else {
                0
            }
        })
        .collect();
    write_png(
        path,
        entropy.width() as u32,
        entropy.height() as u32,
        png::ColorType::Grayscale,
        png::BitDepth::Eight,
        &data,
    )?;
    let sidecar = serde_json::json!({
        "max_entropy_nats": max,
        "encoding": "value = byte / 255 * max_entropy_nats",
    });
    let mut f = create(&sidecar_path(path))?;
    writeln!(f, "{}", serde_json::to_string_pretty(&sidecar).expect("json"))
        .map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn sidecar_path(png_path: &Path) -> std::path::PathBuf {
    let mut os = png_path.as_os_str().to_owned();
    os.push(".json");
    os.into()
}

/// Serializes a confusion matrix as CSV with a header row; rows are ground
/// truth, columns predictions.
pub fn confusion_to_csv(cm: &ConfusionMatrix) -> String {
    let c = cm.num_classes();
    let mut out = String::from("gt_class");
    for j in 0..c {
        out.push_str(&format!(",pred_{j}"));
    }
    out.push('\n');
    for i in 0..c {
        out.push_str(&i.to_string());
        for j in 0..c {
            out.push_str(&format!(",{}", cm.counts()[(i, j)]));
        }
        out.push('\n');
    }
    out
}

/// Serializes an IoU report as CSV; undefined classes get an empty field,
/// the final row carries the mean.
pub fn iou_report_to_csv(report: &IouReport) -> String {
    let mut out = String::from("class,iou\n");
    for (k, iou) in report.per_class.iter().enumerate() {
        match iou {
            Some(v) => out.push_str(&format!("{k},{v}\n")),
            None => out.push_str(&format!("{k},\n")),
        }
    }
    out.push_str(&format!("mean,{}\n", report.mean));
    out
}

/// Writes a string to a file, creating parent directories.
pub fn write_text(path: impl AsRef<Path>, text: &str) -> Result<()> {
    let mut f = create(path.as_ref())?;
    f.write_all(text.as_bytes())
        .map_err(|e| Error::io(path.as_ref(), e))?;
    Ok(())
}
