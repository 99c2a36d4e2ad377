//! Checkpoints: a directory of flat binary parameter arrays (little-endian
//! f32 with a shape header) for the student, teacher, and both optimizer
//! moments, plus a `manifest.json` carrying the step counter, config
//! digest, RNG seed, and a metric summary.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use crate::adapt::{AdamState, ParameterSnapshot, TrainState};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub step: u64,
    pub t_max: u64,
    pub config_digest: String,
    /// Master seed; per-step randomness is re-derived from it, so the seed
    /// is the entire RNG state.
    pub rng_seed: u64,
    pub adam_steps: u64,
    /// Parameter names in snapshot order.
    pub parameters: Vec<String>,
    /// Free-form metric summary at save time.
    pub metrics: serde_json::Value,
}

/// Writes one array as `[ndim: u32][dims: u32 * ndim][data: f32 * n]`,
/// all little-endian.
fn write_array(path: &Path, array: &ArrayD<f64>) -> Result<()> {
    let mut f = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    let shape = array.shape();
    f.write_all(&(shape.len() as u32).to_le_bytes())
        .map_err(|e| Error::io(path, e))?;
    for &d in shape {
        f.write_all(&(d as u32).to_le_bytes())
            .map_err(|e| Error::io(path, e))?;
    }
    for &v in array.iter() {
        f.write_all(&(v as f32).to_le_bytes())
            .map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

fn read_array(path: &Path) -> Result<ArrayD<f64>> {
    let mut f = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
    let mut u32buf = [0u8; 4];
    f.read_exact(&mut u32buf).map_err(|e| Error::io(path, e))?;
    let ndim = u32::from_le_bytes(u32buf) as usize;
    if ndim > 8 {
        return Err(Error::invalid(format!("implausible ndim {ndim} in {path:?}")));
    }
    let mut shape = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        f.read_exact(&mut u32buf).map_err(|e| Error::io(path, e))?;
        shape.push(u32::from_le_bytes(u32buf) as usize);
    }
    let len: usize = shape.iter().product();
    let mut data = Vec::with_capacity(len);
    let mut f32buf = [0u8; 4];
    for _ in 0..len {
        f.read_exact(&mut f32buf).map_err(|e| Error::io(path, e))?;
        data.push(f32::from_le_bytes(f32buf) as f64);
    }
    ArrayD::from_shape_vec(IxDyn(&shape), data).map_err(|e| Error::invalid(e.to_string()))
}

fn save_snapshot(dir: &Path, snapshot: &ParameterSnapshot) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (name, array) in snapshot.iter() {
        write_array(&dir.join(format!("{name}.bin")), array)?;
    }
    Ok(())
}

fn load_snapshot(dir: &Path, names: &[String]) -> Result<ParameterSnapshot> {
    let mut entries = Vec::with_capacity(names.len());
    for name in names {
        let array = read_array(&dir.join(format!("{name}.bin")))?;
        entries.push((name.clone(), array));
    }
    ParameterSnapshot::new(entries)
}

/// Saves the full training state under `dir`.
pub fn save_checkpoint(
    dir: impl AsRef<Path>,
    state: &TrainState,
    config_digest: &str,
    metrics: serde_json::Value,
) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    save_snapshot(&dir.join("student"), &state.student)?;
    save_snapshot(&dir.join("teacher"), &state.teacher)?;
    save_snapshot(&dir.join("optim_m"), &state.optimizer.m)?;
    save_snapshot(&dir.join("optim_v"), &state.optimizer.v)?;
    let manifest = CheckpointManifest {
        step: state.step,
        t_max: state.t_max,
        config_digest: config_digest.to_string(),
        rng_seed: state.seed,
        adam_steps: state.optimizer.steps,
        parameters: state.student.iter().map(|(n, _)| n.to_string()).collect(),
        metrics,
    };
    let path = dir.join("manifest.json");
    let mut f = BufWriter::new(File::create(&path).map_err(|e| Error::io(&path, e))?);
    serde_json::to_writer_pretty(&mut f, &manifest)
        .map_err(|e| Error::invalid(format!("manifest serialization: {e}")))?;
    f.write_all(b"\n").map_err(|e| Error::io(&path, e))?;
    Ok(())
}

pub fn load_manifest(dir: impl AsRef<Path>) -> Result<CheckpointManifest> {
    let path = dir.as_ref().join("manifest.json");
    let f = File::open(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_reader(BufReader::new(f))
        .map_err(|e| Error::invalid(format!("manifest parse: {e}")))
}

/// Restores a training state. `expected_digest`, when given, must match the
/// digest stored at save time; a differing configuration is refused.
pub fn load_checkpoint(
    dir: impl AsRef<Path>,
    expected_digest: Option<&str>,
) -> Result<(TrainState, CheckpointManifest)> {
    let dir = dir.as_ref();
    let manifest = load_manifest(dir)?;
    if let Some(expected) = expected_digest {
        if manifest.config_digest != expected {
            return Err(Error::CheckpointMismatch(format!(
                "checkpoint was written with config digest {} but the current config digest is {expected}",
                manifest.config_digest
            )));
        }
    }
    let student = load_snapshot(&dir.join("student"), &manifest.parameters)?;
    let teacher = load_snapshot(&dir.join("teacher"), &manifest.parameters)?;
    let m = load_snapshot(&dir.join("optim_m"), &manifest.parameters)?;
    let v = load_snapshot(&dir.join("optim_v"), &manifest.parameters)?;
    teacher.check_compatible(&student)?;
    let state = TrainState {
        step: manifest.step,
        t_max: manifest.t_max,
        student,
        teacher,
        optimizer: AdamState {
            m,
            v,
            steps: manifest.adam_steps,
        },
        seed: manifest.rng_seed,
    };
    Ok((state, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapt::SegModelSpec;

    fn toy_state() -> TrainState {
        let spec = SegModelSpec {
            num_classes: 3,
            widths: [2, 3, 4],
            input_size: (8, 8),
            init_seed: 5,
        };
        let params = spec.init_parameters().unwrap();
        TrainState::new(params, 100, 77).unwrap()
    }

    #[test]
    fn roundtrip_preserves_structure_and_f32_values() {
        let dir = tempfile::tempdir().unwrap();
        let state = toy_state();
        save_checkpoint(dir.path(), &state, "digest-abc", serde_json::json!({"miou": 0.5}))
            .unwrap();
        let (loaded, manifest) = load_checkpoint(dir.path(), Some("digest-abc")).unwrap();
        assert_eq!(manifest.step, 0);
        assert_eq!(manifest.rng_seed, 77);
        assert_eq!(loaded.t_max, 100);
        loaded.student.check_compatible(&state.student).unwrap();
        // arrays round-trip through f32
        for ((_, a), (_, b)) in state
            .student
            .entries()
            .iter()
            .zip(loaded.student.entries().iter())
        {
            for (x, y) in a.iter().zip(b.iter()) {
                assert!((x - y).abs() <= (*x as f32).abs() as f64 * 1e-6 + 1e-9);
            }
        }
    }

    #[test]
    fn digest_mismatch_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        let state = toy_state();
        save_checkpoint(dir.path(), &state, "digest-abc", serde_json::Value::Null).unwrap();
        let err = load_checkpoint(dir.path(), Some("digest-xyz")).unwrap_err();
        assert!(matches!(err, Error::CheckpointMismatch(_)));
        assert_eq!(err.exit_code(), 5);
    }

    #[test]
    fn array_header_is_little_endian_f32() {
        let dir = tempfile::tempdir().unwrap();
        let state = toy_state();
        save_checkpoint(dir.path(), &state, "d", serde_json::Value::Null).unwrap();
        let bytes = std::fs::read(dir.path().join("student/enc1.weight.bin")).unwrap();
        let ndim = u32::from_le_bytes(bytes[0..4].try_into().unwrap());
        assert_eq!(ndim, 4);
        let dims: Vec<u32> = (0..4)
            .map(|i| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()))
            .collect();
        assert_eq!(dims, vec![2, 3, 3, 3]);
        let expected_len = 4 + 4 * 4 + 4 * (2 * 3 * 3 * 3);
        assert_eq!(bytes.len(), expected_len);
    }
}
