//! Domain-pair dataset generation and loading. Scenes are sampled
//! independently per split from the same generative process; the source
//! split is rendered with the source style, both target splits with the
//! target style. Target-train labels are never written to disk, so the
//! training interface cannot read them.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::segcore::io::{load_image_png, load_label_png, save_image_png, save_label_png};
use crate::segcore::{ImageTensor, LabelMap, DEFAULT_IGNORE};
use crate::workbench::scene::{render_scene, sample_scene, DomainStyle, SceneSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub source: usize,
    pub target_train: usize,
    pub target_eval: usize,
}

impl Default for SplitCounts {
    fn default() -> Self {
        Self {
            source: 200,
            target_train: 200,
            target_eval: 64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitKind {
    Source,
    TargetTrain,
    TargetEval,
}

impl SplitKind {
    pub fn dir_name(&self) -> &'static str {
        match self {
            SplitKind::Source => "source",
            SplitKind::TargetTrain => "target_train",
            SplitKind::TargetEval => "target_eval",
        }
    }

    fn has_labels(&self) -> bool {
        !matches!(self, SplitKind::TargetTrain)
    }
}

/// What was generated; stored as `manifest.json` at the dataset root.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub scene: SceneSpec,
    pub source_style: DomainStyle,
    pub target_style: DomainStyle,
    pub counts: SplitCounts,
    pub num_classes: usize,
    pub ignore_value: u8,
}

/// Renders and writes a full domain-pair dataset under `out_dir`.
/// Deterministic in `spec.seed`: rerunning produces byte-identical files.
pub fn generate_dataset(
    spec: &SceneSpec,
    source_style: &DomainStyle,
    target_style: &DomainStyle,
    counts: &SplitCounts,
    out_dir: impl AsRef<Path>,
) -> Result<DatasetManifest> {
    spec.validate()?;
    source_style.validate()?;
    target_style.validate()?;
    if counts.source < 1 || counts.target_train < 1 || counts.target_eval < 1 {
        return Err(Error::config("every split needs at least one image"));
    }
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    for (split, style, count) in [
        (SplitKind::Source, source_style, counts.source),
        (SplitKind::TargetTrain, target_style, counts.target_train),
        (SplitKind::TargetEval, target_style, counts.target_eval),
    ] {
        let split_dir = out_dir.join(split.dir_name());
        std::fs::create_dir_all(split_dir.join("images"))
            .map_err(|e| Error::io(&split_dir, e))?;
        if split.has_labels() {
            std::fs::create_dir_all(split_dir.join("labels"))
                .map_err(|e| Error::io(&split_dir, e))?;
        }
        (0..count)
            .into_par_iter()
            .map(|ix| {
                let mut scene_rng =
                    rng::stream(spec.seed, "scene", &[split_tag(split), ix as u64]);
                let scene = sample_scene(spec, &style.background_palette, &mut scene_rng)?;
                let mut style_rng =
                    rng::stream(spec.seed, "style", &[split_tag(split), ix as u64]);
                let (image, labels) = render_scene(spec, &scene, style, &mut style_rng)?;
                save_image_png(&image, split_dir.join(format!("images/{ix:05}.png")))?;
                if split.has_labels() {
                    save_label_png(&labels, split_dir.join(format!("labels/{ix:05}.png")))?;
                }
                Ok(())
            })
            .collect::<Result<Vec<()>>>()?;
    }

    let manifest = DatasetManifest {
        scene: *spec,
        source_style: source_style.clone(),
        target_style: target_style.clone(),
        counts: *counts,
        num_classes: spec.num_classes(),
        ignore_value: DEFAULT_IGNORE,
    };
    let path = out_dir.join("manifest.json");
    let mut f = BufWriter::new(File::create(&path).map_err(|e| Error::io(&path, e))?);
    serde_json::to_writer_pretty(&mut f, &manifest)
        .map_err(|e| Error::invalid(format!("manifest serialization: {e}")))?;
    f.write_all(b"\n").map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

fn split_tag(split: SplitKind) -> u64 {
    match split {
        SplitKind::Source => 0,
        SplitKind::TargetTrain => 1,
        SplitKind::TargetEval => 2,
    }
}

/// An in-memory domain-pair dataset. Target-train labels do not exist on
/// disk and have no accessor here.
#[derive(Debug, Clone)]
pub struct DomainPairDataset {
    root: PathBuf,
    manifest: DatasetManifest,
    source: Vec<(ImageTensor, LabelMap)>,
    target_train: Vec<ImageTensor>,
    target_eval: Vec<(ImageTensor, LabelMap)>,
}

impl DomainPairDataset {
    pub fn load(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        let manifest_path = root.join("manifest.json");
        let f = File::open(&manifest_path).map_err(|e| {
            Error::Dataset(format!("cannot open {}: {e}", manifest_path.display()))
        })?;
        let manifest: DatasetManifest = serde_json::from_reader(BufReader::new(f))
            .map_err(|e| Error::Dataset(format!("manifest parse: {e}")))?;

        let c = manifest.num_classes;
        let ignore = manifest.ignore_value;
        let source = load_labeled_split(&root, SplitKind::Source, manifest.counts.source, c, ignore)?;
        let target_eval = load_labeled_split(
            &root,
            SplitKind::TargetEval,
            manifest.counts.target_eval,
            c,
            ignore,
        )?;
        let tt_dir = root.join(SplitKind::TargetTrain.dir_name());
        let target_train = (0..manifest.counts.target_train)
            .into_par_iter()
            .map(|ix| load_image_png(tt_dir.join(format!("images/{ix:05}.png"))))
            .collect::<Result<Vec<_>>>()?;

        Ok(Self {
            root,
            manifest,
            source,
            target_train,
            target_eval,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest(&self) -> &DatasetManifest {
        &self.manifest
    }

    pub fn num_classes(&self) -> usize {
        self.manifest.num_classes
    }

    pub fn source(&self) -> &[(ImageTensor, LabelMap)] {
        &self.source
    }

    /// Unlabeled by construction: the trainer can only see images.
    pub fn target_train(&self) -> &[ImageTensor] {
        &self.target_train
    }

    pub fn target_eval(&self) -> &[(ImageTensor, LabelMap)] {
        &self.target_eval
    }

    /// Labeled views for evaluation, addressed by split. Target-train has no
    /// labels and is rejected.
    pub fn labeled_split(&self, split: SplitKind) -> Result<&[(ImageTensor, LabelMap)]> {
        match split {
            SplitKind::Source => Ok(&self.source),
            SplitKind::TargetEval => Ok(&self.target_eval),
            SplitKind::TargetTrain => Err(Error::Dataset(
                "target-train labels are not available through the training interface".into(),
            )),
        }
    }

    /// Mean pixel value of the target-train images (for dataset-mean fill).
    pub fn target_train_mean(&self) -> f64 {
        let mut sum = 0.0;
        let mut n = 0.0;
        for img in &self.target_train {
            sum += img.pixels().sum();
            n += img.pixels().len() as f64;
        }
        if n > 0.0 {
            sum / n
        } else {
            0.0
        }
    }
}

fn load_labeled_split(
    root: &Path,
    split: SplitKind,
    count: usize,
    num_classes: usize,
    ignore: u8,
) -> Result<Vec<(ImageTensor, LabelMap)>> {
    let dir = root.join(split.dir_name());
    (0..count)
        .into_par_iter()
        .map(|ix| {
            let image = load_image_png(dir.join(format!("images/{ix:05}.png")))?;
            let labels = load_label_png(
                dir.join(format!("labels/{ix:05}.png")),
                num_classes,
                ignore,
            )?;
            if (labels.height(), labels.width()) != (image.height(), image.width()) {
                return Err(Error::Dataset(format!(
                    "image/label size mismatch in {} index {ix}",
                    split.dir_name()
                )));
            }
            Ok((image, labels))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use sha2::{Digest, Sha256};

    fn tiny_spec() -> SceneSpec {
        SceneSpec {
            height: 16,
            width: 16,
            num_shape_classes: 4,
            shapes_per_image: (2, 3),
            seed: 11,
        }
    }

    fn tiny_counts() -> SplitCounts {
        SplitCounts {
            source: 3,
            target_train: 3,
            target_eval: 2,
        }
    }

    fn tree_digest(root: &Path) -> String {
        let mut paths = Vec::new();
        collect_files(root, &mut paths);
        paths.sort();
        let mut hasher = Sha256::new();
        for p in paths {
            hasher.update(p.strip_prefix(root).unwrap().to_string_lossy().as_bytes());
            hasher.update(std::fs::read(&p).unwrap());
        }
        format!("{:x}", hasher.finalize())
    }

    fn collect_files(dir: &Path, out: &mut Vec<PathBuf>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                collect_files(&path, out);
            } else {
                out.push(path);
            }
        }
    }

    #[test]
    fn generation_is_byte_deterministic() {
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        for dir in [&dir_a, &dir_b] {
            generate_dataset(
                &tiny_spec(),
                &DomainStyle::neutral(),
                &DomainStyle::shifted(),
                &tiny_counts(),
                dir.path(),
            )
            .unwrap();
        }
        assert_eq!(tree_digest(dir_a.path()), tree_digest(dir_b.path()));
    }

    #[test]
    fn target_train_has_no_labels_on_disk_or_in_api() {
        let dir = tempfile::tempdir().unwrap();
        generate_dataset(
            &tiny_spec(),
            &DomainStyle::neutral(),
            &DomainStyle::shifted(),
            &tiny_counts(),
            dir.path(),
        )
        .unwrap();
        assert!(!dir.path().join("target_train/labels").exists());
        let ds = DomainPairDataset::load(dir.path()).unwrap();
        assert!(ds.labeled_split(SplitKind::TargetTrain).is_err());
        assert_eq!(ds.target_train().len(), 3);
    }

    #[test]
    fn splits_roundtrip_through_png() {
        let dir = tempfile::tempdir().unwrap();
        generate_dataset(
            &tiny_spec(),
            &DomainStyle::neutral(),
            &DomainStyle::shifted(),
            &tiny_counts(),
            dir.path(),
        )
        .unwrap();
        let ds = DomainPairDataset::load(dir.path()).unwrap();
        assert_eq!(ds.source().len(), 3);
        assert_eq!(ds.target_eval().len(), 2);
        assert_eq!(ds.num_classes(), 5);
        for (img, labels) in ds.source() {
            assert_eq!((img.height(), img.width()), (16, 16));
            assert_eq!(labels.num_classes(), 5);
        }
    }

    #[test]
    fn identical_styles_mean_no_domain_gap_in_distribution() {
        // same split index, same geometry stream, same style: the rendered
        // target image differs from source only through scene sampling,
        // which is independent per split by construction
        let dir = tempfile::tempdir().unwrap();
        generate_dataset(
            &tiny_spec(),
            &DomainStyle::neutral(),
            &DomainStyle::neutral(),
            &tiny_counts(),
            dir.path(),
        )
        .unwrap();
        let ds = DomainPairDataset::load(dir.path()).unwrap();
        // both splits drew from the same process: class inventories agree
        let classes_src: Vec<u8> = ds.source()[0].1.present_classes();
        assert!(classes_src.iter().all(|&c| c <= 4));
    }
}
