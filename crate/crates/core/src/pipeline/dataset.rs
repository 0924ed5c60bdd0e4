use super::{PairFlag, PipelineConfig, TrainingPair};
use crate::correspondence::{read_correspondences, write_correspondences, InterchangeError};
use crate::geometry::{Homography, ImageSize};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const MANIFEST_FILE: &str = "manifest.json";
const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Interchange {
        path: PathBuf,
        source: InterchangeError,
    },
    #[error("{path}: malformed manifest: {source}")]
    Manifest {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("{0}")]
    Invalid(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestPair {
    /// Correspondence file, relative to the dataset directory.
    pub file: String,
    pub video: String,
    pub frame_a: u64,
    pub frame_b: u64,
    pub interval: u64,
    pub count: usize,
    pub size_a: ImageSize,
    pub size_b: ImageSize,
    /// Row-major warp applied to image A, if any.
    pub augment_a: Option<[f64; 9]>,
    pub augment_b: Option<[f64; 9]>,
    pub depth: u32,
    pub provenance: BTreeMap<String, usize>,
    pub flags: Vec<PairFlag>,
}

/// A base pair that produced no usable labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedPair {
    pub video: String,
    pub frame_a: u64,
    pub frame_b: u64,
    pub flags: Vec<PairFlag>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub config_hash: String,
    /// False when emission stopped early; only the listed files exist.
    pub complete: bool,
    pub pairs: Vec<ManifestPair>,
    pub dropped: Vec<DroppedPair>,
}

impl Manifest {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }
}

/// SHA-256 over the canonical JSON form of the configuration. Execution
/// settings that cannot change the output (`parallelism`, `output_dir`) are
/// left out so that runs differing only in those produce identical manifests.
pub fn config_hash(cfg: &PipelineConfig) -> String {
    let mut value = serde_json::to_value(cfg).expect("config serializes");
    if let Some(obj) = value.as_object_mut() {
        obj.remove("parallelism");
        obj.remove("output_dir");
    }
    // serde_json maps are key-sorted, so this string is canonical.
    let canonical = serde_json::to_string(&value).expect("value serializes");
    hex::encode(Sha256::digest(canonical.as_bytes()))
}

fn pair_file(p: &TrainingPair) -> String {
    format!(
        "pairs/{}/{:08}_{:08}.corrs",
        p.frame_a().video,
        p.frame_a().index,
        p.frame_b().index
    )
}

fn manifest_entry(p: &TrainingPair) -> ManifestPair {
    ManifestPair {
        file: pair_file(p),
        video: p.frame_a().video.clone(),
        frame_a: p.frame_a().index,
        frame_b: p.frame_b().index,
        interval: p.interval(),
        count: p.correspondences.len(),
        size_a: p.size_a,
        size_b: p.size_b,
        augment_a: p.augment_a.map(|h| h.to_row_major()),
        augment_b: p.augment_b.map(|h| h.to_row_major()),
        depth: p.depth,
        provenance: p.provenance(),
        flags: p.flags.clone(),
    }
}

fn write_manifest(dir: &Path, manifest: &Manifest) -> Result<(), DatasetError> {
    let path = dir.join(MANIFEST_FILE);
    std::fs::write(&path, manifest.to_json()).map_err(io_err(&path))
}

/// Writes one correspondence file per pair and `manifest.json`. Pairs are
/// sorted by `(video, frame_a, frame_b)`. On an I/O error the manifest is
/// rewritten with `complete: false` listing only the files already written.
pub fn emit_dataset(
    pairs: &[TrainingPair],
    dropped: &[DroppedPair],
    output_dir: &Path,
    config_hash: &str,
) -> Result<Manifest, DatasetError> {
    let mut sorted: Vec<&TrainingPair> = pairs.iter().collect();
    sorted.sort_by(|a, b| (a.frame_a(), a.frame_b()).cmp(&(b.frame_a(), b.frame_b())));
    let mut dropped = dropped.to_vec();
    dropped.sort_by(|a, b| (&a.video, a.frame_a, a.frame_b).cmp(&(&b.video, b.frame_a, b.frame_b)));

    let mut manifest = Manifest {
        version: MANIFEST_VERSION,
        config_hash: config_hash.to_string(),
        complete: false,
        pairs: Vec::with_capacity(sorted.len()),
        dropped,
    };
    std::fs::create_dir_all(output_dir).map_err(io_err(output_dir))?;
    for p in sorted {
        let entry = manifest_entry(p);
        let path = output_dir.join(&entry.file);
        let written = path
            .parent()
            .map_or(Ok(()), std::fs::create_dir_all)
            .and_then(|_| write_correspondences(&path, &p.correspondences));
        if let Err(e) = written {
            // Best effort: the partial marker matters more than this second error.
            let _ = write_manifest(output_dir, &manifest);
            return Err(DatasetError::Io { path, source: e });
        }
        manifest.pairs.push(entry);
    }
    manifest.complete = true;
    write_manifest(output_dir, &manifest)?;
    Ok(manifest)
}

/// Reads a dataset written by [`emit_dataset`].
pub fn read_dataset(dir: &Path) -> Result<(Manifest, Vec<TrainingPair>), DatasetError> {
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|source| DatasetError::Manifest { path: path.clone(), source })?;
    let warp = |m: &Option<[f64; 9]>| -> Result<Option<Homography>, DatasetError> {
        m.as_ref()
            .map(|v| Homography::from_row_major(v).map_err(|e| DatasetError::Invalid(format!("augment warp: {e}"))))
            .transpose()
    };
    let mut pairs = Vec::with_capacity(manifest.pairs.len());
    for e in &manifest.pairs {
        let file = dir.join(&e.file);
        let (set, _) = read_correspondences(&file, Some((e.size_a, e.size_b)))
            .map_err(|source| DatasetError::Interchange { path: file.clone(), source })?;
        if set.frame_a().video != e.video || set.frame_a().index != e.frame_a || set.frame_b().index != e.frame_b {
            return Err(DatasetError::Invalid(format!("{}: frames disagree with the manifest", e.file)));
        }
        pairs.push(TrainingPair {
            correspondences: set,
            size_a: e.size_a,
            size_b: e.size_b,
            augment_a: warp(&e.augment_a)?,
            augment_b: warp(&e.augment_b)?,
            depth: e.depth,
            flags: e.flags.clone(),
        });
    }
    Ok((manifest, pairs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::correspondence::{CorrespondenceSet, FrameId, Match};
    use nalgebra::Point2;

    fn pair(video: &str, a: u64, b: u64, n: usize) -> TrainingPair {
        let matches = (0..n)
            .map(|i| {
                let p = Point2::new(i as f64 * 1.25 + 0.5, 3.0);
                Match::new(p, Point2::new(p.x + 0.125, 4.0), 0.75, if i % 2 == 0 { "m" } else { "propagated" })
            })
            .collect();
        TrainingPair {
            correspondences: CorrespondenceSet::new(FrameId::new(video, a).unwrap(), FrameId::new(video, b).unwrap(), matches).unwrap(),
            size_a: ImageSize::new(640, 480),
            size_b: ImageSize::new(640, 480),
            augment_a: Some(Homography::translation(1.5, -2.0)),
            augment_b: None,
            depth: 2,
            flags: vec![PairFlag::AugmentationRejected],
        }
    }

    #[test]
    fn empty_dataset_is_valid_json() {
        let dir = tempfile::tempdir().unwrap();
        let m = emit_dataset(&[], &[], dir.path(), "abc").unwrap();
        assert!(m.pairs.is_empty() && m.complete);
        let text = std::fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["pairs"], serde_json::json!([]));
    }

    #[test]
    fn three_pairs_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let pairs = vec![pair("b", 0, 80, 30), pair("a", 20, 60, 10), pair("a", 0, 40, 20)];
        let m = emit_dataset(&pairs, &[], dir.path(), "h").unwrap();
        assert_eq!(m.pairs.len(), 3);
        assert_eq!(m.pairs[0].file, "pairs/a/00000000_00000040.corrs");
        assert_eq!(m.pairs[2].video, "b");
        assert_eq!(m.pairs[0].provenance["propagated"], 10);
        assert_eq!(m.pairs[0].augment_a, Some(Homography::translation(1.5, -2.0).to_row_major()));
        let (m2, back) = read_dataset(dir.path()).unwrap();
        assert_eq!(m2, m);
        let mut expected = pairs.clone();
        expected.sort_by(|a, b| (a.frame_a(), a.frame_b()).cmp(&(b.frame_a(), b.frame_b())));
        assert_eq!(back, expected);
    }

    #[test]
    fn io_failure_leaves_partial_marker() {
        let dir = tempfile::tempdir().unwrap();
        // a file where the per-video directory should go
        std::fs::create_dir_all(dir.path().join("pairs")).unwrap();
        std::fs::write(dir.path().join("pairs/b"), "").unwrap();
        let pairs = vec![pair("a", 0, 40, 5), pair("b", 0, 40, 5)];
        assert!(emit_dataset(&pairs, &[], dir.path(), "h").is_err());
        let text = std::fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap();
        let m: Manifest = serde_json::from_str(&text).unwrap();
        assert!(!m.complete);
        assert_eq!(m.pairs.len(), 1);
    }

    #[test]
    fn config_hash_tracks_output_affecting_fields() {
        let base = PipelineConfig::default();
        let h0 = config_hash(&base);
        assert_eq!(h0.len(), 64);
        let variants: Vec<Box<dyn Fn(&mut PipelineConfig)>> = vec![
            Box::new(|c| c.frame_interval = 10),
            Box::new(|c| c.base_offsets = vec![20, 40]),
            Box::new(|c| c.min_correspondences = 1000),
            Box::new(|c| c.propagation_pixel_threshold = 0.5),
            Box::new(|c| c.dedup_radius = 2.0),
            Box::new(|c| c.matchers[0].name = "other".into()),
            Box::new(|c| c.filter_stage = crate::pipeline::FilterStage::PostFusion),
            Box::new(|c| c.ransac.threshold = 1.0),
            Box::new(|c| c.augmentation.enabled = false),
            Box::new(|c| c.augmentation.seed = 1),
            Box::new(|c| c.seed = 1),
        ];
        for f in variants {
            let mut c = base.clone();
            f(&mut c);
            assert_ne!(config_hash(&c), h0, "{c:?}");
        }
        let mut c = base.clone();
        c.parallelism = 8;
        c.output_dir = "elsewhere".into();
        assert_eq!(config_hash(&c), h0);
    }
}
