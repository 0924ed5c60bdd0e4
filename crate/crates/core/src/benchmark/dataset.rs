use crate::geometry::{CameraIntrinsics, DepthMap, GeometryError, Pose};
use serde::{Deserialize, Serialize};
use std::io;
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const PAIRS_FILE: &str = "pairs.json";
const DEPTH_MAGIC: &[u8; 4] = b"ZEBD";
const DEPTH_HEADER: usize = 16;

#[derive(Debug, Error)]
pub enum EvalDatasetError {
    #[error("{0}: {1}")]
    Io(PathBuf, io::Error),
    #[error("{0}: {1}")]
    Json(PathBuf, serde_json::Error),
    #[error("{path}: pair {pair}: {source}")]
    Geometry {
        path: PathBuf,
        pair: String,
        source: GeometryError,
    },
    #[error("{0}: {1}")]
    Depth(PathBuf, String),
    #[error("{0}: dataset id must be non-empty without whitespace or ':'")]
    BadId(PathBuf),
}

/// Bin index `k` for overlap ratios in `[0.1 + 0.08k, 0.1 + 0.08(k + 1))`,
/// with the top bin closed at 0.5. `None` outside `[0.1, 0.5]`.
pub fn overlap_bin(ratio: f64) -> Option<usize> {
    if !(0.1..=0.5).contains(&ratio) {
        return None;
    }
    (0..OVERLAP_BINS).rev().find(|&k| ratio >= 0.1 + 0.08 * k as f64)
}

pub const OVERLAP_BINS: usize = 5;

/// One posed, calibrated image of an evaluation pair.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalFrame {
    pub image: PathBuf,
    pub intrinsics: CameraIntrinsics,
    pub pose: Pose,
    pub depth: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalPair {
    pub dataset: String,
    pub id: String,
    pub frame_a: EvalFrame,
    pub frame_b: EvalFrame,
    /// Overlap ratio, when known.
    pub overlap: Option<f64>,
}

impl EvalPair {
    pub fn bin(&self) -> Option<usize> {
        self.overlap.and_then(overlap_bin)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalDataset {
    pub id: String,
    pub dir: PathBuf,
    pub pairs: Vec<EvalPair>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FrameRecord {
    image: String,
    intrinsics: CameraIntrinsics,
    /// Unit quaternion `(w, x, y, z)` of the world-to-camera rotation.
    rotation: [f64; 4],
    translation: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    depth: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PairRecord {
    id: String,
    frame_a: FrameRecord,
    frame_b: FrameRecord,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    overlap: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PairsFile {
    dataset: String,
    pairs: Vec<PairRecord>,
}

fn valid_id(id: &str) -> bool {
    !id.is_empty() && !id.contains(':') && !id.chars().any(char::is_whitespace)
}

/// Loads `<dir>/pairs.json`; frame and depth paths are relative to `dir`.
pub fn load_eval_dataset(dir: &Path) -> Result<EvalDataset, EvalDatasetError> {
    let path = dir.join(PAIRS_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| EvalDatasetError::Io(path.clone(), e))?;
    let file: PairsFile = serde_json::from_str(&text).map_err(|e| EvalDatasetError::Json(path.clone(), e))?;
    if !valid_id(&file.dataset) {
        return Err(EvalDatasetError::BadId(path));
    }
    let frame = |r: &FrameRecord, pair: &str| -> Result<EvalFrame, EvalDatasetError> {
        let geo = |source| EvalDatasetError::Geometry {
            path: path.clone(),
            pair: pair.to_string(),
            source,
        };
        r.intrinsics.validate().map_err(geo)?;
        Ok(EvalFrame {
            image: dir.join(&r.image),
            intrinsics: r.intrinsics,
            pose: Pose::from_quaternion(r.rotation, r.translation).map_err(geo)?,
            depth: r.depth.as_ref().map(|d| dir.join(d)),
        })
    };
    let pairs = file
        .pairs
        .iter()
        .map(|p| {
            Ok(EvalPair {
                dataset: file.dataset.clone(),
                id: p.id.clone(),
                frame_a: frame(&p.frame_a, &p.id)?,
                frame_b: frame(&p.frame_b, &p.id)?,
                overlap: p.overlap,
            })
        })
        .collect::<Result<_, EvalDatasetError>>()?;
    Ok(EvalDataset {
        id: file.dataset,
        dir: dir.to_path_buf(),
        pairs,
    })
}

/// Writes `<dir>/pairs.json`. Paths inside `dir` are stored relative to it.
pub fn save_eval_dataset(dataset: &EvalDataset) -> Result<(), EvalDatasetError> {
    let rel = |p: &Path| {
        p.strip_prefix(&dataset.dir)
            .unwrap_or(p)
            .to_string_lossy()
            .into_owned()
    };
    let record = |f: &EvalFrame| FrameRecord {
        image: rel(&f.image),
        intrinsics: f.intrinsics,
        rotation: f.pose.quaternion(),
        translation: [f.pose.translation().x, f.pose.translation().y, f.pose.translation().z],
        depth: f.depth.as_deref().map(rel),
    };
    let file = PairsFile {
        dataset: dataset.id.clone(),
        pairs: dataset
            .pairs
            .iter()
            .map(|p| PairRecord {
                id: p.id.clone(),
                frame_a: record(&p.frame_a),
                frame_b: record(&p.frame_b),
                overlap: p.overlap,
            })
            .collect(),
    };
    let path = dataset.dir.join(PAIRS_FILE);
    let json = serde_json::to_string_pretty(&file).expect("pairs file serializes");
    std::fs::write(&path, json).map_err(|e| EvalDatasetError::Io(path, e))
}

/// Depth grid: `ZEBD`, width and height (u32 LE), 4 reserved bytes, then
/// `width * height` little-endian f32 values in row-major order.
pub fn write_depth(path: &Path, depth: &DepthMap) -> io::Result<()> {
    let size = depth.size();
    let mut buf = Vec::with_capacity(DEPTH_HEADER + 4 * depth.values().len());
    buf.extend_from_slice(DEPTH_MAGIC);
    buf.extend_from_slice(&size.width.to_le_bytes());
    buf.extend_from_slice(&size.height.to_le_bytes());
    buf.extend_from_slice(&[0; 4]);
    for v in depth.values() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, buf)
}

pub fn read_depth(path: &Path) -> Result<DepthMap, EvalDatasetError> {
    let bytes = std::fs::read(path).map_err(|e| EvalDatasetError::Io(path.to_path_buf(), e))?;
    let bad = |msg: String| EvalDatasetError::Depth(path.to_path_buf(), msg);
    if bytes.len() < DEPTH_HEADER || &bytes[..4] != DEPTH_MAGIC {
        return Err(bad("missing ZEBD header".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
    let (w, h) = (word(4), word(8));
    let expected = w as usize * h as usize * 4;
    if bytes.len() - DEPTH_HEADER != expected {
        return Err(bad(format!(
            "{w}x{h} grid needs {expected} payload bytes, found {}",
            bytes.len() - DEPTH_HEADER
        )));
    }
    let values = bytes[DEPTH_HEADER..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    DepthMap::new(w, h, values).map_err(|e| bad(e.to_string()))
}
