use crate::correspondence::FrameId;
use crate::geometry::{Homography, ImageSize};
use crate::matcher::{pgm_size, FrameSource, GrayImage, ImageError, SyntheticTruth};
use crate::seed::SeedHasher;
use nalgebra::{Matrix3, Point2};
use serde::{Deserialize, Serialize};
use std::io;
use std::path::{Path, PathBuf};

/// Optional ground-truth file in a frame directory.
pub const TRUTH_FILE: &str = "truth.json";

fn frame_file(index: u64) -> String {
    format!("{index:08}.pgm")
}

fn parse_frame_file(name: &str) -> Option<u64> {
    let stem = name.strip_suffix(".pgm")?;
    (stem.len() == 8 && stem.bytes().all(|b| b.is_ascii_digit())).then(|| stem.parse().ok())?
}

/// Plane-to-pixel homographies of a planar scene, one per frame index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanarTrack {
    pub extent: ImageSize,
    /// Row-major plane-to-pixel matrices, indexed by frame.
    pub homographies: Vec<[f64; 9]>,
}

impl PlanarTrack {
    pub fn truth(&self, a: u64, b: u64) -> Option<SyntheticTruth> {
        let get = |i: u64| {
            self.homographies
                .get(usize::try_from(i).ok()?)
                .and_then(|m| Homography::from_row_major(m).ok())
        };
        Some(SyntheticTruth::Planar {
            extent: self.extent,
            to_a: get(a)?,
            to_b: get(b)?,
        })
    }
}

/// A directory of frames named `%08d.pgm`.
#[derive(Debug, Clone)]
pub struct VideoFrames {
    pub id: String,
    pub dir: PathBuf,
    /// One past the largest frame index present.
    pub length: u64,
    pub frame_size: ImageSize,
    pub truth: Option<PlanarTrack>,
}

#[derive(Debug, thiserror::Error)]
pub enum VideoError {
    #[error("{0}: {1}")]
    Io(PathBuf, io::Error),
    #[error("{0}: no frames named like 00000000.pgm")]
    NoFrames(PathBuf),
    #[error("{0}: {1}")]
    Image(PathBuf, ImageError),
    #[error("{0}: {1}")]
    Truth(PathBuf, serde_json::Error),
    #[error("{0}: video id must be non-empty without whitespace or ':'")]
    BadId(PathBuf),
}

fn list_frames(dir: &Path) -> Result<Vec<u64>, VideoError> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| VideoError::Io(dir.into(), e))? {
        let entry = entry.map_err(|e| VideoError::Io(dir.into(), e))?;
        if let Some(i) = entry.file_name().to_str().and_then(parse_frame_file) {
            out.push(i);
        }
    }
    out.sort_unstable();
    Ok(out)
}

impl VideoFrames {
    pub fn open(dir: &Path) -> Result<Self, VideoError> {
        let frames = list_frames(dir)?;
        let (&first, &last) = match (frames.first(), frames.last()) {
            (Some(f), Some(l)) => (f, l),
            _ => return Err(VideoError::NoFrames(dir.into())),
        };
        let first_path = dir.join(frame_file(first));
        let frame_size = pgm_size(&first_path).map_err(|e| VideoError::Image(first_path, e))?;
        let id = dir
            .canonicalize()
            .ok()
            .and_then(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
            .unwrap_or_default();
        if id.is_empty() || id.contains(':') || id.chars().any(char::is_whitespace) {
            return Err(VideoError::BadId(dir.into()));
        }
        let truth_path = dir.join(TRUTH_FILE);
        let truth = match std::fs::read_to_string(&truth_path) {
            Ok(text) => Some(serde_json::from_str(&text).map_err(|e| VideoError::Truth(truth_path, e))?),
            Err(e) if e.kind() == io::ErrorKind::NotFound => None,
            Err(e) => return Err(VideoError::Io(truth_path, e)),
        };
        Ok(Self {
            id,
            dir: dir.into(),
            length: last + 1,
            frame_size,
            truth,
        })
    }

    /// A single video directory, or a directory whose subdirectories are
    /// videos (sorted by name).
    pub fn discover(root: &Path) -> Result<Vec<Self>, VideoError> {
        if !list_frames(root)?.is_empty() {
            return Ok(vec![Self::open(root)?]);
        }
        let mut dirs = Vec::new();
        for entry in std::fs::read_dir(root).map_err(|e| VideoError::Io(root.into(), e))? {
            let path = entry.map_err(|e| VideoError::Io(root.into(), e))?.path();
            if path.is_dir() && !list_frames(&path)?.is_empty() {
                dirs.push(path);
            }
        }
        if dirs.is_empty() {
            return Err(VideoError::NoFrames(root.into()));
        }
        dirs.sort();
        dirs.iter().map(|d| Self::open(d)).collect()
    }

    pub fn frame_path(&self, index: u64) -> PathBuf {
        self.dir.join(frame_file(index))
    }

    pub fn frame_source(&self, index: u64) -> FrameSource {
        FrameSource::from_path(
            FrameId::new(self.id.clone(), index).expect("video id validated on open"),
            self.frame_path(index),
        )
    }

    pub fn truth(&self, a: u64, b: u64) -> Option<SyntheticTruth> {
        self.truth.as_ref().and_then(|t| t.truth(a, b))
    }
}

/// Procedural video of a textured plane seen by a panning, slowly rotating
/// and zooming camera with a mild perspective wobble.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticVideo {
    pub frames: u64,
    pub size: ImageSize,
    pub extent: ImageSize,
    /// Plane point at the image centre in frame 0.
    pub start: (f64, f64),
    /// Pan per frame, in plane units.
    pub velocity: (f64, f64),
    /// Peak in-plane rotation (radians).
    pub wobble: f64,
    pub seed: u64,
}

impl SyntheticVideo {
    pub fn new(frames: u64, size: ImageSize, seed: u64) -> Self {
        let extent = ImageSize::new(size.width * 6, size.height * 2);
        Self {
            frames,
            size,
            extent,
            start: (size.width as f64 * 0.6, extent.height as f64 / 2.0),
            velocity: (size.width as f64 / 150.0, 0.0),
            wobble: 0.05,
            seed,
        }
    }

    /// Plane-to-pixel homography of frame `i`.
    pub fn homography(&self, i: u64) -> Homography {
        let t = i as f64;
        let cx = self.start.0 + self.velocity.0 * t;
        let cy = self.start.1 + self.velocity.1 * t;
        let theta = self.wobble * (t / 30.0).sin();
        let scale = 1.0 + 0.05 * (t / 45.0).sin();
        let persp = 2e-5 * (t / 25.0).sin();
        let (s, c) = theta.sin_cos();
        let to_centre = Matrix3::new(1.0, 0.0, -cx, 0.0, 1.0, -cy, 0.0, 0.0, 1.0);
        let rot = Matrix3::new(scale * c, -scale * s, 0.0, scale * s, scale * c, 0.0, 0.0, 0.0, 1.0);
        let tilt = Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, persp, 0.0, 1.0);
        let to_pixels = Matrix3::new(
            1.0,
            0.0,
            self.size.width as f64 / 2.0,
            0.0,
            1.0,
            self.size.height as f64 / 2.0,
            0.0,
            0.0,
            1.0,
        );
        Homography::new(to_pixels * tilt * rot * to_centre).expect("invertible by construction")
    }

    pub fn track(&self) -> PlanarTrack {
        PlanarTrack {
            extent: self.extent,
            homographies: (0..self.frames).map(|i| self.homography(i).to_row_major()).collect(),
        }
    }

    pub fn truth(&self, a: u64, b: u64) -> SyntheticTruth {
        SyntheticTruth::Planar {
            extent: self.extent,
            to_a: self.homography(a),
            to_b: self.homography(b),
        }
    }

    pub fn render(&self, i: u64) -> GrayImage {
        let inv = self.homography(i).inverse().expect("invertible");
        let tex = Texture::new(self.seed);
        GrayImage::from_fn(self.size.width, self.size.height, |x, y| {
            let s = inv.apply(&Point2::new(x as f64, y as f64)).unwrap_or(Point2::origin());
            (tex.at(s.x, s.y) * 255.0).round().clamp(0.0, 255.0) as u8
        })
    }

    /// Writes every frame plus the ground-truth track into `dir`.
    pub fn write(&self, dir: &Path) -> io::Result<()> {
        std::fs::create_dir_all(dir)?;
        for i in 0..self.frames {
            std::fs::write(dir.join(frame_file(i)), self.render(i).to_pgm())?;
        }
        let json = serde_json::to_string(&self.track()).map_err(io::Error::other)?;
        std::fs::write(dir.join(TRUTH_FILE), json)
    }
}

/// Multi-octave value noise with a hashed lattice.
pub(crate) struct Texture {
    seed: u64,
}

impl Texture {
    pub(crate) fn new(seed: u64) -> Self {
        Self { seed }
    }

    fn lattice(&self, octave: u32, ix: i64, iy: i64) -> f64 {
        let h = SeedHasher::new(self.seed).u64(octave as u64).u64(ix as u64).u64(iy as u64).finish();
        (h >> 11) as f64 / (1u64 << 53) as f64
    }

    fn noise(&self, octave: u32, x: f64, y: f64) -> f64 {
        let (fx, fy) = (x.floor(), y.floor());
        let (ix, iy) = (fx as i64, fy as i64);
        let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
        let (u, v) = (smooth(x - fx), smooth(y - fy));
        let a = self.lattice(octave, ix, iy);
        let b = self.lattice(octave, ix + 1, iy);
        let c = self.lattice(octave, ix, iy + 1);
        let d = self.lattice(octave, ix + 1, iy + 1);
        (a * (1.0 - u) + b * u) * (1.0 - v) + (c * (1.0 - u) + d * u) * v
    }

    /// Intensity in `[0, 1]` at a plane point.
    pub(crate) fn at(&self, x: f64, y: f64) -> f64 {
        let mut v = 0.0;
        let mut amp = 0.5;
        let mut period = 24.0;
        for o in 0..4 {
            v += amp * (self.noise(o, x / period, y / period) - 0.5);
            amp *= 0.6;
            period /= 2.0;
        }
        0.5 + 0.5 * (4.0 * v).tanh()
    }
}
