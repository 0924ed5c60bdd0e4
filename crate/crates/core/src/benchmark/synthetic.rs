use super::dataset::{save_eval_dataset, write_depth, EvalDataset, EvalDatasetError, EvalFrame, EvalPair};
use super::overlap::{overlap_ratio, DepthView, DEFAULT_DEPTH_TOLERANCE};
use crate::geometry::{CameraIntrinsics, DepthMap, Pose};
use crate::matcher::GrayImage;
use crate::pipeline::Texture;
use nalgebra::{Point2, Vector3};
use std::path::Path;

/// Plane `normal . X = offset` in world coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plane {
    pub normal: Vector3<f64>,
    pub offset: f64,
}

/// A scene made of infinite textured planes; each ray sees the nearest one.
#[derive(Debug, Clone, PartialEq)]
pub struct PlaneScene {
    pub planes: Vec<Plane>,
    pub texture_seed: u64,
}

/// Texture samples per world unit.
const TEXTURE_SCALE: f64 = 40.0;

impl PlaneScene {
    /// A single wall `z = depth`.
    pub fn fronto_parallel(depth: f64) -> Self {
        Self {
            planes: vec![Plane {
                normal: Vector3::z(),
                offset: depth,
            }],
            texture_seed: 0,
        }
    }

    /// A box seen from inside: back wall at `z = 10`, floor and ceiling at
    /// `y = +-2`, side walls at `x = +-4`.
    pub fn room(texture_seed: u64) -> Self {
        let plane = |normal: Vector3<f64>, offset| Plane { normal, offset };
        Self {
            planes: vec![
                plane(Vector3::z(), 10.0),
                plane(Vector3::y(), 2.0),
                plane(Vector3::y(), -2.0),
                plane(Vector3::x(), 4.0),
                plane(Vector3::x(), -4.0),
            ],
            texture_seed,
        }
    }

    /// Nearest hit along the viewing ray of `pixel`: camera depth and plane index.
    fn hit(&self, k: &CameraIntrinsics, pose: &Pose, pixel: &Point2<f64>) -> Option<(f64, usize)> {
        let n = k.normalize(pixel);
        // camera-frame direction with unit z, so the ray parameter is the depth
        let dir = pose.rotation().transpose() * Vector3::new(n.x, n.y, 1.0);
        let centre = pose.center();
        self.planes
            .iter()
            .enumerate()
            .filter_map(|(i, p)| {
                let denom = p.normal.dot(&dir);
                if denom.abs() < 1e-12 {
                    return None;
                }
                let s = (p.offset - p.normal.dot(&centre)) / denom;
                (s > 1e-9).then_some((s, i))
            })
            .min_by(|a, b| a.0.total_cmp(&b.0))
    }

    /// Depth of every pixel centre; 0 where no plane is hit.
    pub fn depth_map(&self, k: &CameraIntrinsics, pose: &Pose) -> DepthMap {
        DepthMap::from_fn(k.width, k.height, |x, y| {
            self.hit(k, pose, &Point2::new(x as f64, y as f64))
                .map_or(0.0, |(d, _)| d as f32)
        })
    }

    pub fn render(&self, k: &CameraIntrinsics, pose: &Pose) -> GrayImage {
        let tex = Texture::new(self.texture_seed);
        let inv = pose.inverse();
        GrayImage::from_fn(k.width, k.height, |x, y| {
            let pixel = Point2::new(x as f64, y as f64);
            let Some((d, i)) = self.hit(k, pose, &pixel) else {
                return 0;
            };
            let world = inv.transform(&k.unproject(&pixel, d).expect("positive depth"));
            let n = self.planes[i].normal;
            let e1 = if n.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
            let e1 = (e1 - n * n.dot(&e1)).normalize();
            let e2 = n.cross(&e1);
            let (u, v) = (world.dot(&e1) * TEXTURE_SCALE, world.dot(&e2) * TEXTURE_SCALE);
            (tex.at(u + 1000.0 * i as f64, v) * 255.0).round().clamp(0.0, 255.0) as u8
        })
    }
}

/// Renders every view pair of `scene`, writes images, ZEBD depths and
/// `pairs.json` with computed overlap ratios under `dir`.
pub fn write_synthetic_dataset(
    dir: &Path,
    id: &str,
    scene: &PlaneScene,
    k: &CameraIntrinsics,
    poses: &[(Pose, Pose)],
) -> Result<EvalDataset, EvalDatasetError> {
    std::fs::create_dir_all(dir).map_err(|e| EvalDatasetError::Io(dir.to_path_buf(), e))?;
    let mut pairs = Vec::with_capacity(poses.len());
    for (i, (pa, pb)) in poses.iter().enumerate() {
        let frame = |tag: &str, pose: &Pose| -> Result<(EvalFrame, DepthMap), EvalDatasetError> {
            let image = dir.join(format!("{i:05}_{tag}.pgm"));
            let depth_path = dir.join(format!("{i:05}_{tag}.zebd"));
            scene
                .render(k, pose)
                .write_pgm(&image)
                .map_err(|e| EvalDatasetError::Depth(image.clone(), e.to_string()))?;
            let depth = scene.depth_map(k, pose);
            write_depth(&depth_path, &depth).map_err(|e| EvalDatasetError::Io(depth_path.clone(), e))?;
            let frame = EvalFrame {
                image,
                intrinsics: *k,
                pose: *pose,
                depth: Some(depth_path),
            };
            Ok((frame, depth))
        };
        let (frame_a, depth_a) = frame("a", pa)?;
        let (frame_b, depth_b) = frame("b", pb)?;
        let overlap = overlap_ratio(
            &DepthView { intrinsics: k, pose: pa, depth: &depth_a },
            &DepthView { intrinsics: k, pose: pb, depth: &depth_b },
            DEFAULT_DEPTH_TOLERANCE,
        )
        .ok();
        pairs.push(EvalPair {
            dataset: id.to_string(),
            id: format!("{i:05}"),
            frame_a,
            frame_b,
            overlap,
        });
    }
    let dataset = EvalDataset {
        id: id.to_string(),
        dir: dir.to_path_buf(),
        pairs,
    };
    save_eval_dataset(&dataset)?;
    Ok(dataset)
}
