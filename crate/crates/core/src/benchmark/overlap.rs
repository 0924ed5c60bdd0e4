use crate::geometry::{CameraIntrinsics, DepthMap, Pose};
use nalgebra::Point2;
use rayon::prelude::*;
use thiserror::Error;

/// Relative depth tolerance for counting a reprojected pixel as visible.
pub const DEFAULT_DEPTH_TOLERANCE: f64 = 0.05;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OverlapError {
    #[error("frame has no valid depth")]
    NoValidDepth,
    #[error("depth map is {got:?} but the camera is {expected:?}")]
    SizeMismatch { expected: (u32, u32), got: (u32, u32) },
}

/// A calibrated, posed frame with depth.
#[derive(Debug, Clone, Copy)]
pub struct DepthView<'a> {
    pub intrinsics: &'a CameraIntrinsics,
    pub pose: &'a Pose,
    pub depth: &'a DepthMap,
}

impl DepthView<'_> {
    fn check(&self) -> Result<(), OverlapError> {
        let (k, d) = (self.intrinsics, self.depth.size());
        if (k.width, k.height) != (d.width, d.height) {
            return Err(OverlapError::SizeMismatch {
                expected: (k.width, k.height),
                got: (d.width, d.height),
            });
        }
        Ok(())
    }
}

/// Share of `from`'s valid-depth pixels that land inside `to` with a depth
/// within `tolerance` (relative) of `to`'s bilinear depth there.
pub fn directional_overlap(from: &DepthView, to: &DepthView, tolerance: f64) -> Result<f64, OverlapError> {
    from.check()?;
    to.check()?;
    let size = from.depth.size();
    let rel = crate::geometry::relative_pose(from.pose, to.pose);
    let to_size = to.depth.size();
    let (valid, seen) = (0..size.height)
        .into_par_iter()
        .map(|y| {
            let mut valid = 0usize;
            let mut seen = 0usize;
            for x in 0..size.width {
                let d = from.depth.get(x, y);
                if !DepthMap::is_valid(d) {
                    continue;
                }
                valid += 1;
                let Ok(x_a) = from.intrinsics.unproject(&Point2::new(x as f64, y as f64), d) else {
                    continue;
                };
                let x_b = rel.transform(&x_a);
                let Some(u) = to.intrinsics.project(&x_b) else {
                    continue;
                };
                if !to_size.contains(&u) {
                    continue;
                }
                if let Some(d_b) = to.depth.bilinear(&u) {
                    if (x_b.z - d_b).abs() / d_b < tolerance {
                        seen += 1;
                    }
                }
            }
            (valid, seen)
        })
        .reduce(|| (0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    if valid == 0 {
        return Err(OverlapError::NoValidDepth);
    }
    Ok(seen as f64 / valid as f64)
}

/// `min(r(a -> b), r(b -> a))`.
pub fn overlap_ratio(a: &DepthView, b: &DepthView, tolerance: f64) -> Result<f64, OverlapError> {
    let ab = directional_overlap(a, b, tolerance)?;
    let ba = directional_overlap(b, a, tolerance)?;
    Ok(ab.min(ba))
}
