//! Ground-truth oracle matcher with controlled noise and planted outliers.
//!
//! Scene points are drawn from a stream seeded only by the `seed` parameter,
//! so every frame pair of one video sees the same scene points in the same
//! order. Matches between `A -> B` and `B -> C` therefore share bit-identical
//! middle points whenever they come from the same scene point, and chains
//! compose exactly when noise is off.

use super::{FrameSource, MatchOutput, MatcherError, MatcherSpec, Params};
use crate::correspondence::{CorrespondenceSet, Match, RawReport};
use crate::geometry::{sampson_distance, CameraIntrinsics, DepthMap, EssentialMatrix, Homography, ImageSize, Pose};
use crate::seed::SeedHasher;
use nalgebra::{Matrix3, Point2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticParams {
    /// Target number of matches.
    pub count: usize,
    /// Fraction of matches whose B endpoint is replaced by a uniform point.
    pub outlier_rate: f64,
    /// Gaussian noise on the B endpoint, truncated at a radius of 3 sigma.
    pub noise_sigma: f64,
    /// Planted outliers are redrawn until their ground-truth residual exceeds this.
    pub outlier_min_residual: f64,
    pub seed: u64,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        Self {
            count: 2000,
            outlier_rate: 0.0,
            noise_sigma: 0.0,
            outlier_min_residual: 0.0,
            seed: 0,
        }
    }
}

/// Redraws allowed per match when planting an outlier.
const PLANT_ATTEMPTS: usize = 1000;

const KEYS: &[&str] = &["count", "outlier_rate", "noise_sigma", "outlier_min_residual", "seed"];

impl SyntheticParams {
    pub fn from_spec(spec: &MatcherSpec) -> Result<Self, MatcherError> {
        let p = Params::new(spec, KEYS)?;
        let d = Self::default();
        let out = Self {
            count: p.usize("count", d.count)?,
            outlier_rate: p.f64("outlier_rate", d.outlier_rate)?,
            noise_sigma: p.f64("noise_sigma", d.noise_sigma)?,
            outlier_min_residual: p.f64("outlier_min_residual", d.outlier_min_residual)?,
            seed: p.u64("seed", d.seed)?,
        };
        out.validate()?;
        Ok(out)
    }

    pub fn validate(&self) -> Result<(), MatcherError> {
        let bad = |m: &str| Err(MatcherError::InvalidSpec(m.to_string()));
        if !(0.0..=1.0).contains(&self.outlier_rate) {
            return bad("outlier_rate must be in [0, 1]");
        }
        if self.noise_sigma < 0.0 {
            return bad("noise_sigma must be >= 0");
        }
        if self.outlier_min_residual < 0.0 {
            return bad("outlier_min_residual must be >= 0");
        }
        Ok(())
    }
}

/// Ground truth linking two frames.
#[derive(Debug, Clone, PartialEq)]
pub enum SyntheticTruth {
    /// A textured plane with coordinates in `[0, extent)`, seen through one
    /// homography per frame (plane to pixels).
    Planar {
        extent: ImageSize,
        to_a: Homography,
        to_b: Homography,
    },
    /// Calibrated cameras with a depth map for frame A. Scene points are
    /// pixels of A lifted by their depth.
    Posed {
        k_a: CameraIntrinsics,
        pose_a: Pose,
        depth_a: Arc<DepthMap>,
        k_b: CameraIntrinsics,
        pose_b: Pose,
    },
}

impl SyntheticTruth {
    /// Maps a scene sample `u` in the unit square to its ground-truth
    /// `(point in A, point in B)`.
    fn sample(&self, u: (f64, f64), size_a: ImageSize) -> Option<(Point2<f64>, Point2<f64>)> {
        match self {
            SyntheticTruth::Planar { extent, to_a, to_b } => {
                let s = Point2::new(u.0 * extent.width as f64, u.1 * extent.height as f64);
                Some((to_a.apply(&s).ok()?, to_b.apply(&s).ok()?))
            }
            SyntheticTruth::Posed {
                k_a,
                pose_a,
                depth_a,
                k_b,
                pose_b,
            } => {
                let pa = Point2::new(u.0 * size_a.width as f64, u.1 * size_a.height as f64);
                let d = depth_a.bilinear(&pa)?;
                let x_cam = k_a.unproject(&pa, d).ok()?;
                let x_world = pose_a.inverse().transform(&x_cam);
                let pb = k_b.project(&pose_b.transform(&x_world))?;
                Some((pa, pb))
            }
        }
    }

    /// Pixel residual of a match against the ground truth: transfer distance
    /// for planar scenes, epipolar (square-root Sampson) distance otherwise.
    pub fn residual(&self, pa: &Point2<f64>, pb: &Point2<f64>) -> f64 {
        match self {
            SyntheticTruth::Planar { to_a, to_b, .. } => to_a
                .inverse()
                .and_then(|inv| to_b.compose(&inv))
                .and_then(|h| h.apply(pa))
                .map_or(f64::INFINITY, |q| (q - pb).norm()),
            SyntheticTruth::Posed { .. } => match self.fundamental() {
                Some(f) => sampson_distance(&f, pa, pb).sqrt(),
                None => f64::INFINITY,
            },
        }
    }

    fn fundamental(&self) -> Option<Matrix3<f64>> {
        match self {
            SyntheticTruth::Posed {
                k_a,
                pose_a,
                k_b,
                pose_b,
                ..
            } => {
                let rel = crate::geometry::relative_pose(pose_a, pose_b);
                EssentialMatrix::from_pose(&rel)
                    .ok()
                    .map(|e| e.to_fundamental(k_a, k_b))
            }
            SyntheticTruth::Planar { .. } => None,
        }
    }
}

/// Draws a 2-D Gaussian offset, redrawing beyond 3 sigma.
fn truncated_noise(rng: &mut ChaCha8Rng, sigma: f64) -> nalgebra::Vector2<f64> {
    if sigma == 0.0 {
        return nalgebra::Vector2::zeros();
    }
    let normal = Normal::new(0.0, sigma).expect("sigma is finite and positive");
    loop {
        let v = nalgebra::Vector2::new(normal.sample(rng), normal.sample(rng));
        if v.norm() <= 3.0 * sigma {
            return v;
        }
    }
}

pub fn match_synthetic(
    frame_a: &FrameSource,
    frame_b: &FrameSource,
    truth: &SyntheticTruth,
    params: &SyntheticParams,
    source: &str,
) -> Result<MatchOutput, MatcherError> {
    let size_a = frame_a.size()?;
    let size_b = frame_b.size()?;
    let mut pool = ChaCha8Rng::seed_from_u64(SeedHasher::new(params.seed).str("scene").finish());
    let mut rng = ChaCha8Rng::seed_from_u64(
        SeedHasher::new(params.seed)
            .str("pair")
            .str(&frame_a.frame.to_string())
            .str(&frame_b.frame.to_string())
            .finish(),
    );

    let max_draws = params.count.saturating_mul(200).max(10_000);
    let mut matches: Vec<Match> = Vec::with_capacity(params.count);
    let mut draws = 0;
    while matches.len() < params.count && draws < max_draws {
        draws += 1;
        let u = (pool.random::<f64>(), pool.random::<f64>());
        let Some((pa, pb)) = truth.sample(u, size_a) else {
            continue;
        };
        if !size_a.contains(&pa) || !size_b.contains(&pb) {
            continue;
        }
        let pb = pb + truncated_noise(&mut rng, params.noise_sigma);
        if size_b.contains(&pb) {
            matches.push(Match::new(pa, pb, 1.0, source));
        }
    }
    if matches.len() < params.count {
        log::warn!(
            "{source}: only {} of {} requested matches are visible in {} and {}",
            matches.len(),
            params.count,
            frame_a.frame,
            frame_b.frame
        );
    }

    let n_out = (params.outlier_rate * matches.len() as f64).round() as usize;
    let mut planted = vec![false; matches.len()];
    // matches whose A-point admits no violating B-point (at an epipole) are
    // passed over in favour of the next candidate
    let order = rand::seq::index::sample(&mut rng, matches.len(), matches.len()).into_vec();
    let mut remaining = n_out;
    for i in order {
        if remaining == 0 {
            break;
        }
        let pa = matches[i].pa;
        for _ in 0..PLANT_ATTEMPTS {
            let q = Point2::new(
                rng.random_range(0.0..size_b.width as f64),
                rng.random_range(0.0..size_b.height as f64),
            );
            if truth.residual(&pa, &q) > params.outlier_min_residual {
                matches[i].pb = q;
                planted[i] = true;
                remaining -= 1;
                break;
            }
        }
    }
    if remaining > 0 {
        log::warn!("{source}: could only plant {} of {n_out} outliers", n_out - remaining);
    }

    let set = CorrespondenceSet::new(frame_a.frame.clone(), frame_b.frame.clone(), matches)?;
    Ok(MatchOutput {
        set,
        dropped: RawReport::default(),
        flag: None,
        planted_outliers: Some(planted),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::correspondence::FrameId;
    use crate::matcher::GrayImage;
    use nalgebra::Vector3;

    fn frame(index: u64, w: u32, h: u32) -> FrameSource {
        FrameSource::from_image(FrameId::new("s", index).unwrap(), GrayImage::new(w, h, vec![0; (w * h) as usize]))
    }

    fn planar() -> SyntheticTruth {
        SyntheticTruth::Planar {
            extent: ImageSize::new(800, 600),
            to_a: Homography::translation(-50.0, -40.0),
            to_b: Homography::new(Matrix3::new(0.95, 0.05, -70.0, -0.03, 1.02, -30.0, 2e-5, 1e-5, 1.0)).unwrap(),
        }
    }

    fn params(count: usize, outlier_rate: f64, noise_sigma: f64) -> SyntheticParams {
        SyntheticParams {
            count,
            outlier_rate,
            noise_sigma,
            ..SyntheticParams::default()
        }
    }

    #[test]
    fn noise_free_matches_are_exact() {
        let out = match_synthetic(&frame(0, 640, 480), &frame(20, 640, 480), &planar(), &params(500, 0.0, 0.0), "syn").unwrap();
        assert_eq!(out.set.len(), 500);
        for m in out.set.matches() {
            assert!(planar().residual(&m.pa, &m.pb) < 1e-9);
        }
        assert!(out.planted_outliers.unwrap().iter().all(|&o| !o));
    }

    #[test]
    fn outlier_count_is_exact() {
        let out = match_synthetic(&frame(0, 640, 480), &frame(20, 640, 480), &planar(), &params(200, 0.5, 0.0), "syn").unwrap();
        let planted = out.planted_outliers.unwrap();
        assert_eq!(planted.iter().filter(|&&o| o).count(), 100);
        for (m, &o) in out.set.matches().iter().zip(&planted) {
            if !o {
                assert!(planar().residual(&m.pa, &m.pb) < 1e-9);
            }
        }
    }

    #[test]
    fn noise_is_bounded_and_has_the_requested_spread() {
        let out = match_synthetic(&frame(0, 640, 480), &frame(20, 640, 480), &planar(), &params(10_000, 0.0, 1.0), "syn").unwrap();
        let truth = planar();
        let SyntheticTruth::Planar { to_a, to_b, .. } = &truth else { unreachable!() };
        let h = to_b.compose(&to_a.inverse().unwrap()).unwrap();
        let mut sq = 0.0;
        for m in out.set.matches() {
            let d = m.pb - h.apply(&m.pa).unwrap();
            assert!(d.norm() <= 3.0 + 1e-6);
            sq += d.norm_squared();
        }
        // per-axis standard deviation
        let std = (sq / (2.0 * out.set.len() as f64)).sqrt();
        assert!((std - 1.0).abs() < 0.1, "std {std}");
    }

    #[test]
    fn deterministic_and_chain_consistent() {
        let p = params(300, 0.2, 0.5);
        let a = match_synthetic(&frame(0, 640, 480), &frame(20, 640, 480), &planar(), &p, "syn").unwrap();
        let b = match_synthetic(&frame(0, 640, 480), &frame(20, 640, 480), &planar(), &p, "syn").unwrap();
        assert_eq!(a.set, b.set);
        // A endpoints depend only on the scene stream and frame A's warp
        let other = SyntheticTruth::Planar {
            extent: ImageSize::new(800, 600),
            to_a: Homography::translation(-50.0, -40.0),
            to_b: Homography::translation(-60.0, -40.0),
        };
        let c = match_synthetic(&frame(0, 640, 480), &frame(40, 640, 480), &other, &params(300, 0.0, 0.0), "syn").unwrap();
        let shared = c
            .set
            .matches()
            .iter()
            .filter(|m| a.set.matches().iter().any(|n| n.pa == m.pa))
            .count();
        assert!(shared > 250, "{shared}");
    }

    #[test]
    fn posed_truth_outliers_violate_epipolar_constraint() {
        let k = CameraIntrinsics::new(400.0, 400.0, 160.0, 120.0, 320, 240).unwrap();
        let depth = Arc::new(DepthMap::from_fn(320, 240, |x, y| 5.0 + 0.01 * x as f32 + 0.005 * y as f32));
        // sideways, then backwards with the epipole inside the image
        for t in [Vector3::new(-0.5, 0.05, 0.1), Vector3::new(0.02, 0.01, 0.8)] {
            let pose_b = Pose::new(*nalgebra::Rotation3::from_euler_angles(0.02, -0.05, 0.01).matrix(), t).unwrap();
            let truth = SyntheticTruth::Posed {
                k_a: k,
                pose_a: Pose::identity(),
                depth_a: depth.clone(),
                k_b: k,
                pose_b,
            };
            let p = SyntheticParams {
                count: 300,
                outlier_rate: 0.4,
                outlier_min_residual: 10.0,
                ..SyntheticParams::default()
            };
            let out = match_synthetic(&frame(0, 320, 240), &frame(20, 320, 240), &truth, &p, "syn").unwrap();
            let planted = out.planted_outliers.unwrap();
            assert_eq!(out.set.len(), 300);
            assert_eq!(planted.iter().filter(|&&o| o).count(), 120);
            for (m, &o) in out.set.matches().iter().zip(&planted) {
                let r = truth.residual(&m.pa, &m.pb);
                if o {
                    assert!(r > 10.0, "{r}");
                } else {
                    assert!(r < 1e-6, "{r}");
                }
            }
        }
    }
}
