use super::dataset::EvalPair;
use crate::correspondence::CorrespondenceSet;
use crate::geometry::{
    cheirality_select, pose_error, relative_pose, CameraIntrinsics, EssentialMatrix, GeometryError, Pose,
    MAX_POSE_ERROR_DEG,
};
use crate::robust::{pairs_of, ransac, ModelKind, PointPair, RansacConfig, RobustError};
use thiserror::Error;

/// Inlier threshold (px) used when scoring relative poses.
pub const EVAL_RANSAC_THRESHOLD: f64 = 1.0;

pub fn eval_ransac_config(seed: u64) -> RansacConfig {
    RansacConfig {
        threshold: EVAL_RANSAC_THRESHOLD,
        ..RansacConfig::default()
    }
    .with_seed(seed)
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PoseFailure {
    #[error(transparent)]
    Robust(#[from] RobustError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("estimated translation is degenerate")]
    DegenerateTranslation,
}

/// Essential-matrix RANSAC, decomposition and cheirality selection.
pub fn estimate_relative_pose(
    pairs: &[PointPair],
    k_a: &CameraIntrinsics,
    k_b: &CameraIntrinsics,
    config: &RansacConfig,
) -> Result<Pose, PoseFailure> {
    let model = ransac(&ModelKind::Essential { k_a: *k_a, k_b: *k_b }, pairs, config)?;
    let candidates = EssentialMatrix::project(&model.matrix)?.decompose()?;
    let inliers: Vec<PointPair> = pairs
        .iter()
        .zip(&model.inlier_mask)
        .filter(|(_, &m)| m)
        .map(|((p, q), _)| (k_a.normalize(p), k_b.normalize(q)))
        .collect();
    Ok(cheirality_select(&candidates, &inliers)?)
}

/// Pose error in degrees against the true relative pose `gt` (A to B).
pub fn relative_pose_error(
    pairs: &[PointPair],
    k_a: &CameraIntrinsics,
    k_b: &CameraIntrinsics,
    gt: &Pose,
    config: &RansacConfig,
) -> Result<f64, PoseFailure> {
    let est = estimate_relative_pose(pairs, k_a, k_b, config)?;
    let score = pose_error(&est, gt);
    if score.degenerate {
        return Err(PoseFailure::DegenerateTranslation);
    }
    Ok(score.degrees)
}

/// Scores a matcher's output on an evaluation pair; failures score 180.
pub fn evaluate_pair(corrs: &CorrespondenceSet, pair: &EvalPair, config: &RansacConfig) -> f64 {
    let gt = relative_pose(&pair.frame_a.pose, &pair.frame_b.pose);
    relative_pose_error(&pairs_of(corrs), &pair.frame_a.intrinsics, &pair.frame_b.intrinsics, &gt, config)
        .unwrap_or(MAX_POSE_ERROR_DEG)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmark::EvalFrame;
    use crate::correspondence::FrameId;
    use nalgebra::{Point2, Rotation3, Vector3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn k() -> CameraIntrinsics {
        CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0, 640, 480).unwrap()
    }

    /// Points in front of both cameras with depth 4..12 in A.
    fn scene(rng: &mut ChaCha8Rng, rel: &Pose, n: usize, sigma: f64) -> Vec<PointPair> {
        let noise = Normal::new(0.0, sigma.max(1e-300)).unwrap();
        let mut out = Vec::new();
        while out.len() < n {
            let pa = Point2::new(rng.random_range(0.0..640.0), rng.random_range(0.0..480.0));
            let x = k().unproject(&pa, rng.random_range(4.0..12.0)).unwrap();
            if let Some(pb) = k().project(&rel.transform(&x)) {
                if k().size().contains(&pb) {
                    let jitter = |r: &mut ChaCha8Rng| if sigma > 0.0 { noise.sample(r) } else { 0.0 };
                    let pb = Point2::new(pb.x + jitter(rng), pb.y + jitter(rng));
                    out.push((pa, pb));
                }
            }
        }
        out
    }

    fn rel(rng: &mut ChaCha8Rng) -> Pose {
        let r = Rotation3::from_euler_angles(rng.random_range(-0.2..0.2), rng.random_range(-0.3..0.3), rng.random_range(-0.1..0.1));
        Pose::new(*r.matrix(), Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3))).unwrap()
    }

    #[test]
    fn perfect_matches_recover_the_pose() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for i in 0..10 {
            let gt = rel(&mut rng);
            let pairs = scene(&mut rng, &gt, 300, 0.0);
            let err = relative_pose_error(&pairs, &k(), &k(), &gt, &eval_ransac_config(i)).unwrap();
            assert!(err < 0.1, "{err}");
        }
    }

    #[test]
    fn noisy_matches_stay_within_a_degree() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut errs: Vec<f64> = (0..20)
            .map(|i| {
                let gt = rel(&mut rng);
                let pairs = scene(&mut rng, &gt, 500, 0.5);
                relative_pose_error(&pairs, &k(), &k(), &gt, &eval_ransac_config(i)).unwrap()
            })
            .collect();
        errs.sort_by(f64::total_cmp);
        assert!(errs[10] < 1.0, "{errs:?}");
    }

    #[test]
    fn translation_scale_does_not_matter() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let gt = rel(&mut rng);
        let pairs = scene(&mut rng, &gt, 200, 0.3);
        let scaled = Pose::new(*gt.rotation(), gt.translation() * 7.5).unwrap();
        let a = relative_pose_error(&pairs, &k(), &k(), &gt, &eval_ransac_config(0)).unwrap();
        let b = relative_pose_error(&pairs, &k(), &k(), &scaled, &eval_ransac_config(0)).unwrap();
        assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn empty_set_scores_the_maximum() {
        let frame = EvalFrame {
            image: "a.pgm".into(),
            intrinsics: k(),
            pose: Pose::identity(),
            depth: None,
        };
        let pair = EvalPair {
            dataset: "d".into(),
            id: "0".into(),
            frame_a: frame.clone(),
            frame_b: frame,
            overlap: None,
        };
        let empty = CorrespondenceSet::empty(FrameId::new("d", 0).unwrap(), FrameId::new("d", 1).unwrap()).unwrap();
        assert_eq!(evaluate_pair(&empty, &pair, &eval_ransac_config(0)), 180.0);
    }
}
