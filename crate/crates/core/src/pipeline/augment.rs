use super::{AugmentConfig, PairFlag, TrainingPair};
use crate::correspondence::Match;
use crate::geometry::{Homography, ImageSize};
use crate::robust::estimate_homography_dlt;
use nalgebra::Point2;
use rand::Rng;
use thiserror::Error;

const MAX_TRIES: usize = 20;
const MIN_LINEAR_DET: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AugmentError {
    #[error("no acceptable perspective warp after {MAX_TRIES} draws")]
    Rejected,
}

fn acceptable(h: &Homography, size: ImageSize) -> bool {
    let m = h.affine_normalized();
    let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
    if !det.is_finite() || det.abs() < MIN_LINEAR_DET {
        return false;
    }
    let (w, h_) = (size.width as f64, size.height as f64);
    // 2x-padded canvas: the image centred in a canvas twice its size.
    size.corners().iter().all(|c| match h.apply(c) {
        Ok(p) => p.x >= -w / 2.0 && p.x <= 1.5 * w && p.y >= -h_ / 2.0 && p.y <= 1.5 * h_,
        Err(_) => false,
    })
}

/// Random homography moving each image corner by an independent uniform
/// offset in `[-m, m]^2`, `m = max_corner_perturbation * min(width, height)`.
pub fn random_perspective(
    size: ImageSize,
    cfg: &AugmentConfig,
    rng: &mut impl Rng,
) -> Result<Homography, AugmentError> {
    let m = cfg.max_corner_perturbation * size.width.min(size.height) as f64;
    if m == 0.0 {
        return Ok(Homography::identity());
    }
    let corners = size.corners();
    for _ in 0..MAX_TRIES {
        let pairs: Vec<(Point2<f64>, Point2<f64>)> = corners
            .iter()
            .map(|c| {
                let d = (rng.random_range(-m..=m), rng.random_range(-m..=m));
                (*c, Point2::new(c.x + d.0, c.y + d.1))
            })
            .collect();
        if let Ok(h) = estimate_homography_dlt(&pairs) {
            if acceptable(&h, size) {
                return Ok(h);
            }
        }
    }
    Err(AugmentError::Rejected)
}

/// Maps every endpoint through its frame's warp and drops matches with an
/// endpoint outside the (same-sized) warped image. Warps compose with any
/// already recorded on the pair. When too few matches would remain the pair
/// is returned unchanged with a [`PairFlag::BudgetUnderflow`] flag.
pub fn apply_augmentation(
    pair: &TrainingPair,
    h_a: &Homography,
    h_b: &Homography,
    min_correspondences: usize,
) -> TrainingPair {
    let kept: Vec<Match> = pair
        .correspondences
        .matches()
        .iter()
        .filter_map(|m| {
            let pa = h_a.apply(&m.pa).ok()?;
            let pb = h_b.apply(&m.pb).ok()?;
            (pair.size_a.contains(&pa) && pair.size_b.contains(&pb)).then(|| Match {
                pa,
                pb,
                ..m.clone()
            })
        })
        .collect();
    if kept.len() <= min_correspondences {
        let mut out = pair.clone();
        out.flags.push(PairFlag::BudgetUnderflow { count: kept.len() });
        return out;
    }
    let compose = |prev: &Option<Homography>, h: &Homography| match prev {
        Some(p) => h.compose(p).ok(),
        None => Some(*h),
    };
    let (Some(aug_a), Some(aug_b)) = (compose(&pair.augment_a, h_a), compose(&pair.augment_b, h_b)) else {
        let mut out = pair.clone();
        out.flags.push(PairFlag::AugmentationRejected);
        return out;
    };
    // Bijective warps keep distinct matches distinct up to rounding; from_raw
    // guards against the rest.
    let (set, _) = crate::correspondence::CorrespondenceSet::from_raw(
        pair.frame_a().clone(),
        pair.frame_b().clone(),
        kept,
        None,
    )
    .expect("frames keep their order");
    TrainingPair {
        correspondences: set,
        augment_a: Some(aug_a),
        augment_b: Some(aug_b),
        ..pair.clone()
    }
}
