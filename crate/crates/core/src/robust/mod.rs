//! Robust two-view model fitting.
//!
//! A seeded RANSAC loop over minimal samples with adaptive termination and a
//! final least-squares refit. Inlier residuals are in pixels: the square root
//! of the Sampson distance for fundamental/essential models, and the larger
//! of forward and backward transfer error for homographies.

mod ransac;
mod solvers;

pub use ransac::{ransac, residual, RansacConfig};
pub use solvers::{
    estimate_essential, estimate_fundamental_8pt, estimate_homography_dlt, planar_degeneracy_score,
    refine_essential, refine_fundamental,
};

use crate::correspondence::CorrespondenceSet;
use crate::geometry::{CameraIntrinsics, Homography};
use nalgebra::{Matrix3, Point2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A pixel correspondence `(point in A, point in B)`.
pub type PointPair = (Point2<f64>, Point2<f64>);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RobustError {
    #[error("need at least {needed} matches, got {got}")]
    InsufficientMatches { needed: usize, got: usize },
    #[error("degenerate point configuration")]
    DegenerateConfiguration,
    #[error("no sample produced a model with minimal inlier support")]
    NoModelFound,
    #[error("invalid RANSAC configuration: {0}")]
    InvalidConfig(String),
}

/// Which model to fit. The essential variant carries both calibrations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ModelKind {
    Homography,
    Fundamental,
    Essential {
        k_a: CameraIntrinsics,
        k_b: CameraIntrinsics,
    },
}

/// Serializable tag of a [`ModelKind`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelTag {
    Homography,
    Fundamental,
    Essential,
}

impl ModelKind {
    pub fn tag(&self) -> ModelTag {
        match self {
            ModelKind::Homography => ModelTag::Homography,
            ModelKind::Fundamental => ModelTag::Fundamental,
            ModelKind::Essential { .. } => ModelTag::Essential,
        }
    }

    /// Size of a minimal sample.
    pub fn sample_size(&self) -> usize {
        match self {
            ModelKind::Homography => 4,
            _ => 8,
        }
    }
}

/// Fitted model plus its consensus set.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoViewModel {
    pub kind: ModelTag,
    /// Homography `H`, fundamental `F` (pixels) or essential `E` (normalized).
    pub matrix: Matrix3<f64>,
    pub inlier_mask: Vec<bool>,
    pub iterations_run: usize,
    pub threshold: f64,
}

impl TwoViewModel {
    pub fn inlier_count(&self) -> usize {
        self.inlier_mask.iter().filter(|&&b| b).count()
    }
}

pub(crate) fn symmetric_transfer(
    h: &Homography,
    h_inv: &Homography,
    p: &Point2<f64>,
    q: &Point2<f64>,
) -> f64 {
    match (h.apply(p), h_inv.apply(q)) {
        (Ok(fwd), Ok(bwd)) => (fwd - q).norm().max((bwd - p).norm()),
        _ => f64::INFINITY,
    }
}

pub fn pairs_of(set: &CorrespondenceSet) -> Vec<PointPair> {
    set.matches().iter().map(|m| (m.pa, m.pb)).collect()
}

/// Why [`filter_matches`] returned an empty set.
#[derive(Debug, Clone, PartialEq)]
pub enum FilterFlag {
    InsufficientMatches,
    NoModelFound,
    Failed(RobustError),
}

#[derive(Debug, Clone)]
pub struct FilterOutcome {
    pub set: CorrespondenceSet,
    pub model: Option<TwoViewModel>,
    pub flag: Option<FilterFlag>,
}

/// Keeps only the RANSAC inliers of `raw`. Never fails: degenerate or small
/// inputs produce an empty set and a flag.
pub fn filter_matches(raw: &CorrespondenceSet, kind: &ModelKind, config: &RansacConfig) -> FilterOutcome {
    let empty = || raw.retain_mask(&vec![false; raw.len()]);
    if raw.len() < kind.sample_size() {
        return FilterOutcome {
            set: empty(),
            model: None,
            flag: Some(FilterFlag::InsufficientMatches),
        };
    }
    match ransac(kind, &pairs_of(raw), config) {
        Ok(model) => FilterOutcome {
            set: raw.retain_mask(&model.inlier_mask),
            model: Some(model),
            flag: None,
        },
        Err(e) => {
            let flag = match e {
                RobustError::InsufficientMatches { .. } => FilterFlag::InsufficientMatches,
                RobustError::NoModelFound => FilterFlag::NoModelFound,
                other => FilterFlag::Failed(other),
            };
            FilterOutcome {
                set: empty(),
                model: None,
                flag: Some(flag),
            }
        }
    }
}
