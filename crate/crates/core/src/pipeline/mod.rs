//! Self-labeling pipeline for video frame pairs.
//!
//! Frames are sampled at a fixed interval. Base pairs at a few short offsets
//! are labeled by every configured matcher, robustly filtered and fused.
//! Labels are then pushed to twice the interval by composing chains through
//! the shared middle frame, round after round, for as long as enough
//! correspondences survive. The most distant surviving pair per starting
//! frame is kept, optionally warped by a random perspective transform, and
//! written out with a manifest.

mod augment;
mod config;
mod dataset;
mod labels;
mod propagation;
mod run;
mod schedule;
mod video;

pub use augment::{apply_augmentation, random_perspective, AugmentError};
pub use config::{AugmentConfig, ConfigError, FilterStage, PipelineConfig};
pub use dataset::{
    config_hash, emit_dataset, read_dataset, DatasetError, DroppedPair, Manifest, ManifestPair,
    MANIFEST_FILE,
};
pub use labels::{generate_base_labels, BaseLabels};
pub use propagation::{propagate_video, BaseIndex};
pub use run::{
    augment_dataset, label_videos, propagate_cached, read_base_cache, write_base_cache, BaseCache,
    RunError, RunSummary,
};
pub use schedule::{sample_frames, schedule_base_pairs};
pub use video::{PlanarTrack, SyntheticVideo, VideoError, VideoFrames, TRUTH_FILE};
pub(crate) use video::Texture;

use crate::correspondence::{CorrespondenceSet, FrameId};
use crate::geometry::{Homography, ImageSize};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Non-fatal events attached to a pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "flag", rename_all = "snake_case")]
pub enum PairFlag {
    MatcherFailed { matcher: String, error: String },
    NoKeypoints { matcher: String },
    FilterRejected { matcher: String, reason: String },
    /// The fused base set was too small to fit a fundamental matrix.
    TooFewMatches { count: usize },
    AugmentationRejected,
    /// Augmentation would have left too few correspondences.
    BudgetUnderflow { count: usize },
}

/// One emitted training example.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    pub correspondences: CorrespondenceSet,
    pub size_a: ImageSize,
    pub size_b: ImageSize,
    pub augment_a: Option<Homography>,
    pub augment_b: Option<Homography>,
    /// Number of propagation rounds behind the set (0 for a base pair).
    pub depth: u32,
    pub flags: Vec<PairFlag>,
}

impl TrainingPair {
    pub fn frame_a(&self) -> &FrameId {
        self.correspondences.frame_a()
    }

    pub fn frame_b(&self) -> &FrameId {
        self.correspondences.frame_b()
    }

    pub fn interval(&self) -> u64 {
        self.correspondences.interval()
    }

    /// Matches per source tag.
    pub fn provenance(&self) -> BTreeMap<String, usize> {
        self.correspondences.provenance()
    }
}
