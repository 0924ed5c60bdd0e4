//! Zero-shot two-view evaluation.
//!
//! Evaluation pairs come from `pairs.json` dataset directories. Each method's
//! matches go through essential-matrix RANSAC, the recovered pose is compared
//! with the ground truth, and the per-pair errors are summarised as AUC at
//! 5, 10 and 20 degrees. Methods are ranked per dataset and the ranks are
//! averaged.

mod dataset;
mod evaluate;
mod metrics;
mod overlap;
mod run;
mod sampling;
mod synthetic;

pub use dataset::{
    load_eval_dataset, overlap_bin, read_depth, save_eval_dataset, write_depth, EvalDataset, EvalDatasetError,
    EvalFrame, EvalPair, OVERLAP_BINS, PAIRS_FILE,
};
pub use evaluate::{
    estimate_relative_pose, eval_ransac_config, evaluate_pair, relative_pose_error, PoseFailure,
    EVAL_RANSAC_THRESHOLD,
};
pub use metrics::{auc, corner_error, homography_corner_auc, mean_rank, MetricError, HOMOGRAPHY_THRESHOLDS};
pub use overlap::{directional_overlap, overlap_ratio, DepthView, OverlapError, DEFAULT_DEPTH_TOLERANCE};
pub use run::{
    read_report, run_benchmark, write_report, BenchmarkConfig, BenchmarkError, BenchmarkResult, ReportRow,
    ScoreTable, POSE_THRESHOLDS,
};
pub use sampling::{sample_eval_pairs, Sample, DEFAULT_PER_BIN};
pub use synthetic::{write_synthetic_dataset, Plane, PlaneScene};
