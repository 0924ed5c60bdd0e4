//! Correspondence labeling from video and zero-shot two-view evaluation.
//!
//! The crate is organised bottom-up:
//!
//! - [`geometry`]: pinhole cameras, poses, homographies, essential matrices.
//! - [`correspondence`]: sparse match sets, fusion and transitive propagation.
//! - [`robust`]: DLT / eight-point solvers and a seeded RANSAC loop.
//! - [`matcher`]: built-in, synthetic and subprocess matchers.
//! - [`pipeline`]: frame sampling, base labels, propagation, augmentation.
//! - [`benchmark`]: overlap ratios, pair binning, pose AUC and mean rank.

pub mod benchmark;
pub mod correspondence;
pub mod geometry;
mod grid;
pub mod robust;
pub mod matcher;
pub mod pipeline;
pub mod seed;
