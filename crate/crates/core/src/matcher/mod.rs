//! Pluggable matchers.
//!
//! Three kinds sit behind [`MatcherSpec`]: a deterministic corner and patch
//! matcher ([`builtin`]), a ground-truth oracle with controllable noise and
//! outliers ([`synthetic`]), and an out-of-process protocol ([`external`]).
//! All of them return a [`MatchOutput`] whose set has been re-validated
//! against the frame bounds.

pub mod builtin;
pub mod external;
pub mod image;
pub mod synthetic;

pub use builtin::BuiltinParams;
pub use external::ExternalParams;
pub use image::{pgm_size, GrayImage, ImageError};
pub use synthetic::{SyntheticParams, SyntheticTruth};

use crate::correspondence::InterchangeError;
use crate::correspondence::{CorrespondenceError, CorrespondenceSet, FrameId, RawReport};
use crate::geometry::{CameraIntrinsics, ImageSize};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::borrow::Cow;
use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MatcherError {
    #[error("image has zero width or height")]
    EmptyImage,
    #[error("invalid matcher spec: {0}")]
    InvalidSpec(String),
    #[error("synthetic matcher needs ground truth for this pair")]
    MissingGroundTruth,
    #[error("image: {0}")]
    Image(#[from] ImageError),
    #[error("failed to launch matcher: {0}")]
    Spawn(std::io::Error),
    #[error("matcher exited with {status}: {stderr}")]
    ProcessFailure { status: String, stderr: String },
    #[error("matcher did not finish within {0:?}")]
    Timeout(Duration),
    #[error("matcher output: {0}")]
    Parse(#[from] InterchangeError),
    #[error(transparent)]
    Correspondence(#[from] CorrespondenceError),
    #[error("frame size mismatch: image is {image:?}, intrinsics say {intrinsics:?}")]
    SizeMismatch {
        image: ImageSize,
        intrinsics: ImageSize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatcherKind {
    Builtin,
    Synthetic,
    External,
}

/// A configured matcher. `params` are kind-specific; unknown keys are
/// rejected by [`MatcherSpec::validate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatcherSpec {
    pub kind: MatcherKind,
    pub name: String,
    #[serde(default)]
    pub params: BTreeMap<String, Value>,
}

impl MatcherSpec {
    pub fn new(kind: MatcherKind, name: impl Into<String>) -> Self {
        Self {
            kind,
            name: name.into(),
            params: BTreeMap::new(),
        }
    }

    pub fn with_param(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.params.insert(key.to_string(), value.into());
        self
    }

    pub fn validate(&self) -> Result<(), MatcherError> {
        if self.name.is_empty() || self.name.chars().any(char::is_whitespace) {
            return Err(MatcherError::InvalidSpec(format!(
                "name {:?} must be non-empty without whitespace",
                self.name
            )));
        }
        match self.kind {
            MatcherKind::Builtin => BuiltinParams::from_spec(self).map(|_| ()),
            MatcherKind::Synthetic => SyntheticParams::from_spec(self).map(|_| ()),
            MatcherKind::External => ExternalParams::from_spec(self).map(|_| ()),
        }
    }
}

/// Typed access to a spec's parameter map.
pub(crate) struct Params<'a> {
    spec: &'a MatcherSpec,
    allowed: &'static [&'static str],
}

impl<'a> Params<'a> {
    pub(crate) fn new(spec: &'a MatcherSpec, allowed: &'static [&'static str]) -> Result<Self, MatcherError> {
        if let Some(k) = spec.params.keys().find(|k| !allowed.contains(&k.as_str())) {
            return Err(MatcherError::InvalidSpec(format!(
                "{}: unknown parameter {k:?} (allowed: {})",
                spec.name,
                allowed.join(", ")
            )));
        }
        Ok(Self { spec, allowed })
    }

    fn err(&self, key: &str, what: &str) -> MatcherError {
        debug_assert!(self.allowed.contains(&key));
        MatcherError::InvalidSpec(format!("{}: parameter {key:?} must be {what}", self.spec.name))
    }

    pub(crate) fn f64(&self, key: &str, default: f64) -> Result<f64, MatcherError> {
        match self.spec.params.get(key) {
            None => Ok(default),
            Some(v) => v
                .as_f64()
                .filter(|x| x.is_finite())
                .ok_or_else(|| self.err(key, "a finite number")),
        }
    }

    pub(crate) fn u64(&self, key: &str, default: u64) -> Result<u64, MatcherError> {
        match self.spec.params.get(key) {
            None => Ok(default),
            Some(v) => v.as_u64().ok_or_else(|| self.err(key, "a non-negative integer")),
        }
    }

    pub(crate) fn usize(&self, key: &str, default: usize) -> Result<usize, MatcherError> {
        self.u64(key, default as u64).map(|v| v as usize)
    }

    pub(crate) fn str(&self, key: &str) -> Result<Option<&'a str>, MatcherError> {
        match self.spec.params.get(key) {
            None => Ok(None),
            Some(v) => v.as_str().map(Some).ok_or_else(|| self.err(key, "a string")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ImageSource {
    Path(PathBuf),
    Memory(Arc<GrayImage>),
}

/// One video frame as seen by a matcher.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSource {
    pub frame: FrameId,
    pub image: ImageSource,
    pub intrinsics: Option<CameraIntrinsics>,
}

impl FrameSource {
    pub fn from_path(frame: FrameId, path: impl Into<PathBuf>) -> Self {
        Self {
            frame,
            image: ImageSource::Path(path.into()),
            intrinsics: None,
        }
    }

    pub fn from_image(frame: FrameId, image: GrayImage) -> Self {
        Self {
            frame,
            image: ImageSource::Memory(Arc::new(image)),
            intrinsics: None,
        }
    }

    pub fn with_intrinsics(mut self, k: CameraIntrinsics) -> Self {
        self.intrinsics = Some(k);
        self
    }

    pub fn load(&self) -> Result<Cow<'_, GrayImage>, MatcherError> {
        let img = match &self.image {
            ImageSource::Path(p) => Cow::Owned(GrayImage::read_pgm(p)?),
            ImageSource::Memory(img) => Cow::Borrowed(img.as_ref()),
        };
        self.check_size(img.size())?;
        Ok(img)
    }

    /// Image size, reading at most the file header.
    pub fn size(&self) -> Result<ImageSize, MatcherError> {
        let size = match &self.image {
            ImageSource::Path(p) => pgm_size(p)?,
            ImageSource::Memory(img) => img.size(),
        };
        self.check_size(size)?;
        Ok(size)
    }

    fn check_size(&self, image: ImageSize) -> Result<(), MatcherError> {
        match &self.intrinsics {
            Some(k) if k.size() != image => Err(MatcherError::SizeMismatch {
                image,
                intrinsics: k.size(),
            }),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatchFlag {
    /// One of the images produced no usable keypoints.
    NoKeypoints,
}

#[derive(Debug, Clone)]
pub struct MatchOutput {
    pub set: CorrespondenceSet,
    /// Raw matches dropped by re-validation.
    pub dropped: RawReport,
    pub flag: Option<MatchFlag>,
    /// Synthetic matcher only: which matches of `set` are planted outliers.
    pub planted_outliers: Option<Vec<bool>>,
}

/// Frame pairs must be in canonical order, as required by [`CorrespondenceSet`].
pub(crate) fn check_order(a: &FrameSource, b: &FrameSource) -> Result<(), MatcherError> {
    if a.frame >= b.frame {
        return Err(CorrespondenceError::FrameOrder(a.frame.clone(), b.frame.clone()).into());
    }
    Ok(())
}

/// Runs any matcher kind. `truth` is required for synthetic matchers and
/// ignored otherwise.
pub fn run_matcher(
    spec: &MatcherSpec,
    frame_a: &FrameSource,
    frame_b: &FrameSource,
    truth: Option<&SyntheticTruth>,
) -> Result<MatchOutput, MatcherError> {
    check_order(frame_a, frame_b)?;
    let out = match spec.kind {
        MatcherKind::Builtin => builtin::match_builtin(frame_a, frame_b, &BuiltinParams::from_spec(spec)?, &spec.name)?,
        MatcherKind::Synthetic => {
            let truth = truth.ok_or(MatcherError::MissingGroundTruth)?;
            synthetic::match_synthetic(frame_a, frame_b, truth, &SyntheticParams::from_spec(spec)?, &spec.name)?
        }
        MatcherKind::External => external::match_external(frame_a, frame_b, &ExternalParams::from_spec(spec)?, &spec.name)?,
    };
    if out.dropped.dropped() > 0 {
        log::warn!(
            "{} on {} -> {}: dropped {} invalid, {} out-of-bounds, {} duplicate matches",
            spec.name,
            frame_a.frame,
            frame_b.frame,
            out.dropped.invalid,
            out.dropped.out_of_bounds,
            out.dropped.duplicates
        );
    }
    Ok(out)
}
