use crate::correspondence::{DEFAULT_DEDUP_RADIUS, DEFAULT_MIN_CORRESPONDENCES, DEFAULT_PIXEL_THRESHOLD};
use crate::matcher::{MatcherError, MatcherKind, MatcherSpec};
use crate::robust::RansacConfig;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("matcher: {0}")]
    Matcher(#[from] MatcherError),
    #[error("cannot read configuration: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed configuration: {0}")]
    Json(#[from] serde_json::Error),
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError::Invalid(msg.into()))
}

/// Where robust filtering happens relative to fusion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterStage {
    /// Each matcher's raw output is filtered on its own, then fused.
    #[default]
    PerMethod,
    /// Raw outputs are fused first and the union is filtered once.
    PostFusion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub enabled: bool,
    /// Corner displacement bound as a fraction of `min(width, height)`.
    pub max_corner_perturbation: f64,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            max_corner_perturbation: 0.15,
            seed: 0,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(0.0..0.5).contains(&self.max_corner_perturbation) {
            return invalid("augmentation.max_corner_perturbation must be in [0, 0.5)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Frame sampling step.
    pub frame_interval: u64,
    /// Offsets of the base pairs, a doubling ladder `d, 2d, 4d, ...`.
    pub base_offsets: Vec<u64>,
    /// Sets must hold strictly more than this many matches to survive.
    pub min_correspondences: usize,
    pub propagation_pixel_threshold: f64,
    /// Radius for cross-method duplicate removal.
    pub dedup_radius: f64,
    /// Matchers in fusion priority order.
    pub matchers: Vec<MatcherSpec>,
    pub filter_stage: FilterStage,
    pub ransac: RansacConfig,
    pub augmentation: AugmentConfig,
    /// Global seed mixed into every per-pair seed.
    pub seed: u64,
    /// Worker threads (also bounds concurrent external matchers).
    pub parallelism: usize,
    pub output_dir: PathBuf,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            frame_interval: 20,
            base_offsets: vec![20, 40, 80],
            min_correspondences: DEFAULT_MIN_CORRESPONDENCES,
            propagation_pixel_threshold: DEFAULT_PIXEL_THRESHOLD,
            dedup_radius: DEFAULT_DEDUP_RADIUS,
            matchers: vec![MatcherSpec::new(MatcherKind::Builtin, "builtin")],
            filter_stage: FilterStage::PerMethod,
            ransac: RansacConfig::default(),
            augmentation: AugmentConfig::default(),
            seed: 0,
            parallelism: 1,
            output_dir: PathBuf::from("out"),
        }
    }
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.frame_interval == 0 {
            return invalid("frame_interval must be > 0");
        }
        for w in self.base_offsets.windows(2) {
            if w[1] <= w[0] {
                return invalid("base_offsets must be strictly increasing");
            }
        }
        if let Some(&first) = self.base_offsets.first() {
            for (i, &d) in self.base_offsets.iter().enumerate() {
                if d % self.frame_interval != 0 {
                    return invalid(format!(
                        "base offset {d} is not a multiple of frame_interval {}",
                        self.frame_interval
                    ));
                }
                let on_ladder = first.checked_shl(i as u32).filter(|v| v >> i == first) == Some(d);
                if !on_ladder {
                    return invalid(format!(
                        "base_offsets must double from the first offset ({first}, {}, ...); got {d}",
                        2 * first
                    ));
                }
            }
        }
        if self.min_correspondences == 0 {
            return invalid("min_correspondences must be >= 1");
        }
        if !(self.propagation_pixel_threshold >= 0.0 && self.propagation_pixel_threshold.is_finite()) {
            return invalid("propagation_pixel_threshold must be finite and >= 0");
        }
        if !(self.dedup_radius >= 0.0 && self.dedup_radius.is_finite()) {
            return invalid("dedup_radius must be finite and >= 0");
        }
        if self.matchers.is_empty() {
            return invalid("at least one matcher is required");
        }
        let mut names = std::collections::BTreeSet::new();
        for m in &self.matchers {
            m.validate()?;
            if !names.insert(&m.name) {
                return invalid(format!("duplicate matcher name {:?}", m.name));
            }
        }
        self.ransac
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.augmentation.validate()?;
        if self.parallelism == 0 {
            return invalid("parallelism must be >= 1");
        }
        Ok(())
    }
}
