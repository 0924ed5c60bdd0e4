use super::DroppedPair;
use super::{
    apply_augmentation, config_hash, emit_dataset, generate_base_labels, propagate_video, random_perspective,
    read_dataset, sample_frames, schedule_base_pairs, BaseIndex, DatasetError, Manifest, PairFlag,
    PipelineConfig, TrainingPair, VideoError, VideoFrames,
};
use crate::correspondence::{read_correspondences, write_correspondences, InterchangeError};
use crate::geometry::ImageSize;
use crate::seed::SeedHasher;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use thiserror::Error;

const BASE_DIR: &str = "base";
const BASE_INDEX: &str = "index.json";

#[derive(Debug, Error)]
pub enum RunError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Video(#[from] VideoError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Cache {
        path: PathBuf,
        source: InterchangeError,
    },
    #[error("{path}: malformed base cache: {source}")]
    CacheIndex {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("thread pool: {0}")]
    Pool(#[from] rayon::ThreadPoolBuildError),
}

impl RunError {
    fn io(path: &Path) -> impl FnOnce(std::io::Error) -> Self + '_ {
        move |source| Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub base_pairs: usize,
    pub dropped: usize,
    pub manifest: Manifest,
}

impl RunSummary {
    /// True when some base pairs produced no labels.
    pub fn is_partial(&self) -> bool {
        self.dropped > 0
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CachedVideo {
    video: String,
    frame_size: ImageSize,
    frames: Vec<u64>,
    pairs: Vec<(u64, u64)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CacheIndex {
    base_offsets: Vec<u64>,
    videos: Vec<CachedVideo>,
    dropped: Vec<DroppedPair>,
}

/// Filtered base labels of a run, as stored under `<out>/base`.
#[derive(Debug, Clone)]
pub struct BaseCache {
    pub base_offsets: Vec<u64>,
    /// Each video with its sampled frames.
    pub videos: Vec<(BaseIndex, Vec<u64>)>,
    pub dropped: Vec<DroppedPair>,
}

fn cache_file(video: &str, a: u64, b: u64) -> PathBuf {
    PathBuf::from(video).join(format!("{a:08}_{b:08}.corrs"))
}

pub fn write_base_cache(out: &Path, cache: &BaseCache) -> Result<(), RunError> {
    let dir = out.join(BASE_DIR);
    let mut index = CacheIndex {
        base_offsets: cache.base_offsets.clone(),
        videos: Vec::new(),
        dropped: cache.dropped.clone(),
    };
    for (base, frames) in &cache.videos {
        let vdir = dir.join(&base.video);
        std::fs::create_dir_all(&vdir).map_err(RunError::io(&vdir))?;
        for (&(a, b), set) in &base.sets {
            let path = dir.join(cache_file(&base.video, a, b));
            write_correspondences(&path, set).map_err(RunError::io(&path))?;
        }
        index.videos.push(CachedVideo {
            video: base.video.clone(),
            frame_size: base.frame_size,
            frames: frames.clone(),
            pairs: base.sets.keys().copied().collect(),
        });
    }
    let path = dir.join(BASE_INDEX);
    let json = serde_json::to_string_pretty(&index).expect("cache index serializes");
    std::fs::write(&path, json).map_err(RunError::io(&path))
}

pub fn read_base_cache(out: &Path) -> Result<BaseCache, RunError> {
    let dir = out.join(BASE_DIR);
    let path = dir.join(BASE_INDEX);
    let text = std::fs::read_to_string(&path).map_err(RunError::io(&path))?;
    let index: CacheIndex =
        serde_json::from_str(&text).map_err(|source| RunError::CacheIndex { path: path.clone(), source })?;
    let mut videos = Vec::new();
    for v in index.videos {
        let mut sets = BTreeMap::new();
        for (a, b) in v.pairs {
            let path = dir.join(cache_file(&v.video, a, b));
            let (set, _) = read_correspondences(&path, Some((v.frame_size, v.frame_size)))
                .map_err(|source| RunError::Cache { path: path.clone(), source })?;
            sets.insert((a, b), set);
        }
        let base = BaseIndex {
            video: v.video,
            frame_size: v.frame_size,
            sets,
        };
        videos.push((base, v.frames));
    }
    Ok(BaseCache {
        base_offsets: index.base_offsets,
        videos,
        dropped: index.dropped,
    })
}

fn pool(cfg: &PipelineConfig) -> Result<rayon::ThreadPool, RunError> {
    Ok(rayon::ThreadPoolBuilder::new().num_threads(cfg.parallelism).build()?)
}

fn validated(cfg: &PipelineConfig) -> Result<(), RunError> {
    cfg.validate().map_err(|e| RunError::Config(e.to_string()))
}

/// Labels every base pair of every video, caches the filtered base labels
/// under `<out>/base`, then propagates, augments and emits the dataset.
pub fn label_videos(videos: &[VideoFrames], cfg: &PipelineConfig) -> Result<RunSummary, RunError> {
    validated(cfg)?;
    let pool = pool(cfg)?;
    let out = Path::new(&cfg.output_dir);

    let work: Vec<(usize, Vec<u64>, Vec<(u64, u64)>)> = videos
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let frames = sample_frames(v.length, cfg.frame_interval);
            let pairs = schedule_base_pairs(&frames, &cfg.base_offsets);
            (i, frames, pairs)
        })
        .collect();
    let items: Vec<(usize, u64, u64)> = work
        .iter()
        .flat_map(|(i, _, pairs)| pairs.iter().map(move |&(a, b)| (*i, a, b)))
        .collect();
    log::info!("labeling {} base pairs across {} videos", items.len(), videos.len());

    let labeled = pool.install(|| {
        items
            .par_iter()
            .map(|&(i, a, b)| {
                let v = &videos[i];
                let truth = v.truth(a, b);
                generate_base_labels(&v.frame_source(a), &v.frame_source(b), truth.as_ref(), cfg)
            })
            .collect::<Vec<_>>()
    });

    let mut indices: Vec<BaseIndex> = videos
        .iter()
        .map(|v| BaseIndex {
            video: v.id.clone(),
            frame_size: v.frame_size,
            sets: BTreeMap::new(),
        })
        .collect();
    let mut dropped = Vec::new();
    for (&(i, a, b), labels) in items.iter().zip(labeled) {
        if labels.dropped {
            dropped.push(DroppedPair {
                video: videos[i].id.clone(),
                frame_a: a,
                frame_b: b,
                flags: labels.flags,
            });
        } else {
            if !labels.flags.is_empty() {
                log::debug!("{}:{a} -> {b}: {:?}", videos[i].id, labels.flags);
            }
            indices[i].sets.insert((a, b), labels.set);
        }
    }
    let cache = BaseCache {
        base_offsets: cfg.base_offsets.clone(),
        videos: indices.into_iter().zip(work.into_iter().map(|(_, f, _)| f)).collect(),
        dropped,
    };
    write_base_cache(out, &cache)?;
    // Propagate from the stored labels so that `propagate_cached` reproduces
    // this run exactly; the interchange format rounds coordinates.
    let cache = read_base_cache(out)?;
    finish(&pool, &cache, cfg, items.len())
}

/// Re-runs propagation, augmentation and emission from the cached base labels
/// in `<output_dir>/base`.
pub fn propagate_cached(cfg: &PipelineConfig) -> Result<RunSummary, RunError> {
    validated(cfg)?;
    let cache = read_base_cache(Path::new(&cfg.output_dir))?;
    if cache.base_offsets != cfg.base_offsets {
        return Err(RunError::Config(format!(
            "base offsets {:?} differ from the cached {:?}",
            cfg.base_offsets, cache.base_offsets
        )));
    }
    let pool = pool(cfg)?;
    let total = cache.dropped.len() + cache.videos.iter().map(|(b, _)| b.sets.len()).sum::<usize>();
    finish(&pool, &cache, cfg, total)
}

fn finish(pool: &rayon::ThreadPool, cache: &BaseCache, cfg: &PipelineConfig, base_pairs: usize) -> Result<RunSummary, RunError> {
    let pairs: Vec<TrainingPair> = pool.install(|| {
        let propagated: Vec<TrainingPair> = cache
            .videos
            .iter()
            .flat_map(|(base, frames)| propagate_video(base, frames, cfg))
            .collect();
        augment_pairs(propagated, cfg)
    });
    log::info!("emitting {} training pairs", pairs.len());
    let manifest = emit_dataset(&pairs, &cache.dropped, Path::new(&cfg.output_dir), &config_hash(cfg))?;
    Ok(RunSummary {
        base_pairs,
        dropped: cache.dropped.len(),
        manifest,
    })
}

/// Draws independent warps for both frames, seeded from the pair identity.
fn augment_pair(pair: TrainingPair, cfg: &PipelineConfig) -> TrainingPair {
    let seed = SeedHasher::new(cfg.seed)
        .u64(cfg.augmentation.seed)
        .str("augment")
        .str(&pair.frame_a().to_string())
        .str(&pair.frame_b().to_string())
        .finish();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h_a = random_perspective(pair.size_a, &cfg.augmentation, &mut rng);
    let h_b = random_perspective(pair.size_b, &cfg.augmentation, &mut rng);
    match (h_a, h_b) {
        (Ok(h_a), Ok(h_b)) => apply_augmentation(&pair, &h_a, &h_b, cfg.min_correspondences),
        _ => {
            let mut out = pair;
            out.flags.push(PairFlag::AugmentationRejected);
            out
        }
    }
}

fn augment_pairs(pairs: Vec<TrainingPair>, cfg: &PipelineConfig) -> Vec<TrainingPair> {
    if !cfg.augmentation.enabled {
        return pairs;
    }
    pairs.into_par_iter().map(|p| augment_pair(p, cfg)).collect()
}

/// Applies perspective augmentation to an emitted dataset and writes the
/// result to `cfg.output_dir`.
pub fn augment_dataset(input: &Path, cfg: &PipelineConfig) -> Result<RunSummary, RunError> {
    validated(cfg)?;
    let (manifest, pairs) = read_dataset(input)?;
    let pool = pool(cfg)?;
    let pairs = pool.install(|| augment_pairs(pairs, cfg));
    let out = emit_dataset(&pairs, &manifest.dropped, Path::new(&cfg.output_dir), &config_hash(cfg))?;
    Ok(RunSummary {
        base_pairs: manifest.pairs.len() + manifest.dropped.len(),
        dropped: manifest.dropped.len(),
        manifest: out,
    })
}
