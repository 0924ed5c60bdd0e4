use super::dataset::{read_depth, EvalDataset, EvalPair};
use super::evaluate::{relative_pose_error, EVAL_RANSAC_THRESHOLD};
use super::metrics::{auc, mean_rank, MetricError};
use crate::correspondence::FrameId;
use crate::geometry::{relative_pose, MAX_POSE_ERROR_DEG};
use crate::matcher::{run_matcher, FrameSource, MatcherError, MatcherKind, MatcherSpec, SyntheticTruth};
use crate::robust::{pairs_of, RansacConfig};
use crate::seed::SeedHasher;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use thiserror::Error;

/// Pose-error thresholds (degrees) reported per cell.
pub const POSE_THRESHOLDS: [f64; 3] = [5.0, 10.0, 20.0];

#[derive(Debug, Error)]
pub enum BenchmarkError {
    #[error("no methods to evaluate")]
    NoMethods,
    #[error("no datasets to evaluate")]
    NoDatasets,
    #[error("method {0:?} is listed twice")]
    DuplicateMethod(String),
    #[error("dataset {0:?} is listed twice")]
    DuplicateDataset(String),
    #[error("dataset {0:?} has no pairs")]
    EmptyDataset(String),
    #[error(transparent)]
    Matcher(#[from] MatcherError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{0}: {1}")]
    Io(PathBuf, std::io::Error),
    #[error("{0}: {1}")]
    Json(PathBuf, serde_json::Error),
    #[error("duplicate result for {method} on {dataset}")]
    DuplicateRow { method: String, dataset: String },
    #[error("thread pool: {0}")]
    Pool(#[from] rayon::ThreadPoolBuildError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub ransac: RansacConfig,
    pub seed: u64,
    /// Share of pairs that must be scored without failure for a cell to be trusted.
    pub min_coverage: f64,
    pub parallelism: usize,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            ransac: RansacConfig {
                threshold: EVAL_RANSAC_THRESHOLD,
                ..RansacConfig::default()
            },
            seed: 0,
            min_coverage: 0.9,
            parallelism: 1,
        }
    }
}

/// One (method, dataset) cell of a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: String,
    pub dataset: String,
    pub auc5: f64,
    pub auc10: f64,
    pub auc20: f64,
    pub n_pairs: usize,
    pub n_failures: usize,
    /// Fewer than the configured share of pairs were scored without failure.
    #[serde(default)]
    pub low_coverage: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    pub methods: Vec<String>,
    pub datasets: Vec<String>,
    /// `auc[m][d]`: AUC@5 of method `m` on dataset `d`, as a fraction.
    pub auc: Vec<Vec<f64>>,
    pub low_coverage: Vec<Vec<bool>>,
    pub mean_auc: Vec<f64>,
    pub mean_rank: Vec<f64>,
}

impl ScoreTable {
    /// Assembles a table from report rows. Methods keep their first-seen
    /// order; every method needs a row for every dataset.
    pub fn from_rows(rows: &[ReportRow]) -> Result<Self, BenchmarkError> {
        let mut methods: Vec<String> = Vec::new();
        let mut datasets: Vec<String> = Vec::new();
        for r in rows {
            if !methods.contains(&r.method) {
                methods.push(r.method.clone());
            }
            if !datasets.contains(&r.dataset) {
                datasets.push(r.dataset.clone());
            }
        }
        let mut grid = vec![vec![None; datasets.len()]; methods.len()];
        let mut flags = vec![vec![false; datasets.len()]; methods.len()];
        for r in rows {
            let m = methods.iter().position(|x| *x == r.method).expect("collected above");
            let d = datasets.iter().position(|x| *x == r.dataset).expect("collected above");
            if grid[m][d].replace(r.auc5).is_some() {
                return Err(BenchmarkError::DuplicateRow {
                    method: r.method.clone(),
                    dataset: r.dataset.clone(),
                });
            }
            flags[m][d] = r.low_coverage;
        }
        let mean_rank = mean_rank(&methods, &datasets, &grid)?;
        let auc: Vec<Vec<f64>> = grid
            .into_iter()
            .map(|row| row.into_iter().map(|v| v.expect("checked by mean_rank")).collect())
            .collect();
        let mean_auc = auc
            .iter()
            .map(|row| row.iter().sum::<f64>() / row.len().max(1) as f64)
            .collect();
        Ok(Self {
            methods,
            datasets,
            auc,
            low_coverage: flags,
            mean_auc,
            mean_rank,
        })
    }

    /// Plain-text table: method, mean rank, mean AUC@5 and one column per
    /// dataset, in percent. Cells with low coverage carry a `*`.
    pub fn render(&self) -> String {
        let mut header = vec!["Method".to_string(), "Mean Rank".to_string(), "Mean AUC@5°".to_string()];
        header.extend(self.datasets.iter().cloned());
        let mut rows = vec![header];
        for (m, name) in self.methods.iter().enumerate() {
            let mut row = vec![
                name.clone(),
                format!("{:.2}", self.mean_rank[m]),
                format!("{:.1}", 100.0 * self.mean_auc[m]),
            ];
            for d in 0..self.datasets.len() {
                let mark = if self.low_coverage[m][d] { "*" } else { "" };
                row.push(format!("{:.1}{mark}", 100.0 * self.auc[m][d]));
            }
            rows.push(row);
        }
        let widths: Vec<usize> = (0..rows[0].len())
            .map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for r in &rows {
            let cells: Vec<String> = r
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(c, (s, w))| if c == 0 { format!("{s:<w$}") } else { format!("{s:>w$}") })
                .collect();
            let _ = writeln!(out, "{}", cells.join("  ").trim_end());
        }
        if self.low_coverage.iter().flatten().any(|&f| f) {
            out.push_str("* fewer than the required share of pairs scored without failure\n");
        }
        out
    }
}

/// Pose errors of one method on one pair.
#[derive(Debug, Clone, Copy, PartialEq)]
struct PairScore {
    degrees: f64,
    failed: bool,
}

#[derive(Debug, Clone)]
pub struct BenchmarkResult {
    pub rows: Vec<ReportRow>,
    pub table: ScoreTable,
}

fn needs_truth(methods: &[MatcherSpec]) -> bool {
    methods.iter().any(|m| m.kind == MatcherKind::Synthetic)
}

fn truth_for(pair: &EvalPair) -> Option<SyntheticTruth> {
    let path = pair.frame_a.depth.as_ref()?;
    match read_depth(path) {
        Ok(depth) => Some(SyntheticTruth::Posed {
            k_a: pair.frame_a.intrinsics,
            pose_a: pair.frame_a.pose,
            depth_a: Arc::new(depth),
            k_b: pair.frame_b.intrinsics,
            pose_b: pair.frame_b.pose,
        }),
        Err(e) => {
            log::warn!("{}/{}: {e}", pair.dataset, pair.id);
            None
        }
    }
}

fn score_pair(
    dataset: &str,
    index: usize,
    pair: &EvalPair,
    methods: &[MatcherSpec],
    cfg: &BenchmarkConfig,
) -> Vec<PairScore> {
    let frame = |i: u64, f: &super::EvalFrame| {
        FrameSource::from_path(FrameId::new(dataset, i).expect("dataset id validated"), f.image.clone())
            .with_intrinsics(f.intrinsics)
    };
    let a = frame(2 * index as u64, &pair.frame_a);
    let b = frame(2 * index as u64 + 1, &pair.frame_b);
    let truth = if needs_truth(methods) { truth_for(pair) } else { None };
    let gt = relative_pose(&pair.frame_a.pose, &pair.frame_b.pose);
    methods
        .iter()
        .map(|spec| {
            let seed = SeedHasher::new(cfg.seed)
                .u64(cfg.ransac.seed)
                .str(dataset)
                .str(&pair.id)
                .str(&spec.name)
                .finish();
            let outcome = run_matcher(spec, &a, &b, truth.as_ref())
                .map_err(|e| e.to_string())
                .and_then(|out| {
                    relative_pose_error(
                        &pairs_of(&out.set),
                        &pair.frame_a.intrinsics,
                        &pair.frame_b.intrinsics,
                        &gt,
                        &cfg.ransac.with_seed(seed),
                    )
                    .map_err(|e| e.to_string())
                });
            match outcome {
                Ok(degrees) => PairScore { degrees, failed: false },
                Err(e) => {
                    log::debug!("{}/{} {}: {e}", dataset, pair.id, spec.name);
                    PairScore {
                        degrees: MAX_POSE_ERROR_DEG,
                        failed: true,
                    }
                }
            }
        })
        .collect()
}

/// Matches every pair with every method and scores relative poses.
/// Aggregation follows `(dataset, pair)` order, so results do not depend on
/// scheduling.
pub fn run_benchmark(
    datasets: &[EvalDataset],
    methods: &[MatcherSpec],
    cfg: &BenchmarkConfig,
) -> Result<BenchmarkResult, BenchmarkError> {
    if methods.is_empty() {
        return Err(BenchmarkError::NoMethods);
    }
    if datasets.is_empty() {
        return Err(BenchmarkError::NoDatasets);
    }
    cfg.ransac.validate().map_err(|e| BenchmarkError::Config(e.to_string()))?;
    if cfg.parallelism == 0 {
        return Err(BenchmarkError::Config("parallelism must be at least 1".into()));
    }
    let mut seen = BTreeSet::new();
    for m in methods {
        m.validate()?;
        if !seen.insert(&m.name) {
            return Err(BenchmarkError::DuplicateMethod(m.name.clone()));
        }
    }
    let mut seen = BTreeSet::new();
    for d in datasets {
        if !seen.insert(&d.id) {
            return Err(BenchmarkError::DuplicateDataset(d.id.clone()));
        }
        if d.pairs.is_empty() {
            return Err(BenchmarkError::EmptyDataset(d.id.clone()));
        }
    }

    let pool = rayon::ThreadPoolBuilder::new().num_threads(cfg.parallelism).build()?;
    let mut rows = Vec::new();
    for d in datasets {
        let scores: Vec<Vec<PairScore>> = pool.install(|| {
            d.pairs
                .par_iter()
                .enumerate()
                .map(|(i, p)| score_pair(&d.id, i, p, methods, cfg))
                .collect()
        });
        for (m, spec) in methods.iter().enumerate() {
            let errors: Vec<f64> = scores.iter().map(|s| s[m].degrees).collect();
            let n_failures = scores.iter().filter(|s| s[m].failed).count();
            let n = errors.len();
            let [auc5, auc10, auc20] = POSE_THRESHOLDS.map(|t| auc(&errors, t));
            rows.push(ReportRow {
                method: spec.name.clone(),
                dataset: d.id.clone(),
                auc5: auc5?,
                auc10: auc10?,
                auc20: auc20?,
                n_pairs: n,
                n_failures,
                low_coverage: ((n - n_failures) as f64) < cfg.min_coverage * n as f64,
            });
        }
    }
    let table = ScoreTable::from_rows(&rows)?;
    Ok(BenchmarkResult { rows, table })
}

pub fn write_report(path: &Path, rows: &[ReportRow]) -> Result<(), BenchmarkError> {
    let json = serde_json::to_string_pretty(rows).expect("rows serialize") + "\n";
    std::fs::write(path, json).map_err(|e| BenchmarkError::Io(path.to_path_buf(), e))
}

pub fn read_report(path: &Path) -> Result<Vec<ReportRow>, BenchmarkError> {
    let text = std::fs::read_to_string(path).map_err(|e| BenchmarkError::Io(path.to_path_buf(), e))?;
    serde_json::from_str(&text).map_err(|e| BenchmarkError::Json(path.to_path_buf(), e))
}
