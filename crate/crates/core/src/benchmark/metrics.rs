use crate::geometry::{Homography, ImageSize};
use thiserror::Error;

/// Corner-error thresholds for homography estimation, in pixels.
pub const HOMOGRAPHY_THRESHOLDS: [f64; 3] = [3.0, 5.0, 10.0];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("no errors to integrate")]
    EmptyErrors,
    #[error("threshold must be positive and finite, got {0}")]
    InvalidThreshold(f64),
    #[error("error values must be non-negative, got {0}")]
    InvalidError(f64),
    #[error("score grid is incomplete: {method} has no score on {dataset}")]
    IncompleteGrid { method: String, dataset: String },
}

/// Normalized area under the cumulative recall curve up to `threshold`.
///
/// With sorted errors `e_1 <= ... <= e_N`, recall is `i / N` on
/// `[e_i, e_{i+1})`; the integral is the sum of those rectangles clipped to
/// `[0, threshold]`, divided by `threshold`. `+inf` errors are allowed and
/// never count as recalled.
pub fn auc(errors: &[f64], threshold: f64) -> Result<f64, MetricError> {
    if errors.is_empty() {
        return Err(MetricError::EmptyErrors);
    }
    if !(threshold > 0.0 && threshold.is_finite()) {
        return Err(MetricError::InvalidThreshold(threshold));
    }
    if let Some(&bad) = errors.iter().find(|e| !(**e >= 0.0)) {
        return Err(MetricError::InvalidError(bad));
    }
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut area = 0.0;
    for (i, &e) in sorted.iter().enumerate() {
        if e >= threshold {
            break;
        }
        let next = sorted.get(i + 1).map_or(threshold, |&x| x.min(threshold));
        area += (i + 1) as f64 / n * (next - e);
    }
    Ok(area / threshold)
}

/// Average 1-based rank of each method over the datasets, ranking by score
/// descending with ties sharing the mean of the ranks they occupy.
///
/// `scores[m][d]` is method `m` on dataset `d`; every cell must be present.
pub fn mean_rank(
    methods: &[String],
    datasets: &[String],
    scores: &[Vec<Option<f64>>],
) -> Result<Vec<f64>, MetricError> {
    let cell = |m: usize, d: usize| {
        scores
            .get(m)
            .and_then(|row| row.get(d).copied().flatten())
            .ok_or_else(|| MetricError::IncompleteGrid {
                method: methods[m].clone(),
                dataset: datasets[d].clone(),
            })
    };
    let mut totals = vec![0.0; methods.len()];
    for d in 0..datasets.len() {
        let column: Vec<f64> = (0..methods.len()).map(|m| cell(m, d)).collect::<Result<_, _>>()?;
        for (m, &s) in column.iter().enumerate() {
            let better = column.iter().filter(|&&o| o > s).count();
            let tied = column.iter().filter(|&&o| o == s).count();
            totals[m] += better as f64 + (tied as f64 + 1.0) / 2.0;
        }
    }
    let n = datasets.len().max(1) as f64;
    Ok(totals.into_iter().map(|t| t / n).collect())
}

/// Mean distance between the four image corners mapped by the estimated and
/// the true homography; `+inf` when either maps a corner to infinity.
pub fn corner_error(h_est: &Homography, h_gt: &Homography, size: ImageSize) -> f64 {
    let corners = size.corners();
    let mut sum = 0.0;
    for c in &corners {
        match (h_est.apply(c), h_gt.apply(c)) {
            (Ok(p), Ok(q)) => sum += (p - q).norm(),
            _ => return f64::INFINITY,
        }
    }
    sum / corners.len() as f64
}

/// AUC of corner errors at each threshold, in the order given.
pub fn homography_corner_auc(errors: &[f64], thresholds: &[f64]) -> Result<Vec<f64>, MetricError> {
    thresholds.iter().map(|&t| auc(errors, t)).collect()
}
