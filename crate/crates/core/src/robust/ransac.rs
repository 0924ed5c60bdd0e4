use super::solvers::{
    estimate_essential, estimate_fundamental_8pt, estimate_homography_dlt, refine_essential, refine_fundamental,
};
use super::{symmetric_transfer, ModelKind, PointPair, RobustError, TwoViewModel};
use crate::geometry::{sampson_distance, EssentialMatrix, Homography};
use nalgebra::Matrix3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// RANSAC parameters. The seed is the only source of randomness.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RansacConfig {
    /// Inlier threshold in pixels.
    pub threshold: f64,
    pub confidence: f64,
    pub max_iterations: usize,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            threshold: 2.0,
            confidence: 0.99999,
            max_iterations: 10_000,
            seed: 0,
        }
    }
}

impl RansacConfig {
    /// Defaults for homography fitting (3 px symmetric transfer).
    pub fn homography() -> Self {
        Self {
            threshold: 3.0,
            ..Self::default()
        }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }

    pub fn validate(&self) -> Result<(), RobustError> {
        if !(self.threshold > 0.0 && self.threshold.is_finite()) {
            return Err(RobustError::InvalidConfig(format!(
                "threshold must be > 0, got {}",
                self.threshold
            )));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(RobustError::InvalidConfig(format!(
                "confidence must be in (0, 1), got {}",
                self.confidence
            )));
        }
        if self.max_iterations < 1 {
            return Err(RobustError::InvalidConfig("max_iterations must be >= 1".into()));
        }
        Ok(())
    }
}

/// A fitted matrix with whatever is needed to score residuals quickly.
#[derive(Clone)]
enum Scorer {
    Homography { h: Homography, h_inv: Homography },
    Epipolar { f: Matrix3<f64>, model: Matrix3<f64> },
}

impl Scorer {
    fn fit(kind: &ModelKind, pairs: &[PointPair]) -> Option<Self> {
        match kind {
            ModelKind::Homography => {
                let h = estimate_homography_dlt(pairs).ok()?;
                let h_inv = h.inverse().ok()?;
                Some(Scorer::Homography { h, h_inv })
            }
            ModelKind::Fundamental => {
                let f = estimate_fundamental_8pt(pairs).ok()?;
                Some(Scorer::Epipolar { f, model: f })
            }
            ModelKind::Essential { k_a, k_b } => {
                let e = estimate_essential(pairs, k_a, k_b).ok()?;
                Some(Scorer::Epipolar {
                    f: e.to_fundamental(k_a, k_b),
                    model: *e.matrix(),
                })
            }
        }
    }

    /// Least-squares refit on `inliers`; epipolar models are reweighted
    /// towards Sampson error using the current estimate.
    fn refit(&self, kind: &ModelKind, inliers: &[PointPair]) -> Option<Self> {
        match (self, kind) {
            (Scorer::Epipolar { f, .. }, ModelKind::Fundamental) => {
                let f = refine_fundamental(inliers, f).ok()?;
                Some(Scorer::Epipolar { f, model: f })
            }
            (Scorer::Epipolar { model, .. }, ModelKind::Essential { k_a, k_b }) => {
                let current = EssentialMatrix::project(model).ok()?;
                let e = refine_essential(inliers, k_a, k_b, &current).ok()?;
                Some(Scorer::Epipolar {
                    f: e.to_fundamental(k_a, k_b),
                    model: *e.matrix(),
                })
            }
            _ => Self::fit(kind, inliers),
        }
    }

    fn residual(&self, pair: &PointPair) -> f64 {
        match self {
            Scorer::Homography { h, h_inv } => symmetric_transfer(h, h_inv, &pair.0, &pair.1),
            Scorer::Epipolar { f, .. } => sampson_distance(f, &pair.0, &pair.1).sqrt(),
        }
    }

    fn matrix(&self) -> Matrix3<f64> {
        match self {
            Scorer::Homography { h, .. } => *h.matrix(),
            Scorer::Epipolar { model, .. } => *model,
        }
    }

    /// `(inlier count, truncated squared cost, mask)`: inliers cost their
    /// squared residual, outliers the squared threshold.
    fn score(&self, pairs: &[PointPair], threshold: f64) -> (usize, f64, Vec<bool>) {
        let mut count = 0;
        let mut total = 0.0;
        let mask = pairs
            .iter()
            .map(|p| {
                let r = self.residual(p);
                let inlier = r < threshold;
                if inlier {
                    count += 1;
                    total += r * r;
                } else {
                    total += threshold * threshold;
                }
                inlier
            })
            .collect();
        (count, total, mask)
    }
}

/// Pixel residual of one pair under a fitted model matrix, using the same
/// definition as the RANSAC inlier test.
pub fn residual(kind: &ModelKind, matrix: &Matrix3<f64>, pair: &PointPair) -> f64 {
    match kind {
        ModelKind::Homography => {
            let (Ok(h), Ok(h_inv)) = (
                Homography::new(*matrix),
                Homography::new(*matrix).and_then(|h| h.inverse()),
            ) else {
                return f64::INFINITY;
            };
            symmetric_transfer(&h, &h_inv, &pair.0, &pair.1)
        }
        ModelKind::Fundamental => sampson_distance(matrix, &pair.0, &pair.1).sqrt(),
        ModelKind::Essential { k_a, k_b } => {
            let f = k_b.inverse_matrix().transpose() * matrix * k_a.inverse_matrix();
            sampson_distance(&f, &pair.0, &pair.1).sqrt()
        }
    }
}

fn required_iterations(confidence: f64, inlier_ratio: f64, sample_size: usize) -> usize {
    let good_sample = inlier_ratio.powi(sample_size as i32);
    if good_sample >= 1.0 {
        return 0;
    }
    if good_sample <= 0.0 {
        return usize::MAX;
    }
    let n = (1.0 - confidence).ln() / (1.0 - good_sample).ln();
    if n.is_finite() {
        n.ceil().max(0.0) as usize
    } else {
        usize::MAX
    }
}

/// Least-squares refits on the current inliers, kept while they improve the
/// score.
const POLISH_STEPS: usize = 8;

type Scored = (usize, f64, Vec<bool>, Scorer);

/// Inlier-selection widths, in units of the threshold, for the annealed refit.
const ANNEAL: [f64; 4] = [4.0, 3.0, 2.0, 1.5];

fn select(pairs: &[PointPair], model: &Scorer, width: f64) -> Vec<PointPair> {
    pairs.iter().filter(|p| model.residual(p) < width).copied().collect()
}

/// Inner samples drawn from the inliers of each new best hypothesis.
const INNER_SAMPLES: usize = 10;
/// Inner sample size, in multiples of the minimal sample size.
const INNER_SAMPLE_FACTOR: usize = 7;

fn masked(pairs: &[PointPair], mask: &[bool]) -> Vec<PointPair> {
    pairs.iter().zip(mask).filter(|(_, &m)| m).map(|(p, _)| *p).collect()
}

/// Annealed refit followed by plain inlier refits while the cost drops.
fn refine(kind: &ModelKind, pairs: &[PointPair], threshold: f64, start: Scorer) -> Option<Scored> {
    let mut model = start;
    for width in ANNEAL {
        match model.refit(kind, &select(pairs, &model, width * threshold)) {
            Some(next) => model = next,
            None => break,
        }
    }
    let (count, total, mask) = model.score(pairs, threshold);
    let mut best = (count, total, mask, model);
    for _ in 0..POLISH_STEPS {
        let Some(refit) = best.3.refit(kind, &masked(pairs, &best.2)) else {
            break;
        };
        let (count, total, mask) = refit.score(pairs, threshold);
        if total < best.1 {
            best = (count, total, mask, refit);
        } else {
            break;
        }
    }
    Some(best)
}

/// Local optimisation of a new best hypothesis: the hypothesis itself and
/// fits to random subsets of its inliers are refined, keeping the cheapest.
fn polish(kind: &ModelKind, pairs: &[PointPair], threshold: f64, best: Scored, rng: &mut ChaCha8Rng) -> Scored {
    let inliers = masked(pairs, &best.2);
    let mut starts = vec![best.3.clone()];
    let s = kind.sample_size();
    let size = (inliers.len() / 2).min(INNER_SAMPLE_FACTOR * s);
    if size > s {
        for _ in 0..INNER_SAMPLES {
            let subset: Vec<PointPair> = rand::seq::index::sample(rng, inliers.len(), size)
                .iter()
                .map(|i| inliers[i])
                .collect();
            starts.extend(Scorer::fit(kind, &subset));
        }
    }
    let mut best = best;
    for start in starts {
        if let Some(cand) = refine(kind, pairs, threshold, start) {
            if cand.1 < best.1 {
                best = cand;
            }
        }
    }
    best
}

/// Seeded RANSAC with adaptive termination and local optimisation.
///
/// Hypotheses are ranked by truncated squared cost (MSAC), so a model that
/// fits its inliers tightly beats one that stretches to admit a few more;
/// among exact ties the earlier hypothesis is kept. Every new best is refined
/// from its inliers (see `polish`) and the winner once more until stable.
/// The returned mask is recomputed under the returned matrix.
pub fn ransac(
    kind: &ModelKind,
    pairs: &[PointPair],
    config: &RansacConfig,
) -> Result<TwoViewModel, RobustError> {
    config.validate()?;
    let s = kind.sample_size();
    let n = pairs.len();
    if n < s {
        return Err(RobustError::InsufficientMatches { needed: s, got: n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut best: Option<Scored> = None;
    let mut limit = config.max_iterations;
    let mut iterations = 0;
    let mut sample: Vec<PointPair> = Vec::with_capacity(s);

    while iterations < limit {
        iterations += 1;
        let idx = rand::seq::index::sample(&mut rng, n, s);
        sample.clear();
        sample.extend(idx.iter().map(|i| pairs[i]));
        let Some(model) = Scorer::fit(kind, &sample) else {
            continue;
        };
        let (count, total, mask) = model.score(pairs, config.threshold);
        let better = match &best {
            None => true,
            Some((_, bt, _, _)) => total < *bt,
        };
        if better {
            let (count, total, mask, model) = polish(kind, pairs, config.threshold, (count, total, mask, model), &mut rng);
            let ratio = count as f64 / n as f64;
            best = Some((count, total, mask, model));
            limit = required_iterations(config.confidence, ratio, s).min(config.max_iterations);
        }
    }

    let mut best = best.ok_or(RobustError::NoModelFound)?;
    // the winner is polished again from its final inlier set until stable
    for _ in 0..POLISH_STEPS {
        let cost = best.1;
        best = polish(kind, pairs, config.threshold, best, &mut rng);
        if !(best.1 < cost) {
            break;
        }
    }
    let (count, _, mask, model) = best;
    if count < s {
        return Err(RobustError::NoModelFound);
    }

    let matrix = model.matrix();
    Ok(TwoViewModel {
        kind: kind.tag(),
        matrix,
        inlier_mask: mask,
        iterations_run: iterations,
        threshold: config.threshold,
    })
}
