//! Linear two-view solvers: normalized DLT homography, normalized eight-point
//! fundamental matrix, and essential matrix with manifold projection.

use super::{PointPair, RobustError};
use crate::geometry::{canonical_fundamental, CameraIntrinsics, EssentialMatrix, Homography};
use nalgebra::{DMatrix, Matrix3, Point2};

/// Rank-deficiency cutoff on the second-smallest singular value of the
/// design matrix, relative to the largest.
const RANK_TOL: f64 = 1e-8;

/// Similarity moving the centroid to the origin with mean distance `sqrt(2)`.
pub(crate) fn hartley_transform(pts: impl Iterator<Item = Point2<f64>> + Clone) -> Option<Matrix3<f64>> {
    let n = pts.clone().count() as f64;
    if n == 0.0 {
        return None;
    }
    let (sx, sy) = pts.clone().fold((0.0, 0.0), |(a, b), p| (a + p.x, b + p.y));
    let (cx, cy) = (sx / n, sy / n);
    let mean = pts.map(|p| ((p.x - cx).powi(2) + (p.y - cy).powi(2)).sqrt()).sum::<f64>() / n;
    if !(mean > 1e-12) || !mean.is_finite() {
        return None;
    }
    let s = std::f64::consts::SQRT_2 / mean;
    Some(Matrix3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0))
}

fn transform(t: &Matrix3<f64>, p: &Point2<f64>) -> Point2<f64> {
    Point2::new(t[(0, 0)] * p.x + t[(0, 2)], t[(1, 1)] * p.y + t[(1, 2)])
}

/// Right null vector of a design matrix (rows padded to at least 9).
fn null_vector(a: DMatrix<f64>) -> Result<[f64; 9], RobustError> {
    let a = if a.nrows() < 9 {
        let mut padded = DMatrix::zeros(9, 9);
        padded.view_mut((0, 0), (a.nrows(), 9)).copy_from(&a);
        padded
    } else {
        a
    };
    if a.iter().any(|v| !v.is_finite()) {
        return Err(RobustError::DegenerateConfiguration);
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.ok_or(RobustError::DegenerateConfiguration)?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&x, &y| svd.singular_values[y].total_cmp(&svd.singular_values[x]));
    let largest = svd.singular_values[order[0]];
    let second_smallest = svd.singular_values[order[7]];
    if !(largest > 0.0) || second_smallest / largest < RANK_TOL {
        return Err(RobustError::DegenerateConfiguration);
    }
    let row = v_t.row(order[8]);
    let mut out = [0.0; 9];
    for (o, v) in out.iter_mut().zip(row.iter()) {
        *o = *v;
    }
    Ok(out)
}

/// Normalized DLT homography mapping `pair.0` to `pair.1`.
pub fn estimate_homography_dlt(pairs: &[PointPair]) -> Result<Homography, RobustError> {
    if pairs.len() < 4 {
        return Err(RobustError::InsufficientMatches {
            needed: 4,
            got: pairs.len(),
        });
    }
    let ta = hartley_transform(pairs.iter().map(|p| p.0)).ok_or(RobustError::DegenerateConfiguration)?;
    let tb = hartley_transform(pairs.iter().map(|p| p.1)).ok_or(RobustError::DegenerateConfiguration)?;
    let mut a = DMatrix::zeros(2 * pairs.len(), 9);
    for (i, (p, q)) in pairs.iter().enumerate() {
        let s = transform(&ta, p);
        let d = transform(&tb, q);
        let r = 2 * i;
        a[(r, 3)] = -s.x;
        a[(r, 4)] = -s.y;
        a[(r, 5)] = -1.0;
        a[(r, 6)] = d.y * s.x;
        a[(r, 7)] = d.y * s.y;
        a[(r, 8)] = d.y;
        a[(r + 1, 0)] = s.x;
        a[(r + 1, 1)] = s.y;
        a[(r + 1, 2)] = 1.0;
        a[(r + 1, 6)] = -d.x * s.x;
        a[(r + 1, 7)] = -d.x * s.y;
        a[(r + 1, 8)] = -d.x;
    }
    let h = null_vector(a)?;
    let hn = Matrix3::from_row_slice(&h);
    let tb_inv = tb.try_inverse().ok_or(RobustError::DegenerateConfiguration)?;
    Homography::new(tb_inv * hn * ta).map_err(|_| RobustError::DegenerateConfiguration)
}

/// Linear epipolar solve in Hartley coordinates, each equation optionally
/// scaled by a weight. With `rank2` the solution is projected to rank 2
/// before denormalizing, where the projection is well conditioned.
fn epipolar_linear(pairs: &[PointPair], weights: Option<&[f64]>, rank2: bool) -> Result<Matrix3<f64>, RobustError> {
    if pairs.len() < 8 {
        return Err(RobustError::InsufficientMatches {
            needed: 8,
            got: pairs.len(),
        });
    }
    let ta = hartley_transform(pairs.iter().map(|p| p.0)).ok_or(RobustError::DegenerateConfiguration)?;
    let tb = hartley_transform(pairs.iter().map(|p| p.1)).ok_or(RobustError::DegenerateConfiguration)?;
    let mut a = DMatrix::zeros(pairs.len(), 9);
    for (i, (p, q)) in pairs.iter().enumerate() {
        let x = transform(&ta, p);
        let xp = transform(&tb, q);
        let row = [
            xp.x * x.x,
            xp.x * x.y,
            xp.x,
            xp.y * x.x,
            xp.y * x.y,
            xp.y,
            x.x,
            x.y,
            1.0,
        ];
        let w = weights.map_or(1.0, |w| w[i]);
        for (c, v) in row.into_iter().enumerate() {
            a[(i, c)] = w * v;
        }
    }
    let mut f = Matrix3::from_row_slice(&null_vector(a)?);
    if rank2 {
        f = enforce_rank2(&f)?;
    }
    Ok(tb.transpose() * f * ta)
}

fn enforce_rank2(f: &Matrix3<f64>) -> Result<Matrix3<f64>, RobustError> {
    let svd = f.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(RobustError::DegenerateConfiguration),
    };
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let mut out = Matrix3::zeros();
    for &i in &order[..2] {
        out += u.column(i) * v_t.row(i) * svd.singular_values[i];
    }
    Ok(out)
}

/// Normalized eight-point fundamental matrix (`q^T F p = 0`), rank 2, unit norm.
pub fn estimate_fundamental_8pt(pairs: &[PointPair]) -> Result<Matrix3<f64>, RobustError> {
    let f = epipolar_linear(pairs, None, true)?;
    if !(f.norm() > 0.0) {
        return Err(RobustError::DegenerateConfiguration);
    }
    Ok(canonical_fundamental(&f))
}

/// Essential matrix from pixel matches: normalize through `K^-1`, solve the
/// eight-point system, project onto the essential manifold.
pub fn estimate_essential(
    pairs: &[PointPair],
    k_a: &CameraIntrinsics,
    k_b: &CameraIntrinsics,
) -> Result<EssentialMatrix, RobustError> {
    let normalized: Vec<PointPair> = pairs
        .iter()
        .map(|(p, q)| (k_a.normalize(p), k_b.normalize(q)))
        .collect();
    let e = epipolar_linear(&normalized, None, false)?;
    EssentialMatrix::project(&e).map_err(|_| RobustError::DegenerateConfiguration)
}

/// Reweighting rounds in the Sampson refits.
const REWEIGHT_STEPS: usize = 5;

/// Per-pair weights turning the algebraic epipolar residual of `f` into
/// its Sampson (first-order geometric) counterpart.
fn sampson_weights(f: &Matrix3<f64>, pairs: &[PointPair]) -> Vec<f64> {
    let grads: Vec<f64> = pairs
        .iter()
        .map(|(p, q)| {
            let fp = f * p.to_homogeneous();
            let ftq = f.transpose() * q.to_homogeneous();
            fp.x * fp.x + fp.y * fp.y + ftq.x * ftq.x + ftq.y * ftq.y
        })
        .collect();
    let mean = grads.iter().sum::<f64>() / grads.len().max(1) as f64;
    // points at an epipole have no gradient; cap their weight
    let floor = (mean * 1e-6).max(f64::MIN_POSITIVE);
    grads.iter().map(|g| 1.0 / g.max(floor).sqrt()).collect()
}

/// Eight-point refit weighted by the Sampson gradients of a previous
/// estimate `f`, which approximately minimises geometric error.
pub fn refine_fundamental(pairs: &[PointPair], f: &Matrix3<f64>) -> Result<Matrix3<f64>, RobustError> {
    let mut f = *f;
    for _ in 0..REWEIGHT_STEPS {
        let weights = sampson_weights(&f, pairs);
        f = epipolar_linear(pairs, Some(&weights), true)?;
        if !(f.norm() > 0.0) {
            return Err(RobustError::DegenerateConfiguration);
        }
    }
    Ok(canonical_fundamental(&f))
}

/// Sampson-weighted refit of an essential matrix `e` in normalized
/// coordinates.
pub fn refine_essential(
    pairs: &[PointPair],
    k_a: &CameraIntrinsics,
    k_b: &CameraIntrinsics,
    e: &EssentialMatrix,
) -> Result<EssentialMatrix, RobustError> {
    let normalized: Vec<PointPair> = pairs
        .iter()
        .map(|(p, q)| (k_a.normalize(p), k_b.normalize(q)))
        .collect();
    let mut e = *e;
    for _ in 0..REWEIGHT_STEPS {
        let weights = sampson_weights(e.matrix(), &normalized);
        e = EssentialMatrix::project(&epipolar_linear(&normalized, Some(&weights), false)?)
            .map_err(|_| RobustError::DegenerateConfiguration)?;
    }
    Ok(e)
}

/// Fraction of pairs explained by a least-squares homography within
/// `threshold` px (max of forward and backward transfer). Values near 1 flag
/// a planar scene, for which a fundamental matrix is not unique.
pub fn planar_degeneracy_score(pairs: &[PointPair], threshold: f64) -> f64 {
    let Ok(h) = estimate_homography_dlt(pairs) else {
        return 0.0;
    };
    let Ok(h_inv) = h.inverse() else {
        return 0.0;
    };
    let inliers = pairs
        .iter()
        .filter(|(p, q)| super::symmetric_transfer(&h, &h_inv, p, q) < threshold)
        .count();
    inliers as f64 / pairs.len() as f64
}
