//! Pinhole cameras, rigid poses, homographies and epipolar algebra.
//!
//! Poses are world-to-camera: `x_cam = R * x_world + t`. Angles are returned
//! in degrees; trigonometry is done in radians internally.

use nalgebra::{Matrix2, Matrix3, Point2, UnitQuaternion, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors raised by the geometric primitives.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("rotation is not orthonormal with determinant +1")]
    InvalidRotation,
    #[error("depth must be positive, got {0}")]
    InvalidDepth(f64),
    #[error("point maps to infinity (projective depth {0:e})")]
    PointAtInfinity(f64),
    #[error("translation vector has (near) zero norm")]
    DegenerateTranslation,
    #[error("matrix is rank deficient")]
    RankDeficient,
    #[error("no candidate pose places any point in front of both cameras")]
    NoValidCandidate,
    #[error("depth map dimensions {got:?} do not match image size {expected:?}")]
    DepthSizeMismatch { expected: (u32, u32), got: (u32, u32) },
}

pub type Result<T, E = GeometryError> = std::result::Result<T, E>;

/// Image dimensions in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageSize {
    pub width: u32,
    pub height: u32,
}

impl ImageSize {
    pub fn new(width: u32, height: u32) -> Self {
        Self { width, height }
    }

    /// Half-open containment test `[0, width) x [0, height)`.
    pub fn contains(&self, p: &Point2<f64>) -> bool {
        p.x >= 0.0 && p.y >= 0.0 && p.x < self.width as f64 && p.y < self.height as f64
    }

    /// The four pixel-centre corners in clockwise order starting at the origin.
    pub fn corners(&self) -> [Point2<f64>; 4] {
        let w = self.width.saturating_sub(1) as f64;
        let h = self.height.saturating_sub(1) as f64;
        [
            Point2::new(0.0, 0.0),
            Point2::new(w, 0.0),
            Point2::new(w, h),
            Point2::new(0.0, h),
        ]
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }
}

/// Pinhole calibration of an undistorted camera.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "focal lengths must be positive (fx={}, fy={})",
                self.fx, self.fy
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(GeometryError::InvalidIntrinsics(
                "image size must be positive".into(),
            ));
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64) {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "cx={} outside [0, {})",
                self.cx, self.width
            )));
        }
        if !(self.cy >= 0.0 && self.cy < self.height as f64) {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "cy={} outside [0, {})",
                self.cy, self.height
            )));
        }
        Ok(())
    }

    pub fn size(&self) -> ImageSize {
        ImageSize::new(self.width, self.height)
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn inverse_matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            1.0 / self.fx,
            0.0,
            -self.cx / self.fx,
            0.0,
            1.0 / self.fy,
            -self.cy / self.fy,
            0.0,
            0.0,
            1.0,
        )
    }

    /// Pixel to normalized image coordinates (`K^-1 (x, y, 1)` without the 1).
    pub fn normalize(&self, p: &Point2<f64>) -> Point2<f64> {
        Point2::new((p.x - self.cx) / self.fx, (p.y - self.cy) / self.fy)
    }

    pub fn denormalize(&self, n: &Point2<f64>) -> Point2<f64> {
        Point2::new(n.x * self.fx + self.cx, n.y * self.fy + self.cy)
    }

    /// Back-projects a pixel at the given depth into camera coordinates.
    pub fn unproject(&self, pixel: &Point2<f64>, depth: f64) -> Result<Vector3<f64>> {
        if !(depth > 0.0) {
            return Err(GeometryError::InvalidDepth(depth));
        }
        let n = self.normalize(pixel);
        Ok(Vector3::new(n.x * depth, n.y * depth, depth))
    }

    /// Projects a camera-frame point; `None` when it is not in front of the camera.
    pub fn project(&self, x_cam: &Vector3<f64>) -> Option<Point2<f64>> {
        if !(x_cam.z > 0.0) {
            return None;
        }
        Some(self.denormalize(&Point2::new(x_cam.x / x_cam.z, x_cam.y / x_cam.z)))
    }
}

/// Rigid world-to-camera transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

const ROTATION_TOL: f64 = 1e-9;

impl Pose {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        if !is_rotation(&rotation, ROTATION_TOL) {
            return Err(GeometryError::InvalidRotation);
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Builds a pose from a unit quaternion `(w, x, y, z)` and a translation.
    pub fn from_quaternion(q: [f64; 4], t: [f64; 3]) -> Result<Self> {
        let quat = nalgebra::Quaternion::new(q[0], q[1], q[2], q[3]);
        if !(quat.norm() > 1e-12) {
            return Err(GeometryError::InvalidRotation);
        }
        let r = UnitQuaternion::from_quaternion(quat).to_rotation_matrix();
        Self::new(*r.matrix(), Vector3::new(t[0], t[1], t[2]))
    }

    /// Quaternion `(w, x, y, z)` of the rotation part.
    pub fn quaternion(&self) -> [f64; 4] {
        let r = nalgebra::Rotation3::from_matrix_unchecked(self.rotation);
        let q = UnitQuaternion::from_rotation_matrix(&r);
        [q.w, q.i, q.j, q.k]
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn transform(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * x + self.translation
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Camera centre in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    /// Same pose with the translation rescaled to unit length (if nonzero).
    pub fn with_unit_translation(&self) -> Self {
        let n = self.translation.norm();
        let t = if n > 0.0 {
            self.translation / n
        } else {
            self.translation
        };
        Self {
            rotation: self.rotation,
            translation: t,
        }
    }
}

fn is_rotation(r: &Matrix3<f64>, tol: f64) -> bool {
    if r.iter().any(|v| !v.is_finite()) {
        return false;
    }
    let orth = (r.transpose() * r - Matrix3::identity()).amax();
    let det = r.determinant();
    orth < tol && (det - 1.0).abs() < tol
}

/// Transform taking points in camera A's frame to camera B's frame.
pub fn relative_pose(pose_a: &Pose, pose_b: &Pose) -> Pose {
    let r = pose_b.rotation * pose_a.rotation.transpose();
    let t = pose_b.translation - r * pose_a.translation;
    Pose {
        rotation: r,
        translation: t,
    }
}

fn clamped_acos_deg(c: f64, lo: f64, hi: f64) -> f64 {
    c.clamp(lo, hi).acos().to_degrees()
}

/// Geodesic angle between two rotations, in degrees within `[0, 180]`.
pub fn rotation_angular_error(r_est: &Matrix3<f64>, r_gt: &Matrix3<f64>) -> f64 {
    let c = ((r_gt.transpose() * r_est).trace() - 1.0) / 2.0;
    clamped_acos_deg(c, -1.0, 1.0)
}

/// Angle between translation directions ignoring sign, in degrees within `[0, 90]`.
pub fn translation_angular_error(t_est: &Vector3<f64>, t_gt: &Vector3<f64>) -> Result<f64> {
    let ne = t_est.norm();
    let ng = t_gt.norm();
    if ne < 1e-12 || ng < 1e-12 {
        return Err(GeometryError::DegenerateTranslation);
    }
    let c = t_est.dot(t_gt).abs() / (ne * ng);
    Ok(clamped_acos_deg(c, 0.0, 1.0))
}

/// Score returned by [`pose_error`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseErrorScore {
    pub degrees: f64,
    /// Set when a translation was degenerate and the worst score was assigned.
    pub degenerate: bool,
}

/// Worst possible pose error, assigned to failed or degenerate estimates.
pub const MAX_POSE_ERROR_DEG: f64 = 180.0;

/// Maximum of rotation and translation angular errors.
pub fn pose_error(est: &Pose, gt: &Pose) -> PoseErrorScore {
    let rot = rotation_angular_error(&est.rotation, &gt.rotation);
    match translation_angular_error(&est.translation, &gt.translation) {
        Ok(trans) => PoseErrorScore {
            degrees: rot.max(trans),
            degenerate: false,
        },
        Err(_) => PoseErrorScore {
            degrees: MAX_POSE_ERROR_DEG,
            degenerate: true,
        },
    }
}

/// Skew-symmetric cross-product matrix `[v]x`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Flips the sign so that the largest-magnitude entry is positive (first wins on ties).
fn canonical_sign(m: Matrix3<f64>) -> Matrix3<f64> {
    let mut best = 0.0f64;
    let mut sign = 1.0;
    for r in 0..3 {
        for c in 0..3 {
            let v = m[(r, c)];
            if v.abs() > best.abs() {
                best = v;
                sign = v.signum();
            }
        }
    }
    m * sign
}

/// Scales to unit Frobenius norm with the largest-magnitude entry positive.
pub fn canonical_fundamental(f: &Matrix3<f64>) -> Matrix3<f64> {
    let n = f.norm();
    if n == 0.0 {
        return *f;
    }
    canonical_sign(f / n)
}

/// Planar projective transform in canonical form: `h[2][2] == 1` when that
/// entry is not negligible, otherwise `||H||_F = 1` with a fixed sign.
/// Affine maps therefore apply exactly, and re-canonicalizing is a no-op.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography {
    h: Matrix3<f64>,
}

impl Homography {
    /// Canonicalizes `m`; fails when it is not full rank.
    pub fn new(m: Matrix3<f64>) -> Result<Self> {
        let n = m.norm();
        if !(n > 0.0) || !n.is_finite() {
            return Err(GeometryError::RankDeficient);
        }
        if (m / n).determinant().abs() < 1e-14 {
            return Err(GeometryError::RankDeficient);
        }
        if m[(2, 2)].abs() > 1e-8 * n {
            return Ok(Self { h: m / m[(2, 2)] });
        }
        let scaled = m / n;
        let sign = scaled
            .transpose()
            .iter()
            .find(|v| **v != 0.0)
            .map(|v| v.signum())
            .unwrap_or(1.0);
        Ok(Self { h: scaled * sign })
    }

    pub fn identity() -> Self {
        Self::new(Matrix3::identity()).expect("identity is full rank")
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        Self::new(Matrix3::new(1.0, 0.0, tx, 0.0, 1.0, ty, 0.0, 0.0, 1.0))
            .expect("translation is full rank")
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.h
    }

    /// Matrix rescaled so that `h[2][2] == 1` when that entry is nonzero.
    pub fn affine_normalized(&self) -> Matrix3<f64> {
        let s = self.h[(2, 2)];
        if s == 1.0 || s.abs() <= 1e-12 {
            self.h
        } else {
            self.h / s
        }
    }

    pub fn apply(&self, p: &Point2<f64>) -> Result<Point2<f64>> {
        apply_homography(&self.h, p)
    }

    pub fn inverse(&self) -> Result<Self> {
        let inv = self.h.try_inverse().ok_or(GeometryError::RankDeficient)?;
        Self::new(inv)
    }

    /// `self` applied after `first`.
    pub fn compose(&self, first: &Homography) -> Result<Self> {
        Self::new(self.h * first.h)
    }

    /// Row-major entries of the canonical matrix.
    pub fn to_row_major(&self) -> [f64; 9] {
        let mut out = [0.0; 9];
        for r in 0..3 {
            for c in 0..3 {
                out[3 * r + c] = self.h[(r, c)];
            }
        }
        out
    }

    pub fn from_row_major(v: &[f64; 9]) -> Result<Self> {
        Self::new(Matrix3::from_row_slice(v))
    }
}

/// Maps a point through a 3x3 projective matrix.
pub fn apply_homography(h: &Matrix3<f64>, p: &Point2<f64>) -> Result<Point2<f64>> {
    let w = h[(2, 0)] * p.x + h[(2, 1)] * p.y + h[(2, 2)];
    if w.abs() <= 1e-12 {
        return Err(GeometryError::PointAtInfinity(w));
    }
    let x = h[(0, 0)] * p.x + h[(0, 1)] * p.y + h[(0, 2)];
    let y = h[(1, 0)] * p.x + h[(1, 1)] * p.y + h[(1, 2)];
    Ok(Point2::new(x / w, y / w))
}

/// Essential matrix on the canonical manifold: singular values `(1, 1, 0)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EssentialMatrix {
    e: Matrix3<f64>,
}

impl EssentialMatrix {
    /// Projects an arbitrary 3x3 matrix onto the essential manifold.
    pub fn project(m: &Matrix3<f64>) -> Result<Self> {
        let svd = m.svd(true, true);
        let (u, v_t) = match (svd.u, svd.v_t) {
            (Some(u), Some(v_t)) => (u, v_t),
            _ => return Err(GeometryError::RankDeficient),
        };
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
        let s1 = svd.singular_values[order[0]];
        let s2 = svd.singular_values[order[1]];
        if !(s1 > 0.0) || s2 / s1 < 1e-12 {
            return Err(GeometryError::RankDeficient);
        }
        let mut e = Matrix3::zeros();
        for &i in &order[..2] {
            e += u.column(i) * v_t.row(i);
        }
        Ok(Self {
            e: canonical_sign(e),
        })
    }

    /// `[t]x R` for a relative pose, in canonical form.
    pub fn from_pose(pose: &Pose) -> Result<Self> {
        if pose.translation.norm() < 1e-12 {
            return Err(GeometryError::DegenerateTranslation);
        }
        Self::project(&(skew(&pose.translation) * pose.rotation))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.e
    }

    /// Fundamental matrix in pixel coordinates `K_b^-T E K_a^-1`.
    pub fn to_fundamental(&self, k_a: &CameraIntrinsics, k_b: &CameraIntrinsics) -> Matrix3<f64> {
        k_b.inverse_matrix().transpose() * self.e * k_a.inverse_matrix()
    }

    /// The four `(R, t)` candidates, ordered `(R1,t) (R1,-t) (R2,t) (R2,-t)`.
    pub fn decompose(&self) -> Result<[Pose; 4]> {
        decompose_essential(&self.e)
    }
}

/// Splits an essential matrix into its four rotation/translation candidates.
pub fn decompose_essential(e: &Matrix3<f64>) -> Result<[Pose; 4]> {
    let svd = e.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(GeometryError::RankDeficient),
    };
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let s = &svd.singular_values;
    if !(s[order[0]] > 0.0) || s[order[1]] / s[order[0]] < 1e-6 {
        return Err(GeometryError::RankDeficient);
    }
    let mut u_sorted = Matrix3::zeros();
    let mut v_sorted = Matrix3::zeros();
    for (dst, &src) in order.iter().enumerate() {
        u_sorted.set_column(dst, &u.column(src));
        v_sorted.set_column(dst, &v_t.row(src).transpose());
    }
    if u_sorted.determinant() < 0.0 {
        u_sorted.column_mut(2).neg_mut();
    }
    if v_sorted.determinant() < 0.0 {
        v_sorted.column_mut(2).neg_mut();
    }
    let w = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
    let r1 = u_sorted * w * v_sorted.transpose();
    let r2 = u_sorted * w.transpose() * v_sorted.transpose();
    let t: Vector3<f64> = u_sorted.column(2).into_owned().normalize();
    Ok([
        Pose {
            rotation: r1,
            translation: t,
        },
        Pose {
            rotation: r1,
            translation: -t,
        },
        Pose {
            rotation: r2,
            translation: t,
        },
        Pose {
            rotation: r2,
            translation: -t,
        },
    ])
}

/// Midpoint triangulation of a normalized correspondence; returns depths in
/// camera A and camera B, or `None` for (near) parallel rays.
pub fn triangulate_midpoint(
    pose: &Pose,
    na: &Point2<f64>,
    nb: &Point2<f64>,
) -> Option<(f64, f64)> {
    let da = Vector3::new(na.x, na.y, 1.0);
    let rt = pose.rotation.transpose();
    let db = rt * Vector3::new(nb.x, nb.y, 1.0);
    let cb = -(rt * pose.translation);
    // Solve [da, -db] [la, lb]^T ~= cb in the least-squares sense.
    let a = Matrix2::new(da.dot(&da), -da.dot(&db), da.dot(&db), -db.dot(&db));
    let rhs = Vector2::new(da.dot(&cb), db.dot(&cb));
    let det = a.determinant();
    if det.abs() < 1e-12 * da.norm_squared() * db.norm_squared() {
        return None;
    }
    let sol = a.try_inverse()? * rhs;
    let xa = da * sol.x;
    let xb = cb + db * sol.y;
    let mid = (xa + xb) * 0.5;
    let depth_b = (pose.rotation * mid + pose.translation).z;
    Some((mid.z, depth_b))
}

/// Picks the candidate with the most points in front of both cameras.
pub fn cheirality_select(
    candidates: &[Pose],
    normalized_matches: &[(Point2<f64>, Point2<f64>)],
) -> Result<Pose> {
    let mut best: Option<(usize, usize)> = None;
    for (ci, cand) in candidates.iter().enumerate() {
        let count = normalized_matches
            .iter()
            .filter(|(a, b)| {
                matches!(triangulate_midpoint(cand, a, b), Some((za, zb)) if za > 0.0 && zb > 0.0)
            })
            .count();
        if count > 0 && best.is_none_or(|(_, c)| count > c) {
            best = Some((ci, count));
        }
    }
    best.map(|(i, _)| candidates[i])
        .ok_or(GeometryError::NoValidCandidate)
}

/// First-order geometric error of `q^T F p = 0`, in squared pixels.
/// Returns `+inf` when the gradient vanishes.
pub fn sampson_distance(f: &Matrix3<f64>, p: &Point2<f64>, q: &Point2<f64>) -> f64 {
    let ph = Vector3::new(p.x, p.y, 1.0);
    let qh = Vector3::new(q.x, q.y, 1.0);
    let fp = f * ph;
    let ftq = f.transpose() * qh;
    let num = qh.dot(&fp);
    let den = fp.x * fp.x + fp.y * fp.y + ftq.x * ftq.x + ftq.y * ftq.y;
    if den < 1e-18 {
        return f64::INFINITY;
    }
    num * num / den
}

/// Dense depth grid; `0` marks an invalid pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    width: u32,
    height: u32,
    values: Vec<f32>,
}

impl DepthMap {
    pub fn new(width: u32, height: u32, values: Vec<f32>) -> Result<Self> {
        if values.len() != width as usize * height as usize {
            return Err(GeometryError::DepthSizeMismatch {
                expected: (width, height),
                got: (values.len() as u32, 1),
            });
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> f32) -> Self {
        let mut values = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                values.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            values,
        }
    }

    pub fn size(&self) -> ImageSize {
        ImageSize::new(self.width, self.height)
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn check_matches(&self, k: &CameraIntrinsics) -> Result<()> {
        if self.width != k.width || self.height != k.height {
            return Err(GeometryError::DepthSizeMismatch {
                expected: (k.width, k.height),
                got: (self.width, self.height),
            });
        }
        Ok(())
    }

    pub fn get(&self, x: u32, y: u32) -> f64 {
        self.values[y as usize * self.width as usize + x as usize] as f64
    }

    pub fn is_valid(d: f64) -> bool {
        d > 0.0 && d.is_finite()
    }

    /// Bilinear depth lookup restricted to valid neighbours (weights renormalized).
    /// Coordinates are clamped to the pixel-centre grid.
    pub fn bilinear(&self, p: &Point2<f64>) -> Option<f64> {
        let x = p.x.clamp(0.0, (self.width - 1) as f64);
        let y = p.y.clamp(0.0, (self.height - 1) as f64);
        let x0 = x.floor() as u32;
        let y0 = y.floor() as u32;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let taps = [
            (x0, y0, (1.0 - fx) * (1.0 - fy)),
            (x1, y0, fx * (1.0 - fy)),
            (x0, y1, (1.0 - fx) * fy),
            (x1, y1, fx * fy),
        ];
        let mut acc = 0.0;
        let mut wsum = 0.0;
        for (tx, ty, w) in taps {
            if w <= 0.0 {
                continue;
            }
            let d = self.get(tx, ty);
            if Self::is_valid(d) {
                acc += w * d;
                wsum += w;
            }
        }
        (wsum > 0.0).then(|| acc / wsum)
    }
}


#[cfg(test)]
mod tests {
    use super::test_support::*;
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_2;

    fn rz90() -> Matrix3<f64> {
        axis_angle(Vector3::z(), FRAC_PI_2)
    }

    #[test]
    fn self_relative_pose_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = random_pose(&mut rng);
        let rel = relative_pose(&p, &p);
        assert!((rel.rotation() - Matrix3::identity()).amax() < 1e-12);
        assert!(rel.translation().norm() < 1e-12);
    }

    #[test]
    fn relative_pose_with_identity_left() {
        let b = Pose::new(rz90(), Vector3::new(1.0, 2.0, 3.0)).unwrap();
        let rel = relative_pose(&Pose::identity(), &b);
        assert!((rel.rotation() - rz90()).amax() < 1e-15);
        assert_eq!(*rel.translation(), Vector3::new(1.0, 2.0, 3.0));
    }

    #[test]
    fn relative_pose_transports_world_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..10 {
            let a = random_pose(&mut rng);
            let b = random_pose(&mut rng);
            let rel = relative_pose(&a, &b);
            for _ in 0..20 {
                let xw = Vector3::new(
                    rng.random_range(-5.0..5.0),
                    rng.random_range(-5.0..5.0),
                    rng.random_range(-5.0..5.0),
                );
                let via_rel = rel.transform(&a.transform(&xw));
                let direct = b.transform(&xw);
                assert!((via_rel - direct).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn rotation_error_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let r = random_rotation(&mut rng);
        assert!(rotation_angular_error(&r, &r) < 1e-6);
        let rx90 = axis_angle(Vector3::x(), FRAC_PI_2);
        assert_relative_eq!(
            rotation_angular_error(&Matrix3::identity(), &rx90),
            90.0,
            epsilon = 1e-9
        );
        for _ in 0..100 {
            let r = random_rotation(&mut rng);
            let theta: f64 = rng.random_range(0.5..179.5);
            let d = axis_angle(random_unit(&mut rng), theta.to_radians());
            let err = rotation_angular_error(&(d * r), &r);
            assert!((err - theta).abs() < 1e-6, "{err} vs {theta}");
            // symmetric
            assert!((rotation_angular_error(&r, &(d * r)) - err).abs() < 1e-9);
        }
    }

    #[test]
    fn translation_error_cases() {
        let v = Vector3::new(0.3, -1.0, 2.0);
        assert!(translation_angular_error(&v, &v).unwrap() < 1e-6);
        assert!(translation_angular_error(&-v, &v).unwrap() < 1e-6);
        assert!(translation_angular_error(&(v * 7.5), &v).unwrap() < 1e-6);
        let e = translation_angular_error(&Vector3::x(), &Vector3::new(1.0, 1.0, 0.0)).unwrap();
        assert_relative_eq!(e, 45.0, epsilon = 1e-9);
        assert_eq!(
            translation_angular_error(&Vector3::zeros(), &v),
            Err(GeometryError::DegenerateTranslation)
        );
    }

    #[test]
    fn pose_error_takes_the_max() {
        let gt = Pose::new(Matrix3::identity(), Vector3::x()).unwrap();
        assert_eq!(pose_error(&gt, &gt).degrees, 0.0);
        let r3 = axis_angle(Vector3::y(), 3f64.to_radians());
        let t7 = Vector3::new(7f64.to_radians().cos(), 7f64.to_radians().sin(), 0.0);
        let est = Pose::new(r3, t7).unwrap();
        let s = pose_error(&est, &gt);
        assert_relative_eq!(s.degrees, 7.0, epsilon = 1e-9);
        assert!(!s.degenerate);

        let est = Pose::new(r3, Vector3::zeros()).unwrap();
        let s = pose_error(&est, &gt);
        assert_eq!(s.degrees, MAX_POSE_ERROR_DEG);
        assert!(s.degenerate);
    }

    #[test]
    fn project_unproject() {
        let k = CameraIntrinsics::new(500.0, 480.0, 320.0, 240.0, 640, 480).unwrap();
        let x = k.unproject(&Point2::new(320.0, 240.0), 3.0).unwrap();
        assert_eq!(x, Vector3::new(0.0, 0.0, 3.0));
        let x = k.unproject(&Point2::new(820.0, 240.0), 1.0).unwrap();
        assert_relative_eq!(x, Vector3::new(1.0, 0.0, 1.0), epsilon = 1e-15);
        assert_eq!(
            k.unproject(&Point2::new(1.0, 1.0), 0.0),
            Err(GeometryError::InvalidDepth(0.0))
        );
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut max_err: f64 = 0.0;
        for _ in 0..100 {
            let p = Point2::new(rng.random_range(0.0..640.0), rng.random_range(0.0..480.0));
            let d = rng.random_range(0.1..100.0);
            let q = k.project(&k.unproject(&p, d).unwrap()).unwrap();
            max_err = max_err.max((q - p).norm());
        }
        assert!(max_err < 1e-9);
    }

    #[test]
    fn intrinsics_validation() {
        assert!(CameraIntrinsics::new(0.0, 1.0, 1.0, 1.0, 4, 4).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 4.0, 1.0, 4, 4).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 1.0, -0.1, 4, 4).is_err());
    }

    #[test]
    fn homography_application() {
        let p = Point2::new(12.5, -3.0);
        assert_relative_eq!(
            Homography::identity().apply(&p).unwrap(),
            p,
            epsilon = 1e-12
        );
        let q = Homography::translation(5.0, -3.0).apply(&p).unwrap();
        assert_relative_eq!(q, Point2::new(17.5, -6.0), epsilon = 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let m: Matrix3<f64> = Matrix3::from_fn(|_, _| rng.random_range(-1.0..1.0));
            let p = Point2::new(rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0));
            let v = m * Vector3::new(p.x, p.y, 1.0);
            if v.z.abs() < 1e-3 {
                continue;
            }
            let got = apply_homography(&m, &p).unwrap();
            assert_eq!(got, Point2::new(v.x / v.z, v.y / v.z));
        }
        let at_inf = Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0);
        assert!(matches!(
            apply_homography(&at_inf, &Point2::new(0.0, 3.0)),
            Err(GeometryError::PointAtInfinity(_))
        ));
    }

    #[test]
    fn homography_canonical_form() {
        let h = Homography::new(Matrix3::identity() * -4.0).unwrap();
        assert_eq!(*h.matrix(), Matrix3::identity());
        let m = Matrix3::new(0.3, -1.2, 4.0, 0.7, 0.9, -2.5, 1e-3, 2e-3, 0.37);
        let h = Homography::new(m).unwrap();
        assert_eq!(h.matrix()[(2, 2)], 1.0);
        assert_eq!(Homography::from_row_major(&h.to_row_major()).unwrap(), h);
        // h22 = 0: unit norm, first nonzero entry positive
        let at_inf = Matrix3::new(0.0, -2.0, 1.0, 2.0, 0.0, 0.0, 1.0, 1.0, 0.0);
        let h = Homography::new(at_inf).unwrap();
        assert_relative_eq!(h.matrix().norm(), 1.0, epsilon = 1e-15);
        assert!(h.matrix()[(0, 1)] > 0.0 && h.matrix()[(0, 2)] < 0.0);
        assert_eq!(Homography::translation(5.0, -3.0).apply(&Point2::new(0.1, 0.7)).unwrap(), Point2::new(0.1 + 5.0, 0.7 - 3.0));
        assert!(Homography::new(Matrix3::zeros()).is_err());
        let singular = Matrix3::new(1.0, 2.0, 3.0, 2.0, 4.0, 6.0, 0.0, 0.0, 1.0);
        assert!(Homography::new(singular).is_err());
    }

    #[test]
    fn essential_decomposition_recovers_pose() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..50 {
            let pose = random_pose(&mut rng);
            let e = EssentialMatrix::from_pose(&pose).unwrap();
            let cands = e.decompose().unwrap();
            let target = pose.with_unit_translation();
            let hit = cands.iter().any(|c| {
                (c.rotation() - target.rotation()).amax() < 1e-6
                    && (c.translation() - target.translation()).amax() < 1e-6
            });
            assert!(hit);
            for c in &cands {
                assert!(is_rotation(c.rotation(), 1e-9));
                assert_relative_eq!(c.translation().norm(), 1.0, epsilon = 1e-12);
                let rebuilt = canonical_fundamental(&(skew(c.translation()) * c.rotation()));
                let reference = canonical_fundamental(e.matrix());
                let rel = (rebuilt - reference).norm() / reference.norm();
                assert!(rel < 1e-6, "rel {rel}");
            }
        }
    }

    #[test]
    fn essential_projection_is_idempotent_and_on_manifold() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let m = Matrix3::from_fn(|_, _| rng.random_range(-1.0..1.0));
        let e = EssentialMatrix::project(&m).unwrap();
        let sv = e.matrix().singular_values();
        let mut s: Vec<f64> = sv.iter().copied().collect();
        s.sort_by(|a, b| b.total_cmp(a));
        assert!((s[0] - s[1]).abs() < 1e-10);
        assert!(s[2] < 1e-10);
        assert_relative_eq!(e.matrix().norm(), 2f64.sqrt(), epsilon = 1e-12);
        let again = EssentialMatrix::project(e.matrix()).unwrap();
        assert!((again.matrix() - e.matrix()).amax() < 1e-12);
    }

    #[test]
    fn decompose_rejects_rank_one() {
        let m = Vector3::new(1.0, 2.0, 3.0) * Vector3::new(0.0, 1.0, 1.0).transpose();
        assert_eq!(decompose_essential(&m), Err(GeometryError::RankDeficient));
    }

    fn synthetic_normalized(
        pose: &Pose,
        rng: &mut ChaCha8Rng,
        n: usize,
    ) -> Vec<(Point2<f64>, Point2<f64>)> {
        let mut out = Vec::new();
        while out.len() < n {
            let x = Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(3.0..6.0),
            );
            let xb = pose.transform(&x);
            if xb.z <= 0.1 {
                continue;
            }
            out.push((
                Point2::new(x.x / x.z, x.y / x.z),
                Point2::new(xb.x / xb.z, xb.y / xb.z),
            ));
        }
        out
    }

    #[test]
    fn cheirality_picks_ground_truth() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let r = axis_angle(random_unit(&mut rng), rng.random_range(0.0..0.5));
            let t = random_unit(&mut rng);
            let pose = Pose::new(r, t).unwrap();
            let obs = synthetic_normalized(&pose, &mut rng, 50);
            let cands = EssentialMatrix::from_pose(&pose).unwrap().decompose().unwrap();
            let chosen = cheirality_select(&cands, &obs).unwrap();
            assert!(rotation_angular_error(chosen.rotation(), pose.rotation()) < 1e-6);
            assert!((chosen.translation() - pose.translation()).norm() < 1e-6);
        }
    }

    #[test]
    fn cheirality_single_match_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let pose = Pose::new(
                axis_angle(random_unit(&mut rng), 0.3),
                random_unit(&mut rng),
            )
            .unwrap();
            let obs = synthetic_normalized(&pose, &mut rng, 1);
            let cands = EssentialMatrix::from_pose(&pose).unwrap().decompose().unwrap();
            let valid: Vec<usize> = (0..4)
                .filter(|&i| {
                    matches!(triangulate_midpoint(&cands[i], &obs[0].0, &obs[0].1),
                        Some((a, b)) if a > 0.0 && b > 0.0)
                })
                .collect();
            assert_eq!(valid.len(), 1, "exactly one candidate is in front of both");
            let chosen = cheirality_select(&cands, &obs).unwrap();
            assert_eq!(chosen, cands[valid[0]]);
        }
    }

    #[test]
    fn cheirality_fails_behind_every_candidate() {
        // Sideways pure translation with rays pointing away from each other
        // never triangulates in front of both cameras.
        let pose = Pose::new(Matrix3::identity(), Vector3::new(-1.0, 0.0, 0.0)).unwrap();
        let cands = [pose];
        let obs = [(Point2::new(-0.5, 0.0), Point2::new(0.5, 0.0))];
        assert_eq!(
            cheirality_select(&cands, &obs),
            Err(GeometryError::NoValidCandidate)
        );
    }

    #[test]
    fn sampson_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let k = CameraIntrinsics::new(400.0, 400.0, 320.0, 240.0, 640, 480).unwrap();
        let pose = random_pose(&mut rng);
        let e = EssentialMatrix::from_pose(&pose).unwrap();
        let f = e.to_fundamental(&k, &k);
        let pts = synthetic_normalized(&pose, &mut rng, 20);
        for (a, b) in &pts {
            let p = k.denormalize(a);
            let q = k.denormalize(b);
            assert!(sampson_distance(&f, &p, &q) < 1e-9);
            // scale invariance away from the constraint
            let q2 = q + nalgebra::Vector2::new(1.5, -0.7);
            let d1 = sampson_distance(&f, &p, &q2);
            let d5 = sampson_distance(&(f * 5.0), &p, &q2);
            assert!((d1 - d5).abs() < 1e-9 * d1.max(1.0));
            // First order: stepping (p, q) by delta along the unit gradient of
            // q^T F p changes the residual by delta * |grad|, so Sampson ~ delta^2.
            let fp = f * Vector3::new(p.x, p.y, 1.0);
            let ftq = f.transpose() * Vector3::new(q.x, q.y, 1.0);
            let grad = nalgebra::Vector4::new(ftq.x, ftq.y, fp.x, fp.y).normalize();
            let delta = 1e-3;
            let pd = p + nalgebra::Vector2::new(grad[0], grad[1]) * delta;
            let qd = q + nalgebra::Vector2::new(grad[2], grad[3]) * delta;
            let d = sampson_distance(&f, &pd, &qd);
            assert!(
                (d - delta * delta).abs() < 1e-3 * delta * delta,
                "{} vs {}",
                d,
                delta * delta
            );
        }
        assert_eq!(
            sampson_distance(&Matrix3::zeros(), &Point2::origin(), &Point2::origin()),
            f64::INFINITY
        );
    }

    #[test]
    fn depth_bilinear_skips_invalid() {
        let d = DepthMap::from_fn(2, 2, |x, _| if x == 0 { 2.0 } else { 0.0 });
        assert_eq!(d.bilinear(&Point2::new(0.5, 0.5)), Some(2.0));
        assert_eq!(d.bilinear(&Point2::new(1.0, 1.0)), None);
        let d = DepthMap::from_fn(2, 1, |x, _| 1.0 + x as f32);
        assert_relative_eq!(d.bilinear(&Point2::new(0.25, 0.0)).unwrap(), 1.25);
    }

    #[test]
    fn quaternion_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = random_pose(&mut rng);
        let q = p.quaternion();
        let t = p.translation();
        let back = Pose::from_quaternion(q, [t.x, t.y, t.z]).unwrap();
        assert!((back.rotation() - p.rotation()).amax() < 1e-12);
    }
}
