//! Harris corners, normalized intensity patches and mutual nearest
//! neighbours with a ratio test. Fully deterministic.

use super::{FrameSource, GrayImage, MatchFlag, MatchOutput, MatcherError, MatcherSpec, Params};
use crate::correspondence::{CorrespondenceSet, Match};
use nalgebra::Point2;
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BuiltinParams {
    /// Harris sensitivity `k` in `det - k * trace^2`.
    pub harris_k: f64,
    pub nms_radius: usize,
    pub max_keypoints: usize,
    /// Corner threshold relative to the strongest response.
    pub threshold: f64,
    /// Gaussian window for the structure tensor.
    pub window_sigma: f64,
    /// Side of the square descriptor patch (odd).
    pub patch_size: usize,
    /// Maximum nearest / second-nearest distance ratio.
    pub ratio: f64,
}

impl Default for BuiltinParams {
    fn default() -> Self {
        Self {
            harris_k: 0.04,
            nms_radius: 3,
            max_keypoints: 1000,
            threshold: 0.01,
            window_sigma: 1.0,
            patch_size: 11,
            ratio: 0.9,
        }
    }
}

const KEYS: &[&str] = &[
    "harris_k",
    "nms_radius",
    "max_keypoints",
    "threshold",
    "window_sigma",
    "patch_size",
    "ratio",
];

impl BuiltinParams {
    pub fn from_spec(spec: &MatcherSpec) -> Result<Self, MatcherError> {
        let p = Params::new(spec, KEYS)?;
        let d = Self::default();
        let out = Self {
            harris_k: p.f64("harris_k", d.harris_k)?,
            nms_radius: p.usize("nms_radius", d.nms_radius)?,
            max_keypoints: p.usize("max_keypoints", d.max_keypoints)?,
            threshold: p.f64("threshold", d.threshold)?,
            window_sigma: p.f64("window_sigma", d.window_sigma)?,
            patch_size: p.usize("patch_size", d.patch_size)?,
            ratio: p.f64("ratio", d.ratio)?,
        };
        out.validate()?;
        Ok(out)
    }

    pub fn validate(&self) -> Result<(), MatcherError> {
        let bad = |m: &str| Err(MatcherError::InvalidSpec(m.to_string()));
        if !(self.harris_k > 0.0 && self.harris_k < 0.25) {
            return bad("harris_k must be in (0, 0.25)");
        }
        if self.max_keypoints == 0 {
            return bad("max_keypoints must be >= 1");
        }
        if !(0.0..1.0).contains(&self.threshold) {
            return bad("threshold must be in [0, 1)");
        }
        if self.window_sigma <= 0.0 {
            return bad("window_sigma must be > 0");
        }
        if self.patch_size < 3 || self.patch_size.is_multiple_of(2) {
            return bad("patch_size must be odd and >= 3");
        }
        if !(self.ratio > 0.0 && self.ratio <= 1.0) {
            return bad("ratio must be in (0, 1]");
        }
        Ok(())
    }
}

/// Row-major `f64` grid.
struct Grid {
    w: usize,
    h: usize,
    v: Vec<f64>,
}

impl Grid {
    fn zeros(w: usize, h: usize) -> Self {
        Self {
            w,
            h,
            v: vec![0.0; w * h],
        }
    }

    #[inline]
    fn at(&self, x: usize, y: usize) -> f64 {
        self.v[y * self.w + x]
    }

    /// Separable convolution with clamped borders.
    fn blur(&self, kernel: &[f64]) -> Self {
        let r = kernel.len() / 2;
        let clamp = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;
        let mut tmp = Self::zeros(self.w, self.h);
        for y in 0..self.h {
            for x in 0..self.w {
                tmp.v[y * self.w + x] = kernel
                    .iter()
                    .enumerate()
                    .map(|(k, c)| c * self.at(clamp(x as isize + k as isize - r as isize, self.w), y))
                    .sum();
            }
        }
        let mut out = Self::zeros(self.w, self.h);
        for y in 0..self.h {
            for x in 0..self.w {
                out.v[y * self.w + x] = kernel
                    .iter()
                    .enumerate()
                    .map(|(k, c)| c * tmp.at(x, clamp(y as isize + k as isize - r as isize, self.h)))
                    .sum();
            }
        }
        out
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as isize;
    let raw: Vec<f64> = (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

fn harris_response(img: &GrayImage, k: f64, sigma: f64) -> Grid {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let px = |x: usize, y: usize| img.get(x as u32, y as u32) as f64 / 255.0;
    let mut ixx = Grid::zeros(w, h);
    let mut iyy = Grid::zeros(w, h);
    let mut ixy = Grid::zeros(w, h);
    for y in 1..h.saturating_sub(1) {
        for x in 1..w.saturating_sub(1) {
            let gx = (px(x + 1, y - 1) + 2.0 * px(x + 1, y) + px(x + 1, y + 1)
                - px(x - 1, y - 1)
                - 2.0 * px(x - 1, y)
                - px(x - 1, y + 1))
                / 8.0;
            let gy = (px(x - 1, y + 1) + 2.0 * px(x, y + 1) + px(x + 1, y + 1)
                - px(x - 1, y - 1)
                - 2.0 * px(x, y - 1)
                - px(x + 1, y - 1))
                / 8.0;
            let i = y * w + x;
            ixx.v[i] = gx * gx;
            iyy.v[i] = gy * gy;
            ixy.v[i] = gx * gy;
        }
    }
    let kernel = gaussian_kernel(sigma);
    let (sxx, syy, sxy) = (ixx.blur(&kernel), iyy.blur(&kernel), ixy.blur(&kernel));
    let mut r = Grid::zeros(w, h);
    for i in 0..w * h {
        let (a, b, c) = (sxx.v[i], syy.v[i], sxy.v[i]);
        let tr = a + b;
        r.v[i] = a * b - c * c - k * tr * tr;
    }
    r
}

/// Sub-pixel offset of a 1-D parabola through three samples, clamped to
/// half a pixel.
fn parabola_offset(l: f64, c: f64, r: f64) -> f64 {
    let den = l - 2.0 * c + r;
    if den < 0.0 {
        (0.5 * (l - r) / den).clamp(-0.5, 0.5)
    } else {
        0.0
    }
}

/// A detected corner with its descriptor.
#[derive(Debug, Clone)]
pub struct Keypoint {
    pub position: Point2<f64>,
    pub response: f64,
    descriptor: Vec<f32>,
}

/// Harris detection plus descriptor extraction. Keypoints whose patch is
/// (numerically) constant are discarded.
pub fn detect(img: &GrayImage, params: &BuiltinParams) -> Vec<Keypoint> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let half = params.patch_size / 2;
    let margin = half.max(1) + 1;
    if w <= 2 * margin || h <= 2 * margin {
        return Vec::new();
    }
    let resp = harris_response(img, params.harris_k, params.window_sigma);
    let mut max_r = 0.0f64;
    for y in margin..h - margin {
        for x in margin..w - margin {
            max_r = max_r.max(resp.at(x, y));
        }
    }
    if max_r <= 1e-12 {
        return Vec::new();
    }
    let thr = params.threshold * max_r;
    let nr = params.nms_radius as isize;
    let mut cands: Vec<(f64, usize, usize)> = Vec::new();
    for y in margin..h - margin {
        for x in margin..w - margin {
            let v = resp.at(x, y);
            if v <= thr {
                continue;
            }
            let own = y * w + x;
            let mut is_max = true;
            'nbr: for dy in -nr..=nr {
                for dx in -nr..=nr {
                    let (nx, ny) = (x as isize + dx, y as isize + dy);
                    if (dx == 0 && dy == 0) || nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                        continue;
                    }
                    let (nx, ny) = (nx as usize, ny as usize);
                    let nv = resp.at(nx, ny);
                    if nv > v || (nv == v && ny * w + nx < own) {
                        is_max = false;
                        break 'nbr;
                    }
                }
            }
            if is_max {
                cands.push((v, x, y));
            }
        }
    }
    cands.sort_by(|a, b| b.0.total_cmp(&a.0).then((a.2, a.1).cmp(&(b.2, b.1))));

    let mut out = Vec::with_capacity(params.max_keypoints.min(cands.len()));
    for (v, x, y) in cands {
        if out.len() == params.max_keypoints {
            break;
        }
        let Some(descriptor) = patch_descriptor(img, x, y, half) else {
            continue;
        };
        let ox = parabola_offset(resp.at(x - 1, y), v, resp.at(x + 1, y));
        let oy = parabola_offset(resp.at(x, y - 1), v, resp.at(x, y + 1));
        out.push(Keypoint {
            position: Point2::new(x as f64 + ox, y as f64 + oy),
            response: v,
            descriptor,
        });
    }
    out
}

fn patch_descriptor(img: &GrayImage, cx: usize, cy: usize, half: usize) -> Option<Vec<f32>> {
    let mut d = Vec::with_capacity((2 * half + 1) * (2 * half + 1));
    for y in cy - half..=cy + half {
        for x in cx - half..=cx + half {
            d.push(img.get(x as u32, y as u32) as f64);
        }
    }
    let mean = d.iter().sum::<f64>() / d.len() as f64;
    let norm = d.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>().sqrt();
    if norm < 1e-6 {
        return None;
    }
    Some(d.into_iter().map(|v| ((v - mean) / norm) as f32).collect())
}

fn sq_dist(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `(best index, best distance, second-best distance)`; ties keep the lower index.
fn two_nearest(q: &[f32], pool: &[Keypoint]) -> (usize, f32, f32) {
    let mut best = (usize::MAX, f32::INFINITY);
    let mut second = f32::INFINITY;
    for (j, k) in pool.iter().enumerate() {
        let d = sq_dist(q, &k.descriptor);
        if d < best.1 {
            second = best.1;
            best = (j, d);
        } else if d < second {
            second = d;
        }
    }
    (best.0, best.1.sqrt(), second.sqrt())
}

/// Mutual nearest neighbours passing the ratio test, as
/// `(index in a, index in b, ratio)`.
pub fn match_keypoints(a: &[Keypoint], b: &[Keypoint], max_ratio: f64) -> Vec<(usize, usize, f64)> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let back: Vec<usize> = b.par_iter().map(|k| two_nearest(&k.descriptor, a).0).collect();
    a.par_iter()
        .enumerate()
        .filter_map(|(i, k)| {
            let (j, d1, d2) = two_nearest(&k.descriptor, b);
            if back[j] != i {
                return None;
            }
            let ratio = if d2.is_infinite() {
                0.0
            } else if d2 > 0.0 {
                (d1 / d2) as f64
            } else {
                1.0
            };
            (ratio < max_ratio).then_some((i, j, ratio))
        })
        .collect()
}

pub fn match_builtin(
    frame_a: &FrameSource,
    frame_b: &FrameSource,
    params: &BuiltinParams,
    source: &str,
) -> Result<MatchOutput, MatcherError> {
    let img_a = frame_a.load()?;
    let img_b = frame_b.load()?;
    if img_a.is_empty() || img_b.is_empty() {
        return Err(MatcherError::EmptyImage);
    }
    let kp_a = detect(&img_a, params);
    let kp_b = detect(&img_b, params);
    let flag = (kp_a.is_empty() || kp_b.is_empty()).then_some(MatchFlag::NoKeypoints);
    let raw = match_keypoints(&kp_a, &kp_b, params.ratio)
        .into_iter()
        .map(|(i, j, ratio)| Match::new(kp_a[i].position, kp_b[j].position, 1.0 - ratio, source))
        .collect();
    let (set, dropped) = CorrespondenceSet::from_raw(
        frame_a.frame.clone(),
        frame_b.frame.clone(),
        raw,
        Some((img_a.size(), img_b.size())),
    )?;
    Ok(MatchOutput {
        set,
        dropped,
        flag,
        planted_outliers: None,
    })
}
