//! Sparse correspondence sets between two frames, their fusion, and
//! transitive propagation `A -> B -> C` through a shared middle frame.

mod interchange;

pub use interchange::{
    format_correspondences, parse_correspondences, read_correspondences, write_correspondences,
    InterchangeError, ParseReport,
};

use crate::geometry::ImageSize;
use crate::grid::PointGrid;
use nalgebra::Point2;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

/// Source tag carried by matches created through propagation.
pub const PROPAGATED_SOURCE: &str = "propagated";

/// Two matches closer than this on both endpoints are considered identical.
pub const IDENTITY_EPS: f64 = 1e-6;

/// Default radius used when fusing or merging sets.
pub const DEFAULT_DEDUP_RADIUS: f64 = 1.0;

/// Default middle-frame distance for chaining matches.
pub const DEFAULT_PIXEL_THRESHOLD: f64 = 1.0;

/// Default correspondence budget; a pair must have strictly more matches.
pub const DEFAULT_MIN_CORRESPONDENCES: usize = 1024;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CorrespondenceError {
    #[error("sets describe different frame pairs: {0} vs {1}")]
    MismatchedPair(String, String),
    #[error("chain mismatch: first set ends at {0}, second starts at {1}")]
    ChainMismatch(FrameId, FrameId),
    #[error("frame pair is not in canonical order: {0} !< {1}")]
    FrameOrder(FrameId, FrameId),
    #[error("invalid frame id: {0}")]
    InvalidFrameId(String),
    #[error("invalid match #{index}: {reason}")]
    InvalidMatch { index: usize, reason: String },
    #[error("matches #{0} and #{1} coincide")]
    DuplicateMatch(usize, usize),
    #[error("empty set list")]
    Empty,
}

pub type Result<T, E = CorrespondenceError> = std::result::Result<T, E>;

/// A frame of a video: `(video id, frame index)`, ordered lexicographically.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FrameId {
    pub video: String,
    pub index: u64,
}

impl FrameId {
    /// Video ids are single whitespace-free tokens.
    pub fn new(video: impl Into<String>, index: u64) -> Result<Self> {
        let video = video.into();
        if video.is_empty() || video.chars().any(char::is_whitespace) {
            return Err(CorrespondenceError::InvalidFrameId(video));
        }
        Ok(Self { video, index })
    }
}

impl fmt::Display for FrameId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.video, self.index)
    }
}

impl FromStr for FrameId {
    type Err = CorrespondenceError;

    fn from_str(s: &str) -> Result<Self> {
        let (video, index) = s
            .rsplit_once(':')
            .ok_or_else(|| CorrespondenceError::InvalidFrameId(s.to_string()))?;
        let index = index
            .parse()
            .map_err(|_| CorrespondenceError::InvalidFrameId(s.to_string()))?;
        Self::new(video, index)
    }
}

/// One sub-pixel point pair with its confidence and producing method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Match {
    pub pa: Point2<f64>,
    pub pb: Point2<f64>,
    pub confidence: f64,
    pub source: String,
}

impl Match {
    pub fn new(pa: Point2<f64>, pb: Point2<f64>, confidence: f64, source: impl Into<String>) -> Self {
        Self {
            pa,
            pb,
            confidence,
            source: source.into(),
        }
    }

    pub fn is_propagated(&self) -> bool {
        self.source == PROPAGATED_SOURCE
    }

    fn check(&self) -> std::result::Result<(), String> {
        for (name, p) in [("pa", &self.pa), ("pb", &self.pb)] {
            if !(p.x.is_finite() && p.y.is_finite()) {
                return Err(format!("{name} is not finite"));
            }
            if p.x < 0.0 || p.y < 0.0 {
                return Err(format!("{name} ({}, {}) is negative", p.x, p.y));
            }
        }
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(format!("confidence {} outside [0, 1]", self.confidence));
        }
        if self.source.is_empty() || self.source.contains(['\t', '\n', '\r']) {
            return Err(format!("bad source tag {:?}", self.source));
        }
        Ok(())
    }

    fn within(&self, other: &Match, radius: f64) -> bool {
        (self.pa - other.pa).norm() <= radius && (self.pb - other.pb).norm() <= radius
    }
}

/// Counts of what [`CorrespondenceSet::from_raw`] discarded.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RawReport {
    pub out_of_bounds: usize,
    pub invalid: usize,
    pub duplicates: usize,
}

impl RawReport {
    pub fn dropped(&self) -> usize {
        self.out_of_bounds + self.invalid + self.duplicates
    }
}

/// Matches between two frames with `frame_a < frame_b`.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrespondenceSet {
    frame_a: FrameId,
    frame_b: FrameId,
    interval: u64,
    matches: Vec<Match>,
}

fn find_duplicate(matches: &[Match]) -> Option<(usize, usize)> {
    let mut grid = PointGrid::new(IDENTITY_EPS);
    for (i, m) in matches.iter().enumerate() {
        let mut hit = None;
        grid.for_each_near(&m.pa, IDENTITY_EPS, |j| {
            if hit.is_none() && matches[j].within(m, IDENTITY_EPS) {
                hit = Some(j);
            }
        });
        if let Some(j) = hit {
            return Some((j, i));
        }
        grid.insert(&m.pa, i);
    }
    None
}

impl CorrespondenceSet {
    /// Strict constructor: every match must be valid and distinct.
    pub fn new(frame_a: FrameId, frame_b: FrameId, matches: Vec<Match>) -> Result<Self> {
        if frame_a >= frame_b {
            return Err(CorrespondenceError::FrameOrder(frame_a, frame_b));
        }
        for (index, m) in matches.iter().enumerate() {
            m.check()
                .map_err(|reason| CorrespondenceError::InvalidMatch { index, reason })?;
        }
        if let Some((i, j)) = find_duplicate(&matches) {
            return Err(CorrespondenceError::DuplicateMatch(i, j));
        }
        Ok(Self::from_parts(frame_a, frame_b, matches))
    }

    pub fn empty(frame_a: FrameId, frame_b: FrameId) -> Result<Self> {
        Self::new(frame_a, frame_b, Vec::new())
    }

    fn from_parts(frame_a: FrameId, frame_b: FrameId, matches: Vec<Match>) -> Self {
        let interval = frame_b.index.abs_diff(frame_a.index);
        Self {
            frame_a,
            frame_b,
            interval,
            matches,
        }
    }

    /// Lenient constructor for untrusted matcher output: drops invalid,
    /// out-of-bounds (when sizes are given) and duplicate matches, keeping the
    /// first occurrence.
    pub fn from_raw(
        frame_a: FrameId,
        frame_b: FrameId,
        raw: Vec<Match>,
        sizes: Option<(ImageSize, ImageSize)>,
    ) -> Result<(Self, RawReport)> {
        if frame_a >= frame_b {
            return Err(CorrespondenceError::FrameOrder(frame_a, frame_b));
        }
        let mut report = RawReport::default();
        let mut grid = PointGrid::new(IDENTITY_EPS);
        let mut kept: Vec<Match> = Vec::with_capacity(raw.len());
        for m in raw {
            if m.check().is_err() {
                report.invalid += 1;
                continue;
            }
            if let Some((sa, sb)) = sizes {
                if !sa.contains(&m.pa) || !sb.contains(&m.pb) {
                    report.out_of_bounds += 1;
                    continue;
                }
            }
            let mut dup = false;
            grid.for_each_near(&m.pa, IDENTITY_EPS, |j| {
                dup |= kept[j].within(&m, IDENTITY_EPS);
            });
            if dup {
                report.duplicates += 1;
                continue;
            }
            grid.insert(&m.pa, kept.len());
            kept.push(m);
        }
        Ok((Self::from_parts(frame_a, frame_b, kept), report))
    }

    pub fn frame_a(&self) -> &FrameId {
        &self.frame_a
    }

    pub fn frame_b(&self) -> &FrameId {
        &self.frame_b
    }

    /// Frame distance `|b - a|`.
    pub fn interval(&self) -> u64 {
        self.interval
    }

    pub fn matches(&self) -> &[Match] {
        &self.matches
    }

    pub fn into_matches(self) -> Vec<Match> {
        self.matches
    }

    pub fn len(&self) -> usize {
        self.matches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matches.is_empty()
    }

    fn same_pair(&self, other: &Self) -> bool {
        self.frame_a == other.frame_a && self.frame_b == other.frame_b
    }

    /// Checks every endpoint against the frame sizes.
    pub fn check_bounds(&self, size_a: ImageSize, size_b: ImageSize) -> Result<()> {
        for (index, m) in self.matches.iter().enumerate() {
            if !size_a.contains(&m.pa) || !size_b.contains(&m.pb) {
                return Err(CorrespondenceError::InvalidMatch {
                    index,
                    reason: "endpoint outside image bounds".into(),
                });
            }
        }
        Ok(())
    }

    /// Keeps the matches whose mask entry is true.
    pub fn retain_mask(&self, mask: &[bool]) -> Self {
        assert_eq!(mask.len(), self.matches.len(), "mask length mismatch");
        let matches = self
            .matches
            .iter()
            .zip(mask)
            .filter(|(_, &keep)| keep)
            .map(|(m, _)| m.clone())
            .collect();
        Self::from_parts(self.frame_a.clone(), self.frame_b.clone(), matches)
    }

    /// Same frames with a different (already validated) match list.
    pub(crate) fn with_matches(&self, matches: Vec<Match>) -> Self {
        Self::from_parts(self.frame_a.clone(), self.frame_b.clone(), matches)
    }

    /// Number of matches per source tag.
    pub fn provenance(&self) -> BTreeMap<String, usize> {
        let mut out = BTreeMap::new();
        for m in &self.matches {
            *out.entry(m.source.clone()).or_insert(0) += 1;
        }
        out
    }
}

/// Priority-ordered greedy union. A candidate is dropped when an already
/// accepted match from a *different* input set lies within `radius` on both
/// endpoints. Output keeps input order (set order, then match order).
fn dedup_union<K: Ord>(
    sets: &[&CorrespondenceSet],
    radius: f64,
    priority: impl Fn(usize, usize, &Match) -> K,
) -> Vec<Match> {
    let mut order: Vec<(usize, usize)> = sets
        .iter()
        .enumerate()
        .flat_map(|(s, set)| (0..set.len()).map(move |i| (s, i)))
        .collect();
    order.sort_by_cached_key(|&(s, i)| priority(s, i, &sets[s].matches[i]));

    let mut grid = PointGrid::new(radius);
    let mut accepted: Vec<(usize, usize)> = Vec::new();
    for (s, i) in order {
        let m = &sets[s].matches[i];
        let mut dup = false;
        grid.for_each_near(&m.pa, radius, |k| {
            let (ks, ki) = accepted[k];
            dup |= ks != s && sets[ks].matches[ki].within(m, radius);
        });
        if !dup {
            grid.insert(&m.pa, accepted.len());
            accepted.push((s, i));
        }
    }
    accepted.sort_unstable();
    accepted
        .into_iter()
        .map(|(s, i)| sets[s].matches[i].clone())
        .collect()
}

fn check_same_pair(sets: &[&CorrespondenceSet]) -> Result<()> {
    let first = sets.first().ok_or(CorrespondenceError::Empty)?;
    for s in &sets[1..] {
        if !first.same_pair(s) {
            return Err(CorrespondenceError::MismatchedPair(
                format!("{}->{}", first.frame_a, first.frame_b),
                format!("{}->{}", s.frame_a, s.frame_b),
            ));
        }
    }
    Ok(())
}

/// Cross-method duplicates are resolved by confidence, ties by method order.
fn ordered_conf(m: &Match) -> std::cmp::Reverse<u64> {
    // Confidences are validated to [0, 1], so the bit pattern orders like the value.
    std::cmp::Reverse((m.confidence + 0.0).to_bits())
}

/// Unions the outputs of several methods for the same frame pair. Matches
/// from different sets within `dedup_radius` on both endpoints are
/// duplicates; the highest confidence wins, ties go to the earlier set.
pub fn fuse(sets: &[CorrespondenceSet], dedup_radius: f64) -> Result<CorrespondenceSet> {
    let refs: Vec<&CorrespondenceSet> = sets.iter().collect();
    check_same_pair(&refs)?;
    let matches = dedup_union(&refs, dedup_radius, |s, i, m| (ordered_conf(m), s, i));
    Ok(refs[0].with_matches(matches))
}

/// Like [`fuse`], but non-propagated matches always win over propagated ones.
pub fn merge(
    c1: &CorrespondenceSet,
    c2: &CorrespondenceSet,
    dedup_radius: f64,
) -> Result<CorrespondenceSet> {
    let refs = [c1, c2];
    check_same_pair(&refs)?;
    let matches = dedup_union(&refs, dedup_radius, |s, i, m| {
        (m.is_propagated(), ordered_conf(m), s, i)
    });
    Ok(c1.with_matches(matches))
}

/// Whether a middle-frame distance links two matches. A zero threshold
/// accepts only exactly coincident points.
#[inline]
pub fn links(distance: f64, pixel_threshold: f64) -> bool {
    distance < pixel_threshold || distance == 0.0
}

/// Composes `A -> B` with `B -> C`. Each `A -> B` match links to the nearest
/// `B -> C` match whose B-point lies strictly closer than `pixel_threshold`
/// (lowest index on ties). A middle match may serve several outputs.
pub fn propagate(
    c_ab: &CorrespondenceSet,
    c_bc: &CorrespondenceSet,
    pixel_threshold: f64,
) -> Result<CorrespondenceSet> {
    if c_ab.frame_b != c_bc.frame_a {
        return Err(CorrespondenceError::ChainMismatch(
            c_ab.frame_b.clone(),
            c_bc.frame_a.clone(),
        ));
    }
    let mut grid = PointGrid::new(pixel_threshold);
    for (i, m) in c_bc.matches.iter().enumerate() {
        grid.insert(&m.pa, i);
    }
    let mut out = Vec::new();
    for m in &c_ab.matches {
        let mut best: Option<(f64, usize)> = None;
        grid.for_each_near(&m.pb, pixel_threshold, |k| {
            let d = (c_bc.matches[k].pa - m.pb).norm();
            if links(d, pixel_threshold) && best.is_none_or(|(bd, bk)| (d, k) < (bd, bk)) {
                best = Some((d, k));
            }
        });
        if let Some((_, k)) = best {
            let next = &c_bc.matches[k];
            out.push(Match::new(
                m.pa,
                next.pb,
                m.confidence.min(next.confidence),
                PROPAGATED_SOURCE,
            ));
        }
    }
    let (set, _) = CorrespondenceSet::from_raw(
        c_ab.frame_a.clone(),
        c_bc.frame_b.clone(),
        out,
        None,
    )?;
    debug_assert_eq!(set.interval, c_ab.interval + c_bc.interval);
    Ok(set)
}

/// True iff the set holds strictly more than `min_count` matches.
pub fn meets_budget(c: &CorrespondenceSet, min_count: usize) -> bool {
    c.len() > min_count
}


#[cfg(test)]
mod tests {
    use super::oracle::*;
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn fid(i: u64) -> FrameId {
        FrameId::new("vid", i).unwrap()
    }

    fn m(ax: f64, ay: f64, bx: f64, by: f64, conf: f64, src: &str) -> Match {
        Match::new(Point2::new(ax, ay), Point2::new(bx, by), conf, src)
    }

    fn random_set(rng: &mut ChaCha8Rng, a: u64, b: u64, n: usize, src: &str) -> CorrespondenceSet {
        let raw = (0..n)
            .map(|_| {
                m(
                    rng.random_range(0.0..640.0),
                    rng.random_range(0.0..480.0),
                    rng.random_range(0.0..640.0),
                    rng.random_range(0.0..480.0),
                    rng.random_range(0.0..=1.0),
                    src,
                )
            })
            .collect();
        CorrespondenceSet::from_raw(fid(a), fid(b), raw, None).unwrap().0
    }

    fn sorted(v: &[Match]) -> Vec<String> {
        let mut s: Vec<String> = v.iter().map(|m| format!("{m:?}")).collect();
        s.sort();
        s
    }

    #[test]
    fn frame_id_parsing() {
        let f: FrameId = "my:video:42".parse().unwrap();
        assert_eq!(f.video, "my:video");
        assert_eq!(f.index, 42);
        assert_eq!(f.to_string(), "my:video:42");
        assert!("novid".parse::<FrameId>().is_err());
        assert!(FrameId::new("has space", 1).is_err());
    }

    #[test]
    fn constructor_invariants() {
        assert!(matches!(
            CorrespondenceSet::empty(fid(20), fid(0)),
            Err(CorrespondenceError::FrameOrder(..))
        ));
        let dup = vec![m(1.0, 1.0, 2.0, 2.0, 0.5, "x"), m(1.0, 1.0, 2.0, 2.0, 0.9, "y")];
        assert!(matches!(
            CorrespondenceSet::new(fid(0), fid(20), dup.clone()),
            Err(CorrespondenceError::DuplicateMatch(0, 1))
        ));
        let (s, rep) = CorrespondenceSet::from_raw(fid(0), fid(20), dup, None).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(rep.duplicates, 1);
        let bad = vec![m(1.0, 1.0, 2.0, 2.0, 1.5, "x")];
        assert!(CorrespondenceSet::new(fid(0), fid(20), bad).is_err());
        let s = CorrespondenceSet::new(fid(20), fid(60), vec![]).unwrap();
        assert_eq!(s.interval(), 40);
    }

    #[test]
    fn from_raw_drops_out_of_bounds() {
        let raw = vec![m(1.0, 1.0, 2.0, 2.0, 0.5, "x"), m(10.0, 1.0, 2.0, 2.0, 0.5, "x")];
        let size = ImageSize::new(10, 10);
        let (s, rep) =
            CorrespondenceSet::from_raw(fid(0), fid(1), raw, Some((size, size))).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(rep.out_of_bounds, 1);
    }

    #[test]
    fn single_link_composition() {
        let ab = CorrespondenceSet::new(fid(0), fid(20), vec![m(10.0, 10.0, 50.0, 50.0, 0.9, "a")])
            .unwrap();
        let bc =
            CorrespondenceSet::new(fid(20), fid(40), vec![m(50.4, 50.3, 90.0, 90.0, 0.7, "b")])
                .unwrap();
        let ac = propagate(&ab, &bc, 1.0).unwrap();
        assert_eq!(ac.len(), 1);
        let out = &ac.matches()[0];
        assert_eq!(out.pa, Point2::new(10.0, 10.0));
        assert_eq!(out.pb, Point2::new(90.0, 90.0));
        assert_eq!(out.confidence, 0.7);
        assert_eq!(out.source, PROPAGATED_SOURCE);
        assert_eq!(ac.interval(), 40);
        assert_eq!(ac.frame_a(), &fid(0));
        assert_eq!(ac.frame_b(), &fid(40));

        let far = CorrespondenceSet::new(fid(20), fid(40), vec![m(51.2, 50.0, 90.0, 90.0, 0.7, "b")])
            .unwrap();
        assert!(propagate(&ab, &far, 1.0).unwrap().is_empty());
    }

    #[test]
    fn propagate_picks_nearest_then_lowest_index() {
        let ab = CorrespondenceSet::new(fid(0), fid(1), vec![m(0.0, 0.0, 5.0, 5.0, 1.0, "a")])
            .unwrap();
        let bc = CorrespondenceSet::new(
            fid(1),
            fid(2),
            vec![
                m(5.5, 5.0, 1.0, 1.0, 1.0, "b"),
                m(5.0, 5.3, 2.0, 2.0, 1.0, "b"),
                m(4.5, 5.0, 3.0, 3.0, 1.0, "b"),
            ],
        )
        .unwrap();
        let ac = propagate(&ab, &bc, 1.0).unwrap();
        assert_eq!(ac.matches()[0].pb, Point2::new(2.0, 2.0));
        let bc_tie = CorrespondenceSet::new(
            fid(1),
            fid(2),
            vec![m(5.5, 5.0, 1.0, 1.0, 1.0, "b"), m(4.5, 5.0, 3.0, 3.0, 1.0, "b")],
        )
        .unwrap();
        assert_eq!(
            propagate(&ab, &bc_tie, 1.0).unwrap().matches()[0].pb,
            Point2::new(1.0, 1.0)
        );
    }

    #[test]
    fn propagate_rejects_broken_chain() {
        let ab = CorrespondenceSet::empty(fid(0), fid(20)).unwrap();
        let bc = CorrespondenceSet::empty(fid(40), fid(60)).unwrap();
        assert!(matches!(
            propagate(&ab, &bc, 1.0),
            Err(CorrespondenceError::ChainMismatch(..))
        ));
    }

    #[test]
    fn zero_threshold_needs_exact_coincidence() {
        let ab = CorrespondenceSet::new(
            fid(0),
            fid(1),
            vec![m(0.0, 0.0, 5.0, 5.0, 1.0, "a"), m(1.0, 0.0, 7.0, 7.0, 1.0, "a")],
        )
        .unwrap();
        let bc = CorrespondenceSet::new(
            fid(1),
            fid(2),
            vec![m(5.0, 5.0, 1.0, 1.0, 1.0, "b"), m(7.0, 7.0 + 1e-9, 3.0, 3.0, 1.0, "b")],
        )
        .unwrap();
        let ac = propagate(&ab, &bc, 0.0).unwrap();
        assert_eq!(ac.len(), 1);
        assert_eq!(ac.matches()[0].pb, Point2::new(1.0, 1.0));
    }

    #[test]
    fn propagate_equals_brute_force_on_random_sets() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for round in 0..20 {
            let ab = random_set(&mut rng, 0, 20, 500, "a");
            // Half of the middle points are planted near B-endpoints of `ab`.
            let mut raw: Vec<Match> = Vec::new();
            for (i, x) in ab.matches().iter().enumerate().take(250) {
                let jitter = if i % 5 == 0 { 0.0 } else { rng.random_range(-1.0..1.0) };
                raw.push(m(
                    (x.pb.x + jitter).max(0.0),
                    (x.pb.y - jitter * 0.5).max(0.0),
                    rng.random_range(0.0..640.0),
                    rng.random_range(0.0..480.0),
                    rng.random_range(0.0..=1.0),
                    "b",
                ));
            }
            raw.extend(random_set(&mut rng, 20, 40, 250, "b").into_matches());
            let bc = CorrespondenceSet::from_raw(fid(20), fid(40), raw, None).unwrap().0;
            for t in [0.0, 0.5, 1.0] {
                let fast = propagate(&ab, &bc, t).unwrap();
                let slow = propagate_brute(&ab, &bc, t);
                assert_eq!(sorted(fast.matches()), sorted(&slow), "round {round} t {t}");
                assert!(fast.len() <= ab.len());
            }
        }
    }

    #[test]
    fn fuse_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let s = random_set(&mut rng, 0, 20, 200, "a");
        assert_eq!(sorted(fuse(std::slice::from_ref(&s), 1.0).unwrap().matches()), sorted(s.matches()));
        // idempotent
        assert_eq!(
            sorted(fuse(&[s.clone(), s.clone()], 1.0).unwrap().matches()),
            sorted(s.matches())
        );
        // disjoint sets concatenate
        let a = CorrespondenceSet::new(fid(0), fid(20), vec![m(1.0, 1.0, 1.0, 1.0, 0.5, "a")])
            .unwrap();
        let b = CorrespondenceSet::new(fid(0), fid(20), vec![m(9.0, 9.0, 9.0, 9.0, 0.5, "b")])
            .unwrap();
        assert_eq!(fuse(&[a.clone(), b.clone()], 1.0).unwrap().len(), 2);
        // mismatched frames
        let c = CorrespondenceSet::empty(fid(0), fid(40)).unwrap();
        assert!(matches!(fuse(&[a, c], 1.0), Err(CorrespondenceError::MismatchedPair(..))));
        assert_eq!(fuse(&[], 1.0), Err(CorrespondenceError::Empty));
    }

    #[test]
    fn fuse_keeps_highest_confidence_then_method_order() {
        let a = CorrespondenceSet::new(fid(0), fid(20), vec![m(1.0, 1.0, 1.0, 1.0, 0.5, "a")])
            .unwrap();
        let b = CorrespondenceSet::new(fid(0), fid(20), vec![m(1.5, 1.0, 1.0, 1.5, 0.8, "b")])
            .unwrap();
        let f = fuse(&[a.clone(), b.clone()], 1.0).unwrap();
        assert_eq!(f.len(), 1);
        assert_eq!(f.matches()[0].source, "b");
        let b_tie =
            CorrespondenceSet::new(fid(0), fid(20), vec![m(1.5, 1.0, 1.0, 1.5, 0.5, "b")]).unwrap();
        assert_eq!(fuse(&[a.clone(), b_tie.clone()], 1.0).unwrap().matches()[0].source, "a");
        assert_eq!(fuse(&[b_tie, a], 1.0).unwrap().matches()[0].source, "b");
    }

    #[test]
    fn fuse_overlap_count_matches_quadratic_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let s1 = random_set(&mut rng, 0, 20, 300, "a");
            let k = rng.random_range(0..100);
            let mut raw: Vec<Match> = s1.matches()[..k]
                .iter()
                .map(|x| {
                    m(
                        x.pa.x + rng.random_range(-0.6..0.6),
                        x.pa.y + rng.random_range(-0.6..0.6),
                        x.pb.x + rng.random_range(-0.6..0.6),
                        x.pb.y + rng.random_range(-0.6..0.6),
                        rng.random_range(0.0..=1.0),
                        "b",
                    )
                })
                .filter(|x| x.pa.x >= 0.0 && x.pa.y >= 0.0 && x.pb.x >= 0.0 && x.pb.y >= 0.0)
                .collect();
            raw.extend(random_set(&mut rng, 0, 20, 200, "b").into_matches());
            let s2 = CorrespondenceSet::from_raw(fid(0), fid(20), raw, None).unwrap().0;
            let fused = fuse(&[s1.clone(), s2.clone()], 1.0).unwrap();

            let mut items: Vec<(usize, usize, Match)> = Vec::new();
            for (s, set) in [&s1, &s2].iter().enumerate() {
                for (i, x) in set.matches().iter().enumerate() {
                    items.push((s, i, x.clone()));
                }
            }
            items.sort_by(|a, b| {
                b.2.confidence
                    .partial_cmp(&a.2.confidence)
                    .unwrap()
                    .then(a.0.cmp(&b.0))
                    .then(a.1.cmp(&b.1))
            });
            let flat: Vec<(usize, Match)> = items.into_iter().map(|(s, _, x)| (s, x)).collect();
            let expect = dedup_brute(&flat, 1.0);
            let expect_matches: Vec<Match> = expect.into_iter().map(|(_, x)| x).collect();
            assert_eq!(sorted(fused.matches()), sorted(&expect_matches));
            assert!(fused.len() <= s1.len() + s2.len());
        }
    }

    #[test]
    fn merge_prefers_base_matches() {
        let base = CorrespondenceSet::new(fid(0), fid(40), vec![m(1.0, 1.0, 1.0, 1.0, 0.1, "a")])
            .unwrap();
        let prop = CorrespondenceSet::new(
            fid(0),
            fid(40),
            vec![
                m(1.4, 1.0, 1.0, 1.4, 1.0, PROPAGATED_SOURCE),
                m(30.0, 1.0, 1.0, 1.4, 1.0, PROPAGATED_SOURCE),
            ],
        )
        .unwrap();
        let merged = merge(&base, &prop, 1.0).unwrap();
        assert_eq!(merged.len(), 2);
        assert_eq!(merged.matches()[0].source, "a");
        // order of arguments does not change the priority rule
        let merged = merge(&prop, &base, 1.0).unwrap();
        assert_eq!(merged.provenance().get("a"), Some(&1));
        let empty = CorrespondenceSet::empty(fid(0), fid(40)).unwrap();
        assert_eq!(merge(&base, &empty, 1.0).unwrap(), base);
    }

    #[test]
    fn merge_random_matches_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..10 {
            let base = random_set(&mut rng, 0, 40, 300, "a");
            let extra = random_set(&mut rng, 0, 40, 100, PROPAGATED_SOURCE).into_matches();
            let raw: Vec<Match> = base.matches()[..120]
                .iter()
                .map(|x| {
                    m(
                        x.pa.x + rng.random_range(0.0..0.7),
                        x.pa.y + rng.random_range(0.0..0.7),
                        x.pb.x + rng.random_range(0.0..0.7),
                        x.pb.y,
                        1.0,
                        PROPAGATED_SOURCE,
                    )
                })
                .chain(extra)
                .collect();
            let prop = CorrespondenceSet::from_raw(fid(0), fid(40), raw, None).unwrap().0;
            let merged = merge(&base, &prop, 1.0).unwrap();
            let mut items: Vec<(usize, Match)> = Vec::new();
            let mut b: Vec<(usize, &Match)> = base.matches().iter().map(|x| (0, x)).collect();
            b.sort_by(|x, y| y.1.confidence.partial_cmp(&x.1.confidence).unwrap());
            items.extend(b.into_iter().map(|(s, x)| (s, x.clone())));
            let mut p: Vec<(usize, &Match)> = prop.matches().iter().map(|x| (1, x)).collect();
            p.sort_by(|x, y| y.1.confidence.partial_cmp(&x.1.confidence).unwrap());
            items.extend(p.into_iter().map(|(s, x)| (s, x.clone())));
            let expect: Vec<Match> = dedup_brute(&items, 1.0).into_iter().map(|x| x.1).collect();
            assert_eq!(sorted(merged.matches()), sorted(&expect));
            assert_eq!(merged.provenance().get("a"), Some(&300));
        }
    }

    #[test]
    fn budget_is_strict() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let s = random_set(&mut rng, 0, 1, 1025, "a");
        assert!(meets_budget(&s, 1024));
        let s = s.with_matches(s.matches()[..1024].to_vec());
        assert!(!meets_budget(&s, 1024));
        let e = CorrespondenceSet::empty(fid(0), fid(1)).unwrap();
        assert!(!meets_budget(&e, 1024));
    }

    proptest! {
        #[test]
        fn propagated_endpoints_come_from_inputs(seed in any::<u64>(), t in 0.0f64..2.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ab = random_set(&mut rng, 0, 1, 60, "a");
            let raw: Vec<Match> = ab.matches().iter().map(|x| m(
                (x.pb.x + rng.random_range(-1.0..1.0)).max(0.0),
                (x.pb.y + rng.random_range(-1.0..1.0)).max(0.0),
                rng.random_range(0.0..640.0), rng.random_range(0.0..480.0), 0.5, "b")).collect();
            let bc = CorrespondenceSet::from_raw(fid(1), fid(2), raw, None).unwrap().0;
            let ac = propagate(&ab, &bc, t).unwrap();
            prop_assert!(ac.len() <= ab.len());
            for x in ac.matches() {
                prop_assert!(ab.matches().iter().any(|y| y.pa == x.pa));
                prop_assert!(bc.matches().iter().any(|y| y.pb == x.pb));
            }
        }

        #[test]
        fn provenance_sums_to_count(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_set(&mut rng, 0, 1, 50, "a");
            let b = random_set(&mut rng, 0, 1, 50, "b");
            let f = fuse(&[a, b], 1.0).unwrap();
            prop_assert_eq!(f.provenance().values().sum::<usize>(), f.len());
        }
    }
}
