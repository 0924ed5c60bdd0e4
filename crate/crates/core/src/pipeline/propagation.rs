use super::{PipelineConfig, TrainingPair};
use crate::correspondence::{meets_budget, merge, propagate, CorrespondenceSet};
use crate::geometry::ImageSize;
use rayon::prelude::*;
use std::collections::{BTreeMap, BTreeSet};

/// Filtered base labels of one video, keyed by `(frame_a, frame_b)` index.
#[derive(Debug, Clone)]
pub struct BaseIndex {
    pub video: String,
    pub frame_size: ImageSize,
    pub sets: BTreeMap<(u64, u64), CorrespondenceSet>,
}

#[derive(Debug, Clone)]
struct Level {
    interval: u64,
    /// Start frame -> (set, propagation depth).
    sets: BTreeMap<u64, (CorrespondenceSet, u32)>,
}

fn alive(entry: Option<&(CorrespondenceSet, u32)>, budget: usize) -> Option<&(CorrespondenceSet, u32)> {
    entry.filter(|(s, _)| meets_budget(s, budget))
}

/// Pushes base labels to ever larger intervals and keeps, for every start
/// frame, the most distant set that meets the budget.
///
/// Level 0 holds the base sets at the first offset `d`. Level `k + 1`
/// (interval `2^(k+1) d`) composes level-`k` sets `X -> X + 2^k d` and
/// `X + 2^k d -> X + 2^(k+1) d`, both of which must meet the budget, and
/// merges the result with a base set at the same interval when one exists.
/// Rounds continue while any new set can be formed.
pub fn propagate_video(base: &BaseIndex, frames: &[u64], cfg: &PipelineConfig) -> Vec<TrainingPair> {
    let Some(&first) = cfg.base_offsets.first() else {
        return Vec::new();
    };
    let sampled: BTreeSet<u64> = frames.iter().copied().collect();
    let budget = cfg.min_correspondences;

    let level0 = sampled
        .iter()
        .filter_map(|&x| base.sets.get(&(x, x + first)).map(|s| (x, (s.clone(), 0))))
        .collect();
    let mut levels = vec![Level {
        interval: first,
        sets: level0,
    }];

    loop {
        let prev = levels.last().expect("at least one level");
        let Some(interval) = prev.interval.checked_mul(2) else {
            break;
        };
        let step = prev.interval;
        let starts: Vec<u64> = sampled
            .iter()
            .copied()
            .filter(|x| x.checked_add(interval).is_some_and(|e| sampled.contains(&e)))
            .collect();
        if starts.is_empty() {
            break;
        }
        let built: Vec<Option<(u64, (CorrespondenceSet, u32))>> = starts
            .par_iter()
            .map(|&x| {
                let chained = match (alive(prev.sets.get(&x), budget), alive(prev.sets.get(&(x + step)), budget)) {
                    (Some((ab, da)), Some((bc, db))) => {
                        let p = propagate(ab, bc, cfg.propagation_pixel_threshold).expect("chain frames agree");
                        Some((p, da.max(db) + 1))
                    }
                    _ => None,
                };
                let out = match (chained, base.sets.get(&(x, x + interval))) {
                    (Some((p, depth)), Some(b)) => {
                        let m = merge(b, &p, cfg.dedup_radius).expect("same frame pair");
                        let depth = if m.matches().iter().any(|m| m.is_propagated()) { depth } else { 0 };
                        (m, depth)
                    }
                    (Some(p), None) => p,
                    (None, Some(b)) => (b.clone(), 0),
                    (None, None) => return None,
                };
                Some((x, out))
            })
            .collect();
        let sets: BTreeMap<u64, (CorrespondenceSet, u32)> = built.into_iter().flatten().collect();
        if sets.is_empty() {
            break;
        }
        log::debug!(
            "{}: interval {interval}: {} sets, {} meet the budget",
            base.video,
            sets.len(),
            sets.values().filter(|(s, _)| meets_budget(s, budget)).count()
        );
        levels.push(Level { interval, sets });
    }

    let mut out = Vec::new();
    for &x in &sampled {
        let best = levels
            .iter()
            .rev()
            .find_map(|l| alive(l.sets.get(&x), budget));
        if let Some((set, depth)) = best {
            out.push(TrainingPair {
                correspondences: set.clone(),
                size_a: base.frame_size,
                size_b: base.frame_size,
                augment_a: None,
                augment_b: None,
                depth: *depth,
                flags: Vec::new(),
            });
        }
    }
    out
}
