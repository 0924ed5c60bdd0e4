use super::dataset::{EvalPair, OVERLAP_BINS};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const DEFAULT_PER_BIN: usize = 760;

/// Selected pairs plus the bins that could not supply `per_bin` pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// Ordered by bin, then by position in the pool.
    pub pairs: Vec<EvalPair>,
    /// `(bin, available)` for every short bin.
    pub shortages: Vec<(usize, usize)>,
}

/// Draws up to `per_bin` pairs from each overlap bin, uniformly without
/// replacement. Pairs without a ratio or outside `[0.1, 0.5]` are ignored.
pub fn sample_eval_pairs(pool: &[EvalPair], per_bin: usize, seed: u64) -> Sample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bins: Vec<Vec<usize>> = vec![Vec::new(); OVERLAP_BINS];
    for (i, p) in pool.iter().enumerate() {
        if let Some(b) = p.bin() {
            bins[b].push(i);
        }
    }
    let mut pairs = Vec::new();
    let mut shortages = Vec::new();
    for (b, members) in bins.iter().enumerate() {
        if members.len() < per_bin {
            log::warn!("overlap bin {b}: only {} of {per_bin} pairs available", members.len());
            shortages.push((b, members.len()));
        }
        let take = per_bin.min(members.len());
        let mut chosen = rand::seq::index::sample(&mut rng, members.len(), take).into_vec();
        chosen.sort_unstable();
        pairs.extend(chosen.into_iter().map(|j| pool[members[j]].clone()));
    }
    Sample { pairs, shortages }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmark::EvalFrame;
    use crate::geometry::{CameraIntrinsics, Pose};

    fn pool(ratios: &[f64]) -> Vec<EvalPair> {
        let frame = EvalFrame {
            image: "x.pgm".into(),
            intrinsics: CameraIntrinsics::new(100.0, 100.0, 50.0, 50.0, 100, 100).unwrap(),
            pose: Pose::identity(),
            depth: None,
        };
        ratios
            .iter()
            .enumerate()
            .map(|(i, &r)| EvalPair {
                dataset: "d".into(),
                id: i.to_string(),
                frame_a: frame.clone(),
                frame_b: frame.clone(),
                overlap: Some(r),
            })
            .collect()
    }

    #[test]
    fn full_bins_give_per_bin_each() {
        let ratios: Vec<f64> = (0..5000).map(|i| 0.05 + 0.5 * (i as f64 / 5000.0)).collect();
        let p = pool(&ratios);
        let s = sample_eval_pairs(&p, 760, 1);
        assert_eq!(s.pairs.len(), 3800);
        assert!(s.shortages.is_empty());
        for b in 0..5 {
            assert_eq!(s.pairs.iter().filter(|p| p.bin() == Some(b)).count(), 760);
        }
        // no pair is drawn twice
        let mut ids: Vec<&str> = s.pairs.iter().map(|p| p.id.as_str()).collect();
        ids.sort_unstable();
        ids.dedup();
        assert_eq!(ids.len(), 3800);
        assert_eq!(sample_eval_pairs(&p, 760, 1), s);
        assert_ne!(sample_eval_pairs(&p, 760, 2), s);
    }

    #[test]
    fn single_bin_pool_reports_shortages() {
        let p = pool(&[0.31, 0.32, 0.33, 0.05, 0.9]);
        let s = sample_eval_pairs(&p, 2, 0);
        assert_eq!(s.pairs.len(), 2);
        assert!(s.pairs.iter().all(|p| p.bin() == Some(2)));
        assert_eq!(s.shortages, vec![(0, 0), (1, 0), (3, 0), (4, 0)]);
    }
}
