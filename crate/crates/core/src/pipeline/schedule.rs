/// Frame indices `0, interval, 2 * interval, ...` below `video_length`.
pub fn sample_frames(video_length: u64, interval: u64) -> Vec<u64> {
    assert!(interval > 0, "interval must be positive");
    (0..video_length).step_by(interval as usize).collect()
}

/// Pairs `(x, x + d)` for every sampled `x` and offset `d` whose end frame is
/// also sampled. Ordered by start frame, then offset.
pub fn schedule_base_pairs(frames: &[u64], base_offsets: &[u64]) -> Vec<(u64, u64)> {
    let sampled: std::collections::BTreeSet<u64> = frames.iter().copied().collect();
    let mut out = Vec::new();
    for &x in &sampled {
        for &d in base_offsets {
            if let Some(y) = x.checked_add(d) {
                if d > 0 && sampled.contains(&y) {
                    out.push((x, y));
                }
            }
        }
    }
    out
}
