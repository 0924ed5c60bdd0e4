use super::{FilterStage, PairFlag, PipelineConfig};
use crate::correspondence::{fuse, CorrespondenceSet};
use crate::matcher::{run_matcher, FrameSource, MatchFlag, SyntheticTruth};
use crate::robust::{filter_matches, FilterFlag, FilterOutcome, ModelKind, RansacConfig};
use crate::seed::SeedHasher;

/// Fused, filtered labels for one base pair.
#[derive(Debug, Clone)]
pub struct BaseLabels {
    pub set: CorrespondenceSet,
    pub flags: Vec<PairFlag>,
    /// Set when the fused labels are too few to be used at all.
    pub dropped: bool,
}

/// Share of the fundamental inliers a homography must explain to be preferred.
const PLANAR_SUPPORT: f64 = 0.9;

fn ransac_for(cfg: &PipelineConfig, stage: &str, a: &FrameSource, b: &FrameSource) -> RansacConfig {
    let seed = SeedHasher::new(cfg.seed)
        .u64(cfg.ransac.seed)
        .str(stage)
        .str(&a.frame.to_string())
        .str(&b.frame.to_string())
        .finish();
    cfg.ransac.with_seed(seed)
}

fn filter(
    raw: &CorrespondenceSet,
    ransac: &RansacConfig,
    label: &str,
    flags: &mut Vec<PairFlag>,
) -> CorrespondenceSet {
    let fundamental = filter_matches(raw, &ModelKind::Fundamental, ransac);
    // Planar scenes and pure rotations leave F underdetermined: it may fail to
    // fit, or admit outliers lying near any compatible epipolar line. Prefer a
    // homography when it explains nearly all of the fundamental support.
    if fundamental.flag == Some(FilterFlag::InsufficientMatches) {
        return report(fundamental, raw, label, flags);
    }
    let planar = filter_matches(raw, &ModelKind::Homography, ransac);
    let prefer_planar = planar.flag.is_none()
        && (fundamental.flag.is_some() || planar.set.len() as f64 >= PLANAR_SUPPORT * fundamental.set.len() as f64);
    let out = if prefer_planar {
        log::debug!("{label}: planar or rotational motion, filtered with a homography");
        planar
    } else {
        fundamental
    };
    report(out, raw, label, flags)
}

fn report(out: FilterOutcome, raw: &CorrespondenceSet, label: &str, flags: &mut Vec<PairFlag>) -> CorrespondenceSet {
    if let Some(flag) = out.flag {
        let reason = match flag {
            FilterFlag::InsufficientMatches => format!("too few matches ({})", raw.len()),
            FilterFlag::NoModelFound => "no model found".to_string(),
            FilterFlag::Failed(e) => e.to_string(),
        };
        flags.push(PairFlag::FilterRejected {
            matcher: label.to_string(),
            reason,
        });
    }
    out.set
}

/// Runs every matcher on the pair, filters with a fundamental-matrix RANSAC
/// (a homography for planar or rotational motion) and fuses the results in
/// matcher order. Matcher failures are recorded as
/// flags and skipped.
pub fn generate_base_labels(
    frame_a: &FrameSource,
    frame_b: &FrameSource,
    truth: Option<&SyntheticTruth>,
    cfg: &PipelineConfig,
) -> BaseLabels {
    let mut flags = Vec::new();
    let mut raw_sets = Vec::new();
    for spec in &cfg.matchers {
        match run_matcher(spec, frame_a, frame_b, truth) {
            Ok(out) => {
                if out.flag == Some(MatchFlag::NoKeypoints) {
                    flags.push(PairFlag::NoKeypoints {
                        matcher: spec.name.clone(),
                    });
                }
                raw_sets.push((spec.name.as_str(), out.set));
            }
            Err(e) => {
                log::warn!("{} on {} -> {}: {e}", spec.name, frame_a.frame, frame_b.frame);
                flags.push(PairFlag::MatcherFailed {
                    matcher: spec.name.clone(),
                    error: e.to_string(),
                });
            }
        }
    }

    let fused = match cfg.filter_stage {
        FilterStage::PerMethod => {
            let filtered: Vec<CorrespondenceSet> = raw_sets
                .iter()
                .map(|(name, raw)| filter(raw, &ransac_for(cfg, name, frame_a, frame_b), name, &mut flags))
                .collect();
            fuse_or_empty(&filtered, cfg, frame_a, frame_b)
        }
        FilterStage::PostFusion => {
            let raws: Vec<CorrespondenceSet> = raw_sets.into_iter().map(|(_, s)| s).collect();
            let fused = fuse_or_empty(&raws, cfg, frame_a, frame_b);
            filter(&fused, &ransac_for(cfg, "fused", frame_a, frame_b), "fused", &mut flags)
        }
    };

    let dropped = fused.len() < ModelKind::Fundamental.sample_size();
    if dropped {
        flags.push(PairFlag::TooFewMatches { count: fused.len() });
    }
    BaseLabels {
        set: fused,
        flags,
        dropped,
    }
}

fn fuse_or_empty(
    sets: &[CorrespondenceSet],
    cfg: &PipelineConfig,
    a: &FrameSource,
    b: &FrameSource,
) -> CorrespondenceSet {
    if sets.is_empty() {
        return CorrespondenceSet::empty(a.frame.clone(), b.frame.clone()).expect("frames are ordered");
    }
    fuse(sets, cfg.dedup_radius).expect("all sets share the frame pair")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::correspondence::FrameId;
    use crate::geometry::{CameraIntrinsics, DepthMap, Pose};
    use crate::matcher::{GrayImage, MatcherKind, MatcherSpec};
    use nalgebra::Vector3;
    use std::sync::Arc;

    fn frames() -> (FrameSource, FrameSource) {
        let img = GrayImage::new(320, 240, vec![0; 320 * 240]);
        (
            FrameSource::from_image(FrameId::new("v", 0).unwrap(), img.clone()),
            FrameSource::from_image(FrameId::new("v", 20).unwrap(), img),
        )
    }

    fn posed() -> SyntheticTruth {
        let k = CameraIntrinsics::new(300.0, 300.0, 160.0, 120.0, 320, 240).unwrap();
        SyntheticTruth::Posed {
            k_a: k,
            pose_a: Pose::identity(),
            depth_a: Arc::new(DepthMap::from_fn(320, 240, |x, y| {
                4.0 + 2.0 * ((x as f32 * 0.05).sin() * (y as f32 * 0.04).cos()).abs()
            })),
            k_b: k,
            pose_b: Pose::new(
                *nalgebra::Rotation3::from_euler_angles(0.03, 0.08, 0.0).matrix(),
                Vector3::new(-0.6, 0.1, 0.05),
            )
            .unwrap(),
        }
    }

    fn syn(name: &str, count: u64, seed: u64, outliers: f64) -> MatcherSpec {
        MatcherSpec::new(MatcherKind::Synthetic, name)
            .with_param("count", count)
            .with_param("seed", seed)
            .with_param("outlier_rate", outliers)
            .with_param("outlier_min_residual", 10.0)
    }

    fn cfg(matchers: Vec<MatcherSpec>) -> PipelineConfig {
        PipelineConfig {
            matchers,
            ..PipelineConfig::default()
        }
    }

    #[test]
    fn clean_single_matcher_passes_through() {
        let (a, b) = frames();
        let c = cfg(vec![syn("s", 300, 1, 0.0)]);
        let raw = run_matcher(&c.matchers[0], &a, &b, Some(&posed())).unwrap().set;
        let out = generate_base_labels(&a, &b, Some(&posed()), &c);
        assert_eq!(out.set, raw);
        assert!(out.flags.is_empty());
        assert!(!out.dropped);
    }

    #[test]
    fn disjoint_matchers_fuse_to_the_sum() {
        let (a, b) = frames();
        let c = cfg(vec![syn("s1", 300, 1, 0.0), syn("s2", 400, 2, 0.0)]);
        let out = generate_base_labels(&a, &b, Some(&posed()), &c);
        // different scene streams; any 1-px coincidence would be a duplicate
        let s1 = run_matcher(&c.matchers[0], &a, &b, Some(&posed())).unwrap().set;
        let s2 = run_matcher(&c.matchers[1], &a, &b, Some(&posed())).unwrap().set;
        let close = s1
            .matches()
            .iter()
            .flat_map(|m| s2.matches().iter().map(move |n| (m, n)))
            .filter(|(m, n)| (m.pa - n.pa).norm() <= 1.0 && (m.pb - n.pb).norm() <= 1.0)
            .count();
        assert_eq!(out.set.len(), 700 - close);
        assert_eq!(out.set.provenance().values().sum::<usize>(), out.set.len());
    }

    #[test]
    fn planted_outliers_do_not_survive() {
        let (a, b) = frames();
        for stage in [FilterStage::PerMethod, FilterStage::PostFusion] {
            let c = PipelineConfig {
                filter_stage: stage,
                ..cfg(vec![syn("s", 400, 3, 0.4)])
            };
            let raw = run_matcher(&c.matchers[0], &a, &b, Some(&posed())).unwrap();
            let planted = raw.planted_outliers.unwrap();
            let out = generate_base_labels(&a, &b, Some(&posed()), &c);
            for m in out.set.matches() {
                let i = raw.set.matches().iter().position(|r| r == m).unwrap();
                assert!(!planted[i]);
            }
            assert!(out.set.len() as f64 >= 0.95 * 240.0);
        }
    }

    #[test]
    fn planar_scenes_fall_back_to_a_homography() {
        let (a, b) = frames();
        let truth = SyntheticTruth::Planar {
            extent: crate::geometry::ImageSize::new(400, 300),
            to_a: crate::geometry::Homography::translation(-20.0, -30.0),
            to_b: crate::geometry::Homography::translation(-35.0, -25.0),
        };
        let c = cfg(vec![syn("s", 300, 4, 0.3)]);
        let raw = run_matcher(&c.matchers[0], &a, &b, Some(&truth)).unwrap();
        let out = generate_base_labels(&a, &b, Some(&truth), &c);
        assert!(out.flags.is_empty(), "{:?}", out.flags);
        let planted = raw.planted_outliers.unwrap();
        let inliers = planted.iter().filter(|&&p| !p).count();
        assert_eq!(out.set.len(), inliers);
    }

    #[test]
    fn failures_are_flagged_not_fatal() {
        let (a, b) = frames();
        let bad = MatcherSpec::new(MatcherKind::External, "ext")
            .with_param("command", "/nonexistent/x {image_a} {image_b} {out}");
        let c = cfg(vec![bad, syn("s", 200, 1, 0.0)]);
        let out = generate_base_labels(&a, &b, Some(&posed()), &c);
        assert_eq!(out.set.len(), 200);
        assert!(matches!(&out.flags[0], PairFlag::MatcherFailed { matcher, .. } if matcher == "ext"));

        let c = cfg(vec![syn("s", 5, 1, 0.0)]);
        let out = generate_base_labels(&a, &b, Some(&posed()), &c);
        assert!(out.dropped);
        assert!(out.set.is_empty());
        assert!(out.flags.contains(&PairFlag::TooFewMatches { count: 0 }));

        let out = generate_base_labels(&a, &b, None, &cfg(vec![syn("s", 50, 1, 0.0)]));
        assert!(out.dropped);
    }
}
