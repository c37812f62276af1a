use crewflow::crew::{
    assign_emotions, build_edit_timeline, plan_long_shot, shot_length_from_voiceover, Artifact, ArtifactBody,
    ArtifactKind, CrewError, Direction, EmotionRules, KeyframeSource, Producer,
};
use proptest::prelude::*;
use serde_json::json;

/// Fewest extensions by counting up until coverage.
fn fewest_extensions(target: u64, len: u64) -> usize {
    let mut k = 0;
    while len + k * (len - 1) < target {
        k += 1;
    }
    k as usize
}

#[test]
fn long_shot_plans_cover_minimally_everywhere() {
    for target in 1..=200u64 {
        for len in 2..=32u64 {
            let plan = plan_long_shot(target, len).unwrap();
            let k = fewest_extensions(target, len);
            assert_eq!(plan.extension_count(), k, "T={target} L={len}");
            assert!(plan.total_frames() >= target);
            if k > 0 {
                assert!(plan.total_frames() - (len - 1) < target, "T={target} L={len} not minimal");
            } else {
                assert_eq!(plan.total_frames(), target);
            }
            assert_eq!(plan.segments[0].keyframe_source, KeyframeSource::SceneFrame);
            for (i, s) in plan.segments.iter().enumerate().skip(1) {
                assert_eq!(s.length, len - 1);
                assert_eq!(s.direction == Direction::Reverse, i == 2, "T={target} L={len} segment {i}");
                match s.keyframe_source {
                    KeyframeSource::BoundaryOf(j) => assert!(j < i),
                    KeyframeSource::SceneFrame => panic!("extension {i} anchored to the scene frame"),
                }
            }
        }
    }
}

#[test]
fn degenerate_inputs() {
    assert!(plan_long_shot(0, 10).is_err());
    assert!(plan_long_shot(10, 1).is_err());
    assert!(matches!(shot_length_from_voiceover(0.0, 24), Err(CrewError::NonPositiveDuration(_))));
    assert!(matches!(shot_length_from_voiceover(f64::NAN, 24), Err(CrewError::NonPositiveDuration(_))));
    assert!(shot_length_from_voiceover(1.0, 0).is_err());
    assert!(build_edit_timeline(&[], 1.0, vec![], "m").is_err());
    let short = [("a".to_owned(), 1.0), ("b".to_owned(), 3.0)];
    assert!(matches!(build_edit_timeline(&short, 1.0, vec![], "m"), Err(CrewError::OverlapTooLarge { .. })));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn shot_length_is_ceiling_of_seconds_times_fps(millis in 1u64..600_000, fps in 1u32..=120) {
        let seconds = millis as f64 / 1000.0;
        let exact = (millis * fps as u64).div_ceil(1000).max(1);
        prop_assert_eq!(shot_length_from_voiceover(seconds, fps).unwrap(), exact);
    }

    #[test]
    fn timeline_total_subtracts_each_dissolve(
        lengths in prop::collection::vec(2u32..400, 1..20),
        overlap_tenths in 0u32..20,
    ) {
        let overlap = overlap_tenths as f64 / 10.0;
        let scenes: Vec<(String, f64)> =
            lengths.iter().enumerate().map(|(i, &l)| (format!("s{i}"), l as f64 / 10.0 + 2.0)).collect();
        let timeline = build_edit_timeline(&scenes, overlap, vec!["v".into()], "m").unwrap();
        let sum: u32 = lengths.iter().sum();
        let expected = (sum as f64 + 20.0 * scenes.len() as f64 - overlap_tenths as f64 * (scenes.len() - 1) as f64) / 10.0;
        prop_assert!((timeline.total_duration() - expected).abs() < 1e-9, "{} vs {}", timeline.total_duration(), expected);
        prop_assert!(timeline.audio.merged);
    }

    #[test]
    fn emotions_come_from_the_first_matching_rule(lines in prop::collection::vec("[a-z ?!]{0,24}", 0..12)) {
        let rules = EmotionRules::default();
        let tags = assign_emotions(&lines, &rules);
        prop_assert_eq!(tags.len(), lines.len());
        for (tag, line) in tags.iter().zip(&lines) {
            prop_assert!(rules.vocabulary().contains(&tag.emotion));
            let expected = rules.rules().iter().find(|r| line.contains(r.keyword.as_str())).map_or("neutral", |r| r.emotion.as_str());
            prop_assert_eq!(&tag.emotion, expected);
        }
    }
}

#[test]
fn artifact_hash_ignores_the_attempt() {
    let body = ArtifactBody { kind: ArtifactKind::Dialogue, content: json!({ "lines": ["hi"], "b": 1, "a": 2 }) };
    let first = Artifact::new(Producer { event_id: "dialogue".into(), attempt: 1 }, body.clone());
    let second = Artifact::new(Producer { event_id: "dialogue".into(), attempt: 2 }, body);
    assert_eq!(first.content_hash, second.content_hash);
    assert_ne!(first.id, second.id);
    assert!(first.verify());
    let mut tampered = first.clone();
    tampered.content["a"] = json!(3);
    assert!(!tampered.verify());
}
