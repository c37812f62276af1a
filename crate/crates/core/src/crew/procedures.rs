use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CrewError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("voice duration must be positive, got {0}")]
    NonPositiveDuration(f64),
    #[error("scene `{scene}` lasts {duration}s, not longer than the {overlap}s overlap")]
    OverlapTooLarge { scene: String, duration: f64, overlap: f64 },
    #[error("emotion `{0}` is not in the vocabulary")]
    UnknownEmotion(String),
}

pub const NEUTRAL: &str = "neutral";
const DEFAULT_VOCABULARY: [&str; 4] = ["anger", "surprise", "whisper", NEUTRAL];

/// A keyword and the emotion it implies. Matching is case-insensitive.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmotionRule {
    pub keyword: String,
    pub emotion: String,
}

impl EmotionRule {
    pub fn new(keyword: impl Into<String>, emotion: impl Into<String>) -> Self {
        Self { keyword: keyword.into(), emotion: emotion.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmotionTag {
    pub line_index: usize,
    pub emotion: String,
}

/// An ordered rule table over a fixed vocabulary, with a fallback emotion.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EmotionRules {
    rules: Vec<EmotionRule>,
    vocabulary: BTreeSet<String>,
    default: String,
}

impl EmotionRules {
    pub fn new<I, S>(rules: Vec<EmotionRule>, vocabulary: I, default: impl Into<String>) -> Result<Self, CrewError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let vocabulary: BTreeSet<String> = vocabulary.into_iter().map(Into::into).collect();
        let default = default.into();
        for emotion in rules.iter().map(|r| &r.emotion).chain(std::iter::once(&default)) {
            if !vocabulary.contains(emotion) {
                return Err(CrewError::UnknownEmotion(emotion.clone()));
            }
        }
        if rules.iter().any(|r| r.keyword.is_empty()) {
            return Err(CrewError::InvalidParams("emotion keyword must not be empty".into()));
        }
        Ok(Self { rules, vocabulary, default })
    }

    /// A table from a pipeline file: the default vocabulary grows to include
    /// every emotion the table names.
    pub fn from_table(rules: Vec<EmotionRule>) -> Self {
        let rules: Vec<EmotionRule> = rules.into_iter().filter(|r| !r.keyword.is_empty()).collect();
        let vocabulary =
            DEFAULT_VOCABULARY.iter().map(|s| s.to_string()).chain(rules.iter().map(|r| r.emotion.clone())).collect();
        Self { rules, vocabulary, default: NEUTRAL.to_owned() }
    }

    pub fn default_rules() -> Vec<EmotionRule> {
        [
            ("dare", "anger"),
            ("furious", "anger"),
            ("get out", "anger"),
            ("what?", "surprise"),
            ("really?", "surprise"),
            ("no way", "surprise"),
            ("psst", "whisper"),
            ("quietly", "whisper"),
            ("don't tell", "whisper"),
        ]
        .into_iter()
        .map(|(k, e)| EmotionRule::new(k, e))
        .collect()
    }

    pub fn rules(&self) -> &[EmotionRule] {
        &self.rules
    }

    pub fn vocabulary(&self) -> &BTreeSet<String> {
        &self.vocabulary
    }

    fn classify(&self, line: &str) -> &str {
        let line = line.to_lowercase();
        self.rules
            .iter()
            .find(|r| line.contains(&r.keyword.to_lowercase()))
            .map_or(self.default.as_str(), |r| r.emotion.as_str())
    }
}

impl Default for EmotionRules {
    fn default() -> Self {
        Self::new(Self::default_rules(), DEFAULT_VOCABULARY, NEUTRAL).expect("default table is consistent")
    }
}

/// Tags each dialogue line with the first matching rule's emotion.
pub fn assign_emotions<S: AsRef<str>>(lines: &[S], rules: &EmotionRules) -> Vec<EmotionTag> {
    lines
        .iter()
        .enumerate()
        .map(|(line_index, line)| EmotionTag { line_index, emotion: rules.classify(line.as_ref()).to_owned() })
        .collect()
}

/// Frames needed to cover a voice track: `ceil(seconds × fps)`, at least 1.
pub fn shot_length_from_voiceover(voice_duration: f64, fps: u32) -> Result<u64, CrewError> {
    if !(voice_duration.is_finite() && voice_duration > 0.0) {
        return Err(CrewError::NonPositiveDuration(voice_duration));
    }
    if fps == 0 {
        return Err(CrewError::InvalidParams("fps must be at least 1".into()));
    }
    // Absorb float noise such as 0.1 × 30 = 3.0000000000000004.
    let frames = (voice_duration * f64::from(fps) - 1e-9).ceil();
    Ok((frames as u64).max(1))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Forward,
    Reverse,
}

/// Where a segment's conditioning keyframe comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeyframeSource {
    SceneFrame,
    /// The terminal frame of the segment at this index.
    BoundaryOf(usize),
}

/// A concrete frame a plan ends on, after resolving reversals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeyframeAnchor {
    SceneFrame,
    /// The last generated frame of a forward segment.
    TerminalOf(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub direction: Direction,
    pub length: u64,
    pub keyframe_source: KeyframeSource,
}

/// Keyframe-conditioned segment schedule for a long shot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtensionPlan {
    pub segment_len: u64,
    pub target_frames: u64,
    pub segments: Vec<Segment>,
}

impl ExtensionPlan {
    pub fn total_frames(&self) -> u64 {
        self.segments.iter().map(|s| s.length).sum()
    }

    pub fn extension_count(&self) -> usize {
        self.segments.len().saturating_sub(1)
    }

    /// The frame the shot ends on.
    pub fn terminal_anchor(&self) -> KeyframeAnchor {
        self.end_of(self.segments.len() - 1)
    }

    /// A forward segment ends on its own last frame; a reverse segment
    /// plays its source back and ends where that source started.
    fn end_of(&self, index: usize) -> KeyframeAnchor {
        match self.segments[index].direction {
            Direction::Forward => KeyframeAnchor::TerminalOf(index),
            Direction::Reverse => match self.segments[index].keyframe_source {
                KeyframeSource::BoundaryOf(mirrored) => self.start_of(mirrored),
                KeyframeSource::SceneFrame => KeyframeAnchor::SceneFrame,
            },
        }
    }

    fn start_of(&self, index: usize) -> KeyframeAnchor {
        match self.segments[index].keyframe_source {
            KeyframeSource::SceneFrame => KeyframeAnchor::SceneFrame,
            KeyframeSource::BoundaryOf(prev) => self.end_of(prev),
        }
    }
}

/// Plans `target_frames` of video from a model that generates `segment_len`
/// frames per call. Each extension reuses the previous terminal frame as its
/// keyframe and adds `segment_len - 1` new frames. The second extension plays
/// the first one in reverse, returning to the opening segment's terminal
/// frame; later extensions continue from there.
pub fn plan_long_shot(target_frames: u64, segment_len: u64) -> Result<ExtensionPlan, CrewError> {
    if target_frames == 0 {
        return Err(CrewError::InvalidParams("target frames must be at least 1".into()));
    }
    if segment_len < 2 {
        return Err(CrewError::InvalidParams("segment length must be at least 2".into()));
    }
    let mut segments = vec![Segment {
        direction: Direction::Forward,
        length: target_frames.min(segment_len),
        keyframe_source: KeyframeSource::SceneFrame,
    }];
    if target_frames > segment_len {
        let step = segment_len - 1;
        let extensions = (target_frames - segment_len).div_ceil(step);
        for i in 1..=extensions as usize {
            let (direction, keyframe_source) = match i {
                2 => (Direction::Reverse, KeyframeSource::BoundaryOf(1)),
                3 => (Direction::Forward, KeyframeSource::BoundaryOf(0)),
                _ => (Direction::Forward, KeyframeSource::BoundaryOf(i - 1)),
            };
            segments.push(Segment { direction, length: step, keyframe_source });
        }
    }
    Ok(ExtensionPlan { segment_len, target_frames, segments })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transition {
    CrossDissolve { overlap: f64 },
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimelineEntry {
    pub scene_id: String,
    pub duration: f64,
    pub transition_out: Transition,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AudioMix {
    pub voice_tracks: Vec<String>,
    pub music: String,
    pub merged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditTimeline {
    pub entries: Vec<TimelineEntry>,
    pub audio: AudioMix,
}

impl EditTimeline {
    /// Sum of scene durations minus the overlap of every transition.
    pub fn total_duration(&self) -> f64 {
        let overlaps: f64 = self
            .entries
            .iter()
            .map(|e| match e.transition_out {
                Transition::CrossDissolve { overlap } => overlap,
                Transition::None => 0.0,
            })
            .sum();
        self.entries.iter().map(|e| e.duration).sum::<f64>() - overlaps
    }
}

/// Splices scenes with cross dissolves and merges every voice track with
/// the music into one channel.
pub fn build_edit_timeline(
    scenes: &[(String, f64)],
    overlap: f64,
    voice_refs: Vec<String>,
    music_ref: impl Into<String>,
) -> Result<EditTimeline, CrewError> {
    if scenes.is_empty() {
        return Err(CrewError::InvalidParams("timeline needs at least one scene".into()));
    }
    if !(overlap.is_finite() && overlap >= 0.0) {
        return Err(CrewError::InvalidParams(format!("overlap must be nonnegative, got {overlap}")));
    }
    for (id, duration) in scenes {
        if !(duration.is_finite() && *duration > 0.0) {
            return Err(CrewError::InvalidParams(format!("scene `{id}` has duration {duration}")));
        }
        if scenes.len() >= 2 && *duration <= overlap {
            return Err(CrewError::OverlapTooLarge { scene: id.clone(), duration: *duration, overlap });
        }
    }
    let last = scenes.len() - 1;
    let entries = scenes
        .iter()
        .enumerate()
        .map(|(i, (id, duration))| TimelineEntry {
            scene_id: id.clone(),
            duration: *duration,
            transition_out: if i == last { Transition::None } else { Transition::CrossDissolve { overlap } },
        })
        .collect();
    Ok(EditTimeline { entries, audio: AudioMix { voice_tracks: voice_refs, music: music_ref.into(), merged: true } })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn emotions_follow_rule_order() {
        let rules = EmotionRules::default();
        assert!(assign_emotions::<&str>(&[], &rules).is_empty());
        let tags = assign_emotions(&["How dare you!", "Good morning.", "Psst, over here", "What? Now?"], &rules);
        let emotions: Vec<_> = tags.iter().map(|t| t.emotion.as_str()).collect();
        assert_eq!(emotions, ["anger", "neutral", "whisper", "surprise"]);
        assert_eq!(tags[2].line_index, 2);

        let first_wins = EmotionRules::new(
            vec![EmotionRule::new("dare", "whisper"), EmotionRule::new("dare", "anger")],
            DEFAULT_VOCABULARY,
            NEUTRAL,
        )
        .unwrap();
        assert_eq!(assign_emotions(&["I dare you"], &first_wins)[0].emotion, "whisper");
    }

    #[test]
    fn vocabulary_is_enforced() {
        let err = EmotionRules::new(vec![EmotionRule::new("ha", "joy")], DEFAULT_VOCABULARY, NEUTRAL).unwrap_err();
        assert_eq!(err, CrewError::UnknownEmotion("joy".into()));
        let table = EmotionRules::from_table(vec![EmotionRule::new("ha", "joy")]);
        assert!(table.vocabulary().contains("joy"));
        assert_eq!(assign_emotions(&["ha ha"], &table)[0].emotion, "joy");
    }

    #[test]
    fn shot_lengths() {
        assert_eq!(shot_length_from_voiceover(2.0, 8).unwrap(), 16);
        assert_eq!(shot_length_from_voiceover(3.3, 24).unwrap(), 80);
        assert_eq!(shot_length_from_voiceover(0.01, 8).unwrap(), 1);
        assert_eq!(shot_length_from_voiceover(0.1, 30).unwrap(), 3);
        assert!(matches!(shot_length_from_voiceover(0.0, 8), Err(CrewError::NonPositiveDuration(_))));
        assert!(matches!(shot_length_from_voiceover(-1.0, 8), Err(CrewError::NonPositiveDuration(_))));
        assert!(matches!(shot_length_from_voiceover(1.0, 0), Err(CrewError::InvalidParams(_))));
    }

    fn lengths(plan: &ExtensionPlan) -> Vec<u64> {
        plan.segments.iter().map(|s| s.length).collect()
    }

    #[test]
    fn long_shot_examples() {
        let p = plan_long_shot(14, 14).unwrap();
        assert_eq!(lengths(&p), [14]);
        assert_eq!(p.extension_count(), 0);

        let p = plan_long_shot(27, 14).unwrap();
        assert_eq!(lengths(&p), [14, 13]);
        assert!(p.segments.iter().all(|s| s.direction == Direction::Forward));

        let p = plan_long_shot(40, 14).unwrap();
        assert_eq!(lengths(&p), [14, 13, 13]);
        assert_eq!(p.total_frames(), 40);
        assert_eq!(p.segments[2].direction, Direction::Reverse);
        assert_eq!(p.segments[2].keyframe_source, KeyframeSource::BoundaryOf(1));
        assert_eq!(p.terminal_anchor(), KeyframeAnchor::TerminalOf(0));

        let p = plan_long_shot(5, 14).unwrap();
        assert_eq!(lengths(&p), [5]);
    }

    #[test]
    fn later_extensions_start_from_the_opening_segment() {
        let p = plan_long_shot(60, 10).unwrap();
        assert_eq!(lengths(&p), [10, 9, 9, 9, 9, 9, 9]);
        assert_eq!(p.segments[3].keyframe_source, KeyframeSource::BoundaryOf(0));
        assert_eq!(p.segments[4].keyframe_source, KeyframeSource::BoundaryOf(3));
        assert_eq!(p.terminal_anchor(), KeyframeAnchor::TerminalOf(6));
        assert_eq!(p.segments.iter().filter(|s| s.direction == Direction::Reverse).count(), 1);
    }

    #[test]
    fn long_shot_rejects_bad_params() {
        assert!(plan_long_shot(0, 14).is_err());
        assert!(plan_long_shot(10, 1).is_err());
        assert_eq!(lengths(&plan_long_shot(5, 2).unwrap()), [2, 1, 1, 1]);
    }

    #[test]
    fn timeline_examples() {
        let one = build_edit_timeline(&[("a".into(), 10.0)], 1.0, vec![], "m").unwrap();
        assert_eq!(one.total_duration(), 10.0);
        assert_eq!(one.entries[0].transition_out, Transition::None);

        let scenes: Vec<(String, f64)> = ["a", "b", "c"].iter().map(|s| (s.to_string(), 10.0)).collect();
        let t = build_edit_timeline(&scenes, 1.0, vec!["v1".into(), "v2".into()], "m").unwrap();
        assert_eq!(t.total_duration(), 28.0);
        assert_eq!(t.entries[0].transition_out, Transition::CrossDissolve { overlap: 1.0 });
        assert_eq!(t.entries[2].transition_out, Transition::None);
        assert!(t.audio.merged);
        assert_eq!(t.audio.voice_tracks.len(), 2);

        let plain = build_edit_timeline(&scenes, 0.0, vec![], "m").unwrap();
        assert_eq!(plain.total_duration(), 30.0);
    }

    #[test]
    fn timeline_errors() {
        let scenes = vec![("a".to_string(), 10.0), ("b".to_string(), 2.0)];
        assert_eq!(
            build_edit_timeline(&scenes, 2.0, vec![], "m").unwrap_err(),
            CrewError::OverlapTooLarge { scene: "b".into(), duration: 2.0, overlap: 2.0 }
        );
        assert!(build_edit_timeline(&[], 0.0, vec![], "m").is_err());
        assert!(build_edit_timeline(&scenes, -1.0, vec![], "m").is_err());
    }
}
