use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::procedures::{
    assign_emotions, build_edit_timeline, plan_long_shot, shot_length_from_voiceover, CrewError, EmotionRules,
};
use super::{ArtifactBody, ArtifactKind, ExecContext, ExecutionRequest, Worker, WorkerError};
use crate::canonical::{canonical_bytes, sha256_hex};
use crate::Time;

const FPS: u32 = 8;
const SECONDS_PER_WORD: f64 = 0.4;

/// How long a mock execution takes, in ticks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DurationModel {
    Fixed(Time),
    /// Drawn per (event, attempt) from the run seed.
    Uniform {
        min: Time,
        max: Time,
    },
}

impl DurationModel {
    pub fn validate(&self) -> Result<(), CrewError> {
        match self {
            Self::Uniform { min, max } if min > max => {
                Err(CrewError::InvalidParams(format!("duration range {min}..={max} is empty")))
            }
            _ => Ok(()),
        }
    }
}

/// Deterministic stand-in for a crew member.
#[derive(Debug, Clone)]
pub struct MockWorker {
    role: String,
    duration: DurationModel,
    rules: EmotionRules,
}

impl MockWorker {
    pub fn new(role: impl Into<String>, duration: DurationModel) -> Self {
        Self { role: role.into(), duration, rules: EmotionRules::default() }
    }

    pub fn with_emotion_rules(mut self, rules: EmotionRules) -> Self {
        self.rules = rules;
        self
    }

    pub fn role(&self) -> &str {
        &self.role
    }
}

impl Worker for MockWorker {
    fn duration(&self, request: &ExecutionRequest) -> Time {
        match self.duration {
            DurationModel::Fixed(d) => d,
            DurationModel::Uniform { min, max } => {
                let seed = sha256_hex(&[
                    b"duration",
                    &request.seed.to_le_bytes(),
                    request.event_id.as_str().as_bytes(),
                    &request.attempt.to_le_bytes(),
                ]);
                rng_from_hex(&seed).gen_range(min..=max)
            }
        }
    }

    fn execute(&self, request: &ExecutionRequest, ctx: &ExecContext) -> Result<ArtifactBody, WorkerError> {
        if let Some(pace) = ctx.pace {
            for _ in 0..ctx.duration {
                if ctx.cancel.is_cancelled() {
                    return Err(WorkerError::Cancelled);
                }
                std::thread::sleep(pace);
            }
        }
        if ctx.cancel.is_cancelled() {
            return Err(WorkerError::Cancelled);
        }
        let mut rng = content_rng(request);
        let kind = ArtifactKind::for_role(&request.role);
        let mut content = match kind {
            ArtifactKind::Script => script(request, &mut rng),
            ArtifactKind::SceneFrame => frames(request, &mut rng),
            ArtifactKind::Dialogue => dialogue(request, &mut rng),
            ArtifactKind::ShotPlan => shot_plans(request, &mut rng)?,
            ArtifactKind::VoiceTrack => voice_tracks(request, &self.rules)?,
            ArtifactKind::FinalCut => final_cut(request, &mut rng)?,
            ArtifactKind::Music => music(&mut rng),
            ArtifactKind::Generic => json!({ "role": request.role, "digest": hex_token(&mut rng) }),
        };
        let object = content.as_object_mut().expect("payloads are objects");
        object.insert("event".into(), json!(request.event_id));
        object.insert("params".into(), json!(request.params));
        object.insert(
            "inputs".into(),
            request.inputs.iter().map(|a| json!({ "event": a.producer.event_id, "hash": a.content_hash })).collect(),
        );
        Ok(ArtifactBody { kind, content })
    }
}

/// Seeds content generation from everything the output may depend on. The
/// attempt number is left out so that a re-run with unchanged inputs
/// reproduces its earlier output.
fn content_rng(request: &ExecutionRequest) -> ChaCha8Rng {
    let params = canonical_bytes(&json!(request.params));
    let mut parts: Vec<&[u8]> = vec![b"content", request.event_id.as_str().as_bytes(), &params];
    let seed = request.seed.to_le_bytes();
    parts.push(&seed);
    for input in &request.inputs {
        parts.push(input.content_hash.as_bytes());
    }
    rng_from_hex(&sha256_hex(&parts))
}

fn rng_from_hex(digest: &str) -> ChaCha8Rng {
    let bytes: [u8; 32] = hex::decode(digest).expect("sha256 hex").try_into().expect("32 bytes");
    ChaCha8Rng::from_seed(bytes)
}

fn hex_token(rng: &mut ChaCha8Rng) -> String {
    hex::encode(rng.gen::<[u8; 6]>())
}

fn param_u64(request: &ExecutionRequest, key: &str) -> Option<u64> {
    request.params.get(key).and_then(Value::as_u64)
}

fn param_f64(request: &ExecutionRequest, key: &str) -> Option<f64> {
    request.params.get(key).and_then(Value::as_f64)
}

fn input_content(request: &ExecutionRequest, kind: ArtifactKind) -> Option<&Value> {
    request.input(kind).map(|a| &a.content)
}

fn scene_ids(request: &ExecutionRequest) -> Vec<String> {
    let from = [ArtifactKind::Script, ArtifactKind::SceneFrame, ArtifactKind::Dialogue];
    for kind in from {
        if let Some(list) = input_content(request, kind).and_then(|c| c.get("scenes").or_else(|| c.get("frames"))) {
            let ids: Vec<String> = list
                .as_array()
                .into_iter()
                .flatten()
                .filter_map(|s| s.get("id").or_else(|| s.get("scene")).and_then(Value::as_str))
                .map(str::to_owned)
                .collect();
            if !ids.is_empty() {
                return ids;
            }
        }
    }
    vec!["scene-1".to_owned()]
}

const SETTINGS: [&str; 6] =
    ["harbor at dusk", "desert highway", "rooftop garden", "night market", "old library", "snowy pass"];
const BEATS: [&str; 6] = [
    "a chase begins",
    "an old friend returns",
    "the map is stolen",
    "a storm rolls in",
    "the truce breaks",
    "a secret is kept",
];
const PALETTES: [&str; 5] = ["amber", "teal", "crimson", "slate", "ivory"];
const SPEAKERS: [&str; 4] = ["Mara", "Ilya", "Quinn", "Theo"];
const LINES: [&str; 8] = [
    "How dare you come back here!",
    "What? You kept it all this time?",
    "Psst, follow me and stay low.",
    "We ride at dawn.",
    "I never wanted any of this.",
    "No way, that is impossible.",
    "Quietly now, they are listening.",
    "Get out before it is too late!",
];

fn script(request: &ExecutionRequest, rng: &mut ChaCha8Rng) -> Value {
    let count = param_u64(request, "scenes").unwrap_or(3).clamp(1, 12);
    let scenes: Vec<Value> = (1..=count)
        .map(|i| {
            json!({
                "id": format!("scene-{i}"),
                "setting": SETTINGS.choose(rng).unwrap(),
                "beat": BEATS.choose(rng).unwrap(),
            })
        })
        .collect();
    json!({ "title": format!("Draft {}", hex_token(rng)), "scenes": scenes })
}

fn frames(request: &ExecutionRequest, rng: &mut ChaCha8Rng) -> Value {
    let frames: Vec<Value> = scene_ids(request)
        .into_iter()
        .map(|scene| json!({ "scene": scene, "frame": format!("frame-{}", hex_token(rng)), "palette": PALETTES.choose(rng).unwrap() }))
        .collect();
    json!({ "frames": frames })
}

fn dialogue(request: &ExecutionRequest, rng: &mut ChaCha8Rng) -> Value {
    let per_scene = param_u64(request, "lines_per_scene").unwrap_or(2).clamp(1, 8);
    let mut lines = Vec::new();
    for scene in scene_ids(request) {
        for _ in 0..per_scene {
            lines.push(json!({
                "scene": scene,
                "speaker": SPEAKERS.choose(rng).unwrap(),
                "text": LINES.choose(rng).unwrap(),
            }));
        }
    }
    json!({ "lines": lines })
}

fn shot_plans(request: &ExecutionRequest, rng: &mut ChaCha8Rng) -> Result<Value, WorkerError> {
    let segment_len = param_u64(request, "segment_len").unwrap_or(14);
    let mut shots = Vec::new();
    for scene in scene_ids(request) {
        let target = param_u64(request, "target_frames").unwrap_or_else(|| rng.gen_range(12..=60));
        let plan = plan_long_shot(target, segment_len).map_err(|e| WorkerError::Failed(e.to_string()))?;
        shots.push(json!({ "scene": scene, "plan": plan }));
    }
    Ok(json!({ "shots": shots }))
}

fn voice_tracks(request: &ExecutionRequest, rules: &EmotionRules) -> Result<Value, WorkerError> {
    let lines: Vec<&Value> = input_content(request, ArtifactKind::Dialogue)
        .and_then(|c| c.get("lines"))
        .and_then(Value::as_array)
        .map(|l| l.iter().collect())
        .unwrap_or_default();
    let texts: Vec<&str> = lines.iter().map(|l| l.get("text").and_then(Value::as_str).unwrap_or("")).collect();
    let tags = assign_emotions(&texts, rules);
    let fps = param_u64(request, "fps").map_or(FPS, |f| f as u32);
    let mut tracks = Vec::new();
    for (line, tag) in lines.iter().zip(&tags) {
        let text = texts[tag.line_index];
        let seconds = (text.split_whitespace().count().max(1) as f64 * SECONDS_PER_WORD * 10.0).round() / 10.0;
        let frames = shot_length_from_voiceover(seconds, fps).map_err(|e| WorkerError::Failed(e.to_string()))?;
        tracks.push(json!({
            "line_index": tag.line_index,
            "scene": line.get("scene"),
            "speaker": line.get("speaker"),
            "emotion": tag.emotion,
            "seconds": seconds,
            "shot_frames": frames,
        }));
    }
    Ok(json!({ "fps": fps, "tracks": tracks }))
}

fn music(rng: &mut ChaCha8Rng) -> Value {
    let key = ["C", "D", "E", "F", "G", "A", "B"].choose(rng).copied();
    let mood = ["tense", "warm", "wistful", "driving"].choose(rng).copied();
    json!({
        "tempo": rng.gen_range(60..=140),
        "key": key,
        "mood": mood,
    })
}

fn final_cut(request: &ExecutionRequest, rng: &mut ChaCha8Rng) -> Result<Value, WorkerError> {
    let overlap = param_f64(request, "overlap").unwrap_or(1.0);
    let tracks = input_content(request, ArtifactKind::VoiceTrack);
    let fps = tracks.and_then(|t| t.get("fps")).and_then(Value::as_f64).unwrap_or(f64::from(FPS));
    let scenes: Vec<(String, f64)> = scene_ids(request)
        .into_iter()
        .map(|scene| {
            let voiced: f64 = tracks
                .and_then(|t| t.get("tracks"))
                .and_then(Value::as_array)
                .into_iter()
                .flatten()
                .filter(|t| t.get("scene").and_then(Value::as_str) == Some(scene.as_str()))
                .filter_map(|t| t.get("seconds").and_then(Value::as_f64))
                .sum();
            let shot = shot_seconds(request, &scene, fps);
            (scene, voiced.max(shot).max(overlap + 1.0))
        })
        .collect();
    let voice_refs =
        request.inputs.iter().filter(|a| a.kind == ArtifactKind::VoiceTrack).map(|a| a.content_hash.clone()).collect();
    let music_ref = match request.input(ArtifactKind::Music) {
        Some(a) => a.content_hash.clone(),
        None => format!("score-{}", hex_token(rng)),
    };
    let timeline =
        build_edit_timeline(&scenes, overlap, voice_refs, music_ref).map_err(|e| WorkerError::Failed(e.to_string()))?;
    let total = timeline.total_duration();
    Ok(json!({ "timeline": timeline, "total_seconds": total }))
}

fn shot_seconds(request: &ExecutionRequest, scene: &str, fps: f64) -> f64 {
    input_content(request, ArtifactKind::ShotPlan)
        .and_then(|c| c.get("shots"))
        .and_then(Value::as_array)
        .into_iter()
        .flatten()
        .find(|s| s.get("scene").and_then(Value::as_str) == Some(scene))
        .and_then(|s| s.pointer("/plan/target_frames"))
        .and_then(Value::as_f64)
        .map_or(0.0, |frames| frames / fps)
}
