use crate::feedback::FeedbackTrace;
use crate::graph::{PipelineDef, PipelineFileError};

const FILM_TOML: &str = include_str!("../../presets/film.toml");
const DIALOGUE_REVISION_TOML: &str = include_str!("../../presets/dialogue_revision.toml");

/// Crew roles of the film preset, in production order.
pub const FILM_ROLES: [&str; 6] = ["scriptwriter", "artist", "actors", "action", "voiceover", "post"];

/// The film crew pipeline: script, then art and dialogue in parallel, action
/// after art, voiceover after dialogue, and post once art, action and
/// voiceover are all done.
pub fn film_pipeline_preset() -> PipelineDef {
    PipelineDef::from_toml_str(FILM_TOML).expect("bundled preset parses")
}

/// Source text of the film preset, for writing out and editing.
pub fn film_preset_toml() -> &'static str {
    FILM_TOML
}

/// Looks up a bundled pipeline by name.
pub fn pipeline_preset(name: &str) -> Result<PipelineDef, PipelineFileError> {
    match name {
        "film" => Ok(film_pipeline_preset()),
        other => Err(PipelineFileError::UnknownPreset(other.to_owned())),
    }
}

/// Looks up a bundled feedback trace by name. `dialogue_revision` rejects the
/// dialogue as soon as it is performed, with a detailed note.
pub fn feedback_preset(name: &str) -> Result<FeedbackTrace, PipelineFileError> {
    match name {
        "dialogue_revision" | "dialogue-revision" => FeedbackTrace::from_toml_str(DIALOGUE_REVISION_TOML),
        other => Err(PipelineFileError::UnknownPreset(other.to_owned())),
    }
}
