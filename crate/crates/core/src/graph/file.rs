//! Pipeline definition files.
//!
//! Two equivalent encodings are accepted: TOML (`.toml`) for hand editing and
//! JSON (`.json`) for tooling. Both map onto [`PipelineDef`]:
//!
//! ```toml
//! name = "film"
//!
//! [[events]]
//! id = "script"
//! role = "scriptwriter"
//! duration = 10
//! params = { scenes = 3 }
//!
//! [[events]]
//! id = "art"
//! role = "artist"
//! deps = ["script"]
//! ```

use std::path::Path;

use thiserror::Error;

use super::PipelineDef;

#[derive(Debug, Error)]
pub enum PipelineFileError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid TOML pipeline: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("invalid JSON pipeline: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),
}

impl PipelineDef {
    pub fn from_toml_str(text: &str) -> Result<Self, PipelineFileError> {
        Ok(toml::from_str(text)?)
    }

    pub fn from_json_str(text: &str) -> Result<Self, PipelineFileError> {
        Ok(serde_json::from_str(text)?)
    }

    /// Reads a pipeline file, picking the format from the extension.
    /// Files without a known extension are tried as JSON, then TOML.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, PipelineFileError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|source| PipelineFileError::Io { path: path.display().to_string(), source })?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("toml") => Self::from_toml_str(&text),
            Some("json") => Self::from_json_str(&text),
            _ => Self::from_json_str(&text).or_else(|_| Self::from_toml_str(&text)),
        }
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("pipeline serializes to TOML")
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("pipeline serializes to JSON")
    }
}
