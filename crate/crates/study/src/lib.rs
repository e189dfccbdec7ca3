//! Blinded side-by-side reader-study service.
//!
//! A study directory holds `study.json` (the served descriptor) and the pair
//! images under `pairs/`. Method labels live only in a separate key file,
//! which the service reads to unblind the summary and nothing else.
//!
//! Two JSON-lines logs are kept under the log directory:
//!
//! * `events.jsonl`: session creation and first-serve events.
//! * `responses.jsonl`: one [`StudyRecord`] per line.
//!
//! Every line is flushed to disk before the request that produced it is
//! acknowledged; on startup both logs are replayed.

use serde::{Deserialize, Serialize};
use std::path::PathBuf;

mod api;
mod store;
mod summary;

pub use api::{router, serve, ServeOptions};
pub use store::{now_ms, Event, Next, Study, Submit, EVENTS_FILE, RESPONSES_FILE};
pub use summary::{tally, Summary, ORIENTATION};

pub const DESCRIPTOR_FILE: &str = "study.json";

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("invalid study: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
    let path = path.into();
    move |source| Error::Io { path, source }
}

/// Free-text anchor wording shown next to each Likert category.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Anchors {
    pub sharpness: [String; 5],
    pub noise: [String; 5],
}

impl Default for Anchors {
    fn default() -> Self {
        let scale = |what: &str| {
            [
                format!("left much {what}"),
                format!("left slightly {what}"),
                "equivalent".to_string(),
                format!("right slightly {what}"),
                format!("right much {what}"),
            ]
        };
        Self { sharpness: scale("sharper"), noise: scale("less noisy") }
    }
}

/// One pair as served: two image paths relative to the study directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairEntry {
    pub pair_id: String,
    pub a: String,
    pub b: String,
}

/// The served study descriptor. Carries no method labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyDescriptor {
    pub study_id: String,
    pub seed: u64,
    #[serde(default)]
    pub anchors: Anchors,
    pub pairs: Vec<PairEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeyEntry {
    pub pair_id: String,
    pub item: String,
    /// Method label of image `a`.
    pub a: String,
    /// Method label of image `b`.
    pub b: String,
}

/// The sealed key: which method produced each image of each pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyKey {
    pub study_id: String,
    pub method_a: String,
    pub method_b: String,
    pub pairs: Vec<KeyEntry>,
}

/// Image slot of a pair, as named in the descriptor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Slot {
    A,
    B,
}

/// One rater response. `left` names the image slot shown on the left;
/// scores use 1 = strongly prefer left, 3 = equivalent, 5 = strongly prefer right.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyRecord {
    pub session_id: String,
    pub pair_id: String,
    pub left: Slot,
    pub sharpness: u8,
    pub noise: u8,
    pub served_at: u64,
    pub submitted_at: u64,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &std::path::Path) -> Result<T> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    serde_json::from_slice(&bytes).map_err(|source| Error::Json { path: path.into(), source })
}

impl StudyDescriptor {
    pub fn load(study_dir: &std::path::Path) -> Result<Self> {
        let desc: Self = read_json(&study_dir.join(DESCRIPTOR_FILE))?;
        desc.check()?;
        Ok(desc)
    }

    fn check(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for p in &self.pairs {
            for path in [&p.a, &p.b] {
                if !path.starts_with("pairs/") || path.contains("..") {
                    return Err(Error::Invalid(format!("pair image {path} is not under pairs/")));
                }
            }
            if !seen.insert(&p.pair_id) {
                return Err(Error::Invalid(format!("duplicate pair id {}", p.pair_id)));
            }
        }
        Ok(())
    }
}

impl StudyKey {
    pub fn load(path: &std::path::Path) -> Result<Self> {
        read_json(path)
    }

    pub fn entry(&self, pair_id: &str) -> Option<&KeyEntry> {
        self.pairs.iter().find(|e| e.pair_id == pair_id)
    }

    /// Checks that the key covers exactly the descriptor's pairs.
    pub fn check_against(&self, desc: &StudyDescriptor) -> Result<()> {
        if self.study_id != desc.study_id {
            return Err(Error::Invalid(format!(
                "key is for study {}, descriptor is {}",
                self.study_id, desc.study_id
            )));
        }
        if self.pairs.len() != desc.pairs.len() || desc.pairs.iter().any(|p| self.entry(&p.pair_id).is_none()) {
            return Err(Error::Invalid("key does not cover every served pair".into()));
        }
        Ok(())
    }
}
