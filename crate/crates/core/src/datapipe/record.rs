use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Where an utterance's features come from.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Source {
    /// Regenerated deterministically from the task spec at this index.
    Synthetic(u64),
    /// Several synthetic utterances joined in order.
    Concat(Vec<u64>),
    /// A cached feature matrix in the tensor format.
    Features(PathBuf),
    Wav(PathBuf),
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Source::Synthetic(i) => write!(f, "synthetic:{i}"),
            Source::Concat(ids) => {
                let parts: Vec<String> = ids.iter().map(u64::to_string).collect();
                write!(f, "concat:{}", parts.join("+"))
            }
            Source::Features(p) => write!(f, "features:{}", p.display()),
            Source::Wav(p) => write!(f, "{}", p.display()),
        }
    }
}

impl FromStr for Source {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Format(format!("unrecognized source `{s}`"));
        if let Some(i) = s.strip_prefix("synthetic:") {
            return i.parse().map(Source::Synthetic).map_err(|_| bad());
        }
        if let Some(ids) = s.strip_prefix("concat:") {
            let ids: std::result::Result<Vec<u64>, _> = ids.split('+').map(str::parse).collect();
            return ids.map(Source::Concat).map_err(|_| bad());
        }
        if let Some(p) = s.strip_prefix("features:") {
            return Ok(Source::Features(p.into()));
        }
        if s.to_ascii_lowercase().ends_with(".wav") {
            return Ok(Source::Wav(s.into()));
        }
        Err(bad())
    }
}

/// One manifest entry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UtteranceRecord {
    pub id: String,
    pub source: Source,
    pub duration_seconds: f64,
    pub transcript: String,
    pub chapter_id: Option<String>,
    pub order_in_chapter: Option<u32>,
}

impl UtteranceRecord {
    pub fn validate(&self) -> Result<()> {
        if !(self.duration_seconds > 0.0) {
            return Err(Error::Format(format!("{}: duration must be positive", self.id)));
        }
        if self.transcript.trim().is_empty() {
            return Err(Error::Format(format!("{}: empty transcript", self.id)));
        }
        Ok(())
    }

    pub fn words(&self) -> Vec<&str> {
        self.transcript.split_whitespace().collect()
    }
}
