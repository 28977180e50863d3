use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objective::TargetScores;

use super::invert_cer;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

/// One labelled utterance. Paths are resolved against the manifest's directory.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub id: String,
    pub embedding_path: PathBuf,
    pub waveform_path: Option<PathBuf>,
    pub intelligibility: f64,
    pub cer_whisper_raw: f64,
    pub cer_google_raw: f64,
    pub stoi: f64,
    pub split: Split,
}

impl ManifestEntry {
    /// Regression targets with both CERs inverted.
    pub fn targets(&self) -> TargetScores {
        TargetScores {
            intelligibility: self.intelligibility,
            cer_whisper_inv: invert_cer(self.cer_whisper_raw).expect("validated at load"),
            cer_google_inv: invert_cer(self.cer_google_raw).expect("validated at load"),
            stoi: self.stoi,
        }
    }
}

/// On-disk line layout. Field names are part of the file format.
#[derive(Debug, Serialize, Deserialize)]
pub(crate) struct ManifestLine {
    pub id: Option<String>,
    pub embedding: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub waveform: Option<String>,
    pub intelligibility: Option<f64>,
    pub cer_whisper: Option<f64>,
    pub cer_google: Option<f64>,
    pub stoi: Option<f64>,
    pub split: Option<Split>,
}

fn required<T>(value: Option<T>, field: &str, line: usize) -> Result<T> {
    value.ok_or_else(|| Error::Manifest {
        line,
        message: format!("missing required field `{field}`"),
    })
}

fn unit_interval(value: f64, field: &str, line: usize) -> Result<f64> {
    if !value.is_finite() || !(0.0..=1.0).contains(&value) {
        return Err(Error::Manifest {
            line,
            message: format!("`{field}` = {value}: label out of range [0,1]"),
        });
    }
    Ok(value)
}

fn non_negative(value: f64, field: &str, line: usize) -> Result<f64> {
    if !value.is_finite() || value < 0.0 {
        return Err(Error::Manifest {
            line,
            message: format!("`{field}` = {value}: raw CER must be finite and >= 0"),
        });
    }
    Ok(value)
}

/// Parse JSON-Lines manifest text. `base` is the directory relative paths resolve against.
pub fn parse_manifest(text: &str, base: &Path) -> Result<Vec<ManifestEntry>> {
    let mut entries = Vec::new();
    let mut seen = HashSet::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let parsed: ManifestLine = serde_json::from_str(raw).map_err(|e| Error::Manifest {
            line,
            message: format!("malformed line: {e}"),
        })?;
        let id = required(parsed.id, "id", line)?;
        if id.is_empty() {
            return Err(Error::Manifest {
                line,
                message: "empty `id`".into(),
            });
        }
        let embedding = required(parsed.embedding, "embedding", line)?;
        let entry = ManifestEntry {
            embedding_path: base.join(embedding),
            waveform_path: parsed.waveform.map(|w| base.join(w)),
            intelligibility: unit_interval(
                required(parsed.intelligibility, "intelligibility", line)?,
                "intelligibility",
                line,
            )?,
            cer_whisper_raw: non_negative(
                required(parsed.cer_whisper, "cer_whisper", line)?,
                "cer_whisper",
                line,
            )?,
            cer_google_raw: non_negative(
                required(parsed.cer_google, "cer_google", line)?,
                "cer_google",
                line,
            )?,
            stoi: unit_interval(required(parsed.stoi, "stoi", line)?, "stoi", line)?,
            split: required(parsed.split, "split", line)?,
            id,
        };
        if !seen.insert(entry.id.clone()) {
            return Err(Error::Manifest {
                line,
                message: format!("duplicate id `{}`", entry.id),
            });
        }
        entries.push(entry);
    }
    Ok(entries)
}

pub fn load_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new(""));
    parse_manifest(&text, base)
}
