//! JSONL dataset manifests shared by the augment, dedup, train and eval stages.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::augmentor::BugCategory;
use crate::imaging::BBox;

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Buggy,
    Clean,
}

impl Label {
    /// Class index used by the network: clean = 0, buggy = 1.
    pub fn class_index(self) -> usize {
        match self {
            Label::Clean => 0,
            Label::Buggy => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub path: String,
    pub source_id: String,
    pub label: Label,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<BugCategory>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bug_region: Option<BBox>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

/// App identifier of a source: everything before the first `_`, or the whole id.
pub fn app_id(source_id: &str) -> &str {
    source_id.split('_').next().unwrap_or(source_id)
}

pub fn parse_manifest(text: &str, path: &str) -> Result<Vec<ManifestRow>, ManifestError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| ManifestError::Parse {
                path: path.to_string(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestRow>, ManifestError> {
    let path = path.as_ref();
    let io_err = |source| ManifestError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = fs::File::open(path).map_err(io_err)?;
    let mut text = String::new();
    for line in BufReader::new(file).lines() {
        text.push_str(&line.map_err(io_err)?);
        text.push('\n');
    }
    parse_manifest(&text, &path.display().to_string())
}

/// Serialize any rows as one JSON object per line.
pub fn to_jsonl<T: Serialize>(rows: &[T]) -> String {
    let mut out = String::new();
    for row in rows {
        out.push_str(&serde_json::to_string(row).expect("manifest rows serialize"));
        out.push('\n');
    }
    out
}

pub fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, rows: &[T]) -> Result<(), ManifestError> {
    let path = path.as_ref();
    let mut file = fs::File::create(path).map_err(|source| ManifestError::Io {
        path: path.display().to_string(),
        source,
    })?;
    file.write_all(to_jsonl(rows).as_bytes())
        .map_err(|source| ManifestError::Io {
            path: path.display().to_string(),
            source,
        })
}
