//! Per-target label files (JSON).
//!
//! - single_label: `[3, 0, 7, ...]`
//! - multi_label: `[[1, 4], [0], ...]`
//! - detection: `[{"width": 640, "height": 480, "boxes": [{"class": 2, "x1": .., "y1": .., "x2": .., "y2": ..}]}, ...]`

use std::fs;
use std::path::Path;

use serde_json::Value;
use thiserror::Error;

use crate::embed::{DetectionImage, LabelSet, TaskKind};

#[derive(Debug, Error)]
pub enum LabelFileError {
    #[error("cannot read label file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("label file parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("label file is not a {expected} label array: {message}")]
    WrongShape { expected: TaskKind, message: String },
}

fn detect_kind(value: &Value) -> TaskKind {
    match value.as_array().and_then(|a| a.first()) {
        Some(Value::Array(_)) => TaskKind::MultiLabel,
        Some(Value::Object(_)) => TaskKind::Detection,
        _ => TaskKind::SingleLabel,
    }
}

pub fn parse_labels(json: &str, kind: Option<TaskKind>) -> Result<LabelSet, LabelFileError> {
    let value: Value = serde_json::from_str(json).map_err(|e| LabelFileError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let kind = kind.unwrap_or_else(|| detect_kind(&value));
    let wrong = |e: serde_json::Error| LabelFileError::WrongShape { expected: kind, message: e.to_string() };
    Ok(match kind {
        TaskKind::SingleLabel => LabelSet::Single(serde_json::from_value(value).map_err(wrong)?),
        TaskKind::MultiLabel => LabelSet::Multi(serde_json::from_value(value).map_err(wrong)?),
        TaskKind::Detection => {
            LabelSet::Detection(serde_json::from_value::<Vec<DetectionImage>>(value).map_err(wrong)?)
        }
    })
}

/// Reads a label file; with `kind = None` the format is inferred from the
/// first element.
pub fn read_labels(path: impl AsRef<Path>, kind: Option<TaskKind>) -> Result<LabelSet, LabelFileError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| LabelFileError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_labels(&text, kind)
}

pub fn labels_to_json(labels: &LabelSet) -> String {
    match labels {
        LabelSet::Single(v) => serde_json::to_string(v),
        LabelSet::Multi(v) => serde_json::to_string(v),
        LabelSet::Detection(v) => serde_json::to_string(v),
    }
    .expect("labels serialize")
}

pub fn write_labels(labels: &LabelSet, path: impl AsRef<Path>) -> std::io::Result<()> {
    fs::write(path, labels_to_json(labels))
}
