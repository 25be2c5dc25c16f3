//! Bank manifest: registry of source models, targets, artifact files and
//! ground-truth transfer outcomes.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed::TaskKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub model_id: String,
    pub depth_layers: u32,
    pub source_dataset_size: u64,
    pub architecture: String,
    pub source_dataset: String,
    #[serde(default)]
    pub pretext_task: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetMeta {
    pub target_id: String,
    pub target_dataset_size: u64,
    pub task_kind: TaskKind,
    pub num_classes: usize,
}

/// Per-(model, target) files. `feature_path` rows and `prob_path` rows index
/// the same images as the target's label file. `probe_feature_path` holds the
/// target-trained probe model's features used by RSA/DDS.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub model_id: String,
    pub target_id: String,
    pub feature_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prob_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probe_feature_path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferOutcome {
    pub model_id: String,
    pub target_id: String,
    pub accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BankManifest {
    pub models: Vec<ModelMeta>,
    pub targets: Vec<TargetMeta>,
    #[serde(default)]
    pub artifacts: Vec<Artifact>,
    #[serde(default)]
    pub outcomes: Vec<TransferOutcome>,
    #[serde(default)]
    pub labels: BTreeMap<String, PathBuf>,
    /// Directory relative paths resolve against; the manifest's own directory
    /// when loaded from disk.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

/// One invariant violation located by a JSON path such as `$.models[2].model_id`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("cannot read manifest {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("manifest has {} violation(s): {}", .0.len(), .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Validation(Vec<Violation>),
}

impl BankManifest {
    pub fn from_json_str(json: &str) -> Result<Self, ManifestError> {
        serde_json::from_str(json).map_err(|e| ManifestError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn model(&self, model_id: &str) -> Option<&ModelMeta> {
        self.models.iter().find(|m| m.model_id == model_id)
    }

    pub fn target(&self, target_id: &str) -> Option<&TargetMeta> {
        self.targets.iter().find(|t| t.target_id == target_id)
    }

    pub fn artifact(&self, model_id: &str, target_id: &str) -> Option<&Artifact> {
        self.artifacts
            .iter()
            .find(|a| a.model_id == model_id && a.target_id == target_id)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }
}

/// Parse without validation; relative paths resolve against the file's directory.
pub fn parse_manifest_file(path: impl AsRef<Path>) -> Result<BankManifest, ManifestError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| ManifestError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut manifest = BankManifest::from_json_str(&text)?;
    manifest.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(manifest)
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<BankManifest, ManifestError> {
    let manifest = parse_manifest_file(path)?;
    let violations = validate_manifest(&manifest);
    if violations.is_empty() {
        Ok(manifest)
    } else {
        Err(ManifestError::Validation(violations))
    }
}

/// Checks every invariant and returns all violations; never stops early.
pub fn validate_manifest(manifest: &BankManifest) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |path: String, message: String| out.push(Violation { path, message });

    let mut model_ids = BTreeSet::new();
    for (i, m) in manifest.models.iter().enumerate() {
        if !model_ids.insert(m.model_id.as_str()) {
            push(format!("$.models[{i}].model_id"), format!("duplicate model_id '{}'", m.model_id));
        }
        if m.model_id.is_empty() {
            push(format!("$.models[{i}].model_id"), "empty model_id".into());
        }
        if m.depth_layers < 1 {
            push(format!("$.models[{i}].depth_layers"), "depth_layers must be >= 1".into());
        }
        if m.source_dataset_size < 1 {
            push(
                format!("$.models[{i}].source_dataset_size"),
                "source_dataset_size must be >= 1".into(),
            );
        }
    }

    let mut target_ids = BTreeSet::new();
    for (i, t) in manifest.targets.iter().enumerate() {
        if !target_ids.insert(t.target_id.as_str()) {
            push(
                format!("$.targets[{i}].target_id"),
                format!("duplicate target_id '{}'", t.target_id),
            );
        }
        if t.target_id.is_empty() {
            push(format!("$.targets[{i}].target_id"), "empty target_id".into());
        }
        if t.target_dataset_size < 1 {
            push(
                format!("$.targets[{i}].target_dataset_size"),
                "target_dataset_size must be >= 1".into(),
            );
        }
        let min_classes = if t.task_kind == TaskKind::SingleLabel { 2 } else { 1 };
        if t.num_classes < min_classes {
            push(
                format!("$.targets[{i}].num_classes"),
                format!("{} target needs num_classes >= {min_classes}", t.task_kind),
            );
        }
    }

    let pair_check = |what: &str, i: usize, model_id: &str, target_id: &str| {
        let mut v = Vec::new();
        if !model_ids.contains(model_id) {
            v.push(Violation {
                path: format!("$.{what}[{i}].model_id"),
                message: format!("references unknown model '{model_id}'"),
            });
        }
        if !target_ids.contains(target_id) {
            v.push(Violation {
                path: format!("$.{what}[{i}].target_id"),
                message: format!("references unknown target '{target_id}'"),
            });
        }
        v
    };

    let mut pending = Vec::new();
    let mut seen_artifacts = BTreeSet::new();
    for (i, a) in manifest.artifacts.iter().enumerate() {
        pending.extend(pair_check("artifacts", i, &a.model_id, &a.target_id));
        if !seen_artifacts.insert((a.model_id.as_str(), a.target_id.as_str())) {
            pending.push(Violation {
                path: format!("$.artifacts[{i}]"),
                message: format!("duplicate artifact for ({}, {})", a.model_id, a.target_id),
            });
        }
        let files = [
            ("feature_path", Some(&a.feature_path)),
            ("prob_path", a.prob_path.as_ref()),
            ("probe_feature_path", a.probe_feature_path.as_ref()),
        ];
        for (key, p) in files {
            if let Some(p) = p {
                let resolved = manifest.resolve(p);
                if !resolved.is_file() {
                    pending.push(Violation {
                        path: format!("$.artifacts[{i}].{key}"),
                        message: format!("file not found: {}", resolved.display()),
                    });
                }
            }
        }
    }

    let mut seen_outcomes = BTreeSet::new();
    for (i, o) in manifest.outcomes.iter().enumerate() {
        pending.extend(pair_check("outcomes", i, &o.model_id, &o.target_id));
        if !seen_outcomes.insert((o.model_id.as_str(), o.target_id.as_str())) {
            pending.push(Violation {
                path: format!("$.outcomes[{i}]"),
                message: format!("duplicate outcome for ({}, {})", o.model_id, o.target_id),
            });
        }
        if !(0.0..=1.0).contains(&o.accuracy) {
            pending.push(Violation {
                path: format!("$.outcomes[{i}].accuracy"),
                message: format!("accuracy {} outside [0, 1]", o.accuracy),
            });
        }
    }

    for (target_id, p) in &manifest.labels {
        let key = format!("$.labels[\"{target_id}\"]");
        if !target_ids.contains(target_id.as_str()) {
            pending.push(Violation {
                path: key.clone(),
                message: format!("labels for unknown target '{target_id}'"),
            });
        }
        let resolved = manifest.resolve(p);
        if !resolved.is_file() {
            pending.push(Violation {
                path: key,
                message: format!("file not found: {}", resolved.display()),
            });
        }
    }

    out.extend(pending);
    out
}
