//! Transferability scoring methods. Each maps probe-set artifacts for one
//! (source model, target) pair to a single real score; higher means the
//! model is predicted to transfer better.

mod hscore;
mod knn;
mod logistic;
mod probability;
mod similarity;

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use hscore::hscore;
pub use knn::{knn_cv_score, KnnTarget};
pub use logistic::{logistic_score, stratified_split, LogisticFit, GRADIENT_TOL, MAX_ITERATIONS};
pub use probability::{leep_score, nce_score};
pub use similarity::{dds_score, parc_score, rsa_score};

use crate::calibrate::{self, Ensemble, DEFAULT_ELL_MAX, DEFAULT_LAMBDA_ELL};
use crate::embed::{embed_labels, EmbedError, LabelSet, TaskKind};
use crate::stats::StatsError;
use crate::tensorio::{ModelMeta, TargetMeta};
use crate::Matrix;

#[derive(Debug, Error, PartialEq)]
pub enum MethodError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("too few images: need at least {needed}, got {got}")]
    TooFewImages { needed: usize, got: usize },
    #[error("too few features: need at least {needed}, got {got}")]
    TooFewFeatures { needed: usize, got: usize },
    #[error("too few examples: {0}")]
    TooFewExamples(String),
    #[error("probability row {row} is not a distribution (sum {sum})")]
    RowNotNormalized { row: usize, sum: f64 },
    #[error("image {image}: class {class} out of range for {num_classes} classes")]
    IndexOutOfRange {
        image: usize,
        class: usize,
        num_classes: usize,
    },
    #[error("class {class} has no examples")]
    MissingClass { class: usize },
    #[error("{method} does not support {task} targets")]
    UnsupportedTask { method: MethodKind, task: TaskKind },
    #[error("{method} needs {input}")]
    MissingInput { method: MethodKind, input: &'static str },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodKind {
    Parc,
    Rsa,
    Dds,
    Leep,
    Nce,
    Hscore,
    KnnCv,
    Logistic,
    Heuristic,
}

impl MethodKind {
    pub const ALL: [MethodKind; 9] = [
        MethodKind::Parc,
        MethodKind::Rsa,
        MethodKind::Dds,
        MethodKind::Leep,
        MethodKind::Nce,
        MethodKind::Hscore,
        MethodKind::KnnCv,
        MethodKind::Logistic,
        MethodKind::Heuristic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MethodKind::Parc => "parc",
            MethodKind::Rsa => "rsa",
            MethodKind::Dds => "dds",
            MethodKind::Leep => "leep",
            MethodKind::Nce => "nce",
            MethodKind::Hscore => "hscore",
            MethodKind::KnnCv => "knn_cv",
            MethodKind::Logistic => "logistic",
            MethodKind::Heuristic => "heuristic",
        }
    }

    pub fn uses_features(self) -> bool {
        matches!(
            self,
            MethodKind::Parc
                | MethodKind::Rsa
                | MethodKind::Dds
                | MethodKind::Hscore
                | MethodKind::KnnCv
                | MethodKind::Logistic
        )
    }

    pub fn uses_probs(self) -> bool {
        matches!(self, MethodKind::Leep | MethodKind::Nce)
    }

    pub fn uses_probe_features(self) -> bool {
        matches!(self, MethodKind::Rsa | MethodKind::Dds)
    }

    pub fn uses_labels(self) -> bool {
        !matches!(self, MethodKind::Rsa | MethodKind::Dds | MethodKind::Heuristic)
    }

    /// Methods defined only for single-label classification targets.
    pub fn single_label_only(self) -> bool {
        matches!(
            self,
            MethodKind::Leep | MethodKind::Nce | MethodKind::Hscore | MethodKind::Logistic
        )
    }
}

impl fmt::Display for MethodKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MethodKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        MethodKind::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = MethodKind::ALL.iter().map(|m| m.name()).collect();
                format!("unknown method '{s}' (expected one of: {})", names.join(", "))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodConfig {
    pub method: MethodKind,
    /// PCA target dimension applied to source features before scoring.
    pub pca_dim: Option<usize>,
    /// Per-column feature standardization before scoring (and before PCA).
    #[serde(default)]
    pub normalize: bool,
    pub k: usize,
    pub ensemble: Ensemble,
    pub lambda_ell: f64,
    pub ell_max: u32,
    pub seed: u64,
}

impl MethodConfig {
    pub fn new(method: MethodKind) -> Self {
        Self {
            method,
            pca_dim: None,
            normalize: false,
            k: 1,
            ensemble: Ensemble::None,
            lambda_ell: DEFAULT_LAMBDA_ELL,
            ell_max: DEFAULT_ELL_MAX,
            seed: 0,
        }
    }

    pub fn with_pca(mut self, f: usize) -> Self {
        self.pca_dim = Some(f);
        self
    }

    pub fn with_ensemble(mut self, ensemble: Ensemble) -> Self {
        self.ensemble = ensemble;
        self
    }

    pub fn validate(&self) -> Result<(), MethodError> {
        if !(self.lambda_ell > 0.0) {
            return Err(MethodError::InvalidConfig(format!("lambda_ell must be > 0, got {}", self.lambda_ell)));
        }
        if self.k == 0 {
            return Err(MethodError::InvalidConfig("k must be >= 1".into()));
        }
        if self.ell_max == 0 {
            return Err(MethodError::InvalidConfig("ell_max must be >= 1".into()));
        }
        if self.pca_dim == Some(0) {
            return Err(MethodError::InvalidConfig("pca dimension must be >= 1".into()));
        }
        Ok(())
    }

    /// Display label, e.g. `parc f=32 +l` or `knn_cv k=3`.
    pub fn label(&self) -> String {
        let mut s = self.method.name().to_string();
        if self.method == MethodKind::Heuristic {
            return s;
        }
        if self.method == MethodKind::KnnCv && self.k != 1 {
            s.push_str(&format!(" k={}", self.k));
        }
        if self.normalize && self.method.uses_features() {
            s.push_str(" norm");
        }
        if let (Some(f), true) = (self.pca_dim, self.method.uses_features()) {
            s.push_str(&format!(" f={f}"));
        }
        match self.ensemble {
            Ensemble::None => {}
            Ensemble::ZnormPlusDepth => s.push_str(" +l"),
            Ensemble::MinmaxPlusDepth => s.push_str(" +l(minmax)"),
            Ensemble::MinmaxScaled => s.push_str(&format!(" +l(minmax,{})", self.lambda_ell)),
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub method: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_id: Option<String>,
    pub raw_score: f64,
    pub calibrated_score: Option<f64>,
    pub wall_time_ms: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub converged: Option<bool>,
}

/// Layers plus log of the combined source and target dataset sizes.
pub fn heuristic_score(model: &ModelMeta, target: &TargetMeta) -> f64 {
    model.depth_layers as f64 + ((model.source_dataset_size + target.target_dataset_size) as f64).ln()
}

/// Everything one scoring call may need; unused fields stay `None`.
#[derive(Debug, Clone, Copy, Default)]
pub struct TransferInputs<'a> {
    pub features: Option<&'a Matrix>,
    pub probe_features: Option<&'a Matrix>,
    pub probs: Option<&'a Matrix>,
    pub labels: Option<&'a LabelSet>,
    /// Declared class count of the target; 0 infers it from the labels.
    pub num_classes: usize,
    pub model: Option<&'a ModelMeta>,
    pub target: Option<&'a TargetMeta>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreOutcome {
    pub raw_score: f64,
    /// Wall time of calibration plus scoring (no file I/O).
    pub wall_time_ms: f64,
    /// Logistic only: whether gradient descent met its tolerance.
    pub converged: Option<bool>,
}

/// Relabels single-label classes to `0..present` in increasing class order.
/// Probe sets may drop classes; scores that need every class present (or
/// that are invariant to empty classes) see only the retained ones.
pub fn compact_classes(labels: &[usize]) -> (Vec<usize>, usize) {
    let mut present: Vec<usize> = labels.to_vec();
    present.sort_unstable();
    present.dedup();
    let relabeled = labels
        .iter()
        .map(|y| present.binary_search(y).expect("label is present"))
        .collect();
    (relabeled, present.len())
}

fn require<'a, T>(v: Option<&'a T>, method: MethodKind, input: &'static str) -> Result<&'a T, MethodError> {
    v.ok_or(MethodError::MissingInput { method, input })
}

/// Runs one configured method on one transfer: feature normalization and PCA
/// (when configured), then the scorer. The depth ensemble is not applied
/// here; it needs every source of the target.
pub fn score_transfer(config: &MethodConfig, inputs: &TransferInputs<'_>) -> Result<ScoreOutcome, MethodError> {
    config.validate()?;
    let method = config.method;
    if method == MethodKind::Heuristic {
        let model = require(inputs.model, method, "source model metadata")?;
        let target = require(inputs.target, method, "target metadata")?;
        let start = Instant::now();
        let raw_score = heuristic_score(model, target);
        return Ok(ScoreOutcome { raw_score, wall_time_ms: elapsed_ms(start), converged: None });
    }

    let labels = if method.uses_labels() { Some(require(inputs.labels, method, "labels")?) } else { None };
    if let Some(labels) = labels {
        if method.single_label_only() && labels.task_kind() != TaskKind::SingleLabel {
            return Err(MethodError::UnsupportedTask { method, task: labels.task_kind() });
        }
        let needed = labels.min_num_classes();
        if inputs.num_classes > 0 && needed > inputs.num_classes {
            return Err(MethodError::Embed(EmbedError::IndexOutOfRange {
                image: 0,
                class: needed - 1,
                num_classes: inputs.num_classes,
            }));
        }
    }
    let features = if method.uses_features() { Some(require(inputs.features, method, "features")?) } else { None };
    let probe = if method.uses_probe_features() {
        Some(require(inputs.probe_features, method, "probe features")?)
    } else {
        None
    };
    let probs = if method.uses_probs() { Some(require(inputs.probs, method, "probabilities")?) } else { None };

    let start = Instant::now();
    let calibrated = match features {
        Some(f) => {
            let mut f = if config.normalize { calibrate::normalize_features(f) } else { f.clone() };
            if let Some(dim) = config.pca_dim {
                f = calibrate::reduce_features(&f, dim)?;
            }
            Some(f)
        }
        None => None,
    };
    let num_classes = match labels {
        Some(l) if inputs.num_classes == 0 => l.min_num_classes(),
        _ => inputs.num_classes,
    };
    let compact = match labels {
        Some(LabelSet::Single(y)) => Some(compact_classes(y)),
        _ => None,
    };
    let single = || compact.as_ref().map(|(y, c)| (y.as_slice(), *c)).expect("single-label target");

    let mut converged = None;
    let raw_score = match method {
        MethodKind::Parc => {
            let embedding = embed_labels(labels.expect("checked"), num_classes)?;
            parc_score(calibrated.as_ref().expect("checked"), &embedding)?
        }
        MethodKind::Rsa => rsa_score(calibrated.as_ref().expect("checked"), probe.expect("checked"))?,
        MethodKind::Dds => dds_score(calibrated.as_ref().expect("checked"), probe.expect("checked"))?,
        MethodKind::Leep => {
            let (y, c) = single();
            leep_score(probs.expect("checked"), y, c)?
        }
        MethodKind::Nce => {
            let (y, c) = single();
            nce_score(probs.expect("checked"), y, c)?
        }
        MethodKind::Hscore => {
            let (y, c) = single();
            hscore(calibrated.as_ref().expect("checked"), y, c)?
        }
        MethodKind::KnnCv => {
            let f = calibrated.as_ref().expect("checked");
            match &compact {
                Some((y, _)) => knn_cv_score(f, KnnTarget::Classes(y), config.k)?,
                None => {
                    let embedding = embed_labels(labels.expect("checked"), num_classes)?;
                    knn_cv_score(f, KnnTarget::Embedded(&embedding), config.k)?
                }
            }
        }
        MethodKind::Logistic => {
            let (y, c) = single();
            let fit = logistic_score(calibrated.as_ref().expect("checked"), y, c, config.seed)?;
            converged = Some(fit.converged);
            fit.accuracy
        }
        MethodKind::Heuristic => unreachable!(),
    };
    Ok(ScoreOutcome { raw_score, wall_time_ms: elapsed_ms(start), converged })
}

fn elapsed_ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}
