//! Label vectorization: maps per-image annotations to rows of a matrix so
//! label-side distances can be compared with feature-side distances.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    SingleLabel,
    MultiLabel,
    Detection,
}

impl std::fmt::Display for TaskKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TaskKind::SingleLabel => "single_label",
            TaskKind::MultiLabel => "multi_label",
            TaskKind::Detection => "detection",
        })
    }
}

impl std::str::FromStr for TaskKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "single_label" => Ok(TaskKind::SingleLabel),
            "multi_label" => Ok(TaskKind::MultiLabel),
            "detection" => Ok(TaskKind::Detection),
            _ => Err(format!("unknown task kind '{s}' (expected single_label, multi_label or detection)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxAnnotation {
    pub class: usize,
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BoxAnnotation {
    pub fn area(&self) -> f64 {
        (self.x2 - self.x1) * (self.y2 - self.y1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionImage {
    pub width: f64,
    pub height: f64,
    #[serde(default)]
    pub boxes: Vec<BoxAnnotation>,
}

/// Target annotations for every image of a dataset (or probe subset).
#[derive(Debug, Clone, PartialEq)]
pub enum LabelSet {
    Single(Vec<usize>),
    Multi(Vec<Vec<usize>>),
    Detection(Vec<DetectionImage>),
}

impl LabelSet {
    pub fn len(&self) -> usize {
        match self {
            LabelSet::Single(v) => v.len(),
            LabelSet::Multi(v) => v.len(),
            LabelSet::Detection(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn task_kind(&self) -> TaskKind {
        match self {
            LabelSet::Single(_) => TaskKind::SingleLabel,
            LabelSet::Multi(_) => TaskKind::MultiLabel,
            LabelSet::Detection(_) => TaskKind::Detection,
        }
    }

    /// Labels of the images at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> LabelSet {
        match self {
            LabelSet::Single(v) => LabelSet::Single(indices.iter().map(|&i| v[i]).collect()),
            LabelSet::Multi(v) => LabelSet::Multi(indices.iter().map(|&i| v[i].clone()).collect()),
            LabelSet::Detection(v) => {
                LabelSet::Detection(indices.iter().map(|&i| v[i].clone()).collect())
            }
        }
    }

    /// Smallest class count that covers every class index in the set.
    pub fn min_num_classes(&self) -> usize {
        let max = match self {
            LabelSet::Single(v) => v.iter().copied().max(),
            LabelSet::Multi(v) => v.iter().flatten().copied().max(),
            LabelSet::Detection(v) => v.iter().flat_map(|im| im.boxes.iter().map(|b| b.class)).max(),
        };
        max.map_or(0, |m| m + 1)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum EmbedError {
    #[error("image {image}: class {class} out of range for {num_classes} classes")]
    IndexOutOfRange {
        image: usize,
        class: usize,
        num_classes: usize,
    },
    #[error("image {image}: empty label set")]
    EmptyLabelSet { image: usize },
    #[error("image {image}, box {index}: degenerate box (need x2 > x1 and y2 > y1)")]
    DegenerateBox { image: usize, index: usize },
    #[error("need at least 2 classes, got {0}")]
    TooFewClasses(usize),
}

/// One row per probe image.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelEmbedding {
    pub matrix: Matrix,
    pub task_kind: TaskKind,
}

impl LabelEmbedding {
    pub fn len(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.matrix.nrows() == 0
    }
}

fn check_class(image: usize, class: usize, num_classes: usize) -> Result<(), EmbedError> {
    if class >= num_classes {
        Err(EmbedError::IndexOutOfRange { image, class, num_classes })
    } else {
        Ok(())
    }
}

pub fn embed_single_label(labels: &[usize], num_classes: usize) -> Result<LabelEmbedding, EmbedError> {
    if num_classes < 2 {
        return Err(EmbedError::TooFewClasses(num_classes));
    }
    let mut m = Matrix::zeros(labels.len(), num_classes);
    for (i, &y) in labels.iter().enumerate() {
        check_class(i, y, num_classes)?;
        m[(i, y)] = 1.0;
    }
    Ok(LabelEmbedding { matrix: m, task_kind: TaskKind::SingleLabel })
}

/// Binary multi-hot rows; duplicate indices within a set are harmless.
pub fn embed_multi_label(
    labels: &[Vec<usize>],
    num_classes: usize,
) -> Result<LabelEmbedding, EmbedError> {
    let mut m = Matrix::zeros(labels.len(), num_classes);
    for (i, set) in labels.iter().enumerate() {
        if set.is_empty() {
            return Err(EmbedError::EmptyLabelSet { image: i });
        }
        for &c in set {
            check_class(i, c, num_classes)?;
            m[(i, c)] = 1.0;
        }
    }
    Ok(LabelEmbedding { matrix: m, task_kind: TaskKind::MultiLabel })
}

/// Per-class share of total box area. Overlapping boxes contribute their full
/// areas independently; images without boxes embed to the zero row.
pub fn embed_detection(
    images: &[DetectionImage],
    num_classes: usize,
) -> Result<LabelEmbedding, EmbedError> {
    let mut m = Matrix::zeros(images.len(), num_classes);
    for (i, image) in images.iter().enumerate() {
        let mut total = 0.0;
        for (k, b) in image.boxes.iter().enumerate() {
            if !(b.x2 > b.x1 && b.y2 > b.y1) {
                return Err(EmbedError::DegenerateBox { image: i, index: k });
            }
            check_class(i, b.class, num_classes)?;
            m[(i, b.class)] += b.area();
            total += b.area();
        }
        if total > 0.0 {
            m.row_mut(i).scale_mut(1.0 / total);
        }
    }
    Ok(LabelEmbedding { matrix: m, task_kind: TaskKind::Detection })
}

pub fn embed_labels(labels: &LabelSet, num_classes: usize) -> Result<LabelEmbedding, EmbedError> {
    match labels {
        LabelSet::Single(v) => embed_single_label(v, num_classes),
        LabelSet::Multi(v) => embed_multi_label(v, num_classes),
        LabelSet::Detection(v) => embed_detection(v, num_classes),
    }
}

/// Pairwise L1 distances between embedding rows.
pub fn label_l1_distance(embedding: &LabelEmbedding) -> Matrix {
    let m = &embedding.matrix;
    let n = m.nrows();
    let mut d = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let dist: f64 = m.row(i).iter().zip(m.row(j).iter()).map(|(a, b)| (a - b).abs()).sum();
            d[(i, j)] = dist;
            d[(j, i)] = dist;
        }
    }
    d
}
