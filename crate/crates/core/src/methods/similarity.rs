//! Methods that compare pairwise image-distance structure: PARC (features vs
//! labels), RSA and DDS (features vs a target-trained probe model).

use super::MethodError;
use crate::embed::LabelEmbedding;
use crate::stats::{self, correlation_distance, cosine_distance, upper_triangle};
use crate::Matrix;

fn check_rows(what: &str, left: usize, right: usize) -> Result<usize, MethodError> {
    if left != right {
        return Err(MethodError::ShapeMismatch(format!("{what}: {left} vs {right} rows")));
    }
    if left < 3 {
        return Err(MethodError::TooFewImages { needed: 3, got: left });
    }
    Ok(left)
}

fn check_cols(features: &Matrix) -> Result<(), MethodError> {
    if features.ncols() < 2 {
        return Err(MethodError::TooFewFeatures { needed: 2, got: features.ncols() });
    }
    Ok(())
}

/// Spearman correlation between the strict upper triangles of the feature
/// and label correlation-distance matrices.
pub fn parc_score(features: &Matrix, labels: &LabelEmbedding) -> Result<f64, MethodError> {
    check_rows("features vs labels", features.nrows(), labels.len())?;
    check_cols(features)?;
    let d_features = correlation_distance(features)?;
    let d_labels = correlation_distance(&labels.matrix)?;
    Ok(stats::spearman(&upper_triangle(&d_features), &upper_triangle(&d_labels))?)
}

pub fn rsa_score(source: &Matrix, probe: &Matrix) -> Result<f64, MethodError> {
    check_rows("source vs probe features", source.nrows(), probe.nrows())?;
    check_cols(source)?;
    check_cols(probe)?;
    let a = correlation_distance(source)?;
    let b = correlation_distance(probe)?;
    Ok(stats::spearman(&upper_triangle(&a), &upper_triangle(&b))?)
}

/// Pearson correlation of z-scored pairwise cosine distances.
pub fn dds_score(source: &Matrix, probe: &Matrix) -> Result<f64, MethodError> {
    check_rows("source vs probe features", source.nrows(), probe.nrows())?;
    let a = stats::zscore(&upper_triangle(&cosine_distance(source)));
    let b = stats::zscore(&upper_triangle(&cosine_distance(probe)));
    Ok(stats::pearson(&a, &b)?)
}
