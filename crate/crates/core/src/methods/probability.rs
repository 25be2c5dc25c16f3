//! Probability-based scores built from a source classifier's predictions
//! `P[i, z]` on the target images.

use std::collections::BTreeMap;

use super::MethodError;
use crate::Matrix;

const ROW_SUM_TOL: f64 = 1e-6;

fn check_inputs(probs: &Matrix, labels: &[usize], num_classes: usize) -> Result<(), MethodError> {
    if probs.nrows() != labels.len() {
        return Err(MethodError::ShapeMismatch(format!(
            "probabilities have {} rows, labels {}",
            probs.nrows(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(MethodError::TooFewImages { needed: 1, got: 0 });
    }
    for (image, &class) in labels.iter().enumerate() {
        if class >= num_classes {
            return Err(MethodError::IndexOutOfRange { image, class, num_classes });
        }
    }
    for (row, r) in probs.row_iter().enumerate() {
        let sum = r.sum();
        if (sum - 1.0).abs() > ROW_SUM_TOL || r.iter().any(|&p| p < 0.0) {
            return Err(MethodError::RowNotNormalized { row, sum });
        }
    }
    Ok(())
}

/// Average log-likelihood of the true target label under the soft empirical
/// source-to-target label map. Always `<= 0`.
pub fn leep_score(probs: &Matrix, labels: &[usize], num_classes: usize) -> Result<f64, MethodError> {
    check_inputs(probs, labels, num_classes)?;
    let n = labels.len();
    let onehot = Matrix::from_fn(n, num_classes, |i, y| if labels[i] == y { 1.0 } else { 0.0 });
    // joint[y, z] = (1/n) sum_i P[i, z] [y_i = y]
    let joint = onehot.transpose() * probs / n as f64;
    let marginal = joint.row_sum();
    let conditional = Matrix::from_fn(num_classes, probs.ncols(), |y, z| {
        if marginal[z] > 0.0 {
            joint[(y, z)] / marginal[z]
        } else {
            0.0
        }
    });
    // predicted[i, y] = sum_z p(y | z) P[i, z]
    let predicted = probs * conditional.transpose();
    let total: f64 = labels.iter().enumerate().map(|(i, &y)| predicted[(i, y)].ln()).sum();
    Ok((total / n as f64).min(0.0))
}

/// Negative conditional entropy `-H(Y | Z)` of the target labels given the
/// source model's hard predictions (argmax, ties to the lowest index).
pub fn nce_score(probs: &Matrix, labels: &[usize], num_classes: usize) -> Result<f64, MethodError> {
    check_inputs(probs, labels, num_classes)?;
    let n = labels.len() as f64;
    let mut joint: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut marginal: BTreeMap<usize, usize> = BTreeMap::new();
    for (i, &y) in labels.iter().enumerate() {
        let z = argmax(probs.row(i).iter().copied());
        *joint.entry((z, y)).or_default() += 1;
        *marginal.entry(z).or_default() += 1;
    }
    let score: f64 = joint
        .iter()
        .map(|(&(z, _), &c)| {
            let c = c as f64;
            (c / n) * (c / marginal[&z] as f64).ln()
        })
        .sum();
    Ok(score.min(0.0))
}

pub(crate) fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}
