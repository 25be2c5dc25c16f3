use super::MethodError;
use crate::stats::{covariance, pseudo_inverse};
use crate::Matrix;

/// H-Score: `trace(cov(F)^+ * cov(class means of F))`, population moments.
pub fn hscore(features: &Matrix, labels: &[usize], num_classes: usize) -> Result<f64, MethodError> {
    let (n, d) = features.shape();
    if n != labels.len() {
        return Err(MethodError::ShapeMismatch(format!("features have {n} rows, labels {}", labels.len())));
    }
    if num_classes < 2 {
        return Err(MethodError::TooFewExamples(format!("need at least 2 classes, got {num_classes}")));
    }
    if n < num_classes {
        return Err(MethodError::TooFewImages { needed: num_classes, got: n });
    }
    let mut sums = Matrix::zeros(num_classes, d);
    let mut counts = vec![0usize; num_classes];
    for (i, &y) in labels.iter().enumerate() {
        if y >= num_classes {
            return Err(MethodError::IndexOutOfRange { image: i, class: y, num_classes });
        }
        counts[y] += 1;
        let mut row = sums.row_mut(y);
        row += features.row(i);
    }
    if let Some(class) = counts.iter().position(|&c| c == 0) {
        return Err(MethodError::MissingClass { class });
    }
    let class_means = Matrix::from_fn(num_classes, d, |c, j| sums[(c, j)] / counts[c] as f64);
    let per_image_means = Matrix::from_fn(n, d, |i, j| class_means[(labels[i], j)]);

    let cov_inv = pseudo_inverse(&covariance(features))?;
    let cov_between = covariance(&per_image_means);
    // trace(A B) for symmetric A, B
    Ok(cov_inv.component_mul(&cov_between).sum())
}
