//! Half-split multinomial logistic regression probe.
//!
//! The probe set is split per class (`ceil(count / 2)` images of each class
//! train, the rest evaluate) using a seeded shuffle. Features are
//! standardized with training-half statistics, then a softmax classifier with
//! L2 penalty `1 / m` on the weights (not the bias) is fit by full-batch
//! gradient descent: at most 500 steps, stopping once the gradient's max
//! absolute entry drops below 1e-6.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::probability::argmax;
use super::MethodError;
use crate::Matrix;

pub const MAX_ITERATIONS: usize = 500;
pub const GRADIENT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogisticFit {
    /// Held-out accuracy in [0, 1], at the final iterate even without convergence.
    pub accuracy: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// Stratified split by class: returns (train, eval) indices, each sorted.
pub fn stratified_split(labels: &[usize], num_classes: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut eval = Vec::new();
    for c in 0..num_classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        members.shuffle(&mut rng);
        let cut = members.len().div_ceil(2);
        train.extend_from_slice(&members[..cut]);
        eval.extend_from_slice(&members[cut..]);
    }
    train.sort_unstable();
    eval.sort_unstable();
    (train, eval)
}

fn softmax_rows(logits: &mut Matrix) {
    for mut row in logits.row_iter_mut() {
        let max = row.max();
        row.apply(|x| *x = (*x - max).exp());
        let s = row.sum();
        row /= s;
    }
}

/// Largest eigenvalue of `x^T x / m` by power iteration from the ones vector.
fn top_eigenvalue(x: &Matrix) -> f64 {
    let m = x.nrows() as f64;
    let mut v = nalgebra::DVector::from_element(x.ncols(), 1.0);
    v.normalize_mut();
    let mut lambda = 0.0;
    for _ in 0..100 {
        let w = x.transpose() * (x * &v) / m;
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        lambda = norm;
        v = w / norm;
    }
    lambda
}

pub fn logistic_score(
    features: &Matrix,
    labels: &[usize],
    num_classes: usize,
    seed: u64,
) -> Result<LogisticFit, MethodError> {
    let (n, d) = features.shape();
    if n != labels.len() {
        return Err(MethodError::ShapeMismatch(format!("features have {n} rows, labels {}", labels.len())));
    }
    if num_classes < 2 {
        return Err(MethodError::TooFewExamples(format!("need at least 2 classes, got {num_classes}")));
    }
    if n < 2 * num_classes {
        return Err(MethodError::TooFewExamples(format!(
            "{n} images cannot cover {num_classes} classes in both halves"
        )));
    }
    if let Some((image, &class)) = labels.iter().enumerate().find(|(_, &y)| y >= num_classes) {
        return Err(MethodError::IndexOutOfRange { image, class, num_classes });
    }
    let (train, eval) = stratified_split(labels, num_classes, seed);
    if eval.is_empty() {
        return Err(MethodError::TooFewExamples("evaluation half is empty".into()));
    }

    let m = train.len();
    let mut mean = vec![0.0; d];
    let mut scale = vec![1.0; d];
    for j in 0..d {
        let col: Vec<f64> = train.iter().map(|&i| features[(i, j)]).collect();
        mean[j] = crate::stats::mean(&col);
        let s = crate::stats::population_std(&col);
        scale[j] = if s > 0.0 { 1.0 / s } else { 0.0 };
    }
    // design matrix with a trailing bias column
    let design = |rows: &[usize]| {
        Matrix::from_fn(rows.len(), d + 1, |r, j| {
            if j == d {
                1.0
            } else {
                (features[(rows[r], j)] - mean[j]) * scale[j]
            }
        })
    };
    let x = design(&train);
    let targets = Matrix::from_fn(m, num_classes, |r, c| if labels[train[r]] == c { 1.0 } else { 0.0 });

    let l2 = 1.0 / m as f64;
    let step = 1.0 / (0.5 * 1.05 * top_eigenvalue(&x) + l2);
    let mut weights = Matrix::zeros(d + 1, num_classes);
    let mut converged = false;
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        let mut probs = &x * &weights;
        softmax_rows(&mut probs);
        let mut grad = x.transpose() * (probs - &targets) / m as f64;
        for j in 0..d {
            for c in 0..num_classes {
                grad[(j, c)] += l2 * weights[(j, c)];
            }
        }
        if grad.amax() < GRADIENT_TOL {
            converged = true;
            break;
        }
        weights -= grad * step;
        iterations += 1;
    }

    let logits = design(&eval) * &weights;
    let correct = eval
        .iter()
        .enumerate()
        .filter(|(r, &i)| argmax(logits.row(*r).iter().copied()) == labels[i])
        .count();
    Ok(LogisticFit { accuracy: correct as f64 / eval.len() as f64, converged, iterations })
}
