//! Leave-one-out k-nearest-neighbour estimate of probe-set accuracy.

use super::MethodError;
use crate::embed::{LabelEmbedding, TaskKind};
use crate::Matrix;

/// What the neighbours vote on: class indices, or aggregate label vectors
/// (multi-label / detection) compared by L1 distance.
#[derive(Debug, Clone, Copy)]
pub enum KnnTarget<'a> {
    Classes(&'a [usize]),
    Embedded(&'a LabelEmbedding),
}

impl KnnTarget<'_> {
    fn len(&self) -> usize {
        match self {
            KnnTarget::Classes(c) => c.len(),
            KnnTarget::Embedded(e) => e.len(),
        }
    }
}

/// Indices of the `k` nearest other rows by Euclidean distance, nearest
/// first; equal distances keep the lower index first.
fn neighbours(rows: &Matrix, i: usize, k: usize) -> Vec<usize> {
    let xi = rows.column(i);
    let mut dists: Vec<(f64, usize)> = (0..rows.ncols())
        .filter(|&j| j != i)
        .map(|j| {
            let d: f64 = xi.iter().zip(rows.column(j).iter()).map(|(a, b)| (a - b) * (a - b)).sum();
            (d, j)
        })
        .collect();
    dists.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    dists.truncate(k);
    dists.into_iter().map(|(_, j)| j).collect()
}

/// Majority class among neighbours; ties go to the tied class whose first
/// vote came from the nearer neighbour.
fn vote(neigh: &[usize], labels: &[usize]) -> usize {
    let mut tally: Vec<(usize, usize)> = Vec::new(); // (class, votes), first-seen order
    for &j in neigh {
        match tally.iter_mut().find(|(c, _)| *c == labels[j]) {
            Some(entry) => entry.1 += 1,
            None => tally.push((labels[j], 1)),
        }
    }
    let best = tally.iter().map(|t| t.1).max().unwrap_or(0);
    tally.iter().find(|t| t.1 == best).map(|t| t.0).expect("at least one neighbour")
}

/// Classification: fraction of images whose leave-one-out prediction is
/// correct. Embedded labels: `1 - mean L1(label, mean neighbour label) / max L1`
/// where the maximum is 2 for area-share rows and one-hot rows, and the class
/// count for binary multi-hot rows.
pub fn knn_cv_score(features: &Matrix, target: KnnTarget<'_>, k: usize) -> Result<f64, MethodError> {
    let n = features.nrows();
    if n != target.len() {
        return Err(MethodError::ShapeMismatch(format!("features have {n} rows, labels {}", target.len())));
    }
    if n < 2 {
        return Err(MethodError::TooFewExamples(format!("need at least 2 images, got {n}")));
    }
    if k == 0 || k > n - 1 {
        return Err(MethodError::TooFewExamples(format!("k = {k} needs 1 <= k <= {}", n - 1)));
    }
    // columns are images, contiguous in memory
    let rows = features.transpose();
    match target {
        KnnTarget::Classes(labels) => {
            let max = labels.iter().copied().max().unwrap_or(0);
            let mut counts = vec![0usize; max + 1];
            labels.iter().for_each(|&y| counts[y] += 1);
            if let Some(c) = counts.iter().position(|&c| c == 1) {
                return Err(MethodError::TooFewExamples(format!("class {c} has a single example")));
            }
            let correct = (0..n).filter(|&i| vote(&neighbours(&rows, i, k), labels) == labels[i]).count();
            Ok(correct as f64 / n as f64)
        }
        KnnTarget::Embedded(e) => {
            let max_l1 = match e.task_kind {
                TaskKind::MultiLabel => e.matrix.ncols() as f64,
                TaskKind::SingleLabel | TaskKind::Detection => 2.0,
            };
            let mut total = 0.0;
            for i in 0..n {
                let neigh = neighbours(&rows, i, k);
                let l1: f64 = (0..e.matrix.ncols())
                    .map(|c| {
                        let m = neigh.iter().map(|&j| e.matrix[(j, c)]).sum::<f64>() / k as f64;
                        (e.matrix[(i, c)] - m).abs()
                    })
                    .sum();
                total += l1;
            }
            Ok((1.0 - total / n as f64 / max_l1).clamp(0.0, 1.0))
        }
    }
}
