//! Statistical kernels shared by every scoring method.
//!
//! Conventions:
//! - A zero-variance (constant) vector has correlation 0 with everything,
//!   so its correlation distance is 1.
//! - Ranks use the average (fractional) rank for ties.
//! - Internal normalizations (z-score, covariance, PCA variance) use the
//!   population (1/n) moment.

use std::cmp::Ordering;

use nalgebra::{DVector, SymmetricEigen};
use thiserror::Error;

use crate::Matrix;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("too few samples: need at least {needed}, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("too few features: need at least {needed}, got {got}")]
    TooFewFeatures { needed: usize, got: usize },
    #[error("degenerate data: all rows identical")]
    DegenerateData,
    #[error("matrix is not square: {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is not symmetric (max asymmetry {max_asymmetry:e})")]
    NotSymmetric { max_asymmetry: f64 },
    #[error("invalid target dimension {0}")]
    InvalidDimension(usize),
    #[error("shape mismatch: expected {expected} columns, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
}

fn is_constant(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[0] == w[1])
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn population_std(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64).sqrt()
}

fn check_pair(x: &[f64], y: &[f64]) -> Result<(), StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch { left: x.len(), right: y.len() });
    }
    if x.len() < 2 {
        return Err(StatsError::TooFewSamples { needed: 2, got: x.len() });
    }
    Ok(())
}

/// Pearson product-moment correlation, clamped to [-1, 1]; 0 when either
/// input is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    check_pair(x, y)?;
    if is_constant(x) || is_constant(y) {
        return Ok(0.0);
    }
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// 1-based ranks; tied values share the mean of the ranks they span.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]).then(a.cmp(&b)));
    let mut ranks = vec![0.0; v.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && v[order[end]] == v[order[start]] {
            end += 1;
        }
        // positions start..end hold ranks start+1..=end
        let avg = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = avg;
        }
        start = end;
    }
    ranks
}

pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    check_pair(x, y)?;
    pearson(&average_ranks(x), &average_ranks(y))
}

/// Population z-score; a constant vector maps to zeros.
pub fn zscore(v: &[f64]) -> Vec<f64> {
    if v.is_empty() || is_constant(v) {
        return vec![0.0; v.len()];
    }
    let m = mean(v);
    let s = population_std(v);
    v.iter().map(|x| (x - m) / s).collect()
}

fn row_vec(m: &Matrix, i: usize) -> Vec<f64> {
    m.row(i).iter().copied().collect()
}

/// Copies the strict upper triangle onto the lower one.
fn mirror_upper(m: &mut Matrix) {
    let n = m.nrows();
    for i in 0..n {
        for j in i + 1..n {
            m[(j, i)] = m[(i, j)];
        }
    }
}

/// Pairwise Pearson correlation between rows (n × n).
pub fn corrcoef_rows(m: &Matrix) -> Result<Matrix, StatsError> {
    let (n, d) = m.shape();
    if n < 2 {
        return Err(StatsError::TooFewSamples { needed: 2, got: n });
    }
    if d < 2 {
        return Err(StatsError::TooFewFeatures { needed: 2, got: d });
    }
    let mut z = Matrix::zeros(n, d);
    let mut constant = vec![false; n];
    for i in 0..n {
        let row = row_vec(m, i);
        if is_constant(&row) {
            constant[i] = true;
            continue;
        }
        let mu = mean(&row);
        for (j, x) in row.iter().enumerate() {
            z[(i, j)] = x - mu;
        }
    }
    let gram = &z * z.transpose();
    let mut c = Matrix::zeros(n, n);
    for i in 0..n {
        c[(i, i)] = if constant[i] { 0.0 } else { 1.0 };
        for j in i + 1..n {
            if !constant[i] && !constant[j] {
                c[(i, j)] = (gram[(i, j)] / (gram[(i, i)] * gram[(j, j)]).sqrt()).clamp(-1.0, 1.0);
            }
        }
    }
    mirror_upper(&mut c);
    Ok(c)
}

/// `1 - corrcoef_rows(m)` with an exactly zero diagonal.
pub fn correlation_distance(m: &Matrix) -> Result<Matrix, StatsError> {
    let mut d = corrcoef_rows(m)?;
    d.apply(|x| *x = 1.0 - *x);
    d.fill_diagonal(0.0);
    Ok(d)
}

/// Pairwise cosine distance between rows; rows with zero norm are at
/// distance 1 from every other row.
pub fn cosine_distance(m: &Matrix) -> Matrix {
    let (n, d) = m.shape();
    let mut u = Matrix::zeros(n, d);
    for i in 0..n {
        let norm = m.row(i).norm();
        if norm > 0.0 {
            u.set_row(i, &(m.row(i) / norm));
        }
    }
    let mut dist = &u * u.transpose();
    dist.apply(|x| *x = 1.0 - x.clamp(-1.0, 1.0));
    mirror_upper(&mut dist);
    dist.fill_diagonal(0.0);
    dist
}

/// Entries above the diagonal in row-major order (`i < j`).
pub fn upper_triangle(m: &Matrix) -> Vec<f64> {
    let n = m.nrows();
    let mut out = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            out.push(m[(i, j)]);
        }
    }
    out
}

pub fn column_means(m: &Matrix) -> DVector<f64> {
    DVector::from_iterator(m.ncols(), m.column_iter().map(|c| c.mean()))
}

pub fn center_columns(m: &Matrix) -> (Matrix, DVector<f64>) {
    let mu = column_means(m);
    let mut c = m.clone();
    for (j, mut col) in c.column_iter_mut().enumerate() {
        col.add_scalar_mut(-mu[j]);
    }
    (c, mu)
}

/// Population covariance of the rows (d × d).
pub fn covariance(m: &Matrix) -> Matrix {
    let (c, _) = center_columns(m);
    let mut cov = c.transpose() * &c / m.nrows() as f64;
    mirror_upper(&mut cov);
    cov
}

/// Eigenpairs of a symmetric matrix sorted by descending eigenvalue
/// (ties keep solver order).
fn sorted_eigen(a: Matrix) -> (Vec<f64>, Matrix) {
    let eig = SymmetricEigen::new(a);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| {
        eig.eigenvalues[j]
            .partial_cmp(&eig.eigenvalues[i])
            .unwrap_or(Ordering::Equal)
            .then(i.cmp(&j))
    });
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = Matrix::from_fn(eig.eigenvectors.nrows(), order.len(), |r, c| {
        eig.eigenvectors[(r, order[c])]
    });
    (values, vectors)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    pub mean: DVector<f64>,
    /// f × d, orthonormal rows.
    pub components: Matrix,
    /// Population variance along each component, non-increasing.
    pub explained_variance: Vec<f64>,
}

impl PcaModel {
    pub fn dim(&self) -> usize {
        self.components.nrows()
    }
}

/// Fits `min(f, n - 1, d)` principal components.
///
/// Uses the d × d covariance when `d <= n`, otherwise the n × n Gram matrix.
/// Components are orthonormalized in order of decreasing variance; a
/// component with (numerically) zero variance is completed from the
/// standard basis. Each component's largest-magnitude loading is positive.
pub fn pca_fit(m: &Matrix, f: usize) -> Result<PcaModel, StatsError> {
    let (n, d) = m.shape();
    if n < 2 {
        return Err(StatsError::TooFewSamples { needed: 2, got: n });
    }
    if d == 0 {
        return Err(StatsError::TooFewFeatures { needed: 1, got: 0 });
    }
    if f == 0 {
        return Err(StatsError::InvalidDimension(f));
    }
    if m.column_iter().all(|c| c.iter().all(|&x| x == c[0])) {
        return Err(StatsError::DegenerateData);
    }
    let k = f.min(n - 1).min(d);
    let (xc, mu) = center_columns(m);

    let mut candidates: Vec<Option<DVector<f64>>> = Vec::with_capacity(k);
    if d <= n {
        let mut cov = xc.transpose() * &xc / n as f64;
        mirror_upper(&mut cov);
        let (_, vecs) = sorted_eigen(cov);
        candidates.extend((0..k).map(|c| Some(vecs.column(c).into_owned())));
    } else {
        let mut gram = &xc * xc.transpose() / n as f64;
        mirror_upper(&mut gram);
        let (vals, vecs) = sorted_eigen(gram);
        let floor = vals[0].max(0.0) * 1e-12;
        for c in 0..k {
            let lambda = vals[c];
            candidates.push((lambda > floor).then(|| {
                xc.transpose() * vecs.column(c) / (n as f64 * lambda).sqrt()
            }));
        }
    }

    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(k);
    let mut next_unit = 0;
    for cand in candidates {
        let mut v = match cand {
            Some(v) => orthogonalize(v, &basis),
            None => DVector::zeros(d),
        };
        if v.norm() < 1e-6 {
            // zero-variance direction: complete from the standard basis
            loop {
                let mut e = DVector::zeros(d);
                e[next_unit] = 1.0;
                next_unit += 1;
                let w = orthogonalize(e, &basis);
                if w.norm() > 0.5 {
                    v = w;
                    break;
                }
            }
        }
        v.normalize_mut();
        let lead = v.iter().enumerate().fold(0, |best, (i, x)| {
            if x.abs() > v[best].abs() {
                i
            } else {
                best
            }
        });
        if v[lead] < 0.0 {
            v.neg_mut();
        }
        basis.push(v);
    }

    let mut components = Matrix::zeros(k, d);
    for (r, v) in basis.iter().enumerate() {
        components.set_row(r, &v.transpose());
    }
    let projected = &xc * components.transpose();
    let mut explained_variance: Vec<f64> = projected
        .column_iter()
        .map(|c| c.norm_squared() / n as f64)
        .collect();
    for i in 1..explained_variance.len() {
        explained_variance[i] = explained_variance[i].min(explained_variance[i - 1]);
    }
    Ok(PcaModel { mean: mu, components, explained_variance })
}

/// Modified Gram-Schmidt against an orthonormal basis, two passes.
fn orthogonalize(mut v: DVector<f64>, basis: &[DVector<f64>]) -> DVector<f64> {
    for _ in 0..2 {
        for b in basis {
            let p = b.dot(&v);
            v.axpy(-p, b, 1.0);
        }
    }
    v
}

/// Projects rows of `m` onto the fitted components (n × f).
pub fn pca_transform(model: &PcaModel, m: &Matrix) -> Result<Matrix, StatsError> {
    if m.ncols() != model.mean.len() {
        return Err(StatsError::ShapeMismatch { expected: model.mean.len(), got: m.ncols() });
    }
    let mut c = m.clone();
    for (j, mut col) in c.column_iter_mut().enumerate() {
        col.add_scalar_mut(-model.mean[j]);
    }
    Ok(c * model.components.transpose())
}

/// Moore-Penrose pseudo-inverse of a symmetric matrix. Eigenvalues with
/// magnitude at or below `d * max|eigenvalue| * 1e-10` are treated as zero.
pub fn pseudo_inverse(a: &Matrix) -> Result<Matrix, StatsError> {
    let (rows, cols) = a.shape();
    if rows != cols {
        return Err(StatsError::NotSquare { rows, cols });
    }
    let scale = a.amax().max(1.0);
    let asym = (a - a.transpose()).amax();
    if asym > 1e-9 * scale {
        return Err(StatsError::NotSymmetric { max_asymmetry: asym });
    }
    if rows == 0 {
        return Ok(a.clone());
    }
    let sym = (a + a.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let sigma_max = eig.eigenvalues.amax();
    let cutoff = rows as f64 * sigma_max * 1e-10;
    let mut out = Matrix::zeros(rows, rows);
    for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda.abs() > cutoff {
            let v = eig.eigenvectors.column(k);
            out.ger(1.0 / lambda, &v, &v, 1.0);
        }
    }
    mirror_upper(&mut out);
    Ok(out)
}
