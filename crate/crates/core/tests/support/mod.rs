//! Test-only oracles and fixture generators. The oracles work on plain
//! `Vec<Vec<f64>>` with scalar loops and share no code with the library.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use modelpick::embed::LabelSet;
use modelpick::tensorio::{write_labels, write_matrix, DType};
use modelpick::Matrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

pub mod checks;

pub type Rows = Vec<Vec<f64>>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn to_rows(m: &Matrix) -> Rows {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect()
}

pub fn to_matrix(rows: &Rows) -> Matrix {
    let d = rows.first().map_or(0, Vec::len);
    Matrix::from_fn(rows.len(), d, |i, j| rows[i][j])
}

pub fn random_rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Rows {
    (0..n).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
}

/// `n` labels over `c` classes with every class present at least twice.
pub fn random_labels(rng: &mut ChaCha8Rng, n: usize, c: usize) -> Vec<usize> {
    assert!(n >= 2 * c);
    let mut y: Vec<usize> = (0..c).flat_map(|k| [k, k]).collect();
    while y.len() < n {
        y.push(rng.random_range(0..c));
    }
    y.shuffle(rng);
    y
}

/// Rows of a random row-stochastic matrix.
pub fn random_probs(rng: &mut ChaCha8Rng, n: usize, z: usize) -> Rows {
    (0..n)
        .map(|_| {
            let raw: Vec<f64> = (0..z).map(|_| rng.random_range(0.01..1.0)).collect();
            let s: f64 = raw.iter().sum();
            raw.iter().map(|v| v / s).collect()
        })
        .collect()
}

pub fn one_hot(y: &[usize], c: usize) -> Rows {
    y.iter().map(|&k| (0..c).map(|j| if j == k { 1.0 } else { 0.0 }).collect()).collect()
}

// ---- scalar statistics ----

pub fn oracle_pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for i in 0..x.len() {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    let constant = |v: &[f64]| v.iter().all(|a| *a == v[0]);
    if constant(x) || constant(y) {
        return 0.0;
    }
    (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)
}

/// Average ranks by counting: 1 + #smaller + (#equal - 1) / 2.
pub fn oracle_ranks(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|&a| {
            let smaller = x.iter().filter(|&&b| b < a).count() as f64;
            let equal = x.iter().filter(|&&b| b == a).count() as f64;
            1.0 + smaller + (equal - 1.0) / 2.0
        })
        .collect()
}

pub fn oracle_spearman(x: &[f64], y: &[f64]) -> f64 {
    oracle_pearson(&oracle_ranks(x), &oracle_ranks(y))
}

pub fn oracle_zscore(v: &[f64]) -> Vec<f64> {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let s = (v.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / n).sqrt();
    if v.iter().all(|a| *a == v[0]) {
        return vec![0.0; v.len()];
    }
    v.iter().map(|a| (a - m) / s).collect()
}

/// Upper-triangle pairs (i < j) of `1 - pearson(row_i, row_j)`.
pub fn oracle_corr_distance_pairs(rows: &Rows) -> Vec<f64> {
    let mut out = Vec::new();
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            out.push(1.0 - oracle_pearson(&rows[i], &rows[j]));
        }
    }
    out
}

pub fn oracle_cosine_distance_pairs(rows: &Rows) -> Vec<f64> {
    let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
    let mut out = Vec::new();
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            let (ni, nj) = (norm(&rows[i]), norm(&rows[j]));
            let cos = if ni > 0.0 && nj > 0.0 {
                let dot: f64 = rows[i].iter().zip(&rows[j]).map(|(a, b)| a * b).sum();
                (dot / (ni * nj)).clamp(-1.0, 1.0)
            } else {
                0.0
            };
            out.push(1.0 - cos);
        }
    }
    out
}

// ---- scoring methods ----

pub fn oracle_parc(features: &Rows, label_rows: &Rows) -> f64 {
    oracle_spearman(&oracle_corr_distance_pairs(features), &oracle_corr_distance_pairs(label_rows))
}

pub fn oracle_rsa(source: &Rows, probe: &Rows) -> f64 {
    oracle_spearman(&oracle_corr_distance_pairs(source), &oracle_corr_distance_pairs(probe))
}

pub fn oracle_dds(source: &Rows, probe: &Rows) -> f64 {
    oracle_pearson(
        &oracle_zscore(&oracle_cosine_distance_pairs(source)),
        &oracle_zscore(&oracle_cosine_distance_pairs(probe)),
    )
}

/// Empirical joint over (target label, source class) then the soft
/// classifier log-likelihood, all with explicit loops.
pub fn oracle_leep(probs: &Rows, y: &[usize], c: usize) -> f64 {
    let n = y.len();
    let z = probs[0].len();
    let mut joint = vec![vec![0.0; z]; c];
    for i in 0..n {
        for k in 0..z {
            joint[y[i]][k] += probs[i][k] / n as f64;
        }
    }
    let mut marginal = vec![0.0; z];
    for row in &joint {
        for k in 0..z {
            marginal[k] += row[k];
        }
    }
    let mut total = 0.0;
    for i in 0..n {
        let mut p = 0.0;
        for k in 0..z {
            if marginal[k] > 0.0 {
                p += joint[y[i]][k] / marginal[k] * probs[i][k];
            }
        }
        total += p.ln();
    }
    total / n as f64
}

pub fn oracle_argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i] > v[best] {
            best = i;
        }
    }
    best
}

pub fn oracle_nce(probs: &Rows, y: &[usize], c: usize) -> f64 {
    let n = y.len() as f64;
    let z = probs[0].len();
    let mut counts = vec![vec![0usize; c]; z];
    for (i, row) in probs.iter().enumerate() {
        counts[oracle_argmax(row)][y[i]] += 1;
    }
    let mut h = 0.0;
    for row in &counts {
        let m: usize = row.iter().sum();
        for &k in row {
            if k > 0 {
                h -= (k as f64 / n) * (k as f64 / m as f64).ln();
            }
        }
    }
    -h
}

/// `trace(Pi_X H)`: the projector onto the column space of the centered
/// features (modified Gram-Schmidt) against the class-averaging projector.
/// Equal to `trace(cov^+ cov_between)` without any matrix inverse.
pub fn oracle_hscore(features: &Rows, y: &[usize]) -> f64 {
    let n = features.len();
    let d = features[0].len();
    let mut cols: Vec<Vec<f64>> = (0..d)
        .map(|j| {
            let m = features.iter().map(|r| r[j]).sum::<f64>() / n as f64;
            features.iter().map(|r| r[j] - m).collect()
        })
        .collect();
    let scale = cols.iter().map(|c| c.iter().map(|a| a * a).sum::<f64>().sqrt()).fold(0.0, f64::max);
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for col in cols.iter_mut() {
        for _ in 0..2 {
            for q in &basis {
                let p: f64 = q.iter().zip(col.iter()).map(|(a, b)| a * b).sum();
                for (c, qv) in col.iter_mut().zip(q) {
                    *c -= p * qv;
                }
            }
        }
        let norm = col.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-9 * scale.max(1.0) {
            basis.push(col.iter().map(|a| a / norm).collect());
        }
    }
    let mut count = BTreeMap::new();
    for &k in y {
        *count.entry(k).or_insert(0usize) += 1;
    }
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            if y[i] != y[j] {
                continue;
            }
            let pij: f64 = basis.iter().map(|q| q[i] * q[j]).sum();
            total += pij / count[&y[i]] as f64;
        }
    }
    total
}

/// Leave-one-out k-NN with full pairwise distances, stable sort on
/// (distance, index), majority vote with ties to the nearest voter.
pub fn oracle_knn(features: &Rows, y: &[usize], k: usize) -> f64 {
    let n = features.len();
    let mut correct = 0;
    for i in 0..n {
        let mut d: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| (features[i].iter().zip(&features[j]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>(), j))
            .collect();
        d.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let voters: Vec<usize> = d[..k].iter().map(|p| y[p.1]).collect();
        let mut best = voters[0];
        let mut best_votes = 0;
        for &v in &voters {
            let votes = voters.iter().filter(|&&w| w == v).count();
            if votes > best_votes {
                best = v;
                best_votes = votes;
            }
        }
        if best == y[i] {
            correct += 1;
        }
    }
    correct as f64 / n as f64
}

// ---- synthetic model bank ----

pub struct BankSpec {
    pub seed: u64,
    pub models: usize,
    pub targets: usize,
    pub images: usize,
    pub classes: usize,
}

impl Default for BankSpec {
    fn default() -> Self {
        Self { seed: 7, models: 8, targets: 3, images: 48, classes: 4 }
    }
}

pub struct Bank {
    pub manifest: PathBuf,
    /// Oracle PARC of each (model, target) on the full label set.
    pub parc: BTreeMap<(String, String), f64>,
}

/// Writes features, probe features, probabilities, labels and a manifest.
/// Outcomes are the oracle PARC scores on the full target set, so any probe
/// budget covering every image reproduces them exactly.
pub fn write_bank(dir: &Path, spec: &BankSpec) -> Bank {
    let mut r = rng(spec.seed);
    let archs = ["resnet18", "resnet50", "alexnet", "googlenet"];
    let sources = ["imagenet", "cifar10"];
    let depths = [18, 50, 8, 22];
    let mut models = Vec::new();
    for m in 0..spec.models {
        models.push(json!({
            "model_id": format!("m{m}"),
            "depth_layers": depths[m % 4],
            "source_dataset_size": 1000 * (m + 1),
            "architecture": archs[m % 4],
            "source_dataset": sources[(m / 4) % 2],
        }));
    }
    let mut targets = Vec::new();
    let mut artifacts = Vec::new();
    let mut outcomes = Vec::new();
    let mut labels = serde_json::Map::new();
    let mut parc = BTreeMap::new();
    for t in 0..spec.targets {
        let tid = format!("t{t}");
        let y = random_labels(&mut r, spec.images, spec.classes);
        let lpath = format!("{tid}_labels.json");
        write_labels(&LabelSet::Single(y.clone()), dir.join(&lpath)).unwrap();
        labels.insert(tid.clone(), json!(lpath));
        targets.push(json!({
            "target_id": tid,
            "target_dataset_size": 500 * (t + 2),
            "task_kind": "single_label",
            "num_classes": spec.classes,
        }));
        let hot = one_hot(&y, spec.classes);
        let probe: Rows = hot.iter().map(|h| h.iter().map(|v| v + 0.3 * r.random_range(-1.0..1.0)).collect()).collect();
        let probe_path = format!("{tid}_probe.ptns");
        write_matrix(&to_matrix(&probe), DType::F64, dir.join(&probe_path)).unwrap();
        for m in 0..spec.models {
            let mid = format!("m{m}");
            let d = 6 + 3 * m;
            let signal = 0.2 + 0.25 * m as f64 + 0.1 * t as f64;
            let mix = random_rows(&mut r, spec.classes, d);
            let feats: Rows = (0..spec.images)
                .map(|i| (0..d).map(|j| signal * mix[y[i]][j] + r.random_range(-1.0..1.0)).collect())
                .collect();
            let probs = random_probs(&mut r, spec.images, 5);
            let fpath = format!("{mid}_{tid}_features.ptns");
            let ppath = format!("{mid}_{tid}_probs.ptns");
            write_matrix(&to_matrix(&feats), DType::F64, dir.join(&fpath)).unwrap();
            write_matrix(&to_matrix(&probs), DType::F64, dir.join(&ppath)).unwrap();
            artifacts.push(json!({
                "model_id": mid, "target_id": tid,
                "feature_path": fpath, "prob_path": ppath, "probe_feature_path": probe_path,
            }));
            let score = oracle_parc(&feats, &hot);
            assert!(score > 0.0 && score <= 1.0, "fixture PARC {score} is not a valid accuracy");
            outcomes.push(json!({ "model_id": mid, "target_id": tid, "accuracy": score }));
            parc.insert((mid, tid.clone()), score);
        }
    }
    let manifest = json!({
        "models": models, "targets": targets, "artifacts": artifacts,
        "outcomes": outcomes, "labels": labels,
    });
    let path = dir.join("manifest.json");
    std::fs::write(&path, serde_json::to_string_pretty(&manifest).unwrap()).unwrap();
    Bank { manifest: path, parc }
}

/// One random small problem within the oracle-equivalence ranges.
pub struct Instance {
    pub features: Rows,
    pub probe: Rows,
    pub probs: Rows,
    pub labels: Vec<usize>,
    pub classes: usize,
    pub k: usize,
}

pub fn random_instance(seed: u64) -> Instance {
    let mut r = rng(seed);
    let n = r.random_range(4..=20);
    let d = r.random_range(2..=16);
    let classes = r.random_range(2..=5usize.min(n / 2));
    let z = r.random_range(2..=6);
    let probe_d = r.random_range(2..=16);
    Instance {
        features: random_rows(&mut r, n, d),
        probe: random_rows(&mut r, n, probe_d),
        probs: random_probs(&mut r, n, z),
        labels: random_labels(&mut r, n, classes),
        classes,
        k: r.random_range(1..=3usize.min(n - 1)),
    }
}

/// Largest absolute difference between library and oracle over a method's
/// instances, with the seed where it occurred.
pub fn worst(diffs: impl Iterator<Item = (u64, f64)>) -> (u64, f64) {
    diffs.fold((0, 0.0), |acc, (s, d)| if d > acc.1 || d.is_nan() { (s, d) } else { acc })
}
