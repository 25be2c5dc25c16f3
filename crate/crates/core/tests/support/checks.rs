//! One function per acceptance criterion. Each returns a short detail line
//! on success or the reason it failed; integration tests unwrap them and the
//! acceptance target prints them.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use modelpick::bench::{run_benchmark, sample_probe, BenchOptions, EvalMode};
use modelpick::calibrate::{ensemble_depth, reduce_features, Ensemble};
use modelpick::embed::{embed_detection, embed_single_label, BoxAnnotation, DetectionImage, LabelSet};
use modelpick::methods::{
    dds_score, heuristic_score, hscore, knn_cv_score, leep_score, nce_score, parc_score, rsa_score,
    score_transfer, KnnTarget, MethodConfig, MethodKind, TransferInputs,
};
use modelpick::stats;
use modelpick::tensorio::{decode, encode, load_manifest, ModelMeta, TargetMeta, TensorData, TensorError, TensorFile};
use modelpick::Matrix;
use rand::{Rng, RngCore};

use super::*;

pub type Check = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---- oracle equivalence ----

pub const ORACLE_INSTANCES: u64 = 120;

pub fn oracle_equivalence() -> Check {
    let start = Instant::now();
    type Pair = Box<dyn Fn(&Instance) -> (f64, f64)>;
    let methods: Vec<(&str, f64, Pair)> = vec![
        ("parc", 1e-10, Box::new(|i: &Instance| {
            let e = embed_single_label(&i.labels, i.classes).unwrap();
            (parc_score(&to_matrix(&i.features), &e).unwrap(), oracle_parc(&i.features, &one_hot(&i.labels, i.classes)))
        })),
        ("rsa", 1e-10, Box::new(|i: &Instance| {
            (rsa_score(&to_matrix(&i.features), &to_matrix(&i.probe)).unwrap(), oracle_rsa(&i.features, &i.probe))
        })),
        ("dds", 1e-10, Box::new(|i: &Instance| {
            (dds_score(&to_matrix(&i.features), &to_matrix(&i.probe)).unwrap(), oracle_dds(&i.features, &i.probe))
        })),
        ("leep", 1e-10, Box::new(|i: &Instance| {
            (leep_score(&to_matrix(&i.probs), &i.labels, i.classes).unwrap(), oracle_leep(&i.probs, &i.labels, i.classes))
        })),
        ("nce", 1e-10, Box::new(|i: &Instance| {
            (nce_score(&to_matrix(&i.probs), &i.labels, i.classes).unwrap(), oracle_nce(&i.probs, &i.labels, i.classes))
        })),
        ("hscore", 1e-7, Box::new(|i: &Instance| {
            (hscore(&to_matrix(&i.features), &i.labels, i.classes).unwrap(), oracle_hscore(&i.features, &i.labels))
        })),
        ("knn_cv", 1e-10, Box::new(|i: &Instance| {
            let got = knn_cv_score(&to_matrix(&i.features), KnnTarget::Classes(&i.labels), i.k).unwrap();
            (got, oracle_knn(&i.features, &i.labels, i.k))
        })),
    ];
    let instances: Vec<Instance> = (0..ORACLE_INSTANCES).map(random_instance).collect();
    let mut report = Vec::new();
    for (name, tol, f) in &methods {
        let (seed, diff) = worst(instances.iter().enumerate().map(|(s, inst)| {
            let (got, want) = f(inst);
            (s as u64, (got - want).abs())
        }));
        ensure(diff <= *tol, || format!("{name}: max diff {diff:e} > {tol:e} (instance {seed})"))?;
        report.push(format!("{name} {diff:.1e}"));
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(60), || format!("suite took {elapsed:?}"))?;
    Ok(format!("{ORACLE_INSTANCES} instances x 7 methods in {elapsed:.2?}; max diffs: {}", report.join(", ")))
}

// ---- invariances ----

fn affine_rows(rows: &Rows, r: &mut rand_chacha::ChaCha8Rng) -> Rows {
    rows.iter()
        .map(|row| {
            let a = r.random_range(0.1..5.0);
            let b = r.random_range(-5.0..5.0);
            row.iter().map(|v| a * v + b).collect()
        })
        .collect()
}

pub fn invariance_suite() -> Check {
    let mut drift_parc: f64 = 0.0;
    let mut drift_rsa: f64 = 0.0;
    let mut drift_dds: f64 = 0.0;
    let mut drift_ens: f64 = 0.0;
    let mut drift_spear: f64 = 0.0;
    for s in 0..50 {
        let mut r = rng(5000 + s);
        let n = r.random_range(5..=20);
        let d = r.random_range(3..=16);
        let rows = random_rows(&mut r, n, d);
        let probe = random_rows(&mut r, n, d);
        let y = random_labels(&mut r, n, 2);
        let e = embed_single_label(&y, 2).unwrap();
        let f = to_matrix(&rows);
        let moved = to_matrix(&affine_rows(&rows, &mut r));
        drift_parc = drift_parc.max((parc_score(&f, &e).unwrap() - parc_score(&moved, &e).unwrap()).abs());
        drift_rsa = drift_rsa.max(
            (rsa_score(&f, &to_matrix(&probe)).unwrap() - rsa_score(&moved, &to_matrix(&probe)).unwrap()).abs(),
        );

        // z-scoring inside DDS does not change the Pearson correlation
        let raw = oracle_pearson(&oracle_cosine_distance_pairs(&rows), &oracle_cosine_distance_pairs(&probe));
        drift_dds = drift_dds.max((dds_score(&f, &to_matrix(&probe)).unwrap() - raw).abs());
        let z = stats::zscore(&oracle_cosine_distance_pairs(&rows));
        let zz = stats::zscore(&z);
        drift_dds = drift_dds.max(z.iter().zip(&zz).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));

        let models = r.random_range(2..=8);
        let raw: BTreeMap<String, f64> = (0..models).map(|m| (format!("m{m}"), r.random_range(-1.0..1.0))).collect();
        let depths: BTreeMap<String, u32> = (0..models).map(|m| (format!("m{m}"), r.random_range(8..=152))).collect();
        let (a, b) = (r.random_range(0.01..10.0), r.random_range(-10.0..10.0));
        let moved_raw: BTreeMap<String, f64> = raw.iter().map(|(k, v)| (k.clone(), a * v + b)).collect();
        let out = ensemble_depth(&raw, &depths, 50, Ensemble::ZnormPlusDepth, 0.25).unwrap();
        let out2 = ensemble_depth(&moved_raw, &depths, 50, Ensemble::ZnormPlusDepth, 0.25).unwrap();
        drift_ens = drift_ens.max(out.keys().map(|k| (out[k] - out2[k]).abs()).fold(0.0, f64::max));

        let x: Vec<f64> = random_rows(&mut r, 1, n)[0].clone();
        let yv: Vec<f64> = random_rows(&mut r, 1, n)[0].clone();
        let tx: Vec<f64> = x.iter().map(|v| (2.0 * v).exp() + v.powi(3)).collect();
        drift_spear =
            drift_spear.max((stats::spearman(&x, &yv).unwrap() - stats::spearman(&tx, &yv).unwrap()).abs());
    }
    ensure(drift_parc <= 1e-9, || format!("PARC per-image affine drift {drift_parc:e}"))?;
    ensure(drift_rsa <= 1e-9, || format!("RSA per-image affine drift {drift_rsa:e}"))?;
    ensure(drift_dds <= 1e-12, || format!("DDS z-score no-op drift {drift_dds:e}"))?;
    ensure(drift_ens <= 1e-10, || format!("depth ensemble affine drift {drift_ens:e}"))?;
    ensure(drift_spear <= 1e-12, || format!("spearman monotone drift {drift_spear:e}"))?;

    // PCA with f >= rank against no reduction
    let mut drift_pca: f64 = 0.0;
    for s in 0..20 {
        let mut r = rng(7000 + s);
        let n = r.random_range(8..=20);
        let d = r.random_range(3..=6);
        let rows = random_rows(&mut r, n, d);
        let e = embed_single_label(&random_labels(&mut r, n, 2), 2).unwrap();
        let f = to_matrix(&rows);
        let reduced = reduce_features(&f, 32).unwrap();
        drift_pca = drift_pca.max((parc_score(&f, &e).unwrap() - parc_score(&reduced, &e).unwrap()).abs());
    }
    ensure(drift_pca <= 1e-9, || {
        format!(
            "PARC after lossless PCA (f >= d) differs from PARC on raw features by up to {drift_pca:.3}; \
             other invariances held (parc {drift_parc:.1e}, rsa {drift_rsa:.1e}, dds {drift_dds:.1e}, \
             ensemble {drift_ens:.1e}, spearman {drift_spear:.1e})"
        )
    })?;
    Ok(format!(
        "parc {drift_parc:.1e}, rsa {drift_rsa:.1e}, dds {drift_dds:.1e}, ensemble {drift_ens:.1e}, \
         spearman {drift_spear:.1e}, pca {drift_pca:.1e}"
    ))
}

// ---- closed forms ----

pub fn closed_form_fixtures() -> Check {
    for c in 2..=6usize {
        let y: Vec<usize> = (0..2 * c).map(|i| i % c).collect();
        let e = embed_single_label(&y, c).unwrap();
        let d = stats::correlation_distance(&e.matrix).unwrap();
        let far = c as f64 / (c as f64 - 1.0);
        for i in 0..y.len() {
            for j in i + 1..y.len() {
                let want = if y[i] == y[j] { 0.0 } else { far };
                ensure(d[(i, j)] == want, || format!("D_y[{i},{j}] = {} for C = {c}, want {want}", d[(i, j)]))?;
            }
        }
    }
    let h = hscore(&Matrix::from_column_slice(4, 1, &[0.0, 0.0, 1.0, 1.0]), &[0, 0, 1, 1], 2).unwrap();
    ensure((h - 1.0).abs() <= 1e-12, || format!("H-Score 1-D fixture = {h}"))?;

    let perfect = Matrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
    let l = leep_score(&perfect, &[0, 1], 2).unwrap();
    ensure(l == 0.0, || format!("LEEP perfect alignment = {l}"))?;
    let hard = Matrix::from_row_slice(4, 2, &[1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0]);
    let nce = nce_score(&hard, &[0, 0, 1, 1], 2).unwrap();
    ensure(nce == 0.0, || format!("NCE perfect alignment = {nce}"))?;

    let model = ModelMeta {
        model_id: "m".into(),
        depth_layers: 50,
        source_dataset_size: 10_000,
        architecture: "resnet50".into(),
        source_dataset: "imagenet".into(),
        pretext_task: String::new(),
    };
    let target = TargetMeta {
        target_id: "t".into(),
        target_dataset_size: 5000,
        task_kind: modelpick::embed::TaskKind::SingleLabel,
        num_classes: 10,
    };
    let hv = heuristic_score(&model, &target);
    ensure((hv - (50.0 + 15000f64.ln())).abs() <= 1e-9, || format!("heuristic = {hv}"))?;

    let img = DetectionImage {
        width: 10.0,
        height: 10.0,
        boxes: vec![
            BoxAnnotation { class: 0, x1: 0.0, y1: 0.0, x2: 1.0, y2: 1.0 },
            BoxAnnotation { class: 1, x1: 2.0, y1: 2.0, x2: 5.0, y2: 3.0 },
        ],
    };
    let det = embed_detection(&[img], 2).unwrap();
    ensure(det.matrix.row(0).iter().copied().collect::<Vec<_>>() == [0.25, 0.75], || {
        format!("detection row = {:?}", det.matrix.row(0))
    })?;
    Ok(format!("D_y exact for C = 2..6; H-Score {h}; LEEP {l}; NCE {nce}; heuristic {hv:.4}; detection [0.25, 0.75]"))
}

// ---- end-to-end benchmark ----

fn run_cli(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_modelpick")).args(args).env_remove("MODELPICK_SEED").output().unwrap()
}

pub fn end_to_end_benchmark(dir: &Path) -> Check {
    let start = Instant::now();
    let spec = BankSpec::default();
    let bank = write_bank(dir, &spec);
    let out = dir.join("report.json");
    let n = spec.images.to_string();
    let output = run_cli(&[
        "evaluate",
        "--manifest", bank.manifest.to_str().unwrap(),
        "--methods", "parc,heuristic",
        "--mode", "varying_source",
        "--n", &n,
        "--probes", "5",
        "--seed", "11",
        "--out", out.to_str().unwrap(),
    ]);
    ensure(output.status.code() == Some(0), || {
        format!("evaluate exited {:?}: {}", output.status.code(), String::from_utf8_lossy(&output.stderr))
    })?;
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    let seeds = report["seeds"].as_array().map_or(0, Vec::len);
    ensure(seeds == 5, || format!("report lists {seeds} seeds"))?;
    let parc = &report["methods"]["parc"]["mean_pc"];
    let (pm, ps) = (parc["mean"].as_f64().unwrap(), parc["std"].as_f64().unwrap());
    let shown = format!("{pm:.1} ± {ps:.1}");
    ensure(shown == "100.0 ± 0.0", || format!("PARC Mean PC = {pm} ± {ps}"))?;
    let heur = &report["methods"]["heuristic"]["mean_pc"];
    let hs = heur["std"].as_f64().unwrap();
    ensure(hs == 0.0, || format!("heuristic std over seeds = {hs}"))?;
    let table = String::from_utf8_lossy(&output.stderr);
    ensure(table.contains("100.0 ± 0.0"), || format!("summary table lacks PARC 100.0 ± 0.0:\n{table}"))?;
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(120), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "{} models x {} targets: PARC {shown}, heuristic {:.1} ± {hs:.1}, {elapsed:.2?}",
        spec.models,
        spec.targets,
        heur["mean"].as_f64().unwrap()
    ))
}

// ---- scale and timing ----

fn parc_pca_time(n: usize, d: usize, seed: u64) -> Result<(Duration, f64), String> {
    let mut r = rng(seed);
    let y = random_labels(&mut r, n, 10);
    let features = Matrix::from_fn(n, d, |_, _| r.random_range(-1.0..1.0));
    let labels = LabelSet::Single(y);
    let inputs = TransferInputs { features: Some(&features), labels: Some(&labels), num_classes: 10, ..Default::default() };
    let config = MethodConfig::new(MethodKind::Parc).with_pca(32);
    let start = Instant::now();
    let out = score_transfer(&config, &inputs).map_err(|e| e.to_string())?;
    Ok((start.elapsed(), out.raw_score))
}

fn median(mut v: Vec<Duration>) -> Duration {
    v.sort();
    v[v.len() / 2]
}

pub fn scale_timing() -> Check {
    let (t500, _) = parc_pca_time(500, 1024, 1)?;
    ensure(t500 < Duration::from_secs(5), || format!("PARC f=32 on 500x1024 took {t500:?}"))?;
    let mut small = Vec::new();
    let mut large = Vec::new();
    for rep in 0..3 {
        small.push(parc_pca_time(250, 1024, 10 + rep)?.0);
        large.push(parc_pca_time(1000, 1024, 20 + rep)?.0);
    }
    let (s, l) = (median(small), median(large));
    ensure(l >= s, || format!("time(n=1000) = {l:?} < time(n=250) = {s:?}"))?;
    Ok(format!("500x1024 f=32 in {t500:.2?}; median n=250 {s:.2?}, n=1000 {l:.2?}"))
}

// ---- probe sampling ----

fn class_counts(y: &[usize], idx: &[usize]) -> BTreeMap<usize, usize> {
    let mut m = BTreeMap::new();
    for &i in idx {
        *m.entry(y[i]).or_insert(0) += 1;
    }
    m
}

pub fn probe_sampling(dir: &Path) -> Check {
    let ten: Vec<usize> = (0..1000).map(|i| i % 10).collect();
    let many: Vec<usize> = (0..4000).map(|i| i % 400).collect();
    for seed in 0..20u64 {
        let p = sample_probe(&LabelSet::Single(ten.clone()), "ten", 500, seed).map_err(|e| e.to_string())?;
        let counts = class_counts(&ten, &p.indices);
        ensure(p.indices.len() == 500 && counts.len() == 10 && counts.values().all(|&c| c >= 2), || {
            format!("seed {seed}: {} indices over {} classes", p.indices.len(), counts.len())
        })?;
        let q = sample_probe(&LabelSet::Single(many.clone()), "many", 500, seed).map_err(|e| e.to_string())?;
        let counts = class_counts(&many, &q.indices);
        ensure(q.indices.len() == 500 && counts.len() == 250 && counts.values().all(|&c| c == 2), || {
            format!("seed {seed}: {} indices over {} classes", q.indices.len(), counts.len())
        })?;
        let again = sample_probe(&LabelSet::Single(many.clone()), "many", 500, seed).unwrap();
        ensure(again == q, || format!("seed {seed}: repeated sampling differs"))?;
        ensure(p.indices.windows(2).all(|w| w[0] < w[1]), || "indices not sorted and unique".into())?;
    }

    // whole-benchmark determinism across worker counts, with probes smaller
    // than the targets so sampling matters
    let bank = write_bank(dir, &BankSpec::default());
    let manifest = load_manifest(&bank.manifest).map_err(|e| e.to_string())?;
    let configs = [
        MethodConfig::new(MethodKind::Parc).with_pca(4),
        MethodConfig::new(MethodKind::Logistic),
        MethodConfig::new(MethodKind::Rsa),
    ];
    let mut reports = Vec::new();
    for jobs in [1, 4, 1, 3] {
        let options = BenchOptions { n: 20, num_probe_seeds: 3, mode: EvalMode::VaryingSource, master_seed: 5, jobs, topk: vec![1, 3] };
        let report = run_benchmark(&manifest, &configs, &options).map_err(|e| e.to_string())?;
        reports.push(report.without_timing().to_json_pretty());
    }
    ensure(reports.iter().all(|r| r == &reports[0]), || "reports differ across --jobs settings".into())?;

    let labels = dir.join("t0_labels.json");
    let runs: Vec<Vec<u8>> = (0..2)
        .map(|_| run_cli(&["sample", "--labels", labels.to_str().unwrap(), "--n", "12", "--seed", "3"]).stdout)
        .collect();
    ensure(!runs[0].is_empty() && runs[0] == runs[1], || "CLI sample output differs between runs".into())?;
    Ok("20 seeds x 2 scenarios exact; reports bit-identical for jobs 1, 4, 1, 3".into())
}

// ---- tensor format ----

fn random_tensor(r: &mut rand_chacha::ChaCha8Rng) -> TensorFile {
    let rank = r.random_range(1..=4);
    let shape: Vec<u64> = (0..rank).map(|_| r.random_range(1..=6)).collect();
    let count: u64 = shape.iter().product();
    let finite64 = |r: &mut rand_chacha::ChaCha8Rng| loop {
        let v = f64::from_bits(r.next_u64());
        if v.is_finite() {
            return v;
        }
    };
    let finite32 = |r: &mut rand_chacha::ChaCha8Rng| loop {
        let v = f32::from_bits(r.next_u32());
        if v.is_finite() {
            return v;
        }
    };
    let data = if r.random_bool(0.5) {
        TensorData::F64((0..count).map(|_| finite64(r)).collect())
    } else {
        TensorData::F32((0..count).map(|_| finite32(r)).collect())
    };
    TensorFile::new(shape, data).unwrap()
}

fn bits(data: &TensorData) -> Vec<u64> {
    match data {
        TensorData::F32(v) => v.iter().map(|x| x.to_bits() as u64).collect(),
        TensorData::F64(v) => v.iter().map(|x| x.to_bits()).collect(),
    }
}

pub fn format_conformance() -> Check {
    let mut r = rng(2024);
    for i in 0..1000 {
        let t = random_tensor(&mut r);
        let bytes = encode(&t);
        let back = decode(&bytes).map_err(|e| format!("tensor {i}: {e}"))?;
        ensure(back.shape() == t.shape() && back.dtype() == t.dtype() && bits(back.data()) == bits(t.data()), || {
            format!("tensor {i} did not round-trip")
        })?;
        ensure(encode(&back) == bytes, || format!("tensor {i}: re-encoding differs"))?;
    }

    let good = encode(&TensorFile::new(vec![2, 3], TensorData::F64(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0])).unwrap());
    let mut named = 0;
    for cut in 0..24 {
        match decode(&good[..cut]) {
            Err(TensorError::TruncatedHeader { .. }) => named += 1,
            other => return Err(format!("{cut}-byte prefix gave {other:?}")),
        }
    }
    for cut in 24..good.len() {
        match decode(&good[..cut]) {
            Err(TensorError::TruncatedPayload { .. }) => named += 1,
            other => return Err(format!("{cut}-byte prefix gave {other:?}")),
        }
    }
    let mut bad = good.clone();
    bad[0] = b'X';
    ensure(matches!(decode(&bad), Err(TensorError::BadMagic { offset: 0 })), || "bad magic not named".into())?;
    let mut bad = good.clone();
    bad[4] = 9;
    ensure(matches!(decode(&bad), Err(TensorError::UnsupportedVersion { version: 9, .. })), || "bad version not named".into())?;
    let mut bad = good.clone();
    bad[32..40].copy_from_slice(&f64::NAN.to_le_bytes());
    ensure(matches!(decode(&bad), Err(TensorError::NonFiniteValue { offset: 32 })), || "NaN payload not named".into())?;
    let mut bad = good.clone();
    bad.extend_from_slice(&[0, 0]);
    ensure(matches!(decode(&bad), Err(TensorError::TrailingBytes { .. })), || "trailing bytes not named".into())?;
    named += 4;

    // random byte flips: any outcome but a panic
    for i in 0..2000 {
        let mut bytes = good.clone();
        for _ in 0..r.random_range(1..4) {
            let at = r.random_range(0..bytes.len());
            bytes[at] = r.random();
        }
        if r.random_bool(0.3) {
            bytes.truncate(r.random_range(0..bytes.len()));
        }
        std::panic::catch_unwind(|| {
            let _ = decode(&bytes);
        })
        .map_err(|_| format!("decode panicked on mutation {i}"))?;
    }
    Ok(format!("1000 round trips bit-exact; {named} corrupted files named; 2000 mutations without panic"))
}
