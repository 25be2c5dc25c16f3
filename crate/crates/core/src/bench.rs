//! Benchmark harness: probe-set sampling, Mean PC over the four evaluation
//! modes, top-k relative accuracy, and the end-to-end `run_benchmark` driver.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::calibrate::{ensemble_depth, Ensemble};
use crate::embed::LabelSet;
use crate::methods::{score_transfer, MethodConfig, MethodKind, ScoreOutcome, TransferInputs};
use crate::stats;
use crate::tensorio::{read_labels, read_matrix, BankManifest, ModelMeta};
use crate::Matrix;

pub const DEFAULT_PROBE_SIZE: usize = 500;
pub const DEFAULT_PROBE_SEEDS: usize = 5;

#[derive(Debug, Error, PartialEq)]
pub enum BenchError {
    #[error("probe budget {0} is too small (need n >= 4)")]
    BudgetTooSmall(usize),
    #[error("dataset has no images")]
    EmptyDataset,
    #[error("class {class} has {count} image(s), need at least 2")]
    ClassTooSmall { class: usize, count: usize },
    #[error("group '{group}' has {size} transfer(s), need at least 2")]
    GroupTooSmall { group: String, size: usize },
    #[error("key mismatch: {0}")]
    KeyMismatch(String),
    #[error("model bank is empty")]
    EmptyBank,
    #[error("k = {k} is outside 1..={models}")]
    InvalidK { k: usize, models: usize },
    #[error("best outcome must be positive, got {0}")]
    NonPositiveBest(f64),
    #[error("missing artifact for model '{model_id}' on target '{target_id}'")]
    MissingArtifact { model_id: String, target_id: String },
    #[error("invalid benchmark configuration: {0}")]
    Config(String),
}

/// Sorted, unique image indices into one target's label set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeSet {
    pub target_id: String,
    pub indices: Vec<usize>,
    pub n: usize,
    pub seed: u64,
}

/// Samples an `n`-image probe set. Single-label targets keep at least two
/// images of every retained class; when `2 * classes > n`, `n / 2` classes
/// are retained at random. Multi-label and detection targets are sampled
/// uniformly.
pub fn sample_probe(labels: &LabelSet, target_id: &str, n: usize, seed: u64) -> Result<ProbeSet, BenchError> {
    if n < 4 {
        return Err(BenchError::BudgetTooSmall(n));
    }
    if labels.is_empty() {
        return Err(BenchError::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut indices = match labels {
        LabelSet::Single(y) => {
            let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
            for (i, &c) in y.iter().enumerate() {
                by_class.entry(c).or_default().push(i);
            }
            if let Some((&class, members)) = by_class.iter().find(|(_, m)| m.len() < 2) {
                return Err(BenchError::ClassTooSmall { class, count: members.len() });
            }
            let classes: Vec<usize> = by_class.keys().copied().collect();
            let retained: Vec<usize> = if 2 * classes.len() > n {
                let mut keep: Vec<usize> =
                    index::sample(&mut rng, classes.len(), n / 2).into_iter().map(|i| classes[i]).collect();
                keep.sort_unstable();
                keep
            } else {
                classes
            };
            let mut chosen = Vec::with_capacity(n);
            let mut rest = Vec::new();
            for c in &retained {
                let members = &by_class[c];
                let picked = index::sample(&mut rng, members.len(), 2).into_vec();
                chosen.extend(picked.iter().map(|&i| members[i]));
                rest.extend(
                    members.iter().enumerate().filter(|(i, _)| !picked.contains(i)).map(|(_, &img)| img),
                );
            }
            rest.sort_unstable();
            let fill = (n - chosen.len()).min(rest.len());
            chosen.extend(index::sample(&mut rng, rest.len(), fill).into_iter().map(|i| rest[i]));
            chosen
        }
        _ => {
            let total = labels.len();
            index::sample(&mut rng, total, n.min(total)).into_vec()
        }
    };
    indices.sort_unstable();
    Ok(ProbeSet { target_id: target_id.to_string(), indices, n, seed })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    /// Correlate over sources for each target.
    #[default]
    VaryingSource,
    /// Correlate over targets for each source.
    VaryingTarget,
    /// Correlate over architectures, holding target and source dataset fixed.
    VaryingArchitecture,
    /// Correlate over source datasets, holding target and architecture fixed.
    VaryingSourceDataset,
}

impl EvalMode {
    pub const ALL: [EvalMode; 4] = [
        EvalMode::VaryingSource,
        EvalMode::VaryingTarget,
        EvalMode::VaryingArchitecture,
        EvalMode::VaryingSourceDataset,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EvalMode::VaryingSource => "varying_source",
            EvalMode::VaryingTarget => "varying_target",
            EvalMode::VaryingArchitecture => "varying_architecture",
            EvalMode::VaryingSourceDataset => "varying_source_dataset",
        }
    }
}

impl fmt::Display for EvalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EvalMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        EvalMode::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| {
            let names: Vec<_> = EvalMode::ALL.iter().map(|m| m.name()).collect();
            format!("unknown mode '{s}' (expected one of: {})", names.join(", "))
        })
    }
}

/// `(model_id, target_id)`
pub type TransferKey = (String, String);

/// Splits transfers into the sets that are correlated together under `mode`.
/// Group names: the target (varying_source), the model (varying_target), or
/// `target/partition` for the two partitioned modes.
pub fn group_transfers<'a>(
    keys: impl IntoIterator<Item = &'a TransferKey>,
    mode: EvalMode,
    models: &[ModelMeta],
) -> Result<BTreeMap<String, Vec<TransferKey>>, BenchError> {
    let meta: BTreeMap<&str, &ModelMeta> = models.iter().map(|m| (m.model_id.as_str(), m)).collect();
    let mut groups: BTreeMap<String, Vec<TransferKey>> = BTreeMap::new();
    for key in keys {
        let (s, t) = key;
        let m = meta.get(s.as_str()).ok_or_else(|| BenchError::KeyMismatch(format!("unknown model '{s}'")))?;
        let name = match mode {
            EvalMode::VaryingSource => t.clone(),
            EvalMode::VaryingTarget => s.clone(),
            EvalMode::VaryingArchitecture => format!("{t}/{}", m.source_dataset),
            EvalMode::VaryingSourceDataset => format!("{t}/{}", m.architecture),
        };
        groups.entry(name).or_default().push(key.clone());
    }
    Ok(groups)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcSummary {
    /// Mean over groups, in percent.
    pub mean: f64,
    /// Per-group Pearson correlation, in percent.
    pub groups: BTreeMap<String, f64>,
}

fn group_pc(
    members: &[TransferKey],
    scores: &BTreeMap<TransferKey, f64>,
    outcomes: &BTreeMap<TransferKey, f64>,
) -> f64 {
    let x: Vec<f64> = members.iter().map(|k| scores[k]).collect();
    let y: Vec<f64> = members.iter().map(|k| outcomes[k]).collect();
    100.0 * stats::pearson(&x, &y).expect("groups hold at least two transfers")
}

/// Mean Pearson correlation (percent) between scores and outcomes, averaged
/// over the groups of `mode`.
pub fn mean_pc(
    scores: &BTreeMap<TransferKey, f64>,
    outcomes: &BTreeMap<TransferKey, f64>,
    mode: EvalMode,
    models: &[ModelMeta],
) -> Result<PcSummary, BenchError> {
    if let Some(k) = scores.keys().find(|k| !outcomes.contains_key(*k)) {
        return Err(BenchError::KeyMismatch(format!("score for ({}, {}) has no outcome", k.0, k.1)));
    }
    if let Some(k) = outcomes.keys().find(|k| !scores.contains_key(*k)) {
        return Err(BenchError::KeyMismatch(format!("outcome for ({}, {}) has no score", k.0, k.1)));
    }
    if scores.is_empty() {
        return Err(BenchError::EmptyBank);
    }
    let groups = group_transfers(scores.keys(), mode, models)?;
    if let Some((group, members)) = groups.iter().find(|(_, m)| m.len() < 2) {
        return Err(BenchError::GroupTooSmall { group: group.clone(), size: members.len() });
    }
    let pcs: BTreeMap<String, f64> =
        groups.iter().map(|(g, members)| (g.clone(), group_pc(members, scores, outcomes))).collect();
    let values: Vec<f64> = pcs.values().copied().collect();
    Ok(PcSummary { mean: stats::mean(&values), groups: pcs })
}

/// Mean outcome of the `k` best-scored models divided by the best outcome.
/// Equal scores rank the lower model id first.
pub fn topk_relative_accuracy(
    scores: &BTreeMap<String, f64>,
    outcomes: &BTreeMap<String, f64>,
    k: usize,
) -> Result<f64, BenchError> {
    if scores.is_empty() {
        return Err(BenchError::EmptyBank);
    }
    if scores.len() != outcomes.len() || scores.keys().any(|s| !outcomes.contains_key(s)) {
        return Err(BenchError::KeyMismatch("scores and outcomes cover different models".into()));
    }
    if k == 0 || k > scores.len() {
        return Err(BenchError::InvalidK { k, models: scores.len() });
    }
    let best = outcomes.values().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(best > 0.0) {
        return Err(BenchError::NonPositiveBest(best));
    }
    let mut ranked: Vec<(&String, f64)> = scores.iter().map(|(s, &v)| (s, v)).collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let top: f64 = ranked[..k].iter().map(|(s, _)| outcomes[*s] / best).sum();
    Ok((top / k as f64).min(1.0))
}

/// Stable 64-bit seed from a master seed and a list of tags.
pub fn derive_seed(master: u64, parts: &[&str]) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchOptions {
    pub n: usize,
    pub num_probe_seeds: usize,
    pub mode: EvalMode,
    pub master_seed: u64,
    /// Worker threads for scoring; 1 keeps timed scoring calls serialized.
    pub jobs: usize,
    pub topk: Vec<usize>,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            n: DEFAULT_PROBE_SIZE,
            num_probe_seeds: DEFAULT_PROBE_SEEDS,
            mode: EvalMode::VaryingSource,
            master_seed: 0,
            jobs: 1,
            topk: vec![1, 3, 5],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Population std; `None` for an empty sample.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            None
        } else {
            Some(Self { mean: stats::mean(values), std: stats::population_std(values) })
        }
    }
}

impl fmt::Display for MeanStd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.1} ± {:.1}", self.mean, self.std)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedTransfer {
    pub method: String,
    pub model_id: String,
    pub target_id: String,
    /// Probe seed; `None` when the transfer failed before sampling.
    pub seed: Option<u64>,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedGroup {
    pub method: String,
    pub group: String,
    pub seed: u64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub config: MethodConfig,
    /// Per-target PC (percent), mean ± std over probe seeds. Partitioned
    /// modes average the target's groups first; empty in varying_target mode.
    pub per_target: BTreeMap<String, MeanStd>,
    pub per_group: BTreeMap<String, MeanStd>,
    pub mean_pc: Option<MeanStd>,
    /// Mean PC of each probe seed, in seed order (`None` if every group dropped).
    pub seed_mean_pc: Vec<Option<f64>>,
    pub topk: BTreeMap<String, MeanStd>,
    /// Mean scoring time per transfer (ms), mean ± std over probe seeds.
    pub timing_ms: Option<MeanStd>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: EvalMode,
    pub n: usize,
    pub seeds: Vec<u64>,
    /// Method labels in the order they were requested.
    pub method_order: Vec<String>,
    pub methods: BTreeMap<String, MethodReport>,
    pub skipped: Vec<SkippedTransfer>,
    pub dropped_groups: Vec<DroppedGroup>,
    /// False when scoring ran on several threads, so times include contention.
    pub timing_serialized: bool,
}

impl EvalReport {
    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Copy with every timing figure zeroed, for comparing runs.
    pub fn without_timing(&self) -> EvalReport {
        let mut r = self.clone();
        r.timing_serialized = false;
        for m in r.methods.values_mut() {
            m.timing_ms = m.timing_ms.map(|_| MeanStd { mean: 0.0, std: 0.0 });
        }
        r
    }

    /// `Method | Mean PC (%) | Time (ms)` table.
    pub fn summary_table(&self) -> String {
        let rows: Vec<[String; 3]> = self
            .method_order
            .iter()
            .map(|label| {
                let m = &self.methods[label];
                let pc = m.mean_pc.map_or_else(|| "n/a".to_string(), |v| v.to_string());
                let t = m.timing_ms.map_or_else(|| "n/a".to_string(), |v| v.to_string());
                [label.clone(), pc, t]
            })
            .collect();
        let header = ["Method".to_string(), "Mean PC (%)".to_string(), "Time (ms)".to_string()];
        let width = |c: usize| {
            rows.iter().map(|r| r[c].chars().count()).chain([header[c].chars().count()]).max().unwrap_or(0)
        };
        let widths = [width(0), width(1), width(2)];
        let line = |r: &[String; 3]| {
            let cells: Vec<String> = (0..3)
                .map(|c| format!("{}{}", r[c], " ".repeat(widths[c] - r[c].chars().count())))
                .collect();
            format!("{}\n", cells.join(" | ").trim_end())
        };
        let mut out = line(&header);
        out.push_str(&format!("{}\n", widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("-|-")));
        for r in &rows {
            out.push_str(&line(r));
        }
        out
    }

    /// Methods × targets (or groups) table of PC means, plus the overall mean.
    pub fn to_csv(&self) -> String {
        let columns: BTreeSet<String> = self
            .methods
            .values()
            .flat_map(|m| if m.per_target.is_empty() { m.per_group.keys() } else { m.per_target.keys() })
            .cloned()
            .collect();
        let mut out = String::from("method");
        for c in &columns {
            out.push(',');
            out.push_str(&csv_field(c));
        }
        out.push_str(",mean_pc,mean_pc_std\n");
        for label in &self.method_order {
            let m = &self.methods[label];
            let cells = if m.per_target.is_empty() { &m.per_group } else { &m.per_target };
            out.push_str(&csv_field(label));
            for c in &columns {
                out.push(',');
                if let Some(v) = cells.get(c) {
                    out.push_str(&format!("{:.1}", v.mean));
                }
            }
            match m.mean_pc {
                Some(v) => out.push_str(&format!(",{:.1},{:.1}\n", v.mean, v.std)),
                None => out.push_str(",,\n"),
            }
        }
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Matrices for one transfer, loaded once and shared by every seed.
#[derive(Default)]
struct LoadedArtifact {
    features: Option<Matrix>,
    probe_features: Option<Matrix>,
    probs: Option<Matrix>,
}

type ScoreResult = Result<ScoreOutcome, String>;

struct TransferResult {
    key: TransferKey,
    /// `[method][seed]`
    scores: Vec<Vec<ScoreResult>>,
}

struct TargetProbes {
    labels: Result<LabelSet, String>,
    /// One per probe seed.
    probes: Vec<Result<ProbeSet, String>>,
}

fn load_artifact(manifest: &BankManifest, key: &TransferKey, configs: &[MethodConfig]) -> Result<LoadedArtifact, String> {
    let artifact = manifest.artifact(&key.0, &key.1).ok_or_else(|| {
        BenchError::MissingArtifact { model_id: key.0.clone(), target_id: key.1.clone() }.to_string()
    })?;
    let any = |f: fn(MethodKind) -> bool| configs.iter().any(|c| f(c.method));
    let load = |p: &std::path::Path| read_matrix(manifest.resolve(p)).map_err(|e| e.to_string());
    let mut out = LoadedArtifact::default();
    if any(MethodKind::uses_features) {
        out.features = Some(load(&artifact.feature_path)?);
    }
    if any(MethodKind::uses_probe_features) {
        if let Some(p) = &artifact.probe_feature_path {
            out.probe_features = Some(load(p)?);
        }
    }
    if any(MethodKind::uses_probs) {
        if let Some(p) = &artifact.prob_path {
            out.probs = Some(load(p)?);
        }
    }
    Ok(out)
}

fn check_rows(m: &Option<Matrix>, what: &str, images: usize) -> Result<(), String> {
    match m {
        Some(m) if m.nrows() != images => {
            Err(format!("{what} have {} rows but the label file has {images} images", m.nrows()))
        }
        _ => Ok(()),
    }
}

fn score_one_transfer(
    manifest: &BankManifest,
    key: &TransferKey,
    configs: &[MethodConfig],
    probes: &TargetProbes,
    seeds: &[u64],
    master_seed: u64,
) -> TransferResult {
    let model = manifest.model(&key.0);
    let target = manifest.target(&key.1);
    let needs_artifact = configs.iter().any(|c| c.method != MethodKind::Heuristic);
    let loaded = if needs_artifact {
        load_artifact(manifest, key, configs).and_then(|a| {
            let images = probes.labels.as_ref().map_err(Clone::clone)?.len();
            check_rows(&a.features, "features", images)?;
            check_rows(&a.probe_features, "probe features", images)?;
            check_rows(&a.probs, "probabilities", images)?;
            Ok(a)
        })
    } else {
        Ok(LoadedArtifact::default())
    };

    let scores = configs
        .iter()
        .map(|config| {
            seeds
                .iter()
                .enumerate()
                .map(|(si, _)| {
                    if config.method == MethodKind::Heuristic {
                        let inputs = TransferInputs { model, target, ..Default::default() };
                        return score_transfer(config, &inputs).map_err(|e| e.to_string());
                    }
                    let loaded = loaded.as_ref().map_err(Clone::clone)?;
                    let labels = probes.labels.as_ref().map_err(Clone::clone)?;
                    let probe = probes.probes[si].as_ref().map_err(Clone::clone)?;
                    let rows = |m: &Option<Matrix>| m.as_ref().map(|m| m.select_rows(probe.indices.iter()));
                    let features = rows(&loaded.features);
                    let probe_features = rows(&loaded.probe_features);
                    let probs = rows(&loaded.probs);
                    let sub_labels = labels.subset(&probe.indices);
                    let mut config = config.clone();
                    config.seed = derive_seed(master_seed, &[&config.label(), &key.0, &key.1, &si.to_string()]);
                    let inputs = TransferInputs {
                        features: features.as_ref(),
                        probe_features: probe_features.as_ref(),
                        probs: probs.as_ref(),
                        labels: Some(&sub_labels),
                        num_classes: target.map_or(0, |t| t.num_classes),
                        model,
                        target,
                    };
                    score_transfer(&config, &inputs).map_err(|e| e.to_string())
                })
                .collect()
        })
        .collect();
    TransferResult { key: key.clone(), scores }
}

fn prepare_target(manifest: &BankManifest, target_id: &str, n: usize, seeds: &[u64]) -> TargetProbes {
    let labels = match (manifest.labels.get(target_id), manifest.target(target_id)) {
        (Some(path), Some(t)) => {
            read_labels(manifest.resolve(path), Some(t.task_kind)).map_err(|e| e.to_string())
        }
        (None, _) => Err(format!("no label file for target '{target_id}'")),
        (_, None) => Err(format!("unknown target '{target_id}'")),
    };
    let probes = seeds
        .iter()
        .map(|&seed| match &labels {
            Ok(l) => sample_probe(l, target_id, n, seed).map_err(|e| format!("probe sampling: {e}")),
            Err(e) => Err(e.clone()),
        })
        .collect();
    TargetProbes { labels, probes }
}

/// Scores every transfer with a ground-truth outcome under every method and
/// probe seed, then aggregates Mean PC, top-k and timing. Transfers that fail
/// are recorded in `skipped`; correlation groups touching them are dropped.
pub fn run_benchmark(
    manifest: &BankManifest,
    configs: &[MethodConfig],
    options: &BenchOptions,
) -> Result<EvalReport, BenchError> {
    if options.n < 4 {
        return Err(BenchError::BudgetTooSmall(options.n));
    }
    if options.num_probe_seeds == 0 {
        return Err(BenchError::Config("need at least one probe seed".into()));
    }
    if configs.is_empty() {
        return Err(BenchError::Config("no methods requested".into()));
    }
    let mut labels_seen = BTreeSet::new();
    for c in configs {
        c.validate().map_err(|e| BenchError::Config(format!("{}: {e}", c.label())))?;
        if !labels_seen.insert(c.label()) {
            return Err(BenchError::Config(format!("method '{}' requested twice", c.label())));
        }
    }
    let outcomes: BTreeMap<TransferKey, f64> = manifest
        .outcomes
        .iter()
        .map(|o| ((o.model_id.clone(), o.target_id.clone()), o.accuracy))
        .collect();
    if outcomes.is_empty() {
        return Err(BenchError::EmptyBank);
    }
    let seeds: Vec<u64> =
        (0..options.num_probe_seeds).map(|i| derive_seed(options.master_seed, &["probe", &i.to_string()])).collect();

    let target_ids: BTreeSet<&str> = outcomes.keys().map(|(_, t)| t.as_str()).collect();
    let probes: BTreeMap<&str, TargetProbes> =
        target_ids.iter().map(|&t| (t, prepare_target(manifest, t, options.n, &seeds))).collect();

    let keys: Vec<&TransferKey> = outcomes.keys().collect();
    let work = |key: &&TransferKey| {
        score_one_transfer(manifest, key, configs, &probes[key.1.as_str()], &seeds, options.master_seed)
    };
    let results: Vec<TransferResult> = if options.jobs <= 1 {
        keys.iter().map(work).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(options.jobs)
            .build()
            .map_err(|e| BenchError::Config(format!("thread pool: {e}")))?;
        pool.install(|| keys.par_iter().map(work).collect())
    };

    let groups = group_transfers(outcomes.keys(), options.mode, &manifest.models)?;
    let depths: BTreeMap<String, u32> =
        manifest.models.iter().map(|m| (m.model_id.clone(), m.depth_layers)).collect();

    let mut report = EvalReport {
        mode: options.mode,
        n: options.n,
        seeds: seeds.clone(),
        method_order: configs.iter().map(MethodConfig::label).collect(),
        methods: BTreeMap::new(),
        skipped: Vec::new(),
        dropped_groups: Vec::new(),
        timing_serialized: options.jobs <= 1,
    };

    for (mi, config) in configs.iter().enumerate() {
        let label = config.label();
        let mut seed_pc: Vec<Option<f64>> = Vec::new();
        let mut group_values: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        let mut target_values: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        let mut topk_values: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        let mut timing_values = Vec::new();

        for (si, &seed) in seeds.iter().enumerate() {
            let mut raw: BTreeMap<TransferKey, f64> = BTreeMap::new();
            let mut times = Vec::new();
            for r in &results {
                match &r.scores[mi][si] {
                    Ok(out) => {
                        raw.insert(r.key.clone(), out.raw_score);
                        times.push(out.wall_time_ms);
                    }
                    Err(reason) => report.skipped.push(SkippedTransfer {
                        method: label.clone(),
                        model_id: r.key.0.clone(),
                        target_id: r.key.1.clone(),
                        seed: Some(seed),
                        reason: reason.clone(),
                    }),
                }
            }
            if let Some(t) = MeanStd::of(&times) {
                timing_values.push(t.mean);
            }
            let scores = calibrate_scores(&raw, config, &depths, &mut report.skipped, &label, seed);

            let mut pcs = Vec::new();
            let mut per_target_seed: BTreeMap<String, Vec<f64>> = BTreeMap::new();
            for (g, members) in &groups {
                let reason = if members.iter().any(|k| !scores.contains_key(k)) {
                    Some("contains skipped transfers".to_string())
                } else if members.len() < 2 {
                    Some(BenchError::GroupTooSmall { group: g.clone(), size: members.len() }.to_string())
                } else {
                    None
                };
                if let Some(reason) = reason {
                    report.dropped_groups.push(DroppedGroup { method: label.clone(), group: g.clone(), seed, reason });
                    continue;
                }
                let pc = group_pc(members, &scores, &outcomes);
                pcs.push(pc);
                group_values.entry(g.clone()).or_default().push(pc);
                if options.mode != EvalMode::VaryingTarget {
                    per_target_seed.entry(members[0].1.clone()).or_default().push(pc);
                }
            }
            seed_pc.push(MeanStd::of(&pcs).map(|v| v.mean));
            for (t, v) in per_target_seed {
                target_values.entry(t).or_default().push(stats::mean(&v));
            }

            for (&k, v) in &topk_for_seed(&scores, &outcomes, &options.topk) {
                topk_values.entry(k).or_default().push(*v);
            }
        }

        let collect = |m: BTreeMap<String, Vec<f64>>| -> BTreeMap<String, MeanStd> {
            m.into_iter().filter_map(|(k, v)| MeanStd::of(&v).map(|s| (k, s))).collect()
        };
        let pcs: Vec<f64> = seed_pc.iter().flatten().copied().collect();
        report.methods.insert(
            label,
            MethodReport {
                config: config.clone(),
                per_target: collect(target_values),
                per_group: collect(group_values),
                mean_pc: MeanStd::of(&pcs),
                seed_mean_pc: seed_pc,
                topk: topk_values
                    .into_iter()
                    .filter_map(|(k, v)| MeanStd::of(&v).map(|s| (k.to_string(), s)))
                    .collect(),
                timing_ms: MeanStd::of(&timing_values),
            },
        );
    }
    Ok(report)
}

/// Applies the depth ensemble per target over the sources that scored.
fn calibrate_scores(
    raw: &BTreeMap<TransferKey, f64>,
    config: &MethodConfig,
    depths: &BTreeMap<String, u32>,
    skipped: &mut Vec<SkippedTransfer>,
    label: &str,
    seed: u64,
) -> BTreeMap<TransferKey, f64> {
    if config.ensemble == Ensemble::None {
        return raw.clone();
    }
    let mut by_target: BTreeMap<&str, BTreeMap<String, f64>> = BTreeMap::new();
    for ((s, t), &v) in raw {
        by_target.entry(t.as_str()).or_default().insert(s.clone(), v);
    }
    let mut out = BTreeMap::new();
    for (t, sources) in by_target {
        match ensemble_depth(&sources, depths, config.ell_max, config.ensemble, config.lambda_ell) {
            Ok(cal) => out.extend(cal.into_iter().map(|(s, v)| ((s, t.to_string()), v))),
            Err(e) => skipped.extend(sources.keys().map(|s| SkippedTransfer {
                method: label.to_string(),
                model_id: s.clone(),
                target_id: t.to_string(),
                seed: Some(seed),
                reason: format!("ensemble: {e}"),
            })),
        }
    }
    out
}

/// Top-k relative accuracy averaged over targets whose every source scored.
fn topk_for_seed(
    scores: &BTreeMap<TransferKey, f64>,
    outcomes: &BTreeMap<TransferKey, f64>,
    ks: &[usize],
) -> BTreeMap<usize, f64> {
    let mut per_target: BTreeMap<&str, (BTreeMap<String, f64>, BTreeMap<String, f64>, bool)> = BTreeMap::new();
    for ((s, t), &acc) in outcomes {
        let entry = per_target.entry(t.as_str()).or_insert_with(|| (BTreeMap::new(), BTreeMap::new(), true));
        match scores.get(&(s.clone(), t.clone())) {
            Some(&v) => {
                entry.0.insert(s.clone(), v);
                entry.1.insert(s.clone(), acc);
            }
            None => entry.2 = false,
        }
    }
    let mut out = BTreeMap::new();
    for &k in ks {
        let values: Vec<f64> = per_target
            .values()
            .filter(|(s, _, complete)| *complete && k <= s.len())
            .filter_map(|(s, o, _)| topk_relative_accuracy(s, o, k).ok())
            .collect();
        if !values.is_empty() {
            out.insert(k, stats::mean(&values));
        }
    }
    out
}
