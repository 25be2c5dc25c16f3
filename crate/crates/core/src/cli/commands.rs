use std::fs;
use std::path::Path;

use super::{CliError, Command, EvaluateArgs, SampleArgs, ScoreArgs, ValidateArgs};
use crate::bench::{run_benchmark, sample_probe, BenchError, BenchOptions};
use crate::embed::TaskKind;
use crate::methods::{score_transfer, MethodConfig, MethodError, MethodKind, ScoreRecord, TransferInputs};
use crate::tensorio::{
    load_manifest, parse_manifest_file, read_labels, read_matrix, validate_manifest, ManifestError, ModelMeta,
    TargetMeta,
};
use crate::Matrix;

pub(super) fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Validate(args) => validate(args),
        Command::Sample(args) => sample(args),
        Command::Score(args) => score(args),
        Command::Evaluate(args) => evaluate(args),
    }
}

fn manifest_error(e: ManifestError) -> CliError {
    match e {
        ManifestError::Validation(violations) => {
            for v in &violations {
                eprintln!("{v}");
            }
            CliError::Data(format!("manifest has {} violation(s)", violations.len()))
        }
        other => CliError::Data(other.to_string()),
    }
}

fn print_json(value: &impl serde::Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Internal(e.to_string()))?;
    println!("{text}");
    Ok(())
}

fn validate(args: ValidateArgs) -> Result<(), CliError> {
    let manifest = parse_manifest_file(&args.manifest).map_err(manifest_error)?;
    let violations = validate_manifest(&manifest);
    if !violations.is_empty() {
        return Err(manifest_error(ManifestError::Validation(violations)));
    }
    print_json(&serde_json::json!({
        "valid": true,
        "models": manifest.models.len(),
        "targets": manifest.targets.len(),
        "artifacts": manifest.artifacts.len(),
        "outcomes": manifest.outcomes.len(),
    }))
}

fn sample(args: SampleArgs) -> Result<(), CliError> {
    let (labels, target_id) = match (&args.labels, &args.manifest) {
        (Some(path), _) => {
            let labels = read_labels(path, args.kind).map_err(|e| CliError::Data(e.to_string()))?;
            let id = args.target.clone().unwrap_or_else(|| {
                path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
            });
            (labels, id)
        }
        (None, Some(manifest_path)) => {
            let target_id = args.target.clone().expect("clap requires --target with --manifest");
            let manifest = load_manifest(manifest_path).map_err(manifest_error)?;
            let target = manifest
                .target(&target_id)
                .ok_or_else(|| CliError::Data(format!("unknown target '{target_id}'")))?;
            let path = manifest
                .labels
                .get(&target_id)
                .ok_or_else(|| CliError::Data(format!("no label file for target '{target_id}'")))?;
            let kind = args.kind.unwrap_or(target.task_kind);
            let labels =
                read_labels(manifest.resolve(path), Some(kind)).map_err(|e| CliError::Data(e.to_string()))?;
            (labels, target_id)
        }
        (None, None) => return Err(CliError::Usage("either --labels or --manifest is required".into())),
    };
    let probe = sample_probe(&labels, &target_id, args.n, args.seed).map_err(|e| match e {
        BenchError::BudgetTooSmall(_) => CliError::Usage(e.to_string()),
        other => CliError::Data(other.to_string()),
    })?;
    print_json(&probe)
}

fn load(path: &Option<std::path::PathBuf>) -> Result<Option<Matrix>, CliError> {
    path.as_ref()
        .map(|p| read_matrix(p).map_err(|e| CliError::Data(e.to_string())))
        .transpose()
}

fn require<T: Copy>(value: Option<T>, flag: &str, method: MethodKind) -> Result<T, CliError> {
    value.ok_or_else(|| CliError::Data(format!("{method} needs {flag}")))
}

fn score(args: ScoreArgs) -> Result<(), CliError> {
    let method = args.method;
    let mut config = MethodConfig::new(method);
    config.pca_dim = args.pca;
    config.normalize = args.normalize;
    config.k = args.k;
    config.seed = args.seed;
    config.validate().map_err(|e| CliError::Usage(e.to_string()))?;

    let (model, target) = if method == MethodKind::Heuristic {
        let model = ModelMeta {
            model_id: args.model_id.clone().unwrap_or_default(),
            depth_layers: require(args.depth, "--depth", method)?,
            source_dataset_size: require(args.source_size, "--source-size", method)?,
            architecture: String::new(),
            source_dataset: String::new(),
            pretext_task: String::new(),
        };
        let target = TargetMeta {
            target_id: args.target_id.clone().unwrap_or_default(),
            target_dataset_size: require(args.target_size, "--target-size", method)?,
            task_kind: TaskKind::SingleLabel,
            num_classes: args.num_classes.unwrap_or(0),
        };
        (Some(model), Some(target))
    } else {
        (None, None)
    };

    // Report every missing input by its flag before reading any file.
    let missing = |needed: bool, present: bool, flag: &str| -> Result<(), CliError> {
        if needed && !present {
            Err(CliError::Data(format!("{method} needs {flag}")))
        } else {
            Ok(())
        }
    };
    missing(method.uses_features(), args.features.is_some(), "--features")?;
    missing(method.uses_labels(), args.labels.is_some(), "--labels")?;
    missing(method.uses_probs(), args.probs.is_some(), "--probs")?;
    missing(method.uses_probe_features(), args.probe_features.is_some(), "--probe-features")?;

    let features = if method.uses_features() { load(&args.features)? } else { None };
    let probs = if method.uses_probs() { load(&args.probs)? } else { None };
    let probe_features = if method.uses_probe_features() { load(&args.probe_features)? } else { None };
    let labels = match (&args.labels, method.uses_labels()) {
        (Some(p), true) => Some(read_labels(p, None).map_err(|e| CliError::Data(e.to_string()))?),
        _ => None,
    };

    let inputs = TransferInputs {
        features: features.as_ref(),
        probe_features: probe_features.as_ref(),
        probs: probs.as_ref(),
        labels: labels.as_ref(),
        num_classes: args.num_classes.unwrap_or(0),
        model: model.as_ref(),
        target: target.as_ref(),
    };
    let outcome = score_transfer(&config, &inputs).map_err(|e| match e {
        MethodError::InvalidConfig(m) => CliError::Usage(m),
        other => CliError::Data(other.to_string()),
    })?;
    print_json(&ScoreRecord {
        method: config.label(),
        model_id: args.model_id,
        target_id: args.target_id,
        raw_score: outcome.raw_score,
        calibrated_score: None,
        wall_time_ms: outcome.wall_time_ms,
        converged: outcome.converged,
    })
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::Internal(format!("cannot write {}: {e}", path.display())))
}

fn evaluate(args: EvaluateArgs) -> Result<(), CliError> {
    let manifest = load_manifest(&args.manifest).map_err(manifest_error)?;
    let configs: Vec<MethodConfig> = args
        .methods
        .iter()
        .map(|&m| {
            let mut c = MethodConfig::new(m);
            c.pca_dim = args.pca;
            c.normalize = args.normalize;
            c.k = args.k;
            c.ensemble = args.ensemble;
            c.lambda_ell = args.lambda_ell;
            c.ell_max = args.ell_max;
            c
        })
        .collect();
    let jobs = if args.timing {
        1
    } else {
        args.jobs
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
            .max(1)
    };
    let options = BenchOptions {
        n: args.n,
        num_probe_seeds: args.probes,
        mode: args.mode,
        master_seed: args.seed,
        jobs,
        topk: args.topk.clone(),
    };
    let report = run_benchmark(&manifest, &configs, &options).map_err(|e| match e {
        BenchError::BudgetTooSmall(_) | BenchError::Config(_) => CliError::Usage(e.to_string()),
        other => CliError::Data(other.to_string()),
    })?;

    let json = report.to_json_pretty();
    match &args.out {
        Some(path) => write_file(path, &format!("{json}\n"))?,
        None => println!("{json}"),
    }
    if let Some(path) = &args.csv {
        write_file(path, &report.to_csv())?;
    }
    eprint!("{}", report.summary_table());
    if !report.skipped.is_empty() {
        for s in &report.skipped {
            eprintln!("skipped {} on ({}, {}): {}", s.method, s.model_id, s.target_id, s.reason);
        }
        return Err(CliError::Data(format!("{} transfer(s) skipped; partial report written", report.skipped.len())));
    }
    Ok(())
}
