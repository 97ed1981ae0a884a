use std::io::{BufRead, BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use flipdiag::aggregate::{group_explanations, Analysis, GroupReport};
use flipdiag::data::{load_dataset, SparseDataset, Split};
use flipdiag::explain::{explain_all, read_explanations, write_explanations, ExplainConfig, RunManifest};
use flipdiag::metrics::Summary;
use flipdiag::model::{
    train_logistic, train_naive_bayes, BridgeConfig, LogisticConfig, ModelArtifact, ModelSpec,
    ScoreRequest, ScoreResponse, ScoredModel,
};
use flipdiag::synth::{PlantedFeature, SyntheticConfig};
use flipdiag_service::{AppState, ServiceConfig};
use serde::Serialize;
use serde_json::json;

use crate::error::CliError;
use crate::{
    BridgeArgs, BridgeServeArgs, DataArgs, ExplainArgs, ModelKind, ReportArgs, ServeArgs, SynthArgs,
    TrainArgs,
};

fn print_json(value: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value)?;
    match writeln!(std::io::stdout().lock(), "{text}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn load(data: &DataArgs) -> Result<SparseDataset, CliError> {
    Ok(load_dataset(&data.data, data.format)?)
}

fn bridge_config(args: &BridgeArgs) -> Result<BridgeConfig, CliError> {
    if !(args.timeout > 0.0 && args.timeout.is_finite()) {
        return Err(CliError::usage(format!("--timeout must be positive, got {}", args.timeout)));
    }
    Ok(BridgeConfig {
        timeout: Duration::from_secs_f64(args.timeout),
        attempts: args.attempts.max(1),
        connections: args.connections.max(1),
    })
}

fn bridge_spec(args: &BridgeArgs) -> Option<ModelSpec> {
    if args.bridge_cmd.is_none() && args.bridge_url.is_none() {
        return None;
    }
    Some(ModelSpec::Bridge {
        command: args.bridge_cmd.clone(),
        url: args.bridge_url.clone(),
    })
}

fn parse_plant(spec: &str) -> Result<PlantedFeature, CliError> {
    let bad = || CliError::usage(format!("--plant expects name:frequency:weight, got {spec:?}"));
    let mut parts = spec.rsplitn(3, ':');
    let weight = parts.next().and_then(|w| w.parse().ok()).ok_or_else(bad)?;
    let frequency: f64 = parts.next().and_then(|f| f.parse().ok()).ok_or_else(bad)?;
    let name = parts.next().filter(|n| !n.is_empty()).ok_or_else(bad)?;
    if !(0.0..=1.0).contains(&frequency) {
        return Err(bad());
    }
    Ok(PlantedFeature {
        name: name.to_string(),
        frequency,
        weight,
    })
}

pub fn synth(args: SynthArgs) -> Result<(), CliError> {
    let planted = args
        .plant
        .iter()
        .map(|p| parse_plant(p))
        .collect::<Result<Vec<_>, _>>()?;
    let sole = match &args.sole {
        None => None,
        Some(spec) => {
            let bad = || CliError::usage(format!("--sole expects name:fraction of a planted feature, got {spec:?}"));
            let (name, fraction) = spec.rsplit_once(':').ok_or_else(bad)?;
            let fraction: f64 = fraction.parse().map_err(|_| bad())?;
            let index = planted.iter().position(|p| p.name == name).ok_or_else(bad)?;
            if !(0.0..1.0).contains(&fraction) {
                return Err(bad());
            }
            Some((index, fraction))
        }
    };
    let config = SyntheticConfig {
        n_items: args.items,
        n_features: args.features,
        mean_active: args.mean_active,
        positive_rate: args.positive_rate,
        n_signal: args.signal.min(args.features),
        planted,
        sole_feature_items: sole,
        seed: args.seed,
        ..SyntheticConfig::default()
    };
    let dataset = config.generate().dataset;
    std::fs::write(&args.out, dataset.to_sparse_text())?;
    print_json(&json!({
        "items": dataset.len(),
        "features": dataset.n_features(),
        "positive_rate": dataset.positive_rate(None),
        "hash": dataset.content_hash(),
        "out": args.out,
    }))
}

pub fn train(args: TrainArgs) -> Result<(), CliError> {
    let dataset = load(&args.data)?;
    let hash = dataset.content_hash();
    let dataset = dataset.split(args.split, args.seed)?;
    let n = dataset.n_features();
    let train = || dataset.items_in(Split::Train);

    let spec = match args.model {
        ModelKind::Logistic => {
            let config = LogisticConfig {
                learning_rate: args.learning_rate,
                epochs: args.epochs,
                l2: args.l2,
                seed: args.seed,
            };
            ModelSpec::Logistic(train_logistic(train(), n, &config)?)
        }
        ModelKind::NaiveBayes => ModelSpec::NaiveBayes(train_naive_bayes(train(), n, args.smoothing)?),
        ModelKind::Bridge => bridge_spec(&args.bridge)
            .ok_or_else(|| CliError::usage("--model bridge needs --bridge-cmd or --bridge-url"))?,
    };
    let name = args.name.clone().unwrap_or_else(|| {
        match args.model {
            ModelKind::Logistic => "logistic",
            ModelKind::NaiveBayes => "naive_bayes",
            ModelKind::Bridge => "bridge",
        }
        .to_string()
    });
    let mut artifact = ModelArtifact {
        name,
        n_features: n,
        threshold: 0.5,
        dataset_hash: Some(hash),
        train_fraction: Some(args.split),
        split_seed: Some(args.seed),
        spec,
    };
    let mut model = artifact.to_scored_model(&bridge_config(&args.bridge)?)?;
    artifact.threshold = model.calibrate(train())?;
    artifact.save(&args.out)?;

    let predictions = model.predict(&dataset)?;
    let accuracy = |want: Split| {
        let (hit, total) = predictions
            .iter()
            .zip(dataset.splits())
            .filter(|(_, s)| **s == want)
            .fold((0usize, 0usize), |(h, t), (p, _)| (h + p.correct() as usize, t + 1));
        (total > 0).then(|| hit as f64 / total as f64)
    };
    print_json(&json!({
        "name": artifact.name,
        "threshold": artifact.threshold,
        "train_items": train().count(),
        "train_accuracy": accuracy(Split::Train),
        "test_accuracy": accuracy(Split::Test),
        "hash": artifact.content_hash(),
        "out": args.out,
    }))
}

/// `run.jsonl` -> `run.manifest.json`
fn default_manifest(explanations: &Path) -> PathBuf {
    explanations.with_extension("manifest.json")
}

fn explain_model(args: &ExplainArgs, dataset: &SparseDataset) -> Result<ModelArtifact, CliError> {
    let bridge = bridge_spec(&args.bridge);
    match (&args.model, bridge) {
        (Some(_), None) if args.threshold.is_some() => Err(CliError::usage(
            "--threshold applies to bridge models only; an artifact carries its own",
        )),
        (Some(path), None) => Ok(ModelArtifact::load(path)?),
        (Some(_), Some(_)) => Err(CliError::usage(
            "give either --model or --bridge-cmd/--bridge-url, not both",
        )),
        (None, None) => Err(CliError::usage("--model or --bridge-cmd/--bridge-url is required")),
        (None, Some(spec)) => {
            let threshold = args
                .threshold
                .ok_or_else(|| CliError::usage("a bridge model without an artifact needs --threshold"))?;
            let artifact = ModelArtifact {
                name: "bridge".into(),
                n_features: dataset.n_features(),
                threshold,
                dataset_hash: None,
                train_fraction: None,
                split_seed: None,
                spec,
            };
            // the manifest refers to the model by hash, so keep the artifact
            artifact.save(args.out.with_extension("model.json"))?;
            Ok(artifact)
        }
    }
}

pub fn explain(args: ExplainArgs) -> Result<(), CliError> {
    let dataset = load(&args.data)?;
    let artifact = explain_model(&args, &dataset)?;
    let model: ScoredModel = artifact.to_scored_model(&bridge_config(&args.bridge)?)?;
    let config = ExplainConfig {
        seed: args.seed,
        plateau_eps: args.plateau_eps,
        parallelism: args.parallelism.max(1),
        use_cache: !args.no_cache,
    };
    let run = explain_all(&model, dataset.items(), &config)?;

    let file = std::fs::File::create(&args.out)?;
    write_explanations(BufWriter::new(file), &run.explanations)?;
    let manifest = RunManifest {
        model_name: artifact.name.clone(),
        model_hash: artifact.content_hash(),
        threshold: model.threshold(),
        seed: args.seed,
        dataset_hash: dataset.content_hash(),
        items: dataset.len(),
        explained: run.explanations.len(),
        flipped: run.explanations.iter().filter(|e| e.flipped).count(),
        failures: run.failures.clone(),
        evaluations: run.evaluations,
        model_calls: run.model_calls,
        cache: config.use_cache,
        parallelism: config.parallelism,
        wall_time_secs: run.wall_time_secs,
    };
    let manifest_path = args.manifest.clone().unwrap_or_else(|| default_manifest(&args.out));
    manifest.save(&manifest_path)?;

    if !run.failures.is_empty() {
        return Err(CliError::new(
            "explain_failures",
            format!(
                "{} of {} items could not be explained (first: item {}: {}); see {}",
                run.failures.len(),
                dataset.len(),
                run.failures[0].item,
                run.failures[0].error,
                manifest_path.display()
            ),
        ));
    }
    print_json(&json!({
        "items": manifest.items,
        "flipped": manifest.flipped,
        "evaluations": manifest.evaluations,
        "model_calls": manifest.model_calls,
        "wall_time_secs": manifest.wall_time_secs,
        "out": args.out,
        "manifest": manifest_path,
    }))
}

#[derive(Serialize)]
struct Report {
    model: String,
    model_hash: String,
    dataset_hash: String,
    threshold: f64,
    items: usize,
    flipped: usize,
    summary: Summary,
    n_groups: usize,
    groups: Vec<GroupReport>,
}

pub fn report(args: ReportArgs) -> Result<(), CliError> {
    let dataset = load(&args.data)?;
    let artifact = ModelArtifact::load(&args.model)?;
    let manifest_path = args
        .manifest
        .clone()
        .unwrap_or_else(|| default_manifest(&args.explanations));
    let manifest = RunManifest::load(&manifest_path)?;

    let dataset_hash = dataset.content_hash();
    if manifest.dataset_hash != dataset_hash {
        return Err(CliError::mismatch(format!(
            "{} was computed on dataset {}, but {} hashes to {}",
            manifest_path.display(),
            manifest.dataset_hash,
            args.data.data.display(),
            dataset_hash
        )));
    }
    let model_hash = artifact.content_hash();
    if manifest.model_hash != model_hash {
        return Err(CliError::mismatch(format!(
            "{} was computed with model {}, but {} hashes to {}",
            manifest_path.display(),
            manifest.model_hash,
            args.model.display(),
            model_hash
        )));
    }

    let dataset = match artifact.train_fraction {
        Some(f) => dataset.split(f, artifact.split_seed.unwrap_or(0))?,
        None => dataset,
    };
    let explanations = read_explanations(&args.explanations)?;
    let analysis = Analysis::from_explanations(&dataset, artifact.threshold, &explanations)?;
    let predictions: Vec<_> = analysis.predictions().copied().collect();
    let splits: Vec<_> = analysis.items().iter().map(|i| i.split).collect();
    let summary = Summary::from_predictions(&predictions, &splits, args.bins, artifact.threshold)?;

    let mut groups = group_explanations(&analysis, &analysis.all_positions());
    groups.sort_by(|a, b| b.size().cmp(&a.size()).then_with(|| a.key.cmp(&b.key)));
    let report = Report {
        model: artifact.name.clone(),
        model_hash,
        dataset_hash,
        threshold: artifact.threshold,
        items: analysis.items().len(),
        flipped: explanations.iter().filter(|e| e.flipped).count(),
        summary,
        n_groups: groups.len(),
        groups: groups.iter().take(args.top).map(|g| g.report()).collect(),
    };
    match &args.out {
        Some(path) => {
            let mut text = serde_json::to_string_pretty(&report)?;
            text.push('\n');
            std::fs::write(path, text)?;
            print_json(&json!({ "n_groups": report.n_groups, "out": path }))
        }
        None => print_json(&report),
    }
}

pub fn serve(args: ServeArgs, config: Option<PathBuf>) -> Result<(), CliError> {
    let path = args
        .registry
        .or(config)
        .ok_or_else(|| CliError::usage("serve needs --registry or --config"))?;
    let config = ServiceConfig::load(&path)?;
    let state = AppState::from_config(&config)?;
    let addr: SocketAddr = format!("{}:{}", args.host, args.port)
        .parse()
        .map_err(|e| CliError::usage(format!("bad address {}:{}: {e}", args.host, args.port)))?;
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(flipdiag_service::serve(state, addr))?;
    Ok(())
}

/// One JSON request per stdin line, one response per stdout line. Lines that
/// cannot be answered are reported on stderr and skipped.
pub fn bridge_serve(args: BridgeServeArgs) -> Result<(), CliError> {
    let artifact = ModelArtifact::load(&args.model)?;
    let model = Arc::new(artifact.to_scored_model(&BridgeConfig::default())?);
    let stdin = std::io::stdin().lock();
    let mut stdout = std::io::stdout().lock();
    for line in stdin.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let request: ScoreRequest = match serde_json::from_str(&line) {
            Ok(r) => r,
            Err(e) => {
                eprintln!("bridge-serve: malformed request: {e}");
                continue;
            }
        };
        let bags: Vec<&[u32]> = request.items.iter().map(Vec::as_slice).collect();
        match model.score_batch(&bags) {
            Ok(scores) => {
                let response = ScoreResponse {
                    id: request.id,
                    scores,
                };
                serde_json::to_writer(&mut stdout, &response)?;
                stdout.write_all(b"\n")?;
                stdout.flush()?;
            }
            Err(e) => eprintln!("bridge-serve: request {}: {e}", request.id),
        }
    }
    Ok(())
}
