use std::fs;
use std::path::{Path, PathBuf};

use fedtn_core::data::{load_csv, partition, synth_blobs, Dataset, PartitionSpec};
use fedtn_core::experiment::{prepare, ExperimentConfig};
use fedtn_core::fed::RoundReport;
use fedtn_core::model::{Checkpoint, Classifier};
use fedtn_core::train::{evaluate, MetricsReport};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::CliError;

type CliResult<T> = Result<T, CliError>;

fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::Other(format!("{}: {e}", path.display())))
}

fn create_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(|e| CliError::Other(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text =
        serde_json::to_string_pretty(value).map_err(|e| CliError::Other(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::Other(format!("{}: {e}", path.display())))
}

/// Parses JSON, reporting the path of the offending field on failure.
fn parse_json<T: DeserializeOwned>(text: &str, what: &str) -> CliResult<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        if path == "." {
            CliError::input(format!("invalid {what}: {}", e.inner()))
        } else {
            CliError::input(format!("invalid {what}: field `{path}`: {}", e.inner()))
        }
    })
}

pub fn load_config(
    path: &Path,
    seed: Option<u64>,
    out: Option<PathBuf>,
) -> CliResult<ExperimentConfig> {
    let mut config: ExperimentConfig = parse_json(&read_text(path)?, "config")?;
    // command-line flags win over the file
    if let Some(seed) = seed {
        config.seed = seed;
    }
    if let Some(out) = out {
        config.output_dir = out;
    }
    config.validate().map_err(|e| {
        CliError::input(format!(
            "invalid config: field `{}`: {}",
            e.field, e.message
        ))
    })?;
    Ok(config)
}

#[derive(Serialize)]
struct ClientSummary {
    id: String,
    label_counts: [usize; 2],
}

#[derive(Serialize)]
struct SplitSummary {
    train: usize,
    val: usize,
    test: usize,
}

#[derive(Serialize)]
struct FailureSummary {
    round: usize,
    error: String,
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    config: &'a ExperimentConfig,
    n_qubits: usize,
    n_params: usize,
    rounds_requested: usize,
    rounds_completed: usize,
    stopped_early: bool,
    bytes_total: u64,
    split: SplitSummary,
    clients: Vec<ClientSummary>,
    final_metrics: Option<MetricsReport>,
    failure: Option<FailureSummary>,
}

fn write_history(path: &Path, history: &[RoundReport]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "round",
        "client",
        "loss",
        "test_acc",
        "test_auc",
        "bytes_total",
    ])?;
    for r in history {
        let auc = r
            .global_metrics
            .auc
            .map(|a| a.to_string())
            .unwrap_or_default();
        for c in &r.per_client {
            w.write_record([
                r.round.to_string(),
                c.id.clone(),
                c.train_loss.to_string(),
                r.global_metrics.accuracy.to_string(),
                auc.clone(),
                r.bytes_exchanged.to_string(),
            ])?;
        }
    }
    w.flush()
        .map_err(|e| CliError::Other(format!("{}: {e}", path.display())))
}

fn write_roc(path: &Path, points: &[(f64, f64)]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["fpr", "tpr"])?;
    for (fpr, tpr) in points {
        w.write_record([fpr.to_string(), tpr.to_string()])?;
    }
    w.flush()
        .map_err(|e| CliError::Other(format!("{}: {e}", path.display())))
}

pub fn train(config: &ExperimentConfig) -> CliResult<()> {
    let mut exp = prepare(config)?;
    create_dir(&config.output_dir)?;
    log::info!(
        "training {} clients on {} samples for {} rounds",
        exp.clients_data.len(),
        exp.split.train.len(),
        config.rounds
    );
    let outcome = exp.federation.run(config.rounds, config.early_stop);
    let fed = &exp.federation;
    let dir = &config.output_dir;
    write_history(&dir.join("history.csv"), &outcome.history)?;

    let final_metrics = match outcome.failure {
        Some(_) => None,
        None => Some(evaluate(
            fed.classifier(),
            &fed.server().global_params,
            &exp.split.test,
            config.threshold,
        )?),
    };
    let summary = TrainSummary {
        config,
        n_qubits: fed.classifier().arch().n_qubits(),
        n_params: fed.classifier().n_params(),
        rounds_requested: config.rounds,
        rounds_completed: outcome.history.len(),
        stopped_early: outcome.failure.is_none() && outcome.history.len() < config.rounds,
        bytes_total: fed.bytes_exchanged(),
        split: SplitSummary {
            train: exp.split.train.len(),
            val: exp.split.val.len(),
            test: exp.split.test.len(),
        },
        clients: fed
            .clients()
            .iter()
            .zip(&exp.clients_data)
            .map(|(c, counts)| ClientSummary {
                id: c.id().to_string(),
                label_counts: *counts,
            })
            .collect(),
        final_metrics: final_metrics.clone(),
        failure: outcome.failure.as_ref().map(|f| FailureSummary {
            round: f.round,
            error: f.error.to_string(),
        }),
    };
    write_json(&dir.join("summary.json"), &summary)?;

    if let Some(f) = outcome.failure {
        return Err(CliError::in_round(f.error, f.round));
    }
    Checkpoint::from_params(&fed.server().global_params).save(&dir.join("model_final.json"))?;
    let metrics = final_metrics.expect("metrics exist without a failure");
    write_roc(&dir.join("roc.csv"), &metrics.roc_points)?;
    println!(
        "rounds {} accuracy {:.4} auc {} bytes {} -> {}",
        outcome.history.len(),
        metrics.accuracy,
        metrics
            .auc
            .map(|a| format!("{a:.4}"))
            .unwrap_or_else(|| "n/a".into()),
        fed.bytes_exchanged(),
        dir.display()
    );
    Ok(())
}

pub fn eval(model: &Path, data: &Path, threshold: f64) -> CliResult<()> {
    let checkpoint: Checkpoint = parse_json(&read_text(model)?, "checkpoint")?;
    let params = checkpoint.to_params()?;
    let classifier = Classifier::new(params.arch)?;
    let dataset = load_csv(data)?;
    let (h, w) = dataset
        .dims()
        .ok_or_else(|| CliError::input(format!("{} holds no samples", data.display())))?;
    let side = params.arch.patch_side;
    if h % side != 0 || w % side != 0 || (h / side) * (w / side) != params.arch.n_patches {
        return Err(CliError::input(format!(
            "{h}x{w} images do not split into the model's {} patches of side {side}",
            params.arch.n_patches
        )));
    }
    let report = evaluate(&classifier, &params, &dataset, threshold)?;
    println!(
        "{}",
        serde_json::to_string_pretty(&report).map_err(|e| CliError::Other(e.to_string()))?
    );
    Ok(())
}

#[derive(Serialize)]
struct ManifestEntry {
    id: String,
    file: String,
    label_counts: [usize; 2],
    total: usize,
}

#[derive(Serialize)]
struct PartitionManifest {
    source: String,
    seed: u64,
    total: usize,
    clients: Vec<ManifestEntry>,
}

pub fn partition_cmd(data: &Path, spec: &Path, out: &Path, seed: u64) -> CliResult<()> {
    let spec: PartitionSpec = parse_json(&read_text(spec)?, "partition spec")?;
    let dataset = load_csv(data)?;
    let parts = partition(&dataset, &spec, seed)?;
    create_dir(out)?;
    let mut clients = Vec::new();
    for part in &parts {
        let file = format!("{}.csv", part.name);
        part.write_csv(&out.join(&file))?;
        clients.push(ManifestEntry {
            id: part.name.clone(),
            file,
            label_counts: part.label_counts(),
            total: part.len(),
        });
    }
    let manifest = PartitionManifest {
        source: data.display().to_string(),
        seed,
        total: parts.iter().map(Dataset::len).sum(),
        clients,
    };
    write_json(&out.join("partition_manifest.json"), &manifest)
}

pub fn synth(n: usize, h: usize, w: usize, noise: f64, seed: u64, out: &Path) -> CliResult<()> {
    if h < 4 || w < 4 {
        return Err(CliError::input("synthetic images must be at least 4x4"));
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(CliError::input("--noise must be a finite value >= 0"));
    }
    let d = synth_blobs(n, h, w, noise, seed)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    d.write_csv(out)?;
    Ok(())
}
