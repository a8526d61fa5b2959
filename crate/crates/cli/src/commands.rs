use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use serde::Serialize;
use spc_core::consensus::{cluster_size_report, evaluate};
use spc_core::data::{load_idx, load_idx_unlabelled, make_blobs};
use spc_core::io::{flat_json, format_float, metrics_entries, write_consensus_csv, write_history_csv, FlatValue};
use spc_core::spc::spc_train;
use spc_core::theory::{entropy_table, run_all, ClaimStatus};
use spc_core::{Dataset, Labelling};

use crate::config::{DatasetKind, FileConfig};
use crate::staging::Staging;
use crate::Failure;

pub struct RunArgs {
    pub config: Option<PathBuf>,
    pub out: PathBuf,
    pub dataset: Option<DatasetKind>,
    pub images: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub seed: Option<u64>,
}

#[derive(Debug, Serialize)]
struct DatasetDescriptor {
    source: DatasetKind,
    images: Option<PathBuf>,
    labels: Option<PathBuf>,
    n_points: usize,
    dim: usize,
    n_clusters: usize,
    labelled: bool,
    raw_range: (f64, f64),
    normalized_range: (f64, f64),
}

#[derive(Debug, Serialize)]
struct Seeds {
    master_seed: u64,
    blobs_seed: Option<u64>,
}

#[derive(Debug, Serialize)]
struct Timings {
    load_seconds: f64,
    train_seconds: f64,
    write_seconds: f64,
}

/// Written last; lists every other file in the run directory.
#[derive(Debug, Serialize)]
struct RunManifest {
    version: &'static str,
    config: FileConfig,
    dataset: DatasetDescriptor,
    seeds: Seeds,
    iterations: usize,
    n_agreed: usize,
    artifacts: Vec<String>,
    timings: Timings,
}

fn io_failure(what: &str) -> impl Fn(std::io::Error) -> Failure + '_ {
    move |e| Failure::data(format!("writing {what}: {e}"))
}

fn load_dataset(cfg: &FileConfig, kind: DatasetKind) -> Result<Dataset, Failure> {
    match kind {
        DatasetKind::Blobs => make_blobs(&cfg.blobs.spec()).map_err(|e| Failure::config(e.to_string())),
        DatasetKind::Idx => {
            let images = cfg
                .idx
                .images
                .as_deref()
                .ok_or_else(|| Failure::config("idx dataset needs an image file (--images or [idx] images)"))?;
            let data = match (&cfg.idx.labels, cfg.idx.n_clusters) {
                (Some(labels), _) => load_idx(images, Some(labels)),
                (None, Some(c)) => load_idx_unlabelled(images, c),
                (None, None) => return Err(Failure::config("unlabelled idx dataset needs [idx] n_clusters")),
            }
            .map_err(|e| Failure::data(e.to_string()))?;
            match cfg.idx.limit {
                Some(n) => data.take(n).map_err(|e| Failure::config(e.to_string())),
                None => Ok(data),
            }
        }
    }
}

pub fn run(args: RunArgs) -> Result<u8, Failure> {
    let mut cfg = FileConfig::load(args.config.as_deref()).map_err(Failure::config)?;
    let kind = args.dataset.or(cfg.dataset).unwrap_or(DatasetKind::Blobs);
    cfg.dataset = Some(kind);
    if args.images.is_some() {
        cfg.idx.images = args.images;
    }
    if args.labels.is_some() {
        cfg.idx.labels = args.labels;
    }
    if let Some(seed) = args.seed {
        cfg.spc.master_seed = seed;
    }
    cfg.spc.validate().map_err(|e| Failure::config(e.to_string()))?;
    let snapshot = cfg.to_toml().map_err(Failure::config)?;
    let staging = Staging::new(&args.out).map_err(Failure::config)?;

    let t_load = Instant::now();
    let raw = load_dataset(&cfg, kind)?;
    let dataset = raw.normalize().map_err(|e| Failure::data(e.to_string()))?;
    let load_seconds = t_load.elapsed().as_secs_f64();
    info!("loaded {} points of dimension {}", dataset.len(), dataset.dim());

    let t_train = Instant::now();
    let outcome = spc_train(&dataset, &cfg.spc).map_err(Failure::from_core)?;
    let train_seconds = t_train.elapsed().as_secs_f64();

    let t_write = Instant::now();
    let mut artifacts = Vec::new();
    let mut put = |name: String, bytes: Vec<u8>| -> Result<(), Failure> {
        staging.write(&name, bytes).map_err(io_failure(&name))?;
        artifacts.push(name);
        Ok(())
    };
    put("config.toml".into(), snapshot.into_bytes())?;

    let mut buf = Vec::new();
    write_history_csv(&outcome.history, &mut buf).map_err(Failure::from_core)?;
    put("history.csv".into(), buf)?;

    let mut buf = Vec::new();
    outcome.final_labels.write_csv_to(&mut buf).map_err(Failure::from_core)?;
    put("labels.csv".into(), buf)?;

    let mut buf = Vec::new();
    write_consensus_csv(&outcome.consensus, &mut buf).map_err(Failure::from_core)?;
    put("consensus.csv".into(), buf)?;

    let mut entries = match dataset.labels() {
        Some(truth) => {
            let truth = Labelling::new(truth.to_vec(), dataset.n_clusters()).map_err(Failure::from_core)?;
            let mut buf = Vec::new();
            truth.write_csv_to(&mut buf).map_err(Failure::from_core)?;
            put("truth.csv".into(), buf)?;
            metrics_entries(&evaluate(&outcome.final_labels, &truth).map_err(Failure::from_core)?)
        }
        None => cluster_size_report(&outcome.final_labels)
            .into_iter()
            .map(|(c, n)| (format!("cluster_size_{c}"), FlatValue::Int(n as u64)))
            .collect::<BTreeMap<_, _>>(),
    };
    entries.insert("iterations".into(), FlatValue::Int(outcome.history.len() as u64));
    entries.insert("n_agreed".into(), FlatValue::Int(outcome.consensus.n_agreed as u64));
    entries.insert("n_points".into(), FlatValue::Int(dataset.len() as u64));
    put("metrics.json".into(), flat_json(&entries).map_err(Failure::from_core)?.into_bytes())?;

    for (k, member) in outcome.members.iter().enumerate() {
        let name = format!("checkpoints/member_{k}.json");
        let path = staging.path(&name);
        std::fs::create_dir_all(path.parent().expect("nested path")).map_err(io_failure(&name))?;
        member.save_checkpoint(&path).map_err(Failure::from_core)?;
        artifacts.push(name);
    }
    for (k, model) in outcome.cluster_models.iter().enumerate() {
        if let Some(model) = model {
            let name = format!("cluster_models/member_{k}.json");
            staging
                .write(&name, serde_json::to_vec(model).map_err(|e| Failure::data(e.to_string()))?)
                .map_err(io_failure(&name))?;
            artifacts.push(name);
        }
    }

    let manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION"),
        dataset: DatasetDescriptor {
            source: kind,
            images: cfg.idx.images.clone().filter(|_| kind == DatasetKind::Idx),
            labels: cfg.idx.labels.clone().filter(|_| kind == DatasetKind::Idx),
            n_points: dataset.len(),
            dim: dataset.dim(),
            n_clusters: dataset.n_clusters(),
            labelled: dataset.labels().is_some(),
            raw_range: raw.value_range(),
            normalized_range: dataset.value_range(),
        },
        seeds: Seeds {
            master_seed: cfg.spc.master_seed,
            blobs_seed: (kind == DatasetKind::Blobs).then_some(cfg.blobs.seed),
        },
        iterations: outcome.history.len(),
        n_agreed: outcome.consensus.n_agreed,
        config: cfg,
        artifacts: artifacts.clone(),
        timings: Timings {
            load_seconds,
            train_seconds,
            write_seconds: t_write.elapsed().as_secs_f64(),
        },
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Failure::data(e.to_string()))?;
    staging.write("manifest.json", text).map_err(io_failure("manifest.json"))?;
    artifacts.push("manifest.json".into());

    let dir = staging.finalize(&artifacts).map_err(Failure::data)?;
    println!("{}", dir.display());
    Ok(0)
}

pub fn eval(predicted: &Path, truth: &Path) -> Result<u8, Failure> {
    let read = |p: &Path| Labelling::read_csv(p).map_err(|e| Failure::data(format!("{}: {e}", p.display())));
    let (p, t) = (read(predicted)?, read(truth)?);
    if p.len() != t.len() {
        return Err(Failure::data(format!("{} labels versus {} ground-truth labels", p.len(), t.len())));
    }
    let metrics = evaluate(&p, &t).map_err(|e| Failure::data(e.to_string()))?;
    print!("{}", flat_json(&metrics_entries(&metrics)).map_err(Failure::from_core)?);
    Ok(0)
}

pub fn verify_theory(config: Option<&Path>, out: &Path, seed: Option<u64>) -> Result<u8, Failure> {
    let mut cfg = FileConfig::load(config).map_err(Failure::config)?.theory;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    cfg.validate().map_err(|e| Failure::config(e.to_string()))?;
    let staging = Staging::new(out).map_err(Failure::config)?;
    let report = run_all(&cfg).map_err(Failure::from_core)?;

    let json = serde_json::to_string_pretty(&report).map_err(|e| Failure::data(e.to_string()))?;
    staging.write("theory_report.json", json).map_err(io_failure("theory_report.json"))?;
    let mut csv = String::from("n_clusters,t,entropy\n");
    for (c, t, h) in entropy_table(cfg.entropy_max_clusters, cfg.entropy_grid_points).map_err(Failure::from_core)? {
        csv.push_str(&format!("{c},{},{}\n", format_float(t), format_float(h)));
    }
    staging.write("entropy_curve.csv", csv).map_err(io_failure("entropy_curve.csv"))?;
    staging
        .finalize(&["theory_report.json".into(), "entropy_curve.csv".into()])
        .map_err(Failure::data)?;

    for claim in &report.claims {
        let tag = match claim.status {
            ClaimStatus::Pass => "PASS",
            ClaimStatus::Fail => "FAIL",
            ClaimStatus::NotApplicable => "N/A ",
        };
        println!("{tag} {}: {}", claim.name, claim.detail);
    }
    Ok(if report.all_pass() { 0 } else { 4 })
}
