//! One function per subcommand.

use crate::report::{io_at, CliError};
use clap::Args;
use ethident_core::baselines::{
    extract_manual_features, ovr_fit, ovr_predict, read_features_csv, write_features_csv,
    LogRegConfig, Standardizer,
};
use ethident_core::graph::{build_lw_aig, ingest_records, write_records_csv, LwAig, RecordFormat};
use ethident_core::hgate::HgateModel;
use ethident_core::sampler::{
    build_dataset, build_multiclass_dataset, load_dataset, save_dataset, Indicator,
    SamplingStrategy, StrategyMeta,
};
use ethident_core::synth::{generate, SyntheticSpec};
use ethident_core::trainer::{
    cross_validate, evaluate_model, micro_f1, stratified_folds, train as train_encoder,
    TrainConfig,
};
use ethident_core::util::derive_seed;
use ndarray::Array2;
use rayon::prelude::*;
use serde::Serialize;
use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

type Result<T> = std::result::Result<T, CliError>;

fn load_train_config(seed: &Option<u64>, config: &Option<PathBuf>) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::default();
    if let Some(path) = config {
        let text = fs::read_to_string(path).map_err(io_at(path))?;
        cfg.apply_document(&text)?;
    }
    if let Some(s) = seed {
        cfg.seed = *s;
    }
    Ok(cfg)
}

fn read_labels_csv(path: &Path) -> Result<Vec<(String, String)>> {
    let file = fs::File::open(path).map_err(io_at(path))?;
    let mut rdr = csv::Reader::from_reader(file);
    let headers = rdr
        .headers()
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?
        .clone();
    if headers.len() < 2 || &headers[0] != "account" || &headers[1] != "label" {
        return Err(CliError::Usage(format!(
            "{}: expected header account,label",
            path.display()
        )));
    }
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        out.push((row[0].to_string(), row[1].to_string()));
    }
    Ok(out)
}

fn detect_format(path: &Path, explicit: &Option<String>) -> Result<RecordFormat> {
    match explicit.as_deref() {
        Some("csv") => Ok(RecordFormat::Csv),
        Some("jsonl") => Ok(RecordFormat::Jsonl),
        Some(other) => Err(CliError::Usage(format!("unknown format {other:?}"))),
        None => match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("json") => Ok(RecordFormat::Jsonl),
            _ => Ok(RecordFormat::Csv),
        },
    }
}

fn read_records(path: &Path, format: &Option<String>) -> Result<Vec<ethident_core::graph::InteractionRecord>> {
    let format = detect_format(path, format)?;
    let file = fs::File::open(path).map_err(io_at(path))?;
    Ok(ingest_records(std::io::BufReader::new(file), format)?)
}

#[derive(Serialize)]
struct FoldF1 {
    f1: f64,
}

#[derive(Serialize)]
struct Metrics<'a> {
    dataset: String,
    method: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    strategy: Option<StrategyMeta>,
    #[serde(skip_serializing_if = "Option::is_none")]
    config: Option<&'a TrainConfig>,
    folds: Vec<FoldF1>,
    mean_f1: f64,
    std_f1: f64,
}

fn write_metrics(path: &Path, metrics: &Metrics) -> Result<()> {
    let text = serde_json::to_string_pretty(metrics).expect("metrics serialize");
    fs::write(path, text).map_err(io_at(path))?;
    Ok(())
}

// ---------------------------------------------------------------- gen

#[derive(Args)]
pub struct GenArgs {
    /// Output directory for records.csv and labels.csv.
    #[arg(long)]
    out: PathBuf,
    /// Labeled accounts per class (overridden by the per-class flags).
    #[arg(long, default_value_t = 50)]
    per_class: usize,
    #[arg(long)]
    exchanges: Option<usize>,
    #[arg(long)]
    icos: Option<usize>,
    #[arg(long)]
    minings: Option<usize>,
    #[arg(long)]
    phishes: Option<usize>,
    /// Background noise accounts.
    #[arg(long, default_value_t = 1000)]
    background: usize,
    /// Contract account count (the node feature dimension).
    #[arg(long, default_value_t = 64)]
    contracts: usize,
}

pub fn gen(args: &GenArgs, seed: &Option<u64>, config: &Option<PathBuf>) -> Result<()> {
    let cfg = load_train_config(seed, config)?;
    let spec = SyntheticSpec {
        exchanges: args.exchanges.unwrap_or(args.per_class),
        icos: args.icos.unwrap_or(args.per_class),
        minings: args.minings.unwrap_or(args.per_class),
        phishes: args.phishes.unwrap_or(args.per_class),
        background: args.background,
        contracts: args.contracts,
        ..SyntheticSpec::default()
    };
    let data = generate(&spec, cfg.seed);
    fs::create_dir_all(&args.out).map_err(io_at(&args.out))?;
    let records_path = args.out.join("records.csv");
    let file = fs::File::create(&records_path).map_err(io_at(&records_path))?;
    write_records_csv(std::io::BufWriter::new(file), &data.records)?;
    let labels_path = args.out.join("labels.csv");
    let mut w = csv::Writer::from_writer(fs::File::create(&labels_path).map_err(io_at(&labels_path))?);
    w.write_record(["account", "label"])
        .map_err(|e| CliError::Usage(e.to_string()))?;
    for (account, label) in &data.labels {
        w.write_record([account, label])
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    w.flush().map_err(io_at(&labels_path))?;
    println!(
        "wrote {} records and {} labeled accounts to {}",
        data.records.len(),
        data.labels.len(),
        args.out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------- build

#[derive(Args)]
pub struct BuildArgs {
    /// Raw records (CSV or JSONL).
    #[arg(long)]
    records: PathBuf,
    /// csv or jsonl; inferred from the extension when omitted.
    #[arg(long)]
    format: Option<String>,
    /// Snapshot output path.
    #[arg(long)]
    out: PathBuf,
}

pub fn build(args: &BuildArgs) -> Result<()> {
    let records = read_records(&args.records, &args.format)?;
    let graph = build_lw_aig(&records);
    graph.save(&args.out)?;
    println!(
        "graph: {} accounts, {} contracts, {} merged edges -> {}",
        graph.eoa_count(),
        graph.ca_count(),
        graph.edge_count(),
        args.out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------- sample

#[derive(Args)]
pub struct SampleArgs {
    /// Graph snapshot from `build`.
    #[arg(long)]
    graph: PathBuf,
    /// account,label CSV.
    #[arg(long)]
    labels: PathBuf,
    /// amount, times, or avgAmount.
    #[arg(long)]
    strategy: Option<String>,
    /// Hop count.
    #[arg(long)]
    h: Option<usize>,
    /// Per-hop fan-out.
    #[arg(long)]
    k: Option<usize>,
    /// Positive class for a binary positive-versus-rest dataset; all classes
    /// are kept when omitted.
    #[arg(long)]
    positive: Option<String>,
    /// Negatives per positive in binary mode.
    #[arg(long, default_value_t = 1.0)]
    negative_ratio: f64,
    /// Output directory prefix; the strategy suffix (-A/-T/-aA) is appended.
    #[arg(long)]
    out: PathBuf,
}

pub fn sample(args: &SampleArgs, seed: &Option<u64>, config: &Option<PathBuf>) -> Result<()> {
    let cfg = load_train_config(seed, config)?;
    let strategy_name = args.strategy.clone().unwrap_or_else(|| cfg.strategy.clone());
    let indicator = Indicator::parse(&strategy_name)
        .ok_or_else(|| CliError::Usage(format!("unknown strategy {strategy_name:?}")))?;
    let strategy = SamplingStrategy::new(
        indicator,
        args.h.unwrap_or(cfg.h),
        args.k.unwrap_or(cfg.k),
    );
    let mut graph = LwAig::load(&args.graph)?;
    let labels = read_labels_csv(&args.labels)?;
    let warnings = graph.attach_labels(&labels)?;
    if !warnings.is_empty() {
        eprintln!("warning: {} label keys not found in the graph", warnings.len());
    }
    let dataset = match &args.positive {
        Some(positive) => build_dataset(&graph, &strategy, positive, args.negative_ratio, cfg.seed)?,
        None => build_multiclass_dataset(&graph, &strategy, cfg.seed)?,
    };
    let dir_name = format!(
        "{}{}",
        args.out
            .file_name()
            .map(|s| s.to_string_lossy().to_string())
            .unwrap_or_else(|| "dataset".into()),
        indicator.suffix()
    );
    let dir = args.out.with_file_name(dir_name);
    save_dataset(&dir, &dataset)?;
    println!(
        "sampled {} subgraphs ({} classes) -> {}",
        dataset.subgraphs.len(),
        dataset.meta.classes.len(),
        dir.display()
    );
    Ok(())
}

// ---------------------------------------------------------------- train

#[derive(Args)]
pub struct TrainArgs {
    /// Dataset directory from `sample`.
    #[arg(long)]
    data: PathBuf,
    /// Graph snapshot, required only by resample augmentation.
    #[arg(long)]
    graph: Option<PathBuf>,
    /// Output directory for checkpoint.hgate, history.jsonl, metrics.json.
    #[arg(long)]
    out: PathBuf,
    /// Run repeated cross-validation with this many repeats instead of a
    /// single split (metrics only, no checkpoint).
    #[arg(long)]
    cv: Option<usize>,
    /// Trade-off coefficient override.
    #[arg(long)]
    lambda: Option<f64>,
    /// Augmentation pair override, `op1,op2` or `op1&op2`.
    #[arg(long)]
    aug: Option<String>,
    /// Generic config override, repeatable: --set key=value.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

fn apply_overrides(cfg: &mut TrainConfig, args: &TrainArgs) -> Result<()> {
    for kv in &args.set {
        let (key, value) = kv
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--set expects key=value, got {kv:?}")))?;
        cfg.set(key.trim(), value.trim())?;
    }
    if let Some(lambda) = args.lambda {
        cfg.lambda = lambda;
    }
    if let Some(aug) = &args.aug {
        cfg.aug = aug.replace(',', "&");
    }
    Ok(())
}

pub fn train(args: &TrainArgs, seed: &Option<u64>, config: &Option<PathBuf>) -> Result<()> {
    let mut cfg = load_train_config(seed, config)?;
    apply_overrides(&mut cfg, args)?;
    cfg.validate()?;
    let dataset = load_dataset(&args.data)?;
    let graph = match &args.graph {
        Some(path) => Some(LwAig::load(path)?),
        None => None,
    };
    let dataset_name = args
        .data
        .file_name()
        .map(|s| s.to_string_lossy().to_string())
        .unwrap_or_default();
    fs::create_dir_all(&args.out).map_err(io_at(&args.out))?;

    if let Some(repeats) = args.cv {
        cfg.repeats = repeats;
        let report = cross_validate(&dataset, graph.as_ref(), &cfg)?;
        let metrics = Metrics {
            dataset: dataset_name,
            method: "hgate",
            strategy: Some(dataset.meta.strategy),
            config: Some(&cfg),
            folds: report.fold_f1.iter().map(|&f1| FoldF1 { f1 }).collect(),
            mean_f1: report.mean_f1,
            std_f1: report.std_f1,
        };
        write_metrics(&args.out.join("metrics.json"), &metrics)?;
        println!(
            "cross-validation mean micro-F1 {:.4} (std {:.4}) -> {}",
            report.mean_f1,
            report.std_f1,
            args.out.join("metrics.json").display()
        );
        return Ok(());
    }

    let labels = dataset.labels();
    let assignment = stratified_folds(&labels, cfg.folds, cfg.seed)?;
    let mut train_set = Vec::new();
    let mut val_set = Vec::new();
    let mut test_set = Vec::new();
    for (i, sg) in dataset.subgraphs.iter().enumerate() {
        match assignment[i] {
            0 => test_set.push(sg),
            1 => val_set.push(sg),
            _ => train_set.push(sg),
        }
    }
    let outcome = train_encoder(
        &train_set,
        &val_set,
        dataset.meta.classes.len(),
        graph.as_ref(),
        &dataset.strategy(),
        &cfg,
    )?;
    let (_, test_f1) = evaluate_model(&outcome.model, &test_set)?;

    let ck_path = args.out.join("checkpoint.hgate");
    outcome.model.save(&ck_path)?;
    let history_path = args.out.join("history.jsonl");
    let mut lines = String::new();
    for epoch in &outcome.history {
        lines.push_str(&serde_json::to_string(epoch).expect("epoch serialize"));
        lines.push('\n');
    }
    fs::write(&history_path, lines).map_err(io_at(&history_path))?;
    let metrics = Metrics {
        dataset: dataset_name,
        method: "hgate",
        strategy: Some(dataset.meta.strategy),
        config: Some(&cfg),
        folds: vec![FoldF1 { f1: test_f1 }],
        mean_f1: test_f1,
        std_f1: 0.0,
    };
    write_metrics(&args.out.join("metrics.json"), &metrics)?;
    println!(
        "best epoch {} (val micro-F1 {:.4}), test micro-F1 {:.4} -> {}",
        outcome.best_epoch,
        outcome.best_val_f1,
        test_f1,
        args.out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------- eval

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Metrics output path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn eval(args: &EvalArgs) -> Result<()> {
    let model = HgateModel::load(&args.checkpoint)?;
    let dataset = load_dataset(&args.data)?;
    let refs: Vec<&ethident_core::sampler::AccountSubgraph> = dataset.subgraphs.iter().collect();
    let (_, f1) = evaluate_model(&model, &refs)?;
    let metrics = Metrics {
        dataset: args
            .data
            .file_name()
            .map(|s| s.to_string_lossy().to_string())
            .unwrap_or_default(),
        method: "hgate",
        strategy: Some(dataset.meta.strategy),
        config: None,
        folds: vec![FoldF1 { f1 }],
        mean_f1: f1,
        std_f1: 0.0,
    };
    match &args.out {
        Some(path) => write_metrics(path, &metrics)?,
        None => println!(
            "{}",
            serde_json::to_string_pretty(&metrics).expect("metrics serialize")
        ),
    }
    Ok(())
}

// ---------------------------------------------------------------- features

#[derive(Args)]
pub struct FeaturesArgs {
    #[arg(long)]
    records: PathBuf,
    #[arg(long)]
    format: Option<String>,
    /// account,label CSV restricting which accounts to featurize.
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

pub fn features(args: &FeaturesArgs) -> Result<()> {
    let records = read_records(&args.records, &args.format)?;
    let labels = read_labels_csv(&args.labels)?;
    let mut involving: HashMap<&str, Vec<usize>> = HashMap::new();
    for (i, r) in records.iter().enumerate() {
        involving.entry(r.from.as_str()).or_default().push(i);
        if r.to != r.from {
            involving.entry(r.to.as_str()).or_default().push(i);
        }
    }
    let rows: Vec<(String, String, ethident_core::baselines::ManualFeatureVector)> = labels
        .par_iter()
        .map(|(account, label)| {
            let own: Vec<ethident_core::graph::InteractionRecord> = involving
                .get(account.as_str())
                .map(|idxs| idxs.iter().map(|&i| records[i].clone()).collect())
                .unwrap_or_default();
            let feats = extract_manual_features(account, &own);
            (account.clone(), label.clone(), feats)
        })
        .collect();
    let file = fs::File::create(&args.out).map_err(io_at(&args.out))?;
    write_features_csv(std::io::BufWriter::new(file), &rows)?;
    println!("wrote {} feature rows -> {}", rows.len(), args.out.display());
    Ok(())
}

// ---------------------------------------------------------------- baseline

#[derive(Args)]
pub struct BaselineArgs {
    /// Feature table from `features`.
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 1e-3)]
    l2: f64,
    #[arg(long, default_value_t = 0.1)]
    lr: f64,
    #[arg(long, default_value_t = 500)]
    epochs: usize,
    /// Folds and repeats default to the training config (3 and 10).
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    repeats: Option<usize>,
}

pub fn baseline(args: &BaselineArgs, seed: &Option<u64>, config: &Option<PathBuf>) -> Result<()> {
    let cfg = load_train_config(seed, config)?;
    let folds = args.folds.unwrap_or(cfg.folds);
    let repeats = args.repeats.unwrap_or(cfg.repeats);
    let file = fs::File::open(&args.features).map_err(io_at(&args.features))?;
    let rows = read_features_csv(std::io::BufReader::new(file))?;
    if rows.is_empty() {
        return Err(CliError::Usage("feature table is empty".into()));
    }
    let mut classes: Vec<String> = rows.iter().map(|(_, l, _)| l.clone()).collect();
    classes.sort();
    classes.dedup();
    let labels: Vec<usize> = rows
        .iter()
        .map(|(_, l, _)| classes.iter().position(|c| c == l).unwrap())
        .collect();
    let dim = rows[0].2.len();
    let mut x = Array2::zeros((rows.len(), dim));
    for (r, (_, _, feats)) in rows.iter().enumerate() {
        for (c, &v) in feats.iter().enumerate() {
            x[[r, c]] = v;
        }
    }
    let lr_cfg = LogRegConfig {
        l2: args.l2,
        lr: args.lr,
        epochs: args.epochs,
    };
    let mut fold_scores = Vec::new();
    let mut repeat_scores = Vec::new();
    for repeat in 0..repeats {
        let assignment = stratified_folds(&labels, folds, derive_seed(cfg.seed, 2000 + repeat as u64))?;
        let mut pooled_preds = Vec::new();
        let mut pooled_labels = Vec::new();
        for fold in 0..folds {
            let train_rows: Vec<usize> = (0..rows.len()).filter(|&i| assignment[i] != fold).collect();
            let test_rows: Vec<usize> = (0..rows.len()).filter(|&i| assignment[i] == fold).collect();
            let take = |idxs: &[usize]| {
                let mut m = Array2::zeros((idxs.len(), dim));
                for (r, &i) in idxs.iter().enumerate() {
                    m.row_mut(r).assign(&x.row(i));
                }
                m
            };
            let x_train = take(&train_rows);
            let x_test = take(&test_rows);
            let standardizer = Standardizer::fit(&x_train);
            let x_train = standardizer.apply(&x_train);
            let x_test = standardizer.apply(&x_test);
            let y_train: Vec<usize> = train_rows.iter().map(|&i| labels[i]).collect();
            let y_test: Vec<usize> = test_rows.iter().map(|&i| labels[i]).collect();
            let model = ovr_fit(&x_train, &y_train, classes.len(), &lr_cfg)?;
            let preds = ovr_predict(&model, &x_test);
            fold_scores.push(micro_f1(&preds, &y_test));
            pooled_preds.extend(preds);
            pooled_labels.extend(y_test);
        }
        repeat_scores.push(micro_f1(&pooled_preds, &pooled_labels));
    }
    let mean = repeat_scores.iter().sum::<f64>() / repeat_scores.len() as f64;
    let var = repeat_scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>()
        / repeat_scores.len() as f64;
    let metrics = Metrics {
        dataset: args
            .features
            .file_name()
            .map(|s| s.to_string_lossy().to_string())
            .unwrap_or_default(),
        method: "manual_lr",
        strategy: None,
        config: None,
        folds: fold_scores.iter().map(|&f1| FoldF1 { f1 }).collect(),
        mean_f1: mean,
        std_f1: var.sqrt(),
    };
    match &args.out {
        Some(path) => write_metrics(path, &metrics)?,
        None => println!(
            "{}",
            serde_json::to_string_pretty(&metrics).expect("metrics serialize")
        ),
    }
    Ok(())
}

// ---------------------------------------------------------------- embed

#[derive(Args)]
pub struct EmbedArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Embedding CSV: account followed by the embedding coordinates.
    #[arg(long)]
    out: PathBuf,
}

pub fn embed(args: &EmbedArgs) -> Result<()> {
    let model = HgateModel::load(&args.checkpoint)?;
    let dataset = load_dataset(&args.data)?;
    let file = fs::File::create(&args.out).map_err(io_at(&args.out))?;
    let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
    let mut header = vec!["account".to_string()];
    header.extend((0..model.config.hidden_dim).map(|i| format!("e{i}")));
    w.write_record(&header)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    for chunk in dataset.subgraphs.chunks(256) {
        let refs: Vec<&ethident_core::sampler::AccountSubgraph> = chunk.iter().collect();
        let g = model.embed_eval(&refs)?;
        for (row, sg) in chunk.iter().enumerate() {
            let mut rec = vec![sg.target_id.clone()];
            rec.extend((0..g.ncols()).map(|c| format!("{}", g[[row, c]])));
            w.write_record(&rec)
                .map_err(|e| CliError::Usage(e.to_string()))?;
        }
    }
    w.flush().map_err(io_at(&args.out))?;
    println!(
        "wrote {} embeddings -> {}",
        dataset.subgraphs.len(),
        args.out.display()
    );
    Ok(())
}
