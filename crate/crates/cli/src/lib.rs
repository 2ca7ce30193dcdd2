//! `scrop` subcommands. Each returns a JSON summary that `main` prints as
//! one line on stdout; failures become one JSON error line on stderr.

mod live;

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use scrop_core::classifier::dataset::{write_synthetic_dir, SYNTHETIC_LABELS};
use scrop_core::classifier::gradcheck::one_of_each;
use scrop_core::classifier::{
    evaluate, grad_check, train, weights, ClassifierError, Dataset, ModelSpec, TrainConfig, INPUT_SIZE,
};
use scrop_core::cloud::ChannelConfig;
use scrop_core::controller::events_channel;
use scrop_core::scenario::{
    compare_automation, export_comparison, export_report, run_scenario_with, ExportFormat, ScenarioConfig,
    ScenarioError,
};
use scrop_core::sensors::LeafImage;
use scrop_server::{ServerConfig, ServerError};

pub use live::LiveNodeOptions;

#[derive(Debug, Parser)]
#[command(
    name = "scrop",
    version,
    about = "Solar-powered crop node simulator, telemetry service and leaf classifier"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one scenario and export its traces.
    Sim(SimArgs),
    /// Run a scenario with and without automation and export both arms.
    Compare(CompareArgs),
    /// Start the HTTP telemetry service.
    Serve(ServeArgs),
    /// Train the leaf classifier and report held-out accuracy.
    Train(TrainArgs),
    /// Classify one leaf image.
    Predict(PredictArgs),
    /// Compare analytic and finite-difference gradients on a small model.
    Gradcheck(GradcheckArgs),
    /// Write a synthetic labelled leaf set as class folders of PPM files.
    GenLeaves(GenLeavesArgs),
}

#[derive(Debug, Args)]
pub struct SimArgs {
    /// Scenario JSON file; the built-in default day when omitted.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    /// Overrides the scenario seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "csv")]
    pub format: ExportFormat,
    /// Classifier weights for scenarios with a leaf capture schedule.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Simulated seconds per wall-clock second; as fast as possible when omitted.
    #[arg(long)]
    pub speed: Option<f64>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "csv")]
    pub format: ExportFormat,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    /// Directory for the append-only logs; in memory when omitted.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Delay feed visibility of each write by the modelled upload latency.
    #[arg(long)]
    pub simulated_latency: bool,
    /// Pre-create a channel, `id:write_key`. Repeatable.
    #[arg(long = "channel", value_name = "ID:KEY")]
    pub channels: Vec<String>,
    /// Run a simulated field node against the service in real time. Repeatable.
    #[arg(long = "node", value_name = "ID")]
    pub nodes: Vec<String>,
    /// Crop whose thresholds are active at start-up.
    #[arg(long)]
    pub crop: Option<String>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Class-per-folder image directory.
    #[arg(long, conflicts_with = "synthetic")]
    pub data: Option<PathBuf>,
    /// Generate this many synthetic leaves instead of reading a directory.
    #[arg(long)]
    pub synthetic: Option<usize>,
    /// Seed for synthetic leaves.
    #[arg(long, default_value_t = 42)]
    pub data_seed: u64,
    #[arg(long, default_value_t = TrainConfig::default().epochs)]
    pub epochs: usize,
    #[arg(long, default_value_t = TrainConfig::default().learning_rate)]
    pub lr: f64,
    /// Seeds the per-epoch shuffle.
    #[arg(long, default_value_t = TrainConfig::default().seed)]
    pub seed: u64,
    /// Seeds the weight initialisation.
    #[arg(long, default_value_t = 7)]
    pub model_seed: u64,
    /// Training share of the stratified split, in percent.
    #[arg(long, default_value_t = 80)]
    pub train_percent: u8,
    #[arg(long, default_value_t = 42)]
    pub split_seed: u64,
    #[arg(long, default_value_t = INPUT_SIZE)]
    pub input_size: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub weights: PathBuf,
    /// PPM or PGM image.
    #[arg(long)]
    pub image: PathBuf,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-5)]
    pub eps: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
}

#[derive(Debug, Args)]
pub struct GenLeavesArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 400)]
    pub count: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Server(#[from] ServerError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{path}: {message}")]
    Input { path: PathBuf, message: String },
    #[error("{0}")]
    CheckFailed(String),
}

fn at_path<E: std::fmt::Display>(path: &Path) -> impl FnOnce(E) -> CliError + '_ {
    move |e| CliError::Input {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Scenario(ScenarioError::Io(_))
            | CliError::Classifier(ClassifierError::Io(_))
            | CliError::Io(_)
            | CliError::Input { .. } => "io",
            CliError::Scenario(_) => "scenario",
            CliError::Classifier(_) => "classifier",
            CliError::Server(_) => "server",
            CliError::CheckFailed(_) => "check_failed",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }

    /// The single machine-readable line printed on failure.
    pub fn to_json_line(&self) -> String {
        json!({"status": "error", "kind": self.kind(), "error": self.to_string()}).to_string()
    }
}

pub fn run(cli: Cli) -> Result<Value, CliError> {
    match cli.command {
        Command::Sim(a) => sim(a),
        Command::Compare(a) => compare(a),
        Command::Serve(a) => serve(a),
        Command::Train(a) => train_cmd(a),
        Command::Predict(a) => predict(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::GenLeaves(a) => gen_leaves(a),
    }
}

fn load_scenario(path: Option<&Path>, seed: Option<u64>) -> Result<ScenarioConfig, CliError> {
    let mut cfg = match path {
        Some(p) => ScenarioConfig::load(p)?,
        None => ScenarioConfig::default(),
    };
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn sim(a: SimArgs) -> Result<Value, CliError> {
    let mut cfg = load_scenario(a.scenario.as_deref(), a.seed)?;
    if a.speed.is_some() {
        cfg.speed = a.speed;
    }
    if a.weights.is_some() && cfg.leaf_capture.is_none() {
        return Err(CliError::Usage(
            "--weights needs a scenario with a leaf_capture schedule".into(),
        ));
    }
    let model = match &a.weights {
        Some(p) => Some(weights::load(p).map_err(at_path(p))?),
        None => None,
    };
    let report = run_scenario_with(&cfg, model.as_ref())?;
    export_report(&report, a.format, &a.out)?;
    let events: usize = report.nodes.iter().map(|n| n.events.len()).sum();
    Ok(json!({
        "status": "ok",
        "command": "sim",
        "scenario": report.scenario,
        "seed": report.seed,
        "ticks": report.ticks,
        "uptime": report.uptime,
        "events": events,
        "max_visibility_latency_ms": report.max_visibility_latency_ms,
        "predictions": report.predictions.len(),
        "out": a.out,
    }))
}

fn compare(a: CompareArgs) -> Result<Value, CliError> {
    let cfg = load_scenario(a.scenario.as_deref(), a.seed)?;
    let cmp = compare_automation(&cfg)?;
    export_comparison(&cmp, a.format, &a.out)?;
    Ok(json!({
        "status": "ok",
        "command": "compare",
        "scenario": cmp.automated.scenario,
        "threshold_sm": cmp.automated.threshold.threshold_sm,
        "release_sm": cmp.automated.threshold.release_sm,
        "automated": cmp.automated_summary,
        "baseline": cmp.baseline_summary,
        "out": a.out,
    }))
}

fn parse_channel(arg: &str) -> Result<ChannelConfig, CliError> {
    match arg.split_once(':') {
        Some((id, key)) if !id.is_empty() && !key.is_empty() => Ok(ChannelConfig::new(id, key)),
        _ => Err(CliError::Usage(format!("channel {arg:?} must look like id:write_key"))),
    }
}

fn serve(a: ServeArgs) -> Result<Value, CliError> {
    let ip = a
        .host
        .parse()
        .map_err(|_| CliError::Usage(format!("invalid host {:?}", a.host)))?;
    let mut channels = a
        .channels
        .iter()
        .map(|c| parse_channel(c))
        .collect::<Result<Vec<_>, _>>()?;
    for node in &a.nodes {
        let key = live::node_key(node);
        channels.push(ChannelConfig::new(node, &key));
        channels.push(ChannelConfig::new(events_channel(node), &key));
    }
    let config = ServerConfig {
        bind: SocketAddr::new(ip, a.port),
        data_dir: a.data.clone(),
        simulated_latency: a.simulated_latency,
        channels,
    };
    let store = Arc::new(scrop_server::open_store(&config)?);
    if let Some(crop) = &a.crop {
        store
            .select_crop(crop)
            .map_err(|e| CliError::Usage(format!("--crop: {e}")))?;
    }
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(config.bind).await?;
        let url = format!("http://{}", listener.local_addr()?);
        println!("{}", json!({"status": "listening", "url": url, "nodes": a.nodes}));
        let nodes = live::spawn_nodes(&url, &a.nodes, LiveNodeOptions::default());
        let result = scrop_server::serve(store, listener, shutdown_signal()).await;
        nodes.stop();
        result
    })?;
    Ok(json!({"status": "ok", "command": "serve"}))
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    {
        let mut term = match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(s) => s,
            Err(_) => return ctrl_c.await,
        };
        tokio::select! {
            _ = ctrl_c => {},
            _ = term.recv() => {},
        }
    }
    #[cfg(not(unix))]
    ctrl_c.await;
}

fn train_cmd(a: TrainArgs) -> Result<Value, CliError> {
    let data = match (&a.data, a.synthetic) {
        (Some(dir), None) => Dataset::load_dir(dir, a.input_size).map_err(at_path(dir))?,
        (None, Some(n)) => Dataset::synthetic(n, a.data_seed, a.input_size)?,
        _ => {
            return Err(CliError::Usage(
                "give either --data <dir> or --synthetic <count>".into(),
            ))
        }
    };
    let (train_set, test_set) = data.split(a.train_percent, a.split_seed)?;
    let model = ModelSpec::toy(data.labels.clone(), a.input_size, a.model_seed)?;
    let cfg = TrainConfig {
        epochs: a.epochs,
        learning_rate: a.lr,
        seed: a.seed,
    };
    let outcome = train(&model, &train_set, &cfg)?;
    let (cm, accuracy) = if test_set.is_empty() {
        (None, None)
    } else {
        let (cm, acc) = evaluate(&outcome.model, &test_set)?;
        (Some(cm), Some(acc))
    };
    weights::save(&outcome.model, &a.out)?;
    Ok(json!({
        "status": "ok",
        "command": "train",
        "labels": data.labels,
        "train_samples": train_set.len(),
        "test_samples": test_set.len(),
        "epochs": cfg.epochs,
        "initial_loss": outcome.initial_loss(),
        "final_loss": outcome.final_loss(),
        "accuracy": accuracy,
        "confusion": cm.map(|c| c.counts),
        "params": outcome.model.network().param_count(),
        "out": a.out,
    }))
}

fn predict(a: PredictArgs) -> Result<Value, CliError> {
    let model = weights::load(&a.weights).map_err(at_path(&a.weights))?;
    let bytes = std::fs::read(&a.image).map_err(at_path(&a.image))?;
    let image = LeafImage::from_pnm(&bytes).map_err(at_path(&a.image))?;
    let result = model.classify(&image)?;
    Ok(json!({
        "status": "ok",
        "command": "predict",
        "label": result.label,
        "confidence": result.confidence,
        "probabilities": model
            .labels()
            .iter()
            .zip(&result.probabilities)
            .map(|(l, p)| (l.clone(), json!(p)))
            .collect::<serde_json::Map<_, _>>(),
        "lesion_box": result.lesion_box,
    }))
}

fn gradcheck(a: GradcheckArgs) -> Result<Value, CliError> {
    let (net, input, target) = one_of_each(a.seed);
    let report = grad_check(&net, &input, target, a.eps)?;
    let pass = report.max_relative_error <= a.tolerance;
    let summary = json!({
        "status": if pass { "ok" } else { "error" },
        "command": "gradcheck",
        "params": report.param_count,
        "max_relative_error": report.max_relative_error,
        "tolerance": a.tolerance,
    });
    if pass {
        Ok(summary)
    } else {
        Err(CliError::CheckFailed(format!(
            "max relative gradient error {:e} exceeds {:e}",
            report.max_relative_error, a.tolerance
        )))
    }
}

fn gen_leaves(a: GenLeavesArgs) -> Result<Value, CliError> {
    write_synthetic_dir(&a.out, a.count, a.seed)?;
    Ok(json!({
        "status": "ok",
        "command": "gen-leaves",
        "count": a.count,
        "labels": SYNTHETIC_LABELS,
        "out": a.out,
    }))
}
