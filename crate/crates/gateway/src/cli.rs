//! Command-line entry points.

use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use pricenego::config::{ModelConfig, TrainConfig};
use pricenego::corpus::{
    corpus_vocabulary, load_catalog, load_dialogues, load_embeddings, load_scenarios, parse_dialogues, derive_labels,
    write_dialogues, CatalogItem, Dialogue, Role, Scenario,
};
use pricenego::eval::MetricReport;
use pricenego::generator::DecodeMode;
use pricenego::learn::supervised::{
    ove_examples, policy_examples, policy_weights, prepare_all, train_language, train_ove, train_policy,
};
use pricenego::learn::{train_rl, MetricsLog};
use pricenego::model::Negotiator;
use pricenego::session::{selfplay, Participant, PolicyMode, SelfPlayConfig, DEFAULT_MAX_TURNS};
use pricenego::valuation::{self, Catalog, ItemView};

use crate::error::{GatewayError, Result};
use crate::service::{Service, ServiceConfig};
use crate::store::{read_log, LogRecord, SessionLog};

pub const BIND_ENV: &str = "PRICENEGO_BIND";
pub const CHECKPOINT_ENV: &str = "PRICENEGO_CHECKPOINT";

#[derive(Debug, Parser)]
#[command(name = "pricenego", version, about = "Train, evaluate and serve the price negotiation agent")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a model from the corpus and train the value estimator.
    TrainOve(TrainOve),
    /// Train the language model and the policy heads on human dialogues.
    TrainSl(TrainSl),
    /// Fine-tune the policy heads by self-play.
    TrainRl(TrainRl),
    /// Let a checkpoint negotiate with itself.
    Selfplay(SelfPlay),
    /// Score generated dialogues against human ones.
    Eval(Eval),
    /// Estimate the agreement price of one item.
    Estimate(Estimate),
    /// Run the HTTP and websocket service.
    Serve(Serve),
    /// Negotiate with the agent in the terminal.
    Chat(Chat),
}

#[derive(Debug, Args)]
pub struct Data {
    #[arg(long)]
    pub scenarios: PathBuf,
    /// Items used for neighbor retrieval; defaults to the scenarios.
    #[arg(long)]
    pub catalog: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct Training {
    /// JSON with optional `model` and `train` sections.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Per-epoch CSV of losses and learning rates.
    #[arg(long)]
    pub metrics: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainOve {
    #[command(flatten)]
    pub data: Data,
    #[arg(long)]
    pub dialogues: PathBuf,
    /// Pretrained word vectors, one `token v1 v2 ...` per line.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[command(flatten)]
    pub training: Training,
}

#[derive(Debug, Args)]
pub struct TrainSl {
    #[command(flatten)]
    pub data: Data,
    #[arg(long)]
    pub dialogues: PathBuf,
    #[arg(long, env = CHECKPOINT_ENV)]
    pub ckpt: PathBuf,
    #[command(flatten)]
    pub training: Training,
}

#[derive(Debug, Args)]
pub struct TrainRl {
    #[command(flatten)]
    pub data: Data,
    #[arg(long, env = CHECKPOINT_ENV)]
    pub ckpt: PathBuf,
    #[command(flatten)]
    pub training: Training,
}

#[derive(Debug, Args)]
pub struct SelfPlay {
    #[command(flatten)]
    pub data: Data,
    #[arg(long, env = CHECKPOINT_ENV)]
    pub ckpt: PathBuf,
    /// Number of dialogues; scenarios are used in turn.
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Sample actions and ratios instead of taking the most likely.
    #[arg(long)]
    pub sample: bool,
    #[arg(long, default_value_t = DEFAULT_MAX_TURNS)]
    pub max_turns: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct Eval {
    #[arg(long)]
    pub gen: PathBuf,
    #[arg(long = "ref")]
    pub reference: PathBuf,
    #[arg(long)]
    pub scenarios: PathBuf,
    #[arg(long, default_value = "report.json")]
    pub out: PathBuf,
    /// Row label in the printed table.
    #[arg(long, default_value = "model")]
    pub label: String,
}

#[derive(Debug, Args)]
pub struct Estimate {
    /// One catalog item as JSON.
    #[arg(long)]
    pub item: PathBuf,
    #[arg(long)]
    pub catalog: PathBuf,
    #[arg(long, env = CHECKPOINT_ENV)]
    pub ckpt: PathBuf,
}

#[derive(Debug, Args)]
pub struct Serving {
    #[command(flatten)]
    pub data: Data,
    #[arg(long, env = CHECKPOINT_ENV)]
    pub ckpt: PathBuf,
    #[arg(long, default_value_t = DEFAULT_MAX_TURNS)]
    pub max_turns: usize,
    /// Seconds of silence before a session is ended as a quit.
    #[arg(long, default_value_t = 300)]
    pub idle_timeout: u64,
}

#[derive(Debug, Args)]
pub struct Serve {
    #[command(flatten)]
    pub serving: Serving,
    #[arg(long, env = BIND_ENV, default_value = "127.0.0.1:8080")]
    pub bind: SocketAddr,
    #[arg(long, default_value = "sessions.jsonl")]
    pub log: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum RoleArg {
    Buyer,
    Seller,
}

impl From<RoleArg> for Role {
    fn from(r: RoleArg) -> Self {
        match r {
            RoleArg::Buyer => Role::Buyer,
            RoleArg::Seller => Role::Seller,
        }
    }
}

#[derive(Debug, Args)]
pub struct Chat {
    #[command(flatten)]
    pub serving: Serving,
    /// Scenario to negotiate over; defaults to the first.
    #[arg(long)]
    pub scenario: Option<String>,
    #[arg(long, value_enum, default_value_t = RoleArg::Buyer)]
    pub role: RoleArg,
    #[arg(long, value_enum, default_value_t = RoleArg::Buyer)]
    pub first: RoleArg,
    /// Append the session to this log.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

/// Contents of `--config`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let config: RunConfig = match path {
            Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?)?,
            None => RunConfig::default(),
        };
        config.train.validate()?;
        Ok(config)
    }
}

fn catalog_items(data: &Data, scenarios: &[Scenario]) -> Result<Vec<CatalogItem>> {
    match &data.catalog {
        Some(p) => Ok(load_catalog(p)?),
        None => Ok(scenarios.iter().map(Scenario::as_item).collect()),
    }
}

fn load_model(path: &Path) -> Result<Negotiator> {
    if !path.exists() {
        return Err(GatewayError::Usage(format!("checkpoint {} not found", path.display())));
    }
    Ok(Negotiator::load(path)?)
}

fn require_stage(model: &Negotiator, stage: &str, path: &Path, hint: &str) -> Result<()> {
    if model.has_stage(stage) {
        Ok(())
    } else {
        Err(GatewayError::Usage(format!("{} has no {stage} training; run {hint} first", path.display())))
    }
}

fn metrics_log(path: Option<&Path>) -> Result<MetricsLog> {
    Ok(match path {
        Some(p) => MetricsLog::create(p)?,
        None => MetricsLog::in_memory(),
    })
}

fn last(values: &[f64]) -> String {
    values.last().map_or_else(|| "-".into(), |v| format!("{v:.4}"))
}

/// Runs one parsed command, writing human-readable output to `out`.
pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::TrainOve(a) => train_ove_cmd(a, out),
        Command::TrainSl(a) => train_sl_cmd(a, out),
        Command::TrainRl(a) => train_rl_cmd(a, out),
        Command::Selfplay(a) => selfplay_cmd(a, out),
        Command::Eval(a) => eval_cmd(a, out),
        Command::Estimate(a) => estimate_cmd(a, out),
        Command::Serve(a) => serve_cmd(a, out),
        Command::Chat(a) => chat_cmd(a, out),
    }
}

fn train_ove_cmd(a: TrainOve, out: &mut dyn Write) -> Result<()> {
    let config = RunConfig::load(a.training.config.as_deref())?;
    let scenarios = load_scenarios(&a.data.scenarios)?;
    let dialogues = load_dialogues(&a.dialogues, &scenarios)?;
    let items = catalog_items(&a.data, &scenarios)?;
    let Some(first) = scenarios.first() else {
        return Err(GatewayError::Usage("no scenarios".into()));
    };
    let model_config = ModelConfig {
        feature_dim: first.image_features.len(),
        ..config.model.clone()
    };
    let listed: Vec<CatalogItem> = items.iter().cloned().chain(scenarios.iter().map(Scenario::as_item)).collect();
    let vocab = corpus_vocabulary(&dialogues, &listed, 1);
    let mut model = Negotiator::new(model_config, vocab);
    if let Some(p) = &a.embeddings {
        let rows = load_embeddings(p, &model.vocab, model.config.dim)?;
        model.load_word_vectors(&rows)?;
    }
    let catalog = Catalog::new(&items, &model.vocab);
    let mut log = metrics_log(a.training.metrics.as_deref())?;
    let examples = ove_examples(&model, &scenarios, &dialogues);
    let losses = train_ove(&mut model, &catalog, &examples, &config.train, &mut log)?;
    model.save(&a.training.out)?;
    writeln!(
        out,
        "trained value estimator on {} items ({} epochs, final L1 {}); vocabulary {}; wrote {}",
        examples.len(),
        losses.len(),
        last(&losses),
        model.vocab.len(),
        a.training.out.display()
    )?;
    Ok(())
}

fn train_sl_cmd(a: TrainSl, out: &mut dyn Write) -> Result<()> {
    let config = RunConfig::load(a.training.config.as_deref())?;
    let mut model = load_model(&a.ckpt)?;
    require_stage(&model, "ove", &a.ckpt, "train-ove")?;
    let scenarios = load_scenarios(&a.data.scenarios)?;
    let dialogues = load_dialogues(&a.dialogues, &scenarios)?;
    let catalog = Catalog::new(&catalog_items(&a.data, &scenarios)?, &model.vocab);
    let mut log = metrics_log(a.training.metrics.as_deref())?;
    let prepared = prepare_all(&model, &scenarios, &catalog)?;
    let language = train_language(&mut model, &prepared, &dialogues, &config.train, &mut log)?;
    let prepared = prepare_all(&model, &scenarios, &catalog)?;
    let examples = policy_examples(&model, &prepared, &dialogues)?;
    let policy = train_policy(&mut model, &examples, policy_weights(&dialogues), &config.train, &mut log)?;
    model.save(&a.training.out)?;
    writeln!(
        out,
        "language NLL {}, policy loss {} on {} dialogues; wrote {}",
        last(&language),
        last(&policy),
        dialogues.len(),
        a.training.out.display()
    )?;
    Ok(())
}

fn train_rl_cmd(a: TrainRl, out: &mut dyn Write) -> Result<()> {
    let config = RunConfig::load(a.training.config.as_deref())?;
    let mut model = load_model(&a.ckpt)?;
    require_stage(&model, "policy", &a.ckpt, "train-sl")?;
    let scenarios = load_scenarios(&a.data.scenarios)?;
    let catalog = Catalog::new(&catalog_items(&a.data, &scenarios)?, &model.vocab);
    let prepared = prepare_all(&model, &scenarios, &catalog)?;
    let mut log = metrics_log(a.training.metrics.as_deref())?;
    let report = train_rl(&mut model, &prepared, &config.train, &mut log)?;
    model.save(&a.training.out)?;
    let n = report.rewards.len().max(1);
    let tail = &report.rewards[report.rewards.len().saturating_sub(100)..];
    writeln!(
        out,
        "{} episodes, mean reward {:.4} (last {}: {:.4}); wrote {}",
        report.rewards.len(),
        report.rewards.iter().sum::<f64>() / n as f64,
        tail.len(),
        tail.iter().sum::<f64>() / tail.len().max(1) as f64,
        a.training.out.display()
    )?;
    Ok(())
}

fn selfplay_cmd(a: SelfPlay, out: &mut dyn Write) -> Result<()> {
    let model = load_model(&a.ckpt)?;
    let scenarios = load_scenarios(&a.data.scenarios)?;
    if scenarios.is_empty() {
        return Err(GatewayError::Usage("no scenarios".into()));
    }
    let catalog = Catalog::new(&catalog_items(&a.data, &scenarios)?, &model.vocab);
    let prepared = prepare_all(&model, &scenarios, &catalog)?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let mut files = Vec::with_capacity(a.n);
    let mut agreed = 0;
    for i in 0..a.n {
        let p = &prepared[i % prepared.len()];
        let pass = i / prepared.len();
        let config = SelfPlayConfig {
            max_turns: a.max_turns,
            first_mover: if pass % 2 == 0 { Role::Buyer } else { Role::Seller },
            policy: if a.sample { PolicyMode::Sample } else { PolicyMode::Greedy },
            text: DecodeMode::Greedy,
        };
        let player = Participant { model: &model, prepared: p };
        let ep = selfplay(player, player, config, &mut rng)?;
        agreed += usize::from(ep.outcome().agreed);
        files.push(ep.session.to_dialogue_file());
    }
    write_dialogues(&a.out, &files)?;
    writeln!(out, "wrote {} dialogues ({agreed} agreed) to {}", files.len(), a.out.display())?;
    Ok(())
}

fn read_dialogues(path: &Path, scenarios: &[Scenario]) -> Result<Vec<Dialogue>> {
    let files = parse_dialogues(std::io::BufReader::new(std::fs::File::open(path)?), path)?;
    files
        .iter()
        .map(|f| {
            scenarios
                .iter()
                .find(|s| s.id == f.scenario_id)
                .map(|s| derive_labels(f, s))
                .ok_or_else(|| GatewayError::UnknownScenario(f.scenario_id.clone()))
        })
        .collect()
}

fn eval_cmd(a: Eval, out: &mut dyn Write) -> Result<()> {
    let scenarios = load_scenarios(&a.scenarios)?;
    let generated = read_dialogues(&a.gen, &scenarios)?;
    let human = read_dialogues(&a.reference, &scenarios)?;
    let report = MetricReport::compute(&generated, &human, &scenarios)?;
    report.write_json(&a.out)?;
    write!(out, "{}", report.table(&a.label))?;
    writeln!(out, "wrote {}", a.out.display())?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct EstimateOut {
    item: String,
    estimate: f64,
    neighbors: Vec<NeighborOut>,
}

#[derive(Debug, Serialize)]
struct NeighborOut {
    id: String,
    similarity: f64,
    weight: f64,
}

fn estimate_cmd(a: Estimate, out: &mut dyn Write) -> Result<()> {
    let model = load_model(&a.ckpt)?;
    let item: CatalogItem = serde_json::from_str(&std::fs::read_to_string(&a.item)?)?;
    item.validate()?;
    let catalog = Catalog::new(&load_catalog(&a.catalog)?, &model.vocab);
    let view = ItemView::new(&item, &model.vocab);
    let est = valuation::estimate(&model.ove, &model.store, &view, &catalog, model.config.neighbors)?;
    let report = EstimateOut {
        item: item.id.clone(),
        estimate: est.price,
        neighbors: est
            .neighbors
            .ids
            .iter()
            .zip(&est.neighbors.scores)
            .zip(&est.weights)
            .map(|((id, s), w)| NeighborOut {
                id: id.clone(),
                similarity: *s,
                weight: *w,
            })
            .collect(),
    };
    writeln!(out, "{}", serde_json::to_string_pretty(&report)?)?;
    Ok(())
}

fn build_service(s: &Serving, log: SessionLog, first_id: u64) -> Result<(Service, Vec<Scenario>)> {
    let model = load_model(&s.ckpt)?;
    let scenarios = load_scenarios(&s.data.scenarios)?;
    let catalog = Catalog::new(&catalog_items(&s.data, &scenarios)?, &model.vocab);
    let config = ServiceConfig {
        max_turns: s.max_turns,
        idle_timeout: Duration::from_secs(s.idle_timeout),
        seed: model.config.seed,
    };
    let service = Service::new(Arc::new(model), &scenarios, &catalog, log, first_id, config)?;
    Ok((service, scenarios))
}

/// First free session number given an existing log.
pub fn next_session_number(path: &Path) -> Result<u64> {
    if !path.exists() {
        return Ok(1);
    }
    let max = read_log(path)?
        .iter()
        .filter_map(|r| match r {
            LogRecord::Created { session_id, .. } => session_id.parse::<u64>().ok(),
            _ => None,
        })
        .max()
        .unwrap_or(0);
    Ok(max + 1)
}

fn serve_cmd(a: Serve, out: &mut dyn Write) -> Result<()> {
    let first = next_session_number(&a.log)?;
    let (service, scenarios) = build_service(&a.serving, SessionLog::open(&a.log)?, first)?;
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async move {
        let listener = crate::server::bind(a.bind).await?;
        writeln!(
            out,
            "serving {} scenarios on http://{}, logging to {}",
            scenarios.len(),
            listener.local_addr()?,
            a.log.display()
        )?;
        out.flush()?;
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
        };
        crate::server::serve(Arc::new(service), listener, shutdown).await?;
        Ok(())
    })
}

fn chat_cmd(a: Chat, out: &mut dyn Write) -> Result<()> {
    let (log, first) = match &a.log {
        Some(p) => (SessionLog::open(p)?, next_session_number(p)?),
        None => (SessionLog::disabled(), 1),
    };
    let (service, scenarios) = build_service(&a.serving, log, first)?;
    let id = match a.scenario {
        Some(id) => id,
        None => scenarios
            .first()
            .map(|s| s.id.clone())
            .ok_or_else(|| GatewayError::Usage("no scenarios".into()))?,
    };
    let stdin = std::io::stdin();
    crate::chat::run_chat(&service, &id, a.role.into(), a.first.into(), stdin.lock(), out)?;
    Ok(())
}
