//! The `qroute` command line.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error (unreadable or
//! malformed input), 3 runtime error (divergent training, bind failure,
//! unwritable output).

use std::ffi::OsString;
use std::fmt;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::checkpoint::{load_checkpoint, save_checkpoint, CheckpointError};
use crate::dataset::{
    dataset_to_string, load_dataset, read_records, write_dataset, write_records, DatasetError,
    ModelRegistry,
};
use crate::eval::{
    beta_ablation, entropy_quality_analysis, routing_accuracy, selection_scores, standard_systems,
    AblationSpec, Correlation, EvalError, EvalReport,
};
use crate::featurizer::{FeaturizerConfig, DEFAULT_DIMENSION};
use crate::gateway::{self, GatewayConfig, GatewayError};
use crate::ranking::{make_synthetic_benchmark, OracleMap, RankingError, RewardSource, SyntheticSpec};
use crate::rewards::{aggregate_tag_rewards, decontaminate};
use crate::router::{init_router, train, KlDirection, RouterError, TrainConfig};
use crate::tagger::{KeywordTagger, TaggerError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

/// The β grid used when `ablate` is run without `--betas`.
pub const DEFAULT_BETAS: [f64; 7] = [0.0, 0.1, 0.3, 0.5, 0.7, 0.9, 1.0];

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<TaggerError> for CliError {
    fn from(e: TaggerError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<RankingError> for CliError {
    fn from(e: RankingError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<RouterError> for CliError {
    fn from(e: RouterError) -> Self {
        match e {
            RouterError::Config(_) | RouterError::Featurizer(_) => CliError::Usage(e.to_string()),
            RouterError::Divergent { .. } => CliError::Runtime(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Router(r) => r.into(),
            EvalError::Ranking(r) => r.into(),
            EvalError::Beta(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<GatewayError> for CliError {
    fn from(e: GatewayError) -> Self {
        match e {
            GatewayError::Config(_) | GatewayError::Checkpoint(_) => CliError::Data(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Default)]
pub enum Format {
    #[default]
    Table,
    Records,
}

#[derive(Parser, Debug)]
#[command(
    name = "qroute",
    version,
    about = "Train a reward-distilled query router and serve it as a routing gateway"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Validate a dataset and drop rows overlapping benchmark queries.
    Ingest(IngestArgs),
    /// Assign keyword tags to dataset rows.
    Tag(TagArgs),
    /// Train a router checkpoint from a reward dataset.
    Train(TrainArgs),
    /// Compare single models, reward ranking, the router and the oracle.
    Eval(EvalArgs),
    /// Sweep the label-enhancement β on a synthetic benchmark.
    Ablate(AblateArgs),
    /// Route one query with a checkpoint.
    Route(RouteArgs),
    /// Generate a synthetic planted-expertise benchmark.
    Synth(SynthArgs),
    /// Run the HTTP routing gateway.
    Serve(ServeArgs),
}

#[derive(Args, Debug)]
pub struct IngestArgs {
    /// Dataset file (one JSON record per line).
    #[arg(long)]
    pub data: PathBuf,
    /// Registry TOML listing models in canonical order.
    #[arg(long)]
    pub registry: PathBuf,
    /// Benchmark queries, one per line. Omit to copy the dataset through.
    #[arg(long)]
    pub benchmarks: Option<PathBuf>,
    /// Where to write the decontaminated dataset.
    #[arg(long)]
    pub out: PathBuf,
    /// Where to write the removal report (JSON lines of id and n-gram).
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Token n-gram length for overlap detection.
    #[arg(long, default_value_t = 6, value_parser = clap::value_parser!(u64).range(1..))]
    pub ngram: u64,
    #[arg(long, value_enum, default_value_t)]
    pub format: Format,
}

#[derive(Args, Debug)]
pub struct TagArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// JSON object mapping tag to keyword list.
    #[arg(long)]
    pub rules: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

fn unit_interval(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("\"{s}\" is not a number"))?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("{v} is outside [0, 1]"))
    }
}

fn positive(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("\"{s}\" is not a number"))?;
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("{v} must be positive"))
    }
}

fn non_negative(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("\"{s}\" is not a number"))?;
    if v >= 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("{v} must be non-negative"))
    }
}

/// Comma-separated β values, each in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct BetaList(pub Vec<f64>);

fn beta_list(s: &str) -> Result<BetaList, String> {
    s.split(',').map(|b| unit_interval(b.trim())).collect::<Result<_, _>>().map(BetaList)
}

#[derive(Args, Debug, Clone)]
pub struct TrainingFlags {
    #[arg(long, default_value_t = 20, value_parser = clap::value_parser!(u64).range(1..))]
    pub epochs: u64,
    #[arg(long, default_value_t = 0.1, value_parser = positive)]
    pub lr: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 64, value_parser = clap::value_parser!(u64).range(1..))]
    pub batch_size: u64,
    /// Softmax temperature applied to rewards.
    #[arg(long, default_value_t = 1.0, value_parser = positive)]
    pub temperature: f64,
    #[arg(long, default_value_t = 1e-6, value_parser = non_negative)]
    pub l2: f64,
    /// Hashed feature dimension.
    #[arg(long, default_value_t = DEFAULT_DIMENSION, value_parser = clap::value_parser!(u32).range(2..))]
    pub dimension: u32,
    #[arg(long, value_enum, default_value_t = KlArg::TargetPred)]
    pub kl_direction: KlArg,
    /// Visit rows in file order instead of shuffling each epoch.
    #[arg(long)]
    pub no_shuffle: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KlArg {
    /// KL(target ‖ prediction)
    TargetPred,
    /// KL(prediction ‖ target)
    PredTarget,
}

impl TrainingFlags {
    fn config(&self, beta: f64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.lr,
            epochs: self.epochs as usize,
            batch_size: self.batch_size as usize,
            beta,
            temperature: self.temperature,
            l2_penalty: self.l2,
            seed: self.seed,
            shuffle: !self.no_shuffle,
            kl_direction: match self.kl_direction {
                KlArg::TargetPred => KlDirection::TargetToPrediction,
                KlArg::PredTarget => KlDirection::PredictionToTarget,
            },
        }
    }

    fn featurizer(&self) -> FeaturizerConfig {
        FeaturizerConfig::with_dimension(self.dimension)
    }
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub registry: PathBuf,
    /// Weight of sample-level rewards against tag-level means.
    #[arg(long, default_value_t = 0.3, value_parser = unit_interval)]
    pub beta: f64,
    #[command(flatten)]
    pub training: TrainingFlags,
    /// Checkpoint output path.
    #[arg(long)]
    pub out: PathBuf,
    /// Optional JSON training report.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t)]
    pub format: Format,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Dataset with observed rewards.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub registry: PathBuf,
    /// Dataset-format file holding ground-truth rewards for the same ids.
    #[arg(long)]
    pub oracle: PathBuf,
    /// Router checkpoint to include in the comparison.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Write the rank table as tab-separated values.
    #[arg(long)]
    pub tsv: Option<PathBuf>,
    /// Write per-system summaries as JSON lines.
    #[arg(long)]
    pub json: Option<PathBuf>,
    /// Write per-query (entropy, RMR correctness) records as JSON lines.
    #[arg(long)]
    pub entropy_out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t)]
    pub format: Format,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    /// Synthetic benchmark spec (TOML).
    #[arg(long)]
    pub spec: PathBuf,
    /// Comma-separated β values.
    #[arg(long, value_parser = beta_list)]
    pub betas: Option<BetaList>,
    /// Override the benchmark's seed.
    #[arg(long)]
    pub bench_seed: Option<u64>,
    #[command(flatten)]
    pub training: TrainingFlags,
    /// Also write the table as tab-separated values.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t)]
    pub format: Format,
}

#[derive(Args, Debug)]
pub struct RouteArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub query: String,
    #[arg(long, value_enum, default_value_t)]
    pub format: Format,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Synthetic benchmark spec (TOML).
    #[arg(long)]
    pub spec: PathBuf,
    /// Override the spec's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override the spec's noise sigma.
    #[arg(long, value_parser = non_negative)]
    pub sigma: Option<f64>,
    /// Observed-reward dataset output.
    #[arg(long)]
    pub out: PathBuf,
    /// Ground-truth reward output (dataset format).
    #[arg(long)]
    pub oracle_out: Option<PathBuf>,
    /// Registry TOML output.
    #[arg(long)]
    pub registry_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ServeArgs {
    /// Gateway config (TOML).
    #[arg(long)]
    pub config: PathBuf,
}

/// Parses `args` (including the program name) and runs the command, writing
/// normal output to `out`. Returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn std::io::Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(command: Command, out: &mut dyn std::io::Write) -> Result<(), CliError> {
    match command {
        Command::Ingest(a) => cmd_ingest(a, out),
        Command::Tag(a) => cmd_tag(a, out),
        Command::Train(a) => cmd_train(a, out),
        Command::Eval(a) => cmd_eval(a, out),
        Command::Ablate(a) => cmd_ablate(a, out),
        Command::Route(a) => cmd_route(a, out),
        Command::Synth(a) => cmd_synth(a, out),
        Command::Serve(a) => cmd_serve(a),
    }
}

fn emit(out: &mut dyn std::io::Write, text: &str) -> Result<(), CliError> {
    out.write_all(text.as_bytes())
        .map_err(|e| CliError::Runtime(format!("cannot write output: {e}")))
}

fn write_out(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))
}

fn cmd_ingest(a: IngestArgs, out: &mut dyn std::io::Write) -> Result<(), CliError> {
    let registry = ModelRegistry::load(&a.registry)?;
    let dataset = load_dataset(&a.data, &registry)?;
    let benchmarks: Vec<String> = match &a.benchmarks {
        Some(p) => read_text(p)?
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(str::to_owned)
            .collect(),
        None => Vec::new(),
    };
    let (kept, removed) = decontaminate(&dataset, &benchmarks, a.ngram as usize);
    write_dataset(&a.out, &kept).map_err(|e| CliError::Runtime(e.to_string()))?;
    let report: String = removed
        .iter()
        .map(|r| json!({ "id": r.id, "ngram": r.ngram }).to_string() + "\n")
        .collect();
    if let Some(p) = &a.report {
        write_out(p, &report)?;
    }
    match a.format {
        Format::Records => emit(out, &report)?,
        Format::Table => {
            let mut text = format!(
                "rows in: {}\nrows kept: {}\nrows removed: {}\n",
                dataset.len(),
                kept.len(),
                removed.len()
            );
            for r in &removed {
                text.push_str(&format!("removed {}  [{}]\n", r.id, r.ngram));
            }
            emit(out, &text)?;
        }
    }
    Ok(())
}

fn cmd_tag(a: TagArgs, out: &mut dyn std::io::Write) -> Result<(), CliError> {
    let tagger = KeywordTagger::load(&a.rules)?;
    let mut records = read_records(&a.data)?;
    let mut tagged = 0;
    for r in &mut records {
        let mut tags: std::collections::BTreeSet<String> = r.tags.drain(..).collect();
        let found = tagger.tags_for(&r.query);
        if !found.is_empty() {
            tagged += 1;
        }
        tags.extend(found);
        r.tags = tags.into_iter().collect();
    }
    write_records(&a.out, &records).map_err(|e| CliError::Runtime(e.to_string()))?;
    emit(out, &format!("tagged {tagged} of {} rows\n", records.len()))
}

fn cmd_train(a: TrainArgs, out: &mut dyn std::io::Write) -> Result<(), CliError> {
    let registry = ModelRegistry::load(&a.registry)?;
    let dataset = load_dataset(&a.data, &registry)?;
    let config = a.training.config(a.beta);
    config.validate()?;
    let table = aggregate_tag_rewards(&dataset).map_err(|e| CliError::Data(e.to_string()))?;
    let model = init_router(&registry, &a.training.featurizer(), config.seed)?;
    let (model, report) = train(model, &dataset, &table, &config)?;
    save_checkpoint(&model, &a.out).map_err(|e| CliError::Runtime(e.to_string()))?;
    if let Some(p) = &a.report {
        write_out(p, &(serde_json::to_string_pretty(&report).expect("report serializes") + "\n"))?;
    }
    let text = match a.format {
        Format::Table => {
            let mut t: String = report
                .epoch_losses
                .iter()
                .enumerate()
                .map(|(i, l)| format!("epoch {:>4}  loss {l:.6}\n", i + 1))
                .collect();
            t.push_str(&format!(
                "final loss {:.6} over {} rows; checkpoint written to {}\n",
                report.final_loss,
                report.rows,
                a.out.display()
            ));
            t
        }
        Format::Records => report
            .epoch_losses
            .iter()
            .enumerate()
            .map(|(i, l)| json!({ "epoch": i + 1, "loss": l }).to_string() + "\n")
            .collect(),
    };
    emit(out, &text)
}

fn cmd_eval(a: EvalArgs, out: &mut dyn std::io::Write) -> Result<(), CliError> {
    let registry = ModelRegistry::load(&a.registry)?;
    let dataset = load_dataset(&a.data, &registry)?;
    let truth = load_dataset(&a.oracle, &registry)?;
    let oracle = OracleMap::from_dataset(&truth);
    let router = a.checkpoint.as_deref().map(load_checkpoint).transpose()?;
    if let Some(r) = &router {
        if !r.registry().ids().eq(registry.ids()) {
            return Err(CliError::Data("checkpoint registry differs from --registry".into()));
        }
    }
    let systems = standard_systems(&dataset, &oracle, router.as_ref())?;
    let subsets = selection_scores(&dataset, &oracle, &systems)?;
    let report = EvalReport::build(&subsets)?;
    let entropy = entropy_quality_analysis(&dataset, &RewardSource::from_dataset(&dataset), &oracle)?;
    let accuracy = router
        .as_ref()
        .map(|r| routing_accuracy(r, &dataset, &oracle))
        .transpose()?;

    if let Some(p) = &a.tsv {
        write_out(p, &report.to_tsv())?;
    }
    if let Some(p) = &a.json {
        write_out(p, &report.to_records())?;
    }
    if let Some(p) = &a.entropy_out {
        let lines: String = entropy
            .points
            .iter()
            .map(|pt| serde_json::to_string(pt).expect("point serializes") + "\n")
            .collect();
        write_out(p, &lines)?;
    }
    let corr = match entropy.correlation {
        Correlation::Value(v) => json!(v),
        Correlation::Degenerate => json!("degenerate"),
    };
    match a.format {
        Format::Table => {
            let mut text = report.to_table();
            if let Some(acc) = accuracy {
                text.push_str(&format!("routing accuracy: {acc:.4}\n"));
            }
            text.push_str(&format!("entropy/correctness rank correlation: {corr}\n"));
            emit(out, &text)
        }
        Format::Records => {
            let mut text = report.to_records();
            text.push_str(&(json!({ "routing_accuracy": accuracy, "entropy_correlation": corr }).to_string() + "\n"));
            emit(out, &text)
        }
    }
}

fn cmd_ablate(a: AblateArgs, out: &mut dyn std::io::Write) -> Result<(), CliError> {
    let mut benchmark = SyntheticSpec::load(&a.spec)?;
    if let Some(seed) = a.bench_seed {
        benchmark.seed = seed;
    }
    let betas = a.betas.map_or_else(|| DEFAULT_BETAS.to_vec(), |b| b.0);
    let spec = AblationSpec {
        benchmark,
        train: a.training.config(0.0),
        featurizer: a.training.featurizer(),
    };
    spec.train.validate()?;
    let table = beta_ablation(&spec, &betas)?;
    if let Some(p) = &a.out {
        write_out(p, &table.to_tsv())?;
    }
    let text = match a.format {
        Format::Table => format!(
            "{}train rows {}, held-out rows {}, best single model accuracy {:.4}\n",
            table.to_table(),
            table.train_rows,
            table.held_out_rows,
            table.best_single_model_accuracy
        ),
        Format::Records => table.to_records(),
    };
    emit(out, &text)
}

fn cmd_route(a: RouteArgs, out: &mut dyn std::io::Write) -> Result<(), CliError> {
    let model = load_checkpoint(&a.checkpoint)?;
    if a.query.trim().is_empty() {
        return Err(CliError::Usage("--query must not be empty".into()));
    }
    let route = model.route(&a.query);
    let text = match a.format {
        Format::Records => {
            json!({ "model_id": route.model_id, "distribution": route.distribution.probs() }).to_string() + "\n"
        }
        Format::Table => {
            let mut t = format!("model_id: {}\n", route.model_id);
            for (id, p) in model.registry().ids().zip(route.distribution.probs()) {
                t.push_str(&format!("  {id:<16} {p:.6}\n"));
            }
            t
        }
    };
    emit(out, &text)
}

fn cmd_synth(a: SynthArgs, out: &mut dyn std::io::Write) -> Result<(), CliError> {
    let mut spec = SyntheticSpec::load(&a.spec)?;
    if let Some(seed) = a.seed {
        spec.seed = seed;
    }
    if let Some(sigma) = a.sigma {
        spec.noise_sigma = sigma;
    }
    let bench = make_synthetic_benchmark(&spec)?;
    write_out(&a.out, &dataset_to_string(&bench.dataset))?;
    if let Some(p) = &a.oracle_out {
        write_out(p, &dataset_to_string(&bench.truth))?;
    }
    if let Some(p) = &a.registry_out {
        write_out(p, &bench.dataset.registry().to_toml_string())?;
    }
    emit(
        out,
        &format!(
            "wrote {} rows over {} clusters to {}\n",
            bench.dataset.len(),
            spec.clusters.len(),
            a.out.display()
        ),
    )
}

fn cmd_serve(a: ServeArgs) -> Result<(), CliError> {
    let config = GatewayConfig::load(&a.config)?;
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    runtime.block_on(async move {
        let mut handle = gateway::serve(config).await?;
        eprintln!("listening on {}", handle.addr());
        shutdown_signal().await;
        eprintln!("shutting down; draining in-flight requests");
        handle.begin_shutdown();
        handle.wait().await.map_err(|e| CliError::Runtime(e.to_string()))
    })
}

async fn shutdown_signal() {
    #[cfg(unix)]
    {
        use tokio::signal::unix::{signal, SignalKind};
        let mut term = signal(SignalKind::terminate()).expect("install SIGTERM handler");
        tokio::select! {
            _ = tokio::signal::ctrl_c() => {}
            _ = term.recv() => {}
        }
    }
    #[cfg(not(unix))]
    {
        let _ = tokio::signal::ctrl_c().await;
    }
}

/// Entry point for the `qroute` binary.
pub fn run_main() -> i32 {
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    let code = run(std::env::args_os(), &mut lock);
    let _ = lock.flush();
    code
}
