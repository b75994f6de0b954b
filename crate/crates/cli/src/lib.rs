//! Command-line driver: self-play training, offline retraining, survival
//! evaluation, the HTTP arena, and text replays of stored games.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{ArgAction, Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use gomoku_arena::{serve, ArenaConfig};
use gomoku_core::catalog::Catalog;
use gomoku_core::engine::{Board, Player, DEFAULT_SIZE};
use gomoku_core::evaluation::{
    EvaluatorBackend, HeuristicBackend, LlmBackend, LlmClient, LlmConfig, RandomLegalBackend,
};
use gomoku_core::move_select::default_workers;
use gomoku_core::persistence::{load_checkpoint, Clock};
use gomoku_core::prompting::{PromptTemplate, DEFAULT_RULES};
use gomoku_core::qlearn::{Mlp, QNetwork, TrainConfig};
use gomoku_core::selfplay::{
    evaluate_survival, run_selfplay, train_offline, DqnPolicy, Outcome, Pipeline, SelfPlayConfig,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "gomoku", version, about = "Gomoku strategy-selection agent: self-play, evaluation, serving and replay")]
#[command(args_override_self = true, propagate_version = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Play self-play games, training after each and checkpointing; resumes an interrupted run.
    Selfplay(SelfplayArgs),
    /// Retrain the network offline from every transition in the store.
    Train(TrainArgs),
    /// Mean survival steps of the checkpointed policy (black) against an opponent.
    Eval(EvalArgs),
    /// Serve the HTTP arena for live play, replays and statistics.
    Serve(ServeArgs),
    /// Print a stored game as text-board frames.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendKind {
    Heuristic,
    Random,
    Llm,
}

impl BackendKind {
    fn tag(self) -> &'static str {
        match self {
            BackendKind::Heuristic => "heuristic",
            BackendKind::Random => "random",
            BackendKind::Llm => "llm",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ClockKind {
    /// game_id * 1000 + turn: identical runs give identical stores.
    Logical,
    /// Unix milliseconds.
    Wall,
}

#[derive(Debug, Clone, Args)]
pub struct ConfigArg {
    /// File of `key = value` lines using long flag names; flags given on the command line win (default: none)
    #[arg(long, value_name = "PATH", help_heading = "Config")]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct StoreArgs {
    /// Transition log
    #[arg(long, value_name = "PATH", default_value = "transitions.tsv")]
    pub store: PathBuf,
    /// Network checkpoint
    #[arg(long, value_name = "PATH", default_value = "checkpoint.bin")]
    pub checkpoint: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct CatalogArg {
    /// Strategy/logic catalog file (default: built-in catalog)
    #[arg(long, value_name = "PATH")]
    pub catalog: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
#[command(next_help_heading = "Training")]
pub struct LearnArgs {
    /// Seed for network initialization, exploration and replay sampling
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Board side length (fresh runs only; a checkpoint fixes it)
    #[arg(long, default_value_t = DEFAULT_SIZE)]
    pub board_size: usize,
    /// Discount factor
    #[arg(long, default_value_t = 0.95)]
    pub gamma: f64,
    /// Adam learning rate
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    /// Initial exploration rate
    #[arg(long, default_value_t = 1.0)]
    pub epsilon_start: f64,
    /// Final exploration rate
    #[arg(long, default_value_t = 0.05)]
    pub epsilon_end: f64,
    /// Action selections over which epsilon decays linearly
    #[arg(long, default_value_t = 10_000)]
    pub epsilon_decay_steps: u64,
    /// Minibatch size
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    /// Train steps between target-network syncs
    #[arg(long, default_value_t = 500)]
    pub target_sync_interval: u64,
    /// First hidden layer width
    #[arg(long, default_value_t = 512)]
    pub hidden1: usize,
    /// Second hidden layer width
    #[arg(long, default_value_t = 256)]
    pub hidden2: usize,
    /// Replay buffer capacity
    #[arg(long, default_value_t = 50_000)]
    pub replay_capacity: usize,
}

impl LearnArgs {
    fn train_config(&self) -> TrainConfig {
        TrainConfig {
            gamma: self.gamma,
            lr: self.lr,
            epsilon_start: self.epsilon_start,
            epsilon_end: self.epsilon_end,
            epsilon_decay_steps: self.epsilon_decay_steps,
            batch_size: self.batch_size,
            target_sync_interval: self.target_sync_interval,
            hidden1: self.hidden1,
            hidden2: self.hidden2,
            replay_capacity: self.replay_capacity,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, Args)]
#[command(next_help_heading = "LLM backend")]
pub struct LlmArgs {
    /// Chat-completions endpoint
    #[arg(long, default_value = "http://127.0.0.1:8000/v1/chat/completions")]
    pub llm_endpoint: String,
    /// Model name
    #[arg(long, default_value = "deepseek-chat")]
    pub llm_model: String,
    /// Sampling temperature
    #[arg(long, default_value_t = 0.0)]
    pub llm_temperature: f64,
    /// Per-request timeout in seconds
    #[arg(long, default_value_t = 60.0)]
    pub llm_timeout_secs: f64,
    /// Attempts for retryable failures
    #[arg(long, default_value_t = 3)]
    pub llm_max_retries: u32,
    /// Base of the exponential backoff in milliseconds
    #[arg(long, default_value_t = 500)]
    pub llm_backoff_ms: u64,
    /// Maximum concurrent requests
    #[arg(long, default_value_t = 8)]
    pub llm_max_in_flight: usize,
    /// Environment variable holding the bearer token
    #[arg(long, value_name = "NAME", default_value = gomoku_core::evaluation::DEFAULT_TOKEN_ENV)]
    pub token_env: String,
}

impl LlmArgs {
    fn config(&self) -> LlmConfig {
        LlmConfig {
            endpoint: self.llm_endpoint.clone(),
            model: self.llm_model.clone(),
            temperature: self.llm_temperature,
            timeout_secs: self.llm_timeout_secs,
            max_retries: self.llm_max_retries,
            backoff_base_ms: self.llm_backoff_ms,
            token_env: self.token_env.clone(),
            max_in_flight: self.llm_max_in_flight,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct SelfplayArgs {
    /// Total games the run should reach (games already in the checkpoint count)
    #[arg(long, default_value_t = 200)]
    pub games: u64,
    #[command(flatten)]
    pub paths: StoreArgs,
    /// Evaluator backend
    #[arg(long, value_enum, default_value_t = BackendKind::Heuristic)]
    pub backend: BackendKind,
    /// Candidate-scoring worker threads
    #[arg(long, default_value_t = default_workers())]
    pub workers: usize,
    /// Timestamp source for store records
    #[arg(long, value_enum, default_value_t = ClockKind::Logical)]
    pub clock: ClockKind,
    #[command(flatten)]
    pub catalog: CatalogArg,
    #[command(flatten)]
    pub learn: LearnArgs,
    #[command(flatten)]
    pub llm: LlmArgs,
    #[command(flatten)]
    pub config: ConfigArg,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// Train steps to run
    #[arg(long, default_value_t = 1000)]
    pub steps: u64,
    #[command(flatten)]
    pub paths: StoreArgs,
    #[command(flatten)]
    pub catalog: CatalogArg,
    #[command(flatten)]
    pub learn: LearnArgs,
    #[command(flatten)]
    pub config: ConfigArg,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    /// Games to play
    #[arg(long, default_value_t = 8)]
    pub games: usize,
    /// Network checkpoint
    #[arg(long, value_name = "PATH", default_value = "checkpoint.bin")]
    pub checkpoint: PathBuf,
    /// Evaluate a freshly initialized network instead of the checkpoint (default: off)
    #[arg(long)]
    pub untrained: bool,
    /// Board side length for --untrained
    #[arg(long, default_value_t = DEFAULT_SIZE)]
    pub board_size: usize,
    /// Opponent backend
    #[arg(long, value_enum, default_value_t = BackendKind::Heuristic)]
    pub opponent: BackendKind,
    /// Backend behind the policy's proposals and candidate scores
    #[arg(long, value_enum, default_value_t = BackendKind::Heuristic)]
    pub backend: BackendKind,
    /// Seed for the opponent's opening replies
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Candidate-scoring worker threads
    #[arg(long, default_value_t = default_workers())]
    pub workers: usize,
    #[command(flatten)]
    pub catalog: CatalogArg,
    #[command(flatten)]
    pub llm: LlmArgs,
    #[command(flatten)]
    pub config: ConfigArg,
}

#[derive(Debug, Clone, Args)]
pub struct ServeArgs {
    /// Listen address
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    /// Listen port (0 picks a free port)
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[command(flatten)]
    pub paths: StoreArgs,
    /// Default backend for new sessions
    #[arg(long, value_enum, default_value_t = BackendKind::Heuristic)]
    pub backend: BackendKind,
    /// Candidate-scoring worker threads
    #[arg(long, default_value_t = default_workers())]
    pub workers: usize,
    /// Seconds of inactivity before a session is dropped
    #[arg(long, default_value_t = 3600)]
    pub idle_timeout_secs: u64,
    /// Seed of the untrained network used when no checkpoint fits
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub catalog: CatalogArg,
    #[command(flatten)]
    pub llm: LlmArgs,
    #[command(flatten)]
    pub config: ConfigArg,
}

#[derive(Debug, Clone, Args)]
pub struct ReplayArgs {
    /// Game id to print
    #[arg(long, required = true)]
    pub game: u64,
    /// Transition log
    #[arg(long, value_name = "PATH", default_value = "transitions.tsv")]
    pub store: PathBuf,
    #[command(flatten)]
    pub catalog: CatalogArg,
    #[command(flatten)]
    pub config: ConfigArg,
}

impl Command {
    fn config_path(&self) -> Option<&Path> {
        match self {
            Command::Selfplay(a) => a.config.config.as_deref(),
            Command::Train(a) => a.config.config.as_deref(),
            Command::Eval(a) => a.config.config.as_deref(),
            Command::Serve(a) => a.config.config.as_deref(),
            Command::Replay(a) => a.config.config.as_deref(),
        }
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

pub fn command() -> clap::Command {
    Cli::command()
}

/// Parse a config document into `(long flag, value)` pairs.
pub fn parse_config(text: &str) -> Result<Vec<(String, String)>, String> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format!("config line {}: expected `key = value`", n + 1))?;
        let key = key.trim().replace('_', "-");
        if key.is_empty() {
            return Err(format!("config line {}: empty key", n + 1));
        }
        let value = value.trim().trim_matches('"').to_string();
        out.push((key, value));
    }
    Ok(out)
}

/// Turn config entries into leading flags for `sub`. Placed before the
/// user's own flags, which therefore override them.
fn config_flags(sub: &clap::Command, entries: &[(String, String)]) -> Result<Vec<OsString>, String> {
    let mut flags = Vec::new();
    for (key, value) in entries {
        let arg = sub
            .get_arguments()
            .find(|a| a.get_long() == Some(key.as_str()))
            .filter(|_| key != "config")
            .ok_or_else(|| format!("unknown config key `{key}` for `{}`", sub.get_name()))?;
        if matches!(arg.get_action(), ArgAction::SetTrue) {
            match value.as_str() {
                "true" => flags.push(format!("--{key}").into()),
                "false" => {}
                other => return Err(format!("config key `{key}` expects true or false, got `{other}`")),
            }
        } else {
            flags.push(format!("--{key}").into());
            flags.push(value.into());
        }
    }
    Ok(flags)
}

fn usage_failure(err: clap::Error, argv: &[OsString], stderr: &mut dyn Write) -> i32 {
    use clap::error::ErrorKind;
    if matches!(err.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
        print!("{err}");
        return EXIT_OK;
    }
    let _ = write!(stderr, "{}", err.render());
    let mut cmd = command();
    cmd.build();
    let sub_name = argv.get(1).and_then(|s| s.to_str()).map(str::to_string);
    let help = match sub_name.and_then(|n| cmd.find_subcommand_mut(&n).map(|s| s.render_help())) {
        Some(h) => h,
        None => cmd.render_help(),
    };
    let _ = write!(stderr, "\n{help}");
    EXIT_USAGE
}

fn parse(argv: &[OsString]) -> Result<Cli, clap::Error> {
    let matches = command().try_get_matches_from(argv)?;
    Cli::from_arg_matches(&matches)
}

/// Run the CLI on `argv` (including the program name) and return the exit code.
pub fn run_cli(argv: Vec<OsString>) -> i32 {
    let mut stderr = std::io::stderr();
    let cli = match parse(&argv) {
        Ok(c) => c,
        Err(e) => return usage_failure(e, &argv, &mut stderr),
    };
    let cli = match cli.command.config_path() {
        None => cli,
        Some(path) => {
            let text = match std::fs::read_to_string(path) {
                Ok(t) => t,
                Err(e) => {
                    eprintln!("error: cannot read config {}: {e}", path.display());
                    return EXIT_RUNTIME;
                }
            };
            let cmd = command();
            let sub = cmd
                .find_subcommand(argv[1].to_str().unwrap_or_default())
                .expect("parsed subcommand");
            let injected = match parse_config(&text).and_then(|e| config_flags(sub, &e)) {
                Ok(f) => f,
                Err(msg) => {
                    eprintln!("error: {msg}");
                    return EXIT_USAGE;
                }
            };
            let mut merged = argv[..2].to_vec();
            merged.extend(injected);
            merged.extend(argv[2..].iter().cloned());
            match parse(&merged) {
                Ok(c) => c,
                Err(e) => return usage_failure(e, &argv, &mut stderr),
            }
        }
    };
    let mut stdout = std::io::stdout().lock();
    match execute(cli.command, &mut stdout) {
        Ok(()) => EXIT_OK,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            EXIT_RUNTIME
        }
    }
}

fn load_catalog(arg: &CatalogArg) -> Result<Catalog, CliError> {
    match &arg.catalog {
        Some(p) => Catalog::load(p).map_err(runtime),
        None => Ok(Catalog::default_catalog()),
    }
}

fn make_backend(kind: BackendKind, seed: u64, llm: &LlmArgs) -> Result<Box<dyn EvaluatorBackend>, CliError> {
    Ok(match kind {
        BackendKind::Heuristic => Box::new(HeuristicBackend::default()),
        BackendKind::Random => Box::new(RandomLegalBackend::new(seed)),
        BackendKind::Llm => Box::new(LlmBackend::new(LlmClient::new(llm.config()).map_err(runtime)?)),
    })
}

fn check_workers(workers: usize) -> Result<(), CliError> {
    if workers == 0 {
        return Err(CliError::Usage("--workers must be at least 1".into()));
    }
    Ok(())
}

pub fn execute(command: Command, out: &mut dyn Write) -> Result<(), CliError> {
    match command {
        Command::Selfplay(a) => selfplay(a, out),
        Command::Train(a) => train(a, out),
        Command::Eval(a) => eval(a, out),
        Command::Serve(a) => serve_cmd(a, out),
        Command::Replay(a) => replay(a, out),
    }
}

fn selfplay(a: SelfplayArgs, out: &mut dyn Write) -> Result<(), CliError> {
    check_workers(a.workers)?;
    let catalog = load_catalog(&a.catalog)?;
    let cfg = SelfPlayConfig {
        board_size: a.learn.board_size,
        workers: a.workers,
        train: a.learn.train_config(),
        clock: match a.clock {
            ClockKind::Logical => Clock::Logical,
            ClockKind::Wall => Clock::Wall,
        },
    };
    Board::new(cfg.board_size).map_err(|e| CliError::Usage(e.to_string()))?;
    cfg.train.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let backend = make_backend(a.backend, a.learn.seed, &a.llm)?;
    let summary = run_selfplay(a.games, &cfg, &catalog, backend.as_ref(), &a.paths.store, &a.paths.checkpoint)
        .map_err(runtime)?;
    write!(out, "{}", summary.report()).map_err(runtime)
}

fn train(a: TrainArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let catalog = load_catalog(&a.catalog)?;
    let cfg = SelfPlayConfig {
        board_size: a.learn.board_size,
        train: a.learn.train_config(),
        ..SelfPlayConfig::default()
    };
    cfg.train.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    if !a.paths.store.exists() {
        return Err(CliError::Runtime(format!("store {} does not exist", a.paths.store.display())));
    }
    let (steps, loss) =
        train_offline(a.steps, &cfg, &catalog, &a.paths.store, &a.paths.checkpoint).map_err(runtime)?;
    let loss = loss.map_or_else(|| "none".to_string(), |l| format!("{l:.6}"));
    writeln!(out, "train_steps: {steps}\nlast_loss: {loss}").map_err(runtime)
}

fn eval(a: EvalArgs, out: &mut dyn Write) -> Result<(), CliError> {
    check_workers(a.workers)?;
    let catalog = load_catalog(&a.catalog)?;
    let actions = catalog.action_space_size();
    let net: QNetwork = if a.untrained {
        Board::new(a.board_size).map_err(|e| CliError::Usage(e.to_string()))?;
        let cfg = TrainConfig {
            seed: a.seed,
            ..TrainConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        Mlp::new(&cfg.dims(a.board_size * a.board_size, actions), &mut rng)
    } else {
        load_checkpoint(&a.checkpoint).map_err(runtime)?.net
    };
    let cells = net.input_len();
    let size = (cells as f64).sqrt().round() as usize;
    if size * size != cells || net.output_len() != actions {
        return Err(CliError::Runtime(format!(
            "network maps {cells} inputs to {} actions; expected a square board and {actions} actions",
            net.output_len()
        )));
    }
    let backend = make_backend(a.backend, a.seed, &a.llm)?;
    let opponent = make_backend(a.opponent, a.seed.wrapping_add(1), &a.llm)?;
    let template = PromptTemplate::default();
    let mut policy = DqnPolicy {
        pipeline: Pipeline {
            catalog: &catalog,
            template: &template,
            rules: DEFAULT_RULES,
            backend: backend.as_ref(),
            workers: a.workers,
        },
        net: &net,
        rng: ChaCha8Rng::seed_from_u64(a.seed),
    };
    let report = evaluate_survival(&mut policy, opponent.as_ref(), a.games, a.seed, size, a.workers).map_err(runtime)?;
    for (i, (steps, outcome)) in report.steps.iter().zip(&report.outcomes).enumerate() {
        let result = match outcome {
            Outcome::Won(Player::Black) => "policy won",
            Outcome::Won(Player::White) => "opponent won",
            Outcome::Draw => "draw",
            Outcome::Truncated => "truncated",
        };
        writeln!(out, "game {i}: {steps} steps, {result}").map_err(runtime)?;
    }
    writeln!(out, "mean survival steps: {:.2} over {} games", report.mean_steps, report.steps.len()).map_err(runtime)
}

fn serve_cmd(a: ServeArgs, out: &mut dyn Write) -> Result<(), CliError> {
    check_workers(a.workers)?;
    let config = ArenaConfig {
        store_path: a.paths.store,
        checkpoint_path: a.paths.checkpoint,
        catalog: load_catalog(&a.catalog)?,
        template: PromptTemplate::default(),
        rules: DEFAULT_RULES.to_string(),
        workers: a.workers,
        default_backend: a.backend.tag().to_string(),
        llm: a.llm.config(),
        idle_timeout: Duration::from_secs(a.idle_timeout_secs),
        seed: a.seed,
    };
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(runtime)?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind((a.host.as_str(), a.port))
            .await
            .map_err(|e| CliError::Runtime(format!("cannot bind {}:{}: {e}", a.host, a.port)))?;
        let addr = listener.local_addr().map_err(runtime)?;
        writeln!(out, "listening on http://{addr}").map_err(runtime)?;
        out.flush().map_err(runtime)?;
        serve(listener, config).await.map_err(runtime)
    })
}

fn replay(a: ReplayArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let catalog = load_catalog(&a.catalog)?;
    if !a.store.exists() {
        return Err(CliError::Runtime(format!("store {} does not exist", a.store.display())));
    }
    let game = gomoku_arena::store::replay(&a.store, &catalog, a.game).map_err(runtime)?;
    let mut board = Board::new(game.size).map_err(runtime)?;
    let n = game.steps.len();
    let mut text = String::new();
    for (k, step) in game.steps.iter().enumerate() {
        board = board.apply_move(step.position, step.player).map_err(runtime)?;
        let who = match step.player {
            Player::Black => "black",
            Player::White => "white",
        };
        text.push_str(&format!(
            "game {} move {}/{}: {who} at ({}, {})  strategy: {}  logic: {}  reward: {}\n{}\n",
            game.game_id,
            k + 1,
            n,
            step.position.row,
            step.position.col,
            step.strategy,
            step.logic,
            step.reward,
            board.to_text()
        ));
    }
    let result = match (game.complete, game.winner) {
        (false, _) => "incomplete".to_string(),
        (true, Some(Player::Black)) => "black wins".to_string(),
        (true, Some(Player::White)) => "white wins".to_string(),
        (true, None) => "draw".to_string(),
    };
    text.push_str(&format!("result: {result}\n"));
    out.write_all(text.as_bytes()).map_err(runtime)
}
