//! `trace-llm`: every analysis stage as a scriptable subcommand.
//! JSON goes to stdout, diagnostics to stderr, files only under `--out`.

mod commands;
mod config;
mod error;
mod mock;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use tracekit::{Address, TxHash};

use crate::config::{FileConfig, Settings};
use crate::error::CliError;

#[derive(Parser)]
#[command(name = "trace-llm", version, about = "Transaction-trace forensics for smart-contract incidents")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

/// Options shared by every subcommand. Flags beat environment, which beats the config file.
#[derive(Args, Debug, Default)]
pub struct GlobalArgs {
    /// Config file of `key = value` lines; unknown keys are rejected.
    #[arg(long, env = "TRACELLM_CONFIG", global = true)]
    pub config: Option<PathBuf>,
    /// Replay chain data from this fixture store instead of live endpoints.
    #[arg(long, env = "TRACELLM_FIXTURES", global = true)]
    pub fixtures: Option<PathBuf>,
    /// With --fixtures and --rpc-url: fetch live and store every answer as a fixture.
    #[arg(long, global = true)]
    pub record: bool,
    #[arg(long, env = "TRACELLM_RPC_URL", global = true)]
    pub rpc_url: Option<String>,
    /// Etherscan-compatible API base.
    #[arg(long, global = true)]
    pub explorer_url: Option<String>,
    #[arg(long, env = "TRACELLM_EXPLORER_KEY", hide_env_values = true, global = true)]
    pub explorer_key: Option<String>,
    /// Chat-completions endpoint for the live gateway.
    #[arg(long, env = "TRACELLM_GATEWAY_URL", global = true)]
    pub gateway_url: Option<String>,
    #[arg(long, env = "TRACELLM_GATEWAY_KEY", hide_env_values = true, global = true)]
    pub gateway_key: Option<String>,
    #[arg(long, global = true)]
    pub gateway_model: Option<String>,
    #[arg(long, global = true)]
    pub temperature: Option<f64>,
    #[arg(long, global = true)]
    pub top_p: Option<f64>,
    #[arg(long, global = true)]
    pub max_tokens: Option<u32>,
    /// Trained model file; without one, paths are ranked by semantic density.
    #[arg(long, global = true)]
    pub model: Option<PathBuf>,
    /// Selector table, one `selector<TAB>signature` per line.
    #[arg(long, global = true)]
    pub signatures: Option<PathBuf>,
    /// Suspicious method names, one per line.
    #[arg(long, global = true)]
    pub suspicious_set: Option<PathBuf>,
    /// Hop radius of enclosing subgraphs.
    #[arg(long, global = true)]
    pub k: Option<usize>,
    /// Number of ranked paths kept.
    #[arg(long, global = true)]
    pub cutoff: Option<usize>,
    /// Worker threads.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[arg(long, global = true)]
    pub max_block_span: Option<u64>,
    /// Decompiler command template; `{bytecode}` or `{bytecode_file}` is substituted.
    #[arg(long, global = true)]
    pub decompiler_cmd: Option<String>,
    #[arg(long, global = true)]
    pub decompiler_timeout_s: Option<u64>,
    /// Directory receiving every file a command writes.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Expand seed contracts and list the transactions in range.
    Scope(ScopeCmd),
    /// Reconstruct call trees and enumerate their paths.
    Tree(TreeCmd),
    /// Rank execution paths by anomaly probability.
    Rank(RankCmd),
    /// Enclosing subgraphs of ranked or named paths.
    Subgraph(SubgraphCmd),
    /// Source or decompiled code for contracts.
    Extract(ExtractCmd),
    /// Fit a model on a labeled dataset.
    Train(TrainCmd),
    /// Leave-one-incident-out recall of one or more scorers.
    Eval(EvalCmd),
    /// Full pipeline plus an incident report from the gateway.
    Report(ReportCmd),
}

fn parse_address(s: &str) -> Result<Address, String> {
    s.parse().map_err(|e| format!("{e}"))
}

fn parse_tx(s: &str) -> Result<TxHash, String> {
    s.parse().map_err(|e| format!("{e}"))
}

#[derive(Args)]
pub struct ScopeCmd {
    #[arg(long, required = true, value_parser = parse_address)]
    pub address: Vec<Address>,
    #[arg(long)]
    pub from_block: u64,
    #[arg(long)]
    pub to_block: u64,
    #[arg(long)]
    pub label: Option<String>,
}

/// A scope document, or seeds plus a block window.
#[derive(Args, Debug, Default)]
pub struct ScopeSource {
    /// Scope JSON: `{"contracts": [...], "block_range": [start, end], "label": ...}`.
    #[arg(long, conflicts_with_all = ["from_block", "to_block"])]
    pub scope: Option<PathBuf>,
    #[arg(long, value_parser = parse_address)]
    pub address: Vec<Address>,
    #[arg(long)]
    pub from_block: Option<u64>,
    #[arg(long)]
    pub to_block: Option<u64>,
    #[arg(long)]
    pub label: Option<String>,
}

#[derive(Args)]
pub struct TreeCmd {
    #[command(flatten)]
    pub source: ScopeSource,
    /// Trace these transactions instead of a scope.
    #[arg(long, value_parser = parse_tx)]
    pub tx: Vec<TxHash>,
}

#[derive(Args)]
pub struct RankCmd {
    #[command(flatten)]
    pub source: ScopeSource,
}

#[derive(Args)]
pub struct SubgraphCmd {
    #[command(flatten)]
    pub source: ScopeSource,
    /// Paths to extract; defaults to the ranked ones.
    #[arg(long)]
    pub path_key: Vec<String>,
}

#[derive(Args)]
pub struct ExtractCmd {
    /// With a scope, the expanded address set; otherwise just the --address list.
    #[command(flatten)]
    pub source: ScopeSource,
    /// Rewrite decompiled code through the gateway.
    #[arg(long)]
    pub refine: bool,
    #[arg(long, value_enum, default_value_t = GatewayMode::Mock)]
    pub gateway: GatewayMode,
    #[arg(long)]
    pub replay_dir: Option<PathBuf>,
}

#[derive(Args)]
pub struct TrainCmd {
    /// JSON-lines dataset, one labeled path per line.
    #[arg(long = "train")]
    pub dataset: PathBuf,
    #[arg(long)]
    pub vocab_cap: Option<usize>,
    #[arg(long)]
    pub no_class_weighting: bool,
}

#[derive(Args)]
pub struct EvalCmd {
    /// JSON-lines dataset evaluated leave-one-incident-out.
    #[arg(long = "eval-logo")]
    pub dataset: PathBuf,
    /// `full`, `semantic`, `oracle` or `external:<scores.jsonl>`.
    #[arg(long, default_values_t = ["full".to_string(), "semantic".to_string()])]
    pub scorer: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum GatewayMode {
    /// Offline, deterministic answer built from the context.
    Mock,
    /// Answers recorded earlier under --replay-dir.
    Replay,
    /// Live calls, stored under --replay-dir.
    Record,
    Live,
}

#[derive(Args)]
pub struct ReportCmd {
    #[command(flatten)]
    pub source: ScopeSource,
    #[arg(long, value_enum, default_value_t = GatewayMode::Mock)]
    pub gateway: GatewayMode,
    /// Gateway recordings; defaults to `<out>/gateway`.
    #[arg(long)]
    pub replay_dir: Option<PathBuf>,
    /// Also refine decompiled code through the gateway.
    #[arg(long)]
    pub refine: bool,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let file = match &cli.global.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let settings = Settings::resolve(&cli.global, file)?;
    if let Some(n) = settings.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::usage(format!("thread pool: {e}")))?;
    }
    if let Some(out) = &settings.out {
        std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    }
    match cli.command {
        Command::Scope(c) => commands::scope(&settings, c),
        Command::Tree(c) => commands::tree(&settings, c),
        Command::Rank(c) => commands::rank(&settings, c),
        Command::Subgraph(c) => commands::subgraph(&settings, c),
        Command::Extract(c) => commands::extract(&settings, c),
        Command::Train(c) => commands::train(&settings, c),
        Command::Eval(c) => commands::eval(&settings, c),
        Command::Report(c) => commands::report(&settings, c),
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let code = match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    std::process::exit(code);
}
