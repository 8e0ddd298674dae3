//! `treegen`: grow dialogue trees and export corpora.
//!
//! Exit codes: 0 success, 1 hard error, 2 resumable abort, 64 usage error.
//! Machine-readable results go to stdout as JSON; diagnostics to stderr.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, Context};
use clap::{error::ErrorKind, Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use treegen::analysis::{compute_stats, diversity_sample, export_embeddings};
use treegen::backend::{HttpBackend, HttpConfig, MockBackend};
use treegen::corpus::{
    build_corpus, export_jsonl, export_pt, export_sharegpt, import_records, sample_to_size, SystemPrompt,
};
use treegen::scheduler::{self, CheckpointStore, FailurePolicy, RunOptions, RunStatus};
use treegen::tree::expected_node_count;
use treegen::{Backends, ChatTemplate, TreeConfig, TurnPolicy};

const EXIT_HARD: u8 = 1;
const EXIT_RESUMABLE: u8 = 2;
const EXIT_USAGE: u8 = 64;
const DEFAULT_API_BASE: &str = "http://localhost:8000/v1";

#[derive(Parser)]
#[command(name = "treegen", version, about = "Tree-structured corpus synthesis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Expand a tree to full depth, checkpointing into --out.
    Generate(GenerateArgs),
    /// Turn a finished tree into a corpus file.
    Export(ExportArgs),
    /// Print corpus statistics as JSON.
    Stats(StatsArgs),
    /// Check a config or an exported corpus.
    Validate(ValidateArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BackendKind {
    Http,
    Mock,
}

#[derive(Args)]
struct BackendArgs {
    #[arg(long, value_enum, default_value = "mock")]
    backend: BackendKind,
    /// Model name sent to the HTTP backend.
    #[arg(long, default_value = "default")]
    model: String,
    /// Embedding model for the HTTP backend; defaults to --model.
    #[arg(long)]
    embedding_model: Option<String>,
    /// Issue one request per sample instead of using `n`.
    #[arg(long)]
    no_native_n: bool,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    backend: BackendArgs,
    #[arg(long, default_value_t = 8)]
    workers: usize,
    /// Continue the checkpoint already in --out.
    #[arg(long)]
    resume: bool,
    /// Built-in template id or path to a template JSON file.
    #[arg(long)]
    template: Option<String>,
    #[arg(long)]
    include_embeddings: bool,
    #[arg(long)]
    fsync: bool,
    #[arg(long, default_value_t = 2)]
    retry_budget: u32,
    /// Keep expanding other parents when one fails.
    #[arg(long)]
    continue_on_error: bool,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Sharegpt,
    Jsonl,
    Pt,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SystemMode {
    Omit,
    Include,
    Inline,
}

#[derive(Args)]
struct ExportArgs {
    /// Checkpoint directory written by `generate`.
    #[arg(long)]
    tree: PathBuf,
    #[arg(long, value_enum)]
    format: Format,
    #[arg(long)]
    out: PathBuf,
    /// `full`, `fixed:K`, `gaussian`, or `mixture:T=W,T=W,...`.
    #[arg(long)]
    turn_policy: Option<String>,
    #[arg(long)]
    target_size: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "omit")]
    system: SystemMode,
    /// Export an incomplete tree up to its deepest finished layer.
    #[arg(long)]
    permissive: bool,
}

#[derive(Args)]
struct StatsArgs {
    /// ShareGPT `.json` or `.jsonl` corpus.
    #[arg(long)]
    corpus: PathBuf,
    /// Checkpoint directory; adds shortfall and dedup counts.
    #[arg(long)]
    tree: Option<PathBuf>,
    /// Sample this many record pairs for cosine diversity.
    #[arg(long)]
    diversity_pairs: Option<usize>,
    /// Also write record embeddings as TSV.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    backend: BackendArgs,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    corpus: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Hard(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Hard(e.into())
    }
}

type CmdResult = Result<u8, Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn print_json(value: &Value) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializable"));
}

fn backends(args: &BackendArgs) -> anyhow::Result<Backends> {
    match args.backend {
        BackendKind::Mock => Ok(Backends::shared(Arc::new(MockBackend::new()))),
        BackendKind::Http => {
            let mut config = HttpConfig::from_env(Some(DEFAULT_API_BASE), &args.model)?;
            if let Some(m) = &args.embedding_model {
                config.embedding_model = m.clone();
            }
            config.native_n = !args.no_native_n;
            Ok(Backends::shared(Arc::new(HttpBackend::new(config)?)))
        }
    }
}

fn cmd_generate(args: GenerateArgs) -> CmdResult {
    if args.workers == 0 {
        return Err(usage("--workers must be positive"));
    }
    let config = TreeConfig::from_path(&args.config)?;
    let store = CheckpointStore::new(&args.out);
    if args.resume && !store.exists() {
        return Err(anyhow!("no checkpoint in {}", args.out.display()).into());
    }
    if !args.resume && store.exists() {
        return Err(anyhow!(
            "{} already holds a checkpoint; pass --resume to continue it",
            args.out.display()
        )
        .into());
    }
    let template = match &args.template {
        Some(t) => Some(ChatTemplate::resolve(t)?),
        None => None,
    };
    let backends = backends(&args.backend)?;
    let options = RunOptions {
        workers: args.workers,
        include_embeddings: args.include_embeddings,
        retry_budget: args.retry_budget,
        failure_policy: if args.continue_on_error {
            FailurePolicy::Continue
        } else {
            FailurePolicy::Abort
        },
        fsync: args.fsync,
        template,
        ..RunOptions::default()
    };
    let report = scheduler::run(&config, &backends, &store, &options)?;
    for failure in &report.failures {
        eprintln!("failed: {failure}");
    }
    let manifest = store.read_manifest()?;
    print_json(&serde_json::to_value(&manifest).expect("serializable"));
    match report.status {
        RunStatus::Complete => Ok(0),
        RunStatus::Aborted => {
            eprintln!("run stopped early; continue with --resume");
            Ok(EXIT_RESUMABLE)
        }
    }
}

fn parse_policy(spec: &str, seed: u64, depth_turns: u32, total: Option<usize>) -> Result<TurnPolicy, Failure> {
    let bad = || usage(format!("unrecognized --turn-policy {spec:?}"));
    let policy = match spec.split_once(':') {
        None if spec == "full" => TurnPolicy::FixedK { k: depth_turns },
        None if spec == "gaussian" => TurnPolicy::gaussian(seed),
        Some(("fixed", k)) => TurnPolicy::FixedK {
            k: k.parse().map_err(|_| bad())?,
        },
        Some(("mixture", list)) => {
            let mut weights = BTreeMap::new();
            for item in list.split(',') {
                let (t, w) = item.split_once('=').ok_or_else(bad)?;
                weights.insert(t.trim().parse().map_err(|_| bad())?, w.trim().parse().map_err(|_| bad())?);
            }
            TurnPolicy::Mixture {
                weights,
                sample_seed: seed,
                total: None,
            }
        }
        _ => return Err(bad()),
    };
    Ok(match policy {
        TurnPolicy::Mixture {
            weights, sample_seed, ..
        } => TurnPolicy::Mixture {
            weights,
            sample_seed,
            total,
        },
        fixed => fixed,
    })
}

fn cmd_export(args: ExportArgs) -> CmdResult {
    if args.format == Format::Pt {
        if args.turn_policy.is_some() || args.target_size.is_some() {
            return Err(usage("--format pt takes no --turn-policy or --target-size"));
        }
        if args.system != SystemMode::Omit {
            return Err(usage("--format pt takes no --system"));
        }
    }
    let (stored, tree) = CheckpointStore::new(&args.tree)
        .load()
        .with_context(|| format!("loading {}", args.tree.display()))?;
    if args.format == Format::Pt {
        let n = export_pt(&tree, &stored.template, &args.out)?;
        print_json(&json!({ "format": "pt", "records": n, "out": args.out }));
        return Ok(0);
    }

    let depth_turns = (stored.config.depth() / 2) as u32;
    let spec = args.turn_policy.as_deref().unwrap_or("full");
    let policy = parse_policy(spec, args.seed, depth_turns, args.target_size)?;
    let mut records = build_corpus(&tree, &policy, args.permissive)?;
    if let (TurnPolicy::FixedK { .. }, Some(n)) = (&policy, args.target_size) {
        records = sample_to_size(&records, n, args.seed)?;
    }
    let system = match args.system {
        SystemMode::Omit => SystemPrompt::Omit,
        SystemMode::Include => SystemPrompt::Include,
        SystemMode::Inline => SystemPrompt::Inline,
    };
    match args.format {
        Format::Sharegpt => export_sharegpt(&records, &args.out, system)?,
        Format::Jsonl => export_jsonl(&records, &args.out, system)?,
        Format::Pt => unreachable!("handled above"),
    }
    let name = if args.format == Format::Sharegpt { "sharegpt" } else { "jsonl" };
    print_json(&json!({ "format": name, "records": records.len(), "out": args.out }));
    Ok(0)
}

fn cmd_stats(args: StatsArgs) -> CmdResult {
    let records = import_records(&args.corpus)?;
    let mut stats = compute_stats(&records);
    if let Some(dir) = &args.tree {
        let (_, tree) = CheckpointStore::new(dir).load()?;
        stats = stats.with_tree(&tree);
    }
    let mut out = serde_json::to_value(&stats).expect("serializable");
    if args.diversity_pairs.is_some() || args.embeddings.is_some() {
        let backends = backends(&args.backend)?;
        if let Some(n) = args.diversity_pairs {
            let d = diversity_sample(&records, backends.embedder.as_ref(), n, args.seed)?;
            out["diversity"] = serde_json::to_value(d).expect("serializable");
        }
        if let Some(path) = &args.embeddings {
            export_embeddings(&records, backends.embedder.as_ref(), path)?;
        }
    }
    print_json(&out);
    Ok(0)
}

fn validate_config(path: &Path) -> CmdResult {
    let config = TreeConfig::from_path(path)?;
    let report = config.validate();
    let mut out = json!({
        "valid": report.is_ok(),
        "errors": report.errors,
        "warnings": report.warnings,
        "depth": config.depth(),
        "branching": config.branching(),
        "config_hash": config.hash_hex(),
    });
    if report.is_ok() {
        out["shape"] = json!(format!("{:?}", config.shape()).to_lowercase());
        out["leaf_count"] = json!(treegen::tree::expected_leaf_count(&config)?);
        out["node_count"] = json!(expected_node_count(&config)?);
    }
    print_json(&out);
    Ok(if report.is_ok() { 0 } else { EXIT_HARD })
}

fn cmd_validate(args: ValidateArgs) -> CmdResult {
    match (&args.config, &args.corpus) {
        (Some(config), None) => validate_config(config),
        (None, Some(corpus)) => {
            let records = import_records(corpus)?;
            let mut ids = std::collections::BTreeSet::new();
            for r in &records {
                if !ids.insert(&r.id) {
                    return Err(anyhow!("duplicate record id {}", r.id).into());
                }
            }
            print_json(&json!({ "valid": true, "records": records.len() }));
            Ok(0)
        }
        _ => Err(usage("validate takes exactly one of --config or --corpus")),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Export(a) => cmd_export(a),
        Command::Stats(a) => cmd_stats(a),
        Command::Validate(a) => cmd_validate(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(Failure::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Hard(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_HARD)
        }
    }
}
