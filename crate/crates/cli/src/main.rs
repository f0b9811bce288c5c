//! `structeval`: validate grammars, evaluate synthetic corpora, generate DP
//! baselines, compare reports and export TSTR splits.
//!
//! Exit codes: 0 success, 1 user or configuration error, 2 I/O error.

mod config;

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use structeval::corpus::{export_tstr_split, load_corpus, load_sidecar_labels, AttributeKind, CorpusError, CorpusFormat, CorpusRole};
use structeval::dpgen::{fit_and_generate, DpParams};
use structeval::grammar::TerminalKind;
use structeval::metrics::{evaluate, MetricConfig, RunInfo};
use structeval::report::{compare, Bounds, EvalReport, ReportError};
use structeval::Grammar;

use config::{parse_config, EvalConfigFile};

#[derive(Parser)]
#[command(name = "structeval", version, about = "Evaluate synthetic structured-text datasets against real ones")]
struct Cli {
    /// Worker threads for per-sample work (default: all logical CPUs).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// More logging (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load a grammar and print a summary.
    ValidateGrammar {
        path: PathBuf,
    },
    /// Compute the metric suite for a synthetic corpus.
    Evaluate(EvaluateArgs),
    /// Generate a synthetic corpus with the DP histogram generator.
    Gen(GenArgs),
    /// Tabulate several reports and compute radar scores.
    Compare(CompareArgs),
    /// Write a seeded train/test split with labels.
    ExportTstr(ExportArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Jsonl,
    Lines,
}

fn corpus_format(path: &Path, flag: Option<Format>) -> CorpusFormat {
    match flag {
        Some(Format::Jsonl) => CorpusFormat::Jsonl,
        Some(Format::Lines) => CorpusFormat::Lines,
        None => CorpusFormat::from_path(path),
    }
}

#[derive(Args)]
struct EvaluateArgs {
    /// Grammar file; overrides `grammar` in the config.
    #[arg(long)]
    grammar: Option<PathBuf>,
    #[arg(long)]
    real: PathBuf,
    #[arg(long)]
    synth: PathBuf,
    /// JSON config (key node pairs, attributes, knn, embedding, ...).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Where to write the report JSON.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    epsilon: Option<f64>,
    /// Record the current time in the report.
    #[arg(long)]
    timestamp: bool,
    /// Input format (default: from the file extension).
    #[arg(long, value_enum)]
    format: Option<Format>,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    grammar: PathBuf,
    #[arg(long)]
    real: PathBuf,
    #[arg(long)]
    epsilon: f64,
    /// Number of samples to generate.
    #[arg(long)]
    n: usize,
    /// Random seed (default: drawn from the OS and printed).
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 64)]
    max_depth: usize,
    #[arg(long, default_value_t = 1024)]
    vocab_size: usize,
    #[arg(long, value_enum)]
    format: Option<Format>,
}

#[derive(Args)]
struct CompareArgs {
    /// Report JSON files.
    #[arg(required = true)]
    reports: Vec<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// JSON object of metric name to best achievable value.
    #[arg(long)]
    bounds: Option<PathBuf>,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Sidecar label file, JSONL `{id, value}`.
    #[arg(long)]
    labels: PathBuf,
    #[arg(long, default_value = "value")]
    label_key: String,
    /// Treat labels as numbers instead of categories.
    #[arg(long)]
    numeric: bool,
    #[arg(long)]
    test_fraction: f64,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for train.jsonl and test.jsonl.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum)]
    format: Option<Format>,
}

/// Failures that map to exit code 2.
fn is_io(err: &anyhow::Error) -> bool {
    err.chain().any(|cause| {
        cause.is::<std::io::Error>()
            || matches!(
                cause.downcast_ref::<CorpusError>(),
                Some(CorpusError::Io { .. } | CorpusError::MissingFile(_))
            )
            || matches!(cause.downcast_ref::<ReportError>(), Some(ReportError::Io { .. }))
    })
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

fn load_grammar(path: &Path) -> Result<Grammar> {
    let text = read(path)?;
    Grammar::load(&text).with_context(|| format!("invalid grammar {}", path.display()))
}

fn seed_or_entropy(seed: Option<u64>) -> u64 {
    seed.unwrap_or_else(|| {
        let s = rand::random();
        eprintln!("seed: {s}");
        s
    })
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn validate_grammar(path: &Path) -> Result<()> {
    let g = load_grammar(path)?;
    println!(
        "{} rules, {} regex terminals",
        g.rules().len(),
        g.count_terminals(TerminalKind::Regex)
    );
    println!(
        "start symbol `{}`; {} user rules, {} auxiliary; {} literal terminals",
        g.start_symbol(),
        g.user_rule_count(),
        g.auxiliary_rule_count(),
        g.count_terminals(TerminalKind::Literal)
    );
    Ok(())
}

fn run_evaluate(args: &EvaluateArgs) -> Result<()> {
    let file = match &args.config {
        Some(path) => {
            let text = read(path)?;
            let base = path.parent().unwrap_or(Path::new("."));
            parse_config(&text, base)?
        }
        None => EvalConfigFile {
            grammar: None,
            metrics: MetricConfig::default(),
            report: Default::default(),
        },
    };
    let grammar_path = match (&args.grammar, &file.grammar) {
        (Some(p), _) | (None, Some(p)) => p.clone(),
        (None, None) => bail!("no grammar given: pass --grammar or set `grammar` in the config"),
    };
    let grammar = load_grammar(&grammar_path)?;
    let real = load_corpus(&args.real, corpus_format(&args.real, args.format), CorpusRole::Real)?;
    let synth = load_corpus(&args.synth, corpus_format(&args.synth, args.format), CorpusRole::Synthetic)?;
    let info = RunInfo {
        dataset: args.dataset.clone().or(file.report.dataset.clone()).unwrap_or_else(|| stem(&args.real)),
        method: args.method.clone().or(file.report.method.clone()).unwrap_or_else(|| stem(&args.synth)),
        epsilon: args.epsilon.or(file.report.epsilon),
    };
    let mut report = evaluate(&real, &synth, &grammar, &file.metrics, &info)?;
    if args.timestamp || file.report.timestamp {
        report.created_at = Some(SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0));
    }
    report.save(&args.out)?;

    println!("{} / {} ({} real, {} synthetic samples)", report.dataset, report.method, real.len(), synth.len());
    let width = report.metrics.iter().map(|m| m.name.len()).max().unwrap_or(0);
    for m in &report.metrics {
        let arrow = match m.direction {
            structeval::metrics::Direction::HigherBetter => "↑",
            structeval::metrics::Direction::LowerBetter => "↓",
        };
        println!("  {:<width$}  {:>10} {arrow}  n={}", m.name, m.display_value(), m.support);
    }
    println!("report written to {}", args.out.display());
    Ok(())
}

fn run_gen(args: &GenArgs) -> Result<()> {
    let grammar = load_grammar(&args.grammar)?;
    let real = load_corpus(&args.real, corpus_format(&args.real, args.format), CorpusRole::Real)?;
    let seed = seed_or_entropy(args.seed);
    let mut params = DpParams::new(args.epsilon, args.n, seed);
    params.max_derivation_depth = args.max_depth;
    params.vocab_size = args.vocab_size;
    let synth = fit_and_generate(&real, &grammar, &params)?;
    synth.write_jsonl(&args.out)?;
    println!("wrote {} samples to {} (epsilon {}, seed {seed})", synth.len(), args.out.display(), args.epsilon);
    Ok(())
}

fn run_compare(args: &CompareArgs) -> Result<()> {
    let reports = args
        .reports
        .iter()
        .map(|p| EvalReport::load(p))
        .collect::<Result<Vec<_>, _>>()?;
    let bounds = match &args.bounds {
        Some(p) => Bounds(serde_json::from_str::<HashMap<String, f64>>(&read(p)?)?.into_iter().collect()),
        None => Bounds::default(),
    };
    let files = compare(&reports, &args.out, &bounds)?;
    for p in [&files.raw_csv, &files.rescaled_csv, &files.bundle_json] {
        println!("{}", p.display());
    }
    Ok(())
}

fn run_export(args: &ExportArgs) -> Result<()> {
    let corpus = load_corpus(&args.corpus, corpus_format(&args.corpus, args.format), CorpusRole::Real)?;
    let kind = if args.numeric { AttributeKind::Numeric } else { AttributeKind::Categorical };
    let labels = load_sidecar_labels(&args.labels, &args.label_key, kind)?;
    let seed = seed_or_entropy(args.seed);
    let split = export_tstr_split(&corpus, &labels, args.test_fraction, seed)?;
    let (train, test) = split.write(&args.out)?;
    println!("{} train -> {}", split.train.len(), train.display());
    println!("{} test -> {}", split.test.len(), test.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            bail!("--jobs must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global()?;
    }
    match &cli.command {
        Command::ValidateGrammar { path } => validate_grammar(path),
        Command::Evaluate(a) => run_evaluate(a),
        Command::Gen(a) => run_gen(a),
        Command::Compare(a) => run_compare(a),
        Command::ExportTstr(a) => run_export(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match std::panic::catch_unwind(|| run(cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if is_io(&e) { 2 } else { 1 })
        }
        Err(_) => ExitCode::from(1),
    }
}
