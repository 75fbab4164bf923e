//! `linkforge`: the entity-insertion data pipeline from the command line.
//!
//! Exit codes: 0 success, 1 usage, 2 data error, 3 scorer-protocol error.

mod error;
mod io;
mod pipeline;
mod stages;

use std::io::{stdin, stdout, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use linkforge::augment::StrategyWeights;
use linkforge::candidates::{Mode, DEFAULT_NEGATIVES, DEFAULT_WINDOW};
use linkforge::diff::ClassifierConfig;
use linkforge::eval::DEFAULT_ITERATIONS;
use linkforge::rank::external::{run_echo_scorer, EchoMode};
use linkforge::rank::{Bm25Params, Method};
use tracing::error;

use crate::error::{CliError, CliResult};
use crate::pipeline::{RunOptions, DEFAULT_SEED};
use crate::stages::Source;

#[derive(Parser)]
#[command(name = "linkforge", version, about = "Entity-insertion corpus pipeline")]
struct Cli {
    /// Global seed for every stochastic step.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Pipeline config; also supplies the seed and worker count to other
    /// subcommands.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Log level on standard error.
    #[arg(long, global = true, default_value = "info")]
    log_level: tracing::Level,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a snapshot directory into article and link records.
    Ingest {
        #[arg(long)]
        snapshot: String,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        links: PathBuf,
    },
    /// Trace links added between two snapshots and classify each insertion.
    Diff {
        #[arg(long)]
        snap_a: PathBuf,
        #[arg(long)]
        snap_b: PathBuf,
        #[arg(long)]
        histories: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write the before-version article of every event.
        #[arg(long)]
        before_articles: Option<PathBuf>,
        #[arg(long, default_value_t = ClassifierConfig::default().jaccard_threshold)]
        jaccard_threshold: f64,
    },
    /// Build ranking examples from events or existing links.
    Candidates(CandidatesCmd),
    /// Apply dynamic context removal to examples.
    Augment {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = StrategyWeights::default())]
        weights: StrategyWeights,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        epoch: u64,
    },
    /// Rank every example's candidates.
    Rank(RankCmd),
    /// Score rankings against gold and report Hits@1 and MRR.
    Eval {
        /// One file per method.
        #[arg(long, required = true, num_args = 1..)]
        rankings: Vec<PathBuf>,
        #[arg(long)]
        examples: PathBuf,
        /// Defaults to standard output.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
        #[arg(long, default_value_t = DEFAULT_ITERATIONS)]
        iterations: usize,
        #[arg(long, default_value_t = 5)]
        hits_k: usize,
    },
    /// Scenario frequencies and candidate-count CCDF of any record file.
    Stats {
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Run the stages declared in the pipeline config.
    Run {
        /// Write outputs here instead of the config's out_dir.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Reference scorer for the line protocol: candidate i scores i.
    #[command(hide = true)]
    EchoScorer {
        #[arg(long, default_value = "index")]
        mode: EchoMode,
    },
}

#[derive(Args)]
#[command(group = clap::ArgGroup::new("source").required(true).args(["events", "existing_links"]))]
struct CandidatesCmd {
    #[arg(long)]
    events: Option<PathBuf>,
    /// Build training examples from links already in the articles.
    #[arg(long)]
    existing_links: Option<PathBuf>,
    #[arg(long)]
    articles: PathBuf,
    #[arg(long, value_enum)]
    mode: ModeArg,
    #[arg(long, default_value_t = DEFAULT_NEGATIVES)]
    negatives: usize,
    #[arg(long, default_value_t = DEFAULT_WINDOW)]
    window: usize,
    #[arg(long)]
    out: PathBuf,
    /// Link file supplying each target's known mentions.
    #[arg(long)]
    mentions: Option<PathBuf>,
    /// Where missing_section events are written.
    #[arg(long)]
    side_channel: Option<PathBuf>,
}

#[derive(Args)]
struct RankCmd {
    #[arg(long)]
    method: Method,
    #[arg(long)]
    scorer_cmd: Option<String>,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = Bm25Params::default().k1)]
    k1: f64,
    #[arg(long, default_value_t = Bm25Params::default().b)]
    b: f64,
    /// Drop per-language stop words from BM25 terms.
    #[arg(long)]
    stopwords: bool,
    /// Seconds to wait for each scorer reply.
    #[arg(long, default_value_t = 60)]
    timeout: u64,
    #[arg(long, default_value_t = 8)]
    in_flight: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Train,
    Eval,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Table,
    Ndjson,
}

fn dispatch(cli: Cli) -> CliResult<()> {
    let (cfg_seed, cfg_workers) = match &cli.config {
        Some(p) => pipeline::globals(p)?,
        None => (None, None),
    };
    if let Some(n) = cli.workers.or(cfg_workers) {
        if n == 0 {
            return Err(CliError::Usage("--workers must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    let seed = cli.seed.or(cfg_seed).unwrap_or(DEFAULT_SEED);

    match cli.command {
        Command::Ingest {
            snapshot,
            input,
            out,
            links,
        } => stages::ingest(&stages::IngestArgs {
            snapshot: &snapshot,
            input: &input,
            articles_out: &out,
            links_out: &links,
        }),
        Command::Diff {
            snap_a,
            snap_b,
            histories,
            out,
            before_articles,
            jaccard_threshold,
        } => stages::diff(&stages::DiffArgs {
            snap_a: &snap_a,
            snap_b: &snap_b,
            histories: &histories,
            out: &out,
            before_out: before_articles.as_deref(),
            classifier: ClassifierConfig {
                jaccard_threshold,
                ..ClassifierConfig::default()
            },
        }),
        Command::Candidates(c) => {
            let source = match (&c.events, &c.existing_links) {
                (Some(e), None) => Source::Events(e),
                (None, Some(l)) => Source::Links(l),
                _ => unreachable!("clap enforces exactly one source"),
            };
            let mode = match c.mode {
                ModeArg::Train if c.negatives == 0 => {
                    return Err(CliError::Usage("--negatives must be at least 1".into()))
                }
                ModeArg::Train => Mode::Train { negatives: c.negatives },
                ModeArg::Eval => Mode::Eval,
            };
            stages::candidates(&stages::CandidatesArgs {
                source,
                articles: &c.articles,
                mode,
                window: c.window,
                seed,
                out: &c.out,
                mentions: c.mentions.as_deref(),
                side_channel: c.side_channel.as_deref(),
            })
        }
        Command::Augment {
            input,
            weights,
            out,
            epoch,
        } => stages::augment(&stages::AugmentArgs {
            input: &input,
            out: &out,
            weights,
            seed,
            epoch,
        }),
        Command::Rank(r) => {
            let bm25 = Bm25Params::new(r.k1, r.b).map_err(CliError::Usage)?;
            stages::rank(&stages::RankArgs {
                method: r.method,
                scorer_cmd: r.scorer_cmd.as_deref(),
                input: &r.input,
                out: &r.out,
                seed,
                bm25,
                stopwords: r.stopwords,
                timeout: Duration::from_secs(r.timeout),
                in_flight: r.in_flight,
            })
        }
        Command::Eval {
            rankings,
            examples,
            out,
            format,
            iterations,
            hits_k,
        } => {
            let report = stages::evaluate_files(&stages::EvalArgs {
                rankings: &rankings,
                examples: &examples,
                k: hits_k,
                iterations,
                seed,
            })?;
            match (format, out) {
                (Format::Ndjson, Some(p)) => {
                    io::write(&p, &report.rows())?;
                }
                (Format::Table, Some(p)) => io::write_text(&p, &report.table())?,
                (Format::Table, None) => print(&report.table())?,
                (Format::Ndjson, None) => {
                    let mut buf = Vec::new();
                    let mut w = linkforge::model::NdjsonWriter::new(&mut buf, "report").map_err(anyhow::Error::from)?;
                    for row in report.rows() {
                        w.write(&row).map_err(anyhow::Error::from)?;
                    }
                    w.finish().map_err(anyhow::Error::from)?;
                    print(&String::from_utf8(buf).expect("records are UTF-8"))?;
                }
            }
            Ok(())
        }
        Command::Stats { input } => print(&stages::stats(&input)?.render()),
        Command::Run { out_dir } => {
            let config = cli
                .config
                .ok_or_else(|| CliError::Usage("run needs --config <pipeline.toml>".into()))?;
            pipeline::run(
                &config,
                &RunOptions {
                    seed: cli.seed,
                    out_dir,
                },
            )
            .map(|_| ())
        }
        Command::EchoScorer { mode } => {
            run_echo_scorer(stdin().lock(), stdout().lock(), mode).map_err(|e| CliError::Data(e.into()))
        }
    }
}

fn print(text: &str) -> CliResult<()> {
    let mut out = stdout().lock();
    out.write_all(text.as_bytes())
        .and_then(|_| out.flush())
        .map_err(|e| CliError::Data(e.into()))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_max_level(cli.log_level)
        .with_target(false)
        .with_ansi(false)
        .init();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!(exit = e.exit_code(), "{e}");
            ExitCode::from(e.exit_code())
        }
    }
}
