//! `linkforge run`: the declared stages in dependency order, with
//! content-hash caching and a run manifest.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{Duration, Instant};

use anyhow::{anyhow, Context};
use linkforge::augment::StrategyWeights;
use linkforge::candidates::{Mode, DEFAULT_NEGATIVES, DEFAULT_WINDOW};
use linkforge::diff::ClassifierConfig;
use linkforge::eval::DEFAULT_ITERATIONS;
use linkforge::rank::external::DEFAULT_TIMEOUT;
use linkforge::rank::{Bm25Params, Method};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use tracing::info;

use crate::error::{CliError, CliResult};
use crate::io;
use crate::stages::{self, Source};

pub const DEFAULT_SEED: u64 = 13;
pub const MANIFEST: &str = "manifest.json";
/// Wall-clock durations live apart from the manifest so that equal runs
/// produce byte-identical manifests.
pub const TIMINGS: &str = "timings.json";
const MANIFEST_SCHEMA: &str = "linkforge-manifest/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Ingest,
    Diff,
    Candidates,
    Augment,
    Rank,
    Eval,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Ingest,
        Stage::Diff,
        Stage::Candidates,
        Stage::Augment,
        Stage::Rank,
        Stage::Eval,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Diff => "diff",
            Stage::Candidates => "candidates",
            Stage::Augment => "augment",
            Stage::Rank => "rank",
            Stage::Eval => "eval",
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub run: RunSection,
    pub ingest: Option<IngestSection>,
    #[serde(default)]
    pub diff: DiffSection,
    #[serde(default)]
    pub candidates: CandidatesSection,
    #[serde(default)]
    pub augment: AugmentSection,
    #[serde(default)]
    pub rank: RankSection,
    #[serde(default)]
    pub eval: EvalSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub out_dir: PathBuf,
    pub stages: Vec<Stage>,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            seed: None,
            workers: None,
            out_dir: PathBuf::from("out"),
            stages: Stage::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestSection {
    pub snapshot_a: String,
    pub dir_a: PathBuf,
    pub snapshot_b: String,
    pub dir_b: PathBuf,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiffSection {
    pub histories: Option<PathBuf>,
    pub jaccard_threshold: f64,
    pub mention_slack_tokens: usize,
}

impl Default for DiffSection {
    fn default() -> Self {
        let c = ClassifierConfig::default();
        Self {
            histories: None,
            jaccard_threshold: c.jaccard_threshold,
            mention_slack_tokens: c.mention_slack_tokens,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CandidatesSection {
    pub window: usize,
    pub negatives: usize,
}

impl Default for CandidatesSection {
    fn default() -> Self {
        Self {
            window: DEFAULT_WINDOW,
            negatives: DEFAULT_NEGATIVES,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentSection {
    pub weights: String,
    pub epoch: u64,
}

impl Default for AugmentSection {
    fn default() -> Self {
        Self {
            weights: StrategyWeights::default().to_string(),
            epoch: 0,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RankSection {
    pub methods: Vec<String>,
    pub scorer_cmd: Option<String>,
    pub k1: f64,
    pub b: f64,
    pub stopwords: bool,
    pub timeout_secs: u64,
    pub in_flight: usize,
}

impl Default for RankSection {
    fn default() -> Self {
        let p = Bm25Params::default();
        Self {
            methods: vec!["random".into(), "string_match".into(), "bm25".into()],
            scorer_cmd: None,
            k1: p.k1,
            b: p.b,
            stopwords: false,
            timeout_secs: DEFAULT_TIMEOUT.as_secs(),
            in_flight: 8,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub iterations: usize,
    pub hits_k: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            iterations: DEFAULT_ITERATIONS,
            hits_k: 5,
        }
    }
}

impl Config {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))
            .map_err(CliError::Data)?;
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    pub key: String,
    pub seed: u64,
    pub params: Value,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub cache_hit: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema: String,
    pub seed: u64,
    pub stages: Vec<StageRecord>,
}

/// Overrides from the command line.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
}

struct Plan {
    stage: Stage,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    params: Value,
}

/// Fully resolved settings for one run.
struct Run {
    base: PathBuf,
    out: PathBuf,
    seed: u64,
    cfg: Config,
    methods: Vec<Method>,
    weights: StrategyWeights,
    bm25: Bm25Params,
}

impl Run {
    fn o(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn b(&self, p: &Path) -> PathBuf {
        self.base.join(p)
    }

    fn rankings(&self, m: Method) -> PathBuf {
        self.o(&format!("rankings.{}.ndjson", m.as_str()))
    }

    /// Manifest paths are relative to the output or config directory, so
    /// manifests of runs in different places compare equal.
    fn label(&self, p: &Path) -> String {
        p.strip_prefix(&self.out)
            .or_else(|_| p.strip_prefix(&self.base))
            .unwrap_or(p)
            .to_string_lossy()
            .into_owned()
    }

    fn ingest_section(&self) -> CliResult<&IngestSection> {
        self.cfg
            .ingest
            .as_ref()
            .ok_or_else(|| CliError::Usage("stage ingest needs an [ingest] section".into()))
    }

    fn plan(&self, stage: Stage) -> CliResult<Plan> {
        let c = &self.cfg;
        let plan = match stage {
            Stage::Ingest => {
                let i = self.ingest_section()?;
                Plan {
                    stage,
                    inputs: vec![self.b(&i.dir_a), self.b(&i.dir_b)],
                    outputs: ["a.articles", "a.links", "b.articles", "b.links"]
                        .iter()
                        .map(|n| self.o(&format!("{n}.ndjson")))
                        .collect(),
                    params: json!({"snapshot_a": i.snapshot_a, "snapshot_b": i.snapshot_b}),
                }
            }
            Stage::Diff => {
                let h = c
                    .diff
                    .histories
                    .as_ref()
                    .ok_or_else(|| CliError::Usage("stage diff needs [diff] histories".into()))?;
                Plan {
                    stage,
                    inputs: vec![self.o("a.links.ndjson"), self.o("b.links.ndjson"), self.b(h)],
                    outputs: vec![self.o("added.events.ndjson"), self.o("before.articles.ndjson")],
                    params: json!({
                        "jaccard_threshold": c.diff.jaccard_threshold,
                        "mention_slack_tokens": c.diff.mention_slack_tokens,
                    }),
                }
            }
            Stage::Candidates => Plan {
                stage,
                inputs: vec![
                    self.o("added.events.ndjson"),
                    self.o("before.articles.ndjson"),
                    self.o("a.links.ndjson"),
                    self.o("a.articles.ndjson"),
                ],
                outputs: vec![
                    self.o("test.examples.ndjson"),
                    self.o("missing_section.events.ndjson"),
                    self.o("train.examples.ndjson"),
                ],
                params: json!({"window": c.candidates.window, "negatives": c.candidates.negatives}),
            },
            Stage::Augment => Plan {
                stage,
                inputs: vec![self.o("train.examples.ndjson")],
                outputs: vec![self.o("train.augmented.ndjson")],
                params: json!({"weights": self.weights.to_string(), "epoch": c.augment.epoch}),
            },
            Stage::Rank => Plan {
                stage,
                inputs: vec![self.o("test.examples.ndjson")],
                outputs: self.methods.iter().map(|&m| self.rankings(m)).collect(),
                params: json!({
                    "methods": self.methods.iter().map(|m| m.as_str()).collect::<Vec<_>>(),
                    "k1": self.bm25.k1,
                    "b": self.bm25.b,
                    "stopwords": c.rank.stopwords,
                    "scorer_cmd": c.rank.scorer_cmd,
                }),
            },
            Stage::Eval => Plan {
                stage,
                inputs: self
                    .methods
                    .iter()
                    .map(|&m| self.rankings(m))
                    .chain([self.o("test.examples.ndjson")])
                    .collect(),
                outputs: vec![self.o("report.ndjson"), self.o("report.txt")],
                params: json!({"iterations": c.eval.iterations, "hits_k": c.eval.hits_k}),
            },
        };
        Ok(plan)
    }

    fn execute(&self, stage: Stage) -> CliResult<()> {
        let c = &self.cfg;
        match stage {
            Stage::Ingest => {
                let i = self.ingest_section()?;
                for (label, dir, side) in [(&i.snapshot_a, &i.dir_a, "a"), (&i.snapshot_b, &i.dir_b, "b")] {
                    stages::ingest(&stages::IngestArgs {
                        snapshot: label,
                        input: &self.b(dir),
                        articles_out: &self.o(&format!("{side}.articles.ndjson")),
                        links_out: &self.o(&format!("{side}.links.ndjson")),
                    })?;
                }
            }
            Stage::Diff => stages::diff(&stages::DiffArgs {
                snap_a: &self.o("a.links.ndjson"),
                snap_b: &self.o("b.links.ndjson"),
                histories: &self.b(c.diff.histories.as_ref().expect("checked in plan")),
                out: &self.o("added.events.ndjson"),
                before_out: Some(&self.o("before.articles.ndjson")),
                classifier: ClassifierConfig {
                    jaccard_threshold: c.diff.jaccard_threshold,
                    mention_slack_tokens: c.diff.mention_slack_tokens,
                },
            })?,
            Stage::Candidates => {
                stages::candidates(&stages::CandidatesArgs {
                    source: Source::Events(&self.o("added.events.ndjson")),
                    articles: &self.o("before.articles.ndjson"),
                    mode: Mode::Eval,
                    window: c.candidates.window,
                    seed: self.seed,
                    out: &self.o("test.examples.ndjson"),
                    mentions: Some(&self.o("a.links.ndjson")),
                    side_channel: Some(&self.o("missing_section.events.ndjson")),
                })?;
                stages::candidates(&stages::CandidatesArgs {
                    source: Source::Links(&self.o("a.links.ndjson")),
                    articles: &self.o("a.articles.ndjson"),
                    mode: Mode::Train {
                        negatives: c.candidates.negatives,
                    },
                    window: c.candidates.window,
                    seed: self.seed,
                    out: &self.o("train.examples.ndjson"),
                    mentions: None,
                    side_channel: None,
                })?;
            }
            Stage::Augment => stages::augment(&stages::AugmentArgs {
                input: &self.o("train.examples.ndjson"),
                out: &self.o("train.augmented.ndjson"),
                weights: self.weights,
                seed: self.seed,
                epoch: c.augment.epoch,
            })?,
            Stage::Rank => {
                for &method in &self.methods {
                    stages::rank(&stages::RankArgs {
                        method,
                        scorer_cmd: c.rank.scorer_cmd.as_deref(),
                        input: &self.o("test.examples.ndjson"),
                        out: &self.rankings(method),
                        seed: self.seed,
                        bm25: self.bm25,
                        stopwords: c.rank.stopwords,
                        timeout: Duration::from_secs(c.rank.timeout_secs),
                        in_flight: c.rank.in_flight,
                    })?;
                }
            }
            Stage::Eval => {
                let rankings: Vec<PathBuf> = self.methods.iter().map(|&m| self.rankings(m)).collect();
                let report = stages::evaluate_files(&stages::EvalArgs {
                    rankings: &rankings,
                    examples: &self.o("test.examples.ndjson"),
                    k: c.eval.hits_k,
                    iterations: c.eval.iterations,
                    seed: self.seed,
                })?;
                io::write(&self.o("report.ndjson"), &report.rows())?;
                io::write_text(&self.o("report.txt"), &report.table())?;
            }
        }
        Ok(())
    }
}

fn hashes(run: &Run, paths: &[PathBuf]) -> anyhow::Result<BTreeMap<String, String>> {
    paths.iter().map(|p| Ok((run.label(p), io::content_hash(p)?))).collect()
}

fn cache_key(stage: Stage, seed: u64, params: &Value, inputs: &BTreeMap<String, String>) -> String {
    let body = json!({"stage": stage, "seed": seed, "params": params, "inputs": inputs});
    hex::encode(Sha256::digest(body.to_string().as_bytes()))
}

fn still_valid(run: &Run, prev: &StageRecord, outputs: &[PathBuf]) -> bool {
    outputs.len() == prev.outputs.len()
        && outputs.iter().all(|p| {
            prev.outputs
                .get(&run.label(p))
                .is_some_and(|h| io::content_hash(p).is_ok_and(|now| &now == h))
        })
}

fn write_manifest(run: &Run, records: &[StageRecord], timings: &BTreeMap<&str, f64>) -> anyhow::Result<()> {
    let manifest = Manifest {
        schema: MANIFEST_SCHEMA.to_string(),
        seed: run.seed,
        stages: records.to_vec(),
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    io::write_text(&run.o(MANIFEST), &text)?;
    let mut t = serde_json::to_string_pretty(timings)?;
    t.push('\n');
    io::write_text(&run.o(TIMINGS), &t)
}

fn resolve(cfg: Config, config_path: &Path, opts: &RunOptions) -> CliResult<Run> {
    let base = config_path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    let out = opts.out_dir.clone().unwrap_or_else(|| base.join(&cfg.run.out_dir));
    let seed = opts.seed.or(cfg.run.seed).unwrap_or(DEFAULT_SEED);
    let usage = |e: String| CliError::Usage(e);
    let methods = cfg
        .rank
        .methods
        .iter()
        .map(|m| Method::from_str(m))
        .collect::<Result<Vec<_>, _>>()
        .map_err(usage)?;
    if methods.is_empty() {
        return Err(usage("[rank] methods is empty".into()));
    }
    if methods.contains(&Method::External) && cfg.rank.scorer_cmd.is_none() {
        return Err(usage("method external needs [rank] scorer_cmd".into()));
    }
    let weights = StrategyWeights::from_str(&cfg.augment.weights).map_err(|e| usage(e.to_string()))?;
    let bm25 = Bm25Params::new(cfg.rank.k1, cfg.rank.b).map_err(usage)?;
    Ok(Run {
        base,
        out,
        seed,
        cfg,
        methods,
        weights,
        bm25,
    })
}

/// Run every declared stage. Inputs that neither exist nor come from an
/// earlier declared stage are reported before anything runs.
pub fn run(config_path: &Path, opts: &RunOptions) -> CliResult<Manifest> {
    let cfg = Config::load(config_path)?;
    let run = resolve(cfg, config_path, opts)?;
    let declared: HashSet<Stage> = run.cfg.run.stages.iter().copied().collect();
    let order: Vec<Stage> = Stage::ALL.into_iter().filter(|s| declared.contains(s)).collect();

    let plans = order.iter().map(|&s| run.plan(s)).collect::<CliResult<Vec<_>>>()?;
    let mut produced: HashSet<&Path> = HashSet::new();
    for plan in &plans {
        for input in &plan.inputs {
            if !produced.contains(input.as_path()) && !input.exists() {
                return Err(anyhow!("stage {}: missing input {}", plan.stage.as_str(), input.display()).into());
            }
        }
        produced.extend(plan.outputs.iter().map(PathBuf::as_path));
    }

    let previous: Option<Manifest> = fs::read_to_string(run.o(MANIFEST))
        .ok()
        .and_then(|t| serde_json::from_str(&t).ok());
    fs::create_dir_all(&run.out)
        .with_context(|| format!("creating {}", run.out.display()))
        .map_err(CliError::Data)?;

    let mut records = Vec::new();
    let mut timings = BTreeMap::new();
    for plan in &plans {
        let name = plan.stage.as_str();
        let started = Instant::now();
        let inputs = hashes(&run, &plan.inputs).map_err(|e| CliError::Data(e).in_stage(name))?;
        let key = cache_key(plan.stage, run.seed, &plan.params, &inputs);
        let hit = previous
            .as_ref()
            .and_then(|m| m.stages.iter().find(|r| r.stage == plan.stage && r.key == key))
            .filter(|r| still_valid(&run, r, &plan.outputs));
        let record = if let Some(prev) = hit {
            info!(stage = name, event = "cache_hit", "skipped");
            StageRecord {
                cache_hit: true,
                ..prev.clone()
            }
        } else {
            info!(stage = name, event = "start");
            if let Err(e) = run.execute(plan.stage) {
                write_manifest(&run, &records, &timings).map_err(CliError::Data)?;
                return Err(e.in_stage(name));
            }
            StageRecord {
                stage: plan.stage,
                key,
                seed: run.seed,
                params: plan.params.clone(),
                inputs,
                outputs: hashes(&run, &plan.outputs).map_err(|e| CliError::Data(e).in_stage(name))?,
                cache_hit: false,
            }
        };
        timings.insert(name, started.elapsed().as_secs_f64());
        records.push(record);
    }
    write_manifest(&run, &records, &timings).map_err(CliError::Data)?;
    Ok(Manifest {
        schema: MANIFEST_SCHEMA.to_string(),
        seed: run.seed,
        stages: records,
    })
}

/// Seed and worker count declared in a config file, for subcommands given
/// `--config`.
pub fn globals(config_path: &Path) -> CliResult<(Option<u64>, Option<usize>)> {
    let cfg = Config::load(config_path)?;
    Ok((cfg.run.seed, cfg.run.workers))
}
