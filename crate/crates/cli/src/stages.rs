//! One function per pipeline stage. Subcommands and `run` share them.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{self, File};
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{anyhow, bail, Context};
use linkforge::augment::{augment_example, StrategyWeights};
use linkforge::candidates::{
    build_example, build_link_example, event_example_id, link_example_id, partition_spans, CandidateError, Mode,
};
use linkforge::diff::{diff_links, trace_insertion, ClassifierConfig, RevisionHistory};
use linkforge::eval::{evaluate, MethodResults, Report};
use linkforge::ids::rng_for;
use linkforge::ingest::{build_target_index, extract_links, parse_article, RawArticle, TargetMeta};
use linkforge::model::{
    ArticleRecord, AugmentedExample, CandidateSpan, InsertionEvent, InsertionScenario, LinkRecord, Ranking,
    RankingExample, RemovalStrategy, Target,
};
use linkforge::rank::external::{ExternalScorer, ProcessTransport};
use linkforge::rank::{rank_bm25, rank_random, rank_string_match, Bm25Params, Method, Stopwords};
use linkforge::stats::{corpus_stats, StatsReport};
use rayon::prelude::*;
use tracing::{info, warn};

use crate::error::{CliError, CliResult};
use crate::io;

/// Known mentions kept per target, most frequent first.
pub const MAX_MENTIONS: usize = 10;

pub struct IngestArgs<'a> {
    pub snapshot: &'a str,
    pub input: &'a Path,
    pub articles_out: &'a Path,
    pub links_out: &'a Path,
}

pub fn ingest(a: &IngestArgs) -> CliResult<()> {
    let files = io::list_files(a.input)?;
    let parsed = files
        .par_iter()
        .map(|f| {
            let text = fs::read_to_string(f).with_context(|| format!("reading {}", f.display()))?;
            let raw = RawArticle::from_markup(text, a.snapshot).with_context(|| f.display().to_string())?;
            parse_article(&raw).with_context(|| f.display().to_string())
        })
        .collect::<anyhow::Result<Vec<_>>>()?;

    let mut rejected: BTreeMap<&str, usize> = BTreeMap::new();
    for p in &parsed {
        if let Some(r) = p.rejection {
            *rejected.entry(r.reason()).or_default() += 1;
        }
    }
    let admitted: Vec<_> = parsed.iter().filter(|p| p.is_admitted()).collect();
    let targets = build_target_index(admitted.iter().map(|p| &p.record));
    let extractions: Vec<_> = admitted.par_iter().map(|p| extract_links(p, &targets)).collect();

    let articles = io::write(a.articles_out, admitted.iter().map(|p| &p.record))?;
    let links = io::write(a.links_out, extractions.iter().flat_map(|e| &e.links))?;
    let self_links: usize = extractions.iter().map(|e| e.self_links).sum();
    let unknown: usize = extractions.iter().map(|e| e.unknown_targets).sum();
    let empty: usize = admitted.iter().map(|p| p.empty_anchors).sum();
    info!(
        stage = "ingest",
        snapshot = a.snapshot,
        files = files.len(),
        articles,
        links,
        no_lead = rejected.get("no lead").copied().unwrap_or(0),
        missing_qid = rejected.get("missing qid").copied().unwrap_or(0),
        self_links,
        unknown_targets = unknown,
        empty_anchors = empty,
        "done"
    );
    Ok(())
}

pub struct DiffArgs<'a> {
    pub snap_a: &'a Path,
    pub snap_b: &'a Path,
    pub histories: &'a Path,
    pub out: &'a Path,
    /// Before-version articles of every traced event, for candidate generation.
    pub before_out: Option<&'a Path>,
    pub classifier: ClassifierConfig,
}

fn by_lang(links: Vec<LinkRecord>) -> BTreeMap<String, Vec<LinkRecord>> {
    let mut out: BTreeMap<String, Vec<LinkRecord>> = BTreeMap::new();
    for l in links {
        out.entry(l.lang.clone()).or_default().push(l);
    }
    out
}

fn load_histories(dir: &Path) -> anyhow::Result<HashMap<(String, String), RevisionHistory>> {
    let files = io::list_files(dir)?;
    let parsed = files
        .par_iter()
        .map(|f| {
            let text = fs::read_to_string(f).with_context(|| format!("reading {}", f.display()))?;
            let h = RevisionHistory::parse(&text).with_context(|| f.display().to_string())?;
            let last = &h.versions.last().expect("histories are non-empty").raw;
            let qid = last
                .qid
                .clone()
                .ok_or_else(|| anyhow!("{}: latest version has no qid", f.display()))?;
            Ok(((last.lang.clone(), qid), f, h))
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    let mut out = HashMap::new();
    for (key, f, h) in parsed {
        if out.insert(key.clone(), h).is_some() {
            bail!("{}: second history for {} in {}", f.display(), key.1, key.0);
        }
    }
    Ok(out)
}

pub fn diff(a: &DiffArgs) -> CliResult<()> {
    let before = by_lang(io::read(a.snap_a)?);
    let after = by_lang(io::read(a.snap_b)?);
    let histories = load_histories(a.histories)?;

    // (lang, src) → added targets with the first later occurrence's metadata.
    let mut units: BTreeMap<(String, String), Vec<(String, TargetMeta)>> = BTreeMap::new();
    for (lang, later) in &after {
        let earlier = before.get(lang).map(Vec::as_slice).unwrap_or(&[]);
        let added = diff_links(earlier, later);
        let mut first: HashMap<(&str, &str), &LinkRecord> = HashMap::new();
        for l in later {
            first.entry(l.pair()).or_insert(l);
        }
        for (src, tgt) in added {
            let l = first[&(src.as_str(), tgt.as_str())];
            let meta = TargetMeta {
                title: l.tgt_title.clone(),
                lead: l.tgt_lead.clone(),
            };
            units.entry((lang.clone(), src)).or_default().push((tgt, meta));
        }
    }
    let added: usize = units.values().map(Vec::len).sum();

    let traced: Vec<(Vec<_>, usize, usize)> = units
        .par_iter()
        .map(|((lang, src), targets)| {
            let Some(h) = histories.get(&(lang.clone(), src.clone())) else {
                warn!(stage = "diff", lang, src, "no revision history");
                return (Vec::new(), targets.len(), 0);
            };
            let counts = match h.link_counts() {
                Ok(c) => c,
                Err(e) => {
                    warn!(stage = "diff", lang, src, error = %e, "unreadable history");
                    return (Vec::new(), 0, targets.len());
                }
            };
            let mut ok = Vec::new();
            let mut failed = 0;
            for (tgt, meta) in targets {
                match trace_insertion(h, &counts, (src, tgt), meta, &a.classifier) {
                    Ok(t) => ok.push(t),
                    Err(e) => {
                        warn!(stage = "diff", lang, src, tgt, error = %e, "insertion not traced");
                        failed += 1;
                    }
                }
            }
            (ok, 0, failed)
        })
        .collect();

    let no_history: usize = traced.iter().map(|t| t.1).sum();
    let untraced: usize = traced.iter().map(|t| t.2).sum();
    let events: Vec<&InsertionEvent> = traced.iter().flat_map(|t| t.0.iter().map(|x| &x.event)).collect();
    io::write(a.out, events.iter().copied())?;
    if let Some(path) = a.before_out {
        let mut seen = HashSet::new();
        let articles = traced
            .iter()
            .flat_map(|t| t.0.iter().map(|x| &x.before))
            .filter(|b| seen.insert(b.article_id.clone()));
        io::write(path, articles)?;
    }
    let mut by_scenario: BTreeMap<InsertionScenario, usize> = BTreeMap::new();
    for e in &events {
        *by_scenario.entry(e.scenario).or_default() += 1;
    }
    info!(
        stage = "diff",
        added,
        events = events.len(),
        no_history,
        untraced,
        scenarios = ?by_scenario.iter().map(|(s, n)| format!("{s}={n}")).collect::<Vec<_>>(),
        "done"
    );
    Ok(())
}

pub enum Source<'a> {
    /// Added-link events; candidates come from each event's before-version.
    Events(&'a Path),
    /// Links already present in the articles file.
    Links(&'a Path),
}

pub struct CandidatesArgs<'a> {
    pub source: Source<'a>,
    pub articles: &'a Path,
    pub mode: Mode,
    pub window: usize,
    pub seed: u64,
    pub out: &'a Path,
    /// Links whose anchor texts are the targets' known mentions.
    pub mentions: Option<&'a Path>,
    /// Where missing_section events go; they never become examples.
    pub side_channel: Option<&'a Path>,
}

/// (lang, target qid) → known mentions, most frequent first, ties alphabetical.
pub fn mention_index(links: &[LinkRecord], max: usize) -> HashMap<(String, String), Vec<String>> {
    let mut counts: HashMap<(String, String), HashMap<&str, usize>> = HashMap::new();
    for l in links {
        *counts
            .entry((l.lang.clone(), l.tgt_qid.clone()))
            .or_default()
            .entry(&l.mention)
            .or_default() += 1;
    }
    counts
        .into_iter()
        .map(|(k, m)| {
            let mut v: Vec<(&str, usize)> = m.into_iter().collect();
            v.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
            (k, v.into_iter().take(max).map(|(s, _)| s.to_string()).collect())
        })
        .collect()
}

fn target(mentions: &HashMap<(String, String), Vec<String>>, l: &LinkRecord) -> Target {
    let known = mentions.get(&(l.lang.clone(), l.tgt_qid.clone()));
    Target {
        title: l.tgt_title.clone(),
        lead: l.tgt_lead.clone(),
        // A never-linked target is known only by its title.
        mentions: known.cloned().unwrap_or_else(|| vec![l.tgt_title.clone()]),
    }
}

#[derive(Default)]
struct Tally {
    examples: usize,
    missing_section: usize,
    no_article: usize,
    unresolvable: usize,
    insufficient: usize,
}

impl Tally {
    fn count(&mut self, e: &CandidateError) {
        match e {
            CandidateError::MissingSection => self.missing_section += 1,
            CandidateError::GoldUnresolvable(_) => self.unresolvable += 1,
            CandidateError::InsufficientNegatives { .. } => self.insufficient += 1,
        }
    }
}

pub fn candidates(a: &CandidatesArgs) -> CliResult<()> {
    let articles: Vec<ArticleRecord> = io::read(a.articles)?;
    let pool: Vec<CandidateSpan> = match a.mode {
        Mode::Train { .. } => articles.iter().flat_map(|x| partition_spans(x, a.window)).collect(),
        Mode::Eval => Vec::new(),
    };
    let mention_links: Vec<LinkRecord> = match a.mentions {
        Some(p) => io::read(p)?,
        None => Vec::new(),
    };
    let mut tally = Tally::default();
    let mut examples = Vec::new();

    match a.source {
        Source::Events(path) => {
            let events: Vec<InsertionEvent> = io::read(path)?;
            let mentions = mention_index(&mention_links, MAX_MENTIONS);
            let index: HashMap<(&str, &str, &str), &ArticleRecord> = articles
                .iter()
                .map(|x| ((x.lang.as_str(), x.qid(), x.snapshot.as_str()), x))
                .collect();
            let built: Vec<_> = events
                .par_iter()
                .map(|e| {
                    let l = &e.link;
                    let before = index.get(&(l.lang.as_str(), l.src_qid.as_str(), e.before_version_id.as_str()))?;
                    let mut rng = rng_for(a.seed, &event_example_id(e));
                    Some(build_example(
                        e,
                        before,
                        target(&mentions, l),
                        a.mode,
                        a.window,
                        &pool,
                        &mut rng,
                    ))
                })
                .collect();
            let mut side = Vec::new();
            for (e, r) in events.iter().zip(built) {
                match r {
                    None => {
                        warn!(stage = "candidates", event = %event_example_id(e), "before-version article absent");
                        tally.no_article += 1;
                    }
                    Some(Ok(x)) => examples.push(x),
                    Some(Err(err)) => {
                        if err == CandidateError::MissingSection {
                            side.push(e);
                        } else {
                            warn!(stage = "candidates", event = %event_example_id(e), error = %err, "skipped");
                        }
                        tally.count(&err);
                    }
                }
            }
            if let Some(p) = a.side_channel {
                io::write(p, side.iter().copied())?;
            }
        }
        Source::Links(path) => {
            let links: Vec<LinkRecord> = io::read(path)?;
            let mentions = if a.mentions.is_some() {
                mention_index(&mention_links, MAX_MENTIONS)
            } else {
                mention_index(&links, MAX_MENTIONS)
            };
            let index: HashMap<(&str, &str), &ArticleRecord> =
                articles.iter().map(|x| ((x.lang.as_str(), x.qid()), x)).collect();
            let mut seen: HashMap<(&str, &str, &str), usize> = HashMap::new();
            let jobs: Vec<(&LinkRecord, usize)> = links
                .iter()
                .map(|l| {
                    let n = seen.entry((&l.lang, &l.src_qid, &l.tgt_qid)).or_default();
                    *n += 1;
                    (l, *n - 1)
                })
                .collect();
            let built: Vec<_> = jobs
                .par_iter()
                .map(|&(l, n)| {
                    let article = index.get(&(l.lang.as_str(), l.src_qid.as_str()))?;
                    let id = link_example_id(l, &article.snapshot, n);
                    let mut rng = rng_for(a.seed, &id);
                    Some(build_link_example(
                        l,
                        article,
                        id,
                        target(&mentions, l),
                        a.mode,
                        a.window,
                        &pool,
                        &mut rng,
                    ))
                })
                .collect();
            for ((l, _), r) in jobs.iter().zip(built) {
                match r {
                    None => tally.no_article += 1,
                    Some(Ok(x)) => examples.push(x),
                    Some(Err(err)) => {
                        warn!(stage = "candidates", src = %l.src_qid, tgt = %l.tgt_qid, error = %err, "skipped");
                        tally.count(&err);
                    }
                }
            }
        }
    }
    tally.examples = io::write(a.out, &examples)?;
    info!(
        stage = "candidates",
        examples = tally.examples,
        missing_section = tally.missing_section,
        no_article = tally.no_article,
        gold_unresolvable = tally.unresolvable,
        insufficient_negatives = tally.insufficient,
        "done"
    );
    Ok(())
}

pub struct AugmentArgs<'a> {
    pub input: &'a Path,
    pub out: &'a Path,
    pub weights: StrategyWeights,
    pub seed: u64,
    /// Separates the draws of successive training visits.
    pub epoch: u64,
}

pub fn augment(a: &AugmentArgs) -> CliResult<()> {
    let examples: Vec<RankingExample> = io::read(a.input)?;
    let out: Vec<AugmentedExample> = examples
        .par_iter()
        .map(|e| {
            let mut rng = rng_for(a.seed, &format!("{}/epoch{}", e.example_id, a.epoch));
            augment_example(e, &a.weights, &mut rng)
        })
        .collect();
    io::write(a.out, &out)?;
    let mut counts = [0usize; 4];
    for x in &out {
        counts[x.applied_strategy.index()] += 1;
    }
    info!(
        stage = "augment",
        examples = out.len(),
        epoch = a.epoch,
        rm_nth = counts[RemovalStrategy::RmNth.index()],
        rm_mention = counts[RemovalStrategy::RmMention.index()],
        rm_sent = counts[RemovalStrategy::RmSent.index()],
        rm_span = counts[RemovalStrategy::RmSpan.index()],
        "done"
    );
    Ok(())
}

pub struct RankArgs<'a> {
    pub method: Method,
    pub scorer_cmd: Option<&'a str>,
    pub input: &'a Path,
    pub out: &'a Path,
    pub seed: u64,
    pub bm25: Bm25Params,
    pub stopwords: bool,
    pub timeout: Duration,
    /// Requests in flight per scorer connection.
    pub in_flight: usize,
}

pub fn rank(a: &RankArgs) -> CliResult<()> {
    let examples: Vec<RankingExample> = io::read(a.input)?;
    let rankings: Vec<Ranking> = match a.method {
        Method::Random => examples
            .par_iter()
            .map(|e| rank_random(e, &mut rng_for(a.seed, &e.example_id)))
            .collect(),
        Method::StringMatch => examples.par_iter().map(rank_string_match).collect(),
        Method::Bm25 => {
            let stop: HashMap<&str, Stopwords> = if a.stopwords {
                examples
                    .iter()
                    .map(|e| (e.lang.as_str(), Stopwords::for_lang(&e.lang)))
                    .collect()
            } else {
                HashMap::new()
            };
            examples
                .par_iter()
                .map(|e| rank_bm25(e, a.bm25, stop.get(e.lang.as_str())))
                .collect()
        }
        Method::External => {
            let cmd = a
                .scorer_cmd
                .ok_or_else(|| CliError::Usage("--method external needs --scorer-cmd".into()))?;
            let transport = ProcessTransport::spawn(cmd)?;
            let mut scorer = ExternalScorer::connect(transport, a.timeout)?;
            info!(stage = "rank", scorer = scorer.name(), "connected");
            let results = scorer.score_many(&examples, a.in_flight)?;
            let mut ok = Vec::with_capacity(results.len());
            let mut failed = Vec::new();
            for (e, r) in examples.iter().zip(results) {
                match r {
                    Ok(x) => ok.push(x),
                    Err(err) => {
                        warn!(stage = "rank", example = %e.example_id, error = %err, kind = err.name(), "example failed");
                        failed.push(err);
                    }
                }
            }
            if !failed.is_empty() {
                io::write(a.out, &ok)?;
                return Err(CliError::ProtocolPartial {
                    failed: failed.len(),
                    total: examples.len(),
                    first: failed.swap_remove(0),
                });
            }
            ok
        }
    };
    let n = io::write(a.out, &rankings)?;
    info!(stage = "rank", method = a.method.as_str(), rankings = n, "done");
    Ok(())
}

pub struct EvalArgs<'a> {
    pub rankings: &'a [PathBuf],
    pub examples: &'a Path,
    pub k: usize,
    pub iterations: usize,
    pub seed: u64,
}

/// Evaluate every rankings file against the examples. Only examples ranked
/// by every method are scored, so significance tests stay paired.
pub fn evaluate_files(a: &EvalArgs) -> CliResult<Report> {
    if a.k == 0 {
        return Err(CliError::Usage("--hits-k must be at least 1".into()));
    }
    let examples: Vec<RankingExample> = io::read(a.examples)?;
    let known: HashSet<&str> = examples.iter().map(|e| e.example_id.as_str()).collect();
    let mut methods: Vec<(String, HashMap<String, Ranking>)> = Vec::new();
    for path in a.rankings {
        let rankings: Vec<Ranking> = io::read(path)?;
        let Some(first) = rankings.first() else {
            return Err(anyhow!("{}: no rankings", path.display()).into());
        };
        let method = first.method.clone();
        if methods.iter().any(|(m, _)| *m == method) {
            return Err(anyhow!("{}: method {method:?} appears in two files", path.display()).into());
        }
        let mut by_id = HashMap::new();
        for r in rankings {
            if r.method != method {
                return Err(anyhow!("{}: mixes methods {method:?} and {:?}", path.display(), r.method).into());
            }
            if !known.contains(r.example_id.as_str()) {
                return Err(anyhow!("{}: ranking for unknown example {:?}", path.display(), r.example_id).into());
            }
            let id = r.example_id.clone();
            if by_id.insert(id.clone(), r).is_some() {
                return Err(anyhow!("{}: two rankings for {id:?}", path.display()).into());
            }
        }
        methods.push((method, by_id));
    }
    let common: Vec<&RankingExample> = examples
        .iter()
        .filter(|e| methods.iter().all(|(_, m)| m.contains_key(&e.example_id)))
        .collect();
    if common.len() < examples.len() {
        warn!(
            stage = "eval",
            dropped = examples.len() - common.len(),
            "examples without a ranking from every method are not scored"
        );
    }
    let results = methods
        .iter()
        .map(|(method, by_id)| {
            let results = common
                .iter()
                .map(|e| evaluate(e, &by_id[&e.example_id], a.k))
                .collect::<Result<Vec<_>, _>>()
                .with_context(|| format!("evaluating {method}"))?;
            Ok(MethodResults {
                method: method.clone(),
                results,
            })
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    let report = Report::build(&results, a.k, a.iterations, a.seed).context("building report")?;
    info!(stage = "eval", methods = results.len(), examples = common.len(), "done");
    Ok(report)
}

pub fn stats(input: &Path) -> CliResult<StatsReport> {
    let file = File::open(input).with_context(|| format!("opening {}", input.display()))?;
    Ok(corpus_stats(BufReader::new(file)).with_context(|| format!("reading {}", input.display()))?)
}
