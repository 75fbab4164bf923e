//! Added-link detection between snapshots, localization in revision
//! histories, and classification into insertion scenarios.

use std::collections::{BTreeSet, HashMap, HashSet};

use chrono::{DateTime, FixedOffset};
use thiserror::Error;

use crate::ingest::{self, MarkupError, RawArticle, TargetIndex, TargetMeta};
use crate::model::{ArticleRecord, InsertionEvent, InsertionScenario, LinkRecord};
use crate::text::{fold, tokenize};

#[derive(Debug, Error)]
pub enum DiffError {
    #[error("section not found: {0:?}")]
    SectionNotFound(String),
    #[error("link context not found in section {0:?}")]
    LinkNotFound(String),
    #[error("not localizable: ({0}, {1})")]
    NotLocalizable(String, String),
    #[error("revision history: {0}")]
    History(String),
    #[error("version {version}: {source}")]
    Version {
        version: String,
        #[source]
        source: ingest::IngestError,
    },
    #[error("version {version}: {source}")]
    Markup {
        version: String,
        #[source]
        source: MarkupError,
    },
}

/// Pairs `(src_qid, tgt_qid)` present in `later` but not in `earlier`, sorted.
pub fn diff_links(earlier: &[LinkRecord], later: &[LinkRecord]) -> Vec<(String, String)> {
    let before: HashSet<(&str, &str)> = earlier.iter().map(LinkRecord::pair).collect();
    later
        .iter()
        .map(LinkRecord::pair)
        .filter(|p| !before.contains(p))
        .map(|(s, t)| (s.to_string(), t.to_string()))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Version {
    pub id: String,
    pub timestamp: DateTime<FixedOffset>,
    pub raw: RawArticle,
}

/// All versions of one article, oldest first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RevisionHistory {
    pub versions: Vec<Version>,
}

fn version_marker(line: &str) -> Option<(&str, &str)> {
    let inner = line.trim().strip_prefix("---VERSION ")?.strip_suffix("---")?;
    let mut parts = inner.split_whitespace();
    let id = parts.next()?;
    let ts = parts.next()?;
    parts.next().is_none().then_some((id, ts))
}

impl RevisionHistory {
    /// Parse the history file format: markup blocks each preceded by a
    /// `---VERSION <id> <timestamp>---` line. Timestamps are RFC 3339.
    pub fn parse(text: &str) -> Result<Self, DiffError> {
        let mut versions = Vec::new();
        let mut current: Option<(String, DateTime<FixedOffset>, String)> = None;
        for (i, line) in text.lines().enumerate() {
            if let Some((id, ts)) = version_marker(line) {
                if let Some(v) = current.take() {
                    versions.push(v);
                }
                let ts = DateTime::parse_from_rfc3339(ts)
                    .map_err(|e| DiffError::History(format!("line {}: bad timestamp {ts:?}: {e}", i + 1)))?;
                current = Some((id.to_string(), ts, String::new()));
            } else if let Some((_, _, body)) = current.as_mut() {
                body.push_str(line);
                body.push('\n');
            } else if !line.trim().is_empty() {
                return Err(DiffError::History(format!(
                    "line {}: content before the first version marker",
                    i + 1
                )));
            }
        }
        versions.extend(current);
        if versions.is_empty() {
            return Err(DiffError::History("no versions".into()));
        }
        let mut out = Vec::with_capacity(versions.len());
        for (id, timestamp, body) in versions {
            if out.last().is_some_and(|p: &Version| p.timestamp > timestamp) {
                return Err(DiffError::History(format!(
                    "version {id} is older than its predecessor"
                )));
            }
            let raw = RawArticle::from_markup(body, id.clone()).map_err(|source| DiffError::Version {
                version: id.clone(),
                source,
            })?;
            out.push(Version { id, timestamp, raw });
        }
        Ok(Self { versions: out })
    }

    pub fn qid(&self) -> Option<&str> {
        self.versions.last().and_then(|v| v.raw.qid.as_deref())
    }

    /// Per version, the number of main-body links to each target.
    pub fn link_counts(&self) -> Result<Vec<HashMap<String, usize>>, DiffError> {
        self.versions
            .iter()
            .map(|v| {
                let parsed = ingest::parse_article(&v.raw).map_err(|source| DiffError::Markup {
                    version: v.id.clone(),
                    source,
                })?;
                let mut counts = HashMap::new();
                for a in parsed.anchors {
                    *counts.entry(a.target_qid).or_insert(0) += 1;
                }
                Ok(counts)
            })
            .collect()
    }
}

/// Earliest consecutive `(before, after)` version pair where the link to the
/// pair's target goes from absent to present.
pub fn locate_insertion(history: &RevisionHistory, pair: (&str, &str)) -> Result<(String, String), DiffError> {
    let counts = history.link_counts()?;
    locate_in_counts(history, &counts, pair)
}

/// [`locate_insertion`] over precomputed [`RevisionHistory::link_counts`].
pub fn locate_in_counts(
    history: &RevisionHistory,
    counts: &[HashMap<String, usize>],
    (src, tgt): (&str, &str),
) -> Result<(String, String), DiffError> {
    let present = |i: usize| counts[i].get(tgt).copied().unwrap_or(0) > 0;
    (1..counts.len())
        .find(|&i| !present(i - 1) && present(i))
        .map(|i| (history.versions[i - 1].id.clone(), history.versions[i].id.clone()))
        .ok_or_else(|| DiffError::NotLocalizable(src.to_string(), tgt.to_string()))
}

/// An added link traced through its history: the classified event plus the
/// before-version article it was inserted into.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TracedInsertion {
    pub event: InsertionEvent,
    pub before: ArticleRecord,
}

/// Locate, extract and classify one added link. The first occurrence of the
/// target in the after-version, in document order, stands for the pair.
pub fn trace_insertion(
    history: &RevisionHistory,
    counts: &[HashMap<String, usize>],
    pair: (&str, &str),
    target: &TargetMeta,
    cfg: &ClassifierConfig,
) -> Result<TracedInsertion, DiffError> {
    let (before_id, after_id) = locate_in_counts(history, counts, pair)?;
    let parse = |id: &str| {
        let v = history
            .versions
            .iter()
            .find(|v| v.id == id)
            .expect("located versions exist");
        ingest::parse_article(&v.raw).map_err(|source| DiffError::Markup {
            version: id.to_string(),
            source,
        })
    };
    let before = parse(&before_id)?;
    let after = parse(&after_id)?;
    let mut targets = TargetIndex::new();
    targets.insert(pair.1.to_string(), target.clone());
    let mut after_for_links = after.clone();
    // Link extraction needs an admitted source; the qid comes from the pair.
    after_for_links.rejection = None;
    if after_for_links.record.qid.is_none() {
        after_for_links.record.qid = Some(pair.0.to_string());
    }
    let link = ingest::extract_links(&after_for_links, &targets)
        .links
        .into_iter()
        .find(|l| l.tgt_qid == pair.1)
        .ok_or_else(|| DiffError::LinkNotFound(after_id.clone()))?;
    let event = classify_with(cfg, &before.record, &after.record, &link)?;
    Ok(TracedInsertion {
        event,
        before: before.record,
    })
}

/// Knobs of the scenario decision procedure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassifierConfig {
    /// Token-level Jaccard similarity at which two sentences count as versions
    /// of each other.
    pub jaccard_threshold: f64,
    /// Tokens around the mention that may be deleted when testing for an
    /// inserted mention.
    pub mention_slack_tokens: usize,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            jaccard_threshold: 0.5,
            mention_slack_tokens: 3,
        }
    }
}

fn token_set(tokens: impl IntoIterator<Item = String>) -> HashSet<String> {
    tokens.into_iter().collect()
}

fn sentence_tokens(text: &str) -> HashSet<String> {
    token_set(tokenize(text).into_iter().map(|t| fold(t.text)))
}

pub fn jaccard(a: &HashSet<String>, b: &HashSet<String>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 0.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

/// Classify a link addition given the article versions around it.
pub fn classify_insertion(
    before: &ArticleRecord,
    after: &ArticleRecord,
    link: &LinkRecord,
) -> Result<InsertionEvent, DiffError> {
    classify_with(&ClassifierConfig::default(), before, after, link)
}

pub fn classify_with(
    cfg: &ClassifierConfig,
    before: &ArticleRecord,
    after: &ArticleRecord,
    link: &LinkRecord,
) -> Result<InsertionEvent, DiffError> {
    let title = &link.section_title;
    let after_sec = after
        .section(title)
        .ok_or_else(|| DiffError::SectionNotFound(title.clone()))?;
    let star = ingest::locate_link(after_sec, link)
        .map(|(_, j)| j)
        .ok_or_else(|| DiffError::LinkNotFound(title.clone()))?;
    let event = |scenario, anchor| InsertionEvent {
        link: link.clone(),
        scenario,
        before_version_id: before.snapshot.clone(),
        after_version_id: after.snapshot.clone(),
        insertion_section: title.clone(),
        insertion_anchor: anchor,
    };

    let Some(before_sec) = before.section(title) else {
        return Ok(event(InsertionScenario::MissingSection, 0));
    };
    let before_sents = &before_sec.sentences;
    let after_sents = &after_sec.sentences;

    // Exact matches, greedily in document order.
    let mut used = vec![false; before_sents.len()];
    let mut matched: Vec<Option<usize>> = vec![None; after_sents.len()];
    for (j, s) in after_sents.iter().enumerate() {
        if let Some(i) = (0..before_sents.len()).find(|&i| !used[i] && before_sents[i].text == s.text) {
            used[i] = true;
            matched[j] = Some(i);
        }
    }
    if let Some(i) = matched[star] {
        return Ok(event(InsertionScenario::TextPresent, i));
    }

    let before_tokens: Vec<HashSet<String>> = before_sents.iter().map(|s| sentence_tokens(&s.text)).collect();

    // Was the mention (plus a little surrounding text) spliced into an
    // existing sentence?
    let star_text = &after_sents[star].text;
    let star_tokens = tokenize(star_text);
    let m_start = link.mention_start - link.sentence_start;
    let m_end = link.mention_end - link.sentence_start;
    let hit: Vec<usize> = star_tokens
        .iter()
        .enumerate()
        .filter(|(_, t)| t.end > m_start && t.start < m_end)
        .map(|(k, _)| k)
        .collect();
    let (m0, m1) = match (hit.first(), hit.last()) {
        (Some(&a), Some(&b)) => (a, b + 1),
        _ => {
            let k = star_tokens.iter().take_while(|t| t.end <= m_start).count();
            (k, k)
        }
    };
    let mut best: Option<(f64, usize)> = None;
    for l in 0..=cfg.mention_slack_tokens {
        for r in 0..=cfg.mention_slack_tokens {
            let lo = m0.saturating_sub(l);
            let hi = (m1 + r).min(star_tokens.len());
            let reduced = token_set(
                star_tokens
                    .iter()
                    .enumerate()
                    .filter(|(k, _)| *k < lo || *k >= hi)
                    .map(|(_, t)| fold(t.text)),
            );
            for (i, bt) in before_tokens.iter().enumerate() {
                if used[i] {
                    continue;
                }
                let sim = jaccard(&reduced, bt);
                if sim >= cfg.jaccard_threshold && best.is_none_or(|(b, _)| sim > b) {
                    best = Some((sim, i));
                }
            }
        }
    }
    if let Some((_, i)) = best {
        return Ok(event(InsertionScenario::MissingMention, i));
    }

    // The link sentence is new. Pair edited sentences with their originals so
    // that only genuinely new sentences count toward the inserted run.
    for (j, s) in after_sents.iter().enumerate() {
        if j == star || matched[j].is_some() {
            continue;
        }
        let at = sentence_tokens(&s.text);
        let candidate = (0..before_sents.len())
            .filter(|&i| !used[i])
            .map(|i| (jaccard(&at, &before_tokens[i]), i))
            .filter(|(sim, _)| *sim >= cfg.jaccard_threshold)
            .max_by(|a, b| a.0.total_cmp(&b.0).then(b.1.cmp(&a.1)));
        if let Some((_, i)) = candidate {
            used[i] = true;
            matched[j] = Some(i);
        }
    }
    let mut run_start = star;
    while run_start > 0 && matched[run_start - 1].is_none() {
        run_start -= 1;
    }
    let mut run_end = star + 1;
    while run_end < after_sents.len() && matched[run_end].is_none() {
        run_end += 1;
    }
    let scenario = if run_end - run_start == 1 {
        InsertionScenario::MissingSentence
    } else {
        InsertionScenario::MissingSpan
    };
    let anchor = if run_start == 0 {
        0
    } else {
        matched[run_start - 1].expect("run is maximal")
    };
    Ok(event(scenario, anchor))
}
