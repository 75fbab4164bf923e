//! Domain records and their newline-delimited serialization.
//!
//! Every file starts with a one-line header
//! `{"schema":"linkforge/v1","kind":<tag>}` followed by one JSON record per
//! line. Records are validated on both sides of the boundary, so a record
//! that violates an invariant never reaches downstream code.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids;
use crate::text::{char_len, char_slice, MentionMatcher};

pub const SCHEMA: &str = "linkforge/v1";

/// A record violated one of its type invariants.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid {kind}: {invariant}")]
pub struct InvariantError {
    pub kind: &'static str,
    pub invariant: String,
}

impl InvariantError {
    pub fn new(kind: &'static str, invariant: impl Into<String>) -> Self {
        Self {
            kind,
            invariant: invariant.into(),
        }
    }
}

#[derive(Debug, Error)]
pub enum RecordError {
    #[error("line {line}: parse error at byte {offset}: {message}")]
    Parse {
        line: usize,
        offset: usize,
        message: String,
    },
    #[error("line {line}: {source}")]
    Invariant {
        line: usize,
        #[source]
        source: InvariantError,
    },
    #[error("bad header: {0}")]
    Header(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl RecordError {
    /// The violated invariant, if this is an invariant error.
    pub fn invariant(&self) -> Option<&InvariantError> {
        match self {
            RecordError::Invariant { source, .. } => Some(source),
            _ => None,
        }
    }
}

/// A domain type with a canonical line serialization.
pub trait Record: Serialize + DeserializeOwned {
    /// Tag written into the file header.
    const KIND: &'static str;

    fn validate(&self) -> Result<(), InvariantError>;
}

/// Serialize one record to a newline-free line, validating it first.
pub fn serialize_record<R: Record>(record: &R) -> Result<String, InvariantError> {
    record.validate()?;
    Ok(serde_json::to_string(record).expect("domain records serialize infallibly"))
}

/// Parse and validate one line. Nothing is returned unless the whole line
/// parses and every invariant holds.
pub fn deserialize_record<R: Record>(line: &str) -> Result<R, RecordError> {
    parse_line(line, 1)
}

fn parse_line<R: Record>(line: &str, line_no: usize) -> Result<R, RecordError> {
    let record: R = serde_json::from_str(line).map_err(|e| RecordError::Parse {
        line: line_no,
        offset: e.column().saturating_sub(1).min(line.len()),
        message: e.to_string(),
    })?;
    record
        .validate()
        .map_err(|source| RecordError::Invariant { line: line_no, source })?;
    Ok(record)
}

#[derive(Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct Header {
    pub schema: String,
    pub kind: String,
}

impl Header {
    pub fn for_kind(kind: &str) -> Self {
        Self {
            schema: SCHEMA.to_string(),
            kind: kind.to_string(),
        }
    }

    pub fn line(&self) -> String {
        serde_json::to_string(self).expect("header serializes")
    }
}

/// Writes a header followed by validated records.
pub struct NdjsonWriter<W: Write> {
    inner: W,
    written: usize,
}

impl<W: Write> NdjsonWriter<W> {
    pub fn new(mut inner: W, kind: &str) -> std::io::Result<Self> {
        writeln!(inner, "{}", Header::for_kind(kind).line())?;
        Ok(Self { inner, written: 0 })
    }

    pub fn for_record<R: Record>(inner: W) -> std::io::Result<Self> {
        Self::new(inner, R::KIND)
    }

    pub fn write<R: Record>(&mut self, record: &R) -> Result<(), RecordError> {
        let line = serialize_record(record).map_err(|source| RecordError::Invariant {
            line: self.written + 2,
            source,
        })?;
        writeln!(self.inner, "{line}")?;
        self.written += 1;
        Ok(())
    }

    pub fn written(&self) -> usize {
        self.written
    }

    pub fn finish(mut self) -> std::io::Result<W> {
        self.inner.flush()?;
        Ok(self.inner)
    }
}

/// Read the header line. `Ok(None)` for a completely empty input.
pub fn read_header<B: BufRead>(reader: &mut B) -> Result<Option<Header>, RecordError> {
    let mut first = String::new();
    if reader.read_line(&mut first)? == 0 {
        return Ok(None);
    }
    let header: Header =
        serde_json::from_str(first.trim_end_matches(['\n', '\r'])).map_err(|e| RecordError::Header(e.to_string()))?;
    if header.schema != SCHEMA {
        return Err(RecordError::Header(format!(
            "unsupported schema {:?}, expected {SCHEMA:?}",
            header.schema
        )));
    }
    Ok(Some(header))
}

/// Read every record of kind `R`. An empty input yields no records.
pub fn read_records<R: Record, B: BufRead>(mut reader: B) -> Result<Vec<R>, RecordError> {
    let Some(header) = read_header(&mut reader)? else {
        return Ok(Vec::new());
    };
    if header.kind != R::KIND {
        return Err(RecordError::Header(format!(
            "expected kind {:?}, found {:?}",
            R::KIND,
            header.kind
        )));
    }
    read_body(reader)
}

/// Read records after the header has been consumed.
pub fn read_body<R: Record, B: BufRead>(reader: B) -> Result<Vec<R>, RecordError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        out.push(parse_line(&line, i + 2)?);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Articles

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub text: String,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Section {
    pub title: String,
    pub text: String,
    pub sentences: Vec<Sentence>,
}

impl Section {
    /// Text between the start of sentence `lo` and the end of sentence `hi`
    /// (inclusive), including inter-sentence gaps.
    pub fn window_text(&self, lo: usize, hi: usize) -> &str {
        char_slice(&self.text, self.sentences[lo].start, self.sentences[hi].end).expect("validated sentence offsets")
    }

    /// Index of the sentence containing char offset `pos`.
    pub fn sentence_at(&self, pos: usize) -> Option<usize> {
        self.sentences.iter().position(|s| s.start <= pos && pos < s.end)
    }

    fn check(&self) -> Result<(), String> {
        let total = char_len(&self.text);
        let mut cursor = 0usize;
        for (i, s) in self.sentences.iter().enumerate() {
            if s.start >= s.end {
                return Err(format!("sentence {i} of section {:?} is empty", self.title));
            }
            if s.start < cursor {
                return Err(format!(
                    "sentence offsets in section {:?} are not strictly increasing",
                    self.title
                ));
            }
            let gap = char_slice(&self.text, cursor, s.start).ok_or("sentence offset beyond section text")?;
            if !gap.chars().all(char::is_whitespace) {
                return Err(format!("section {:?} has text outside any sentence", self.title));
            }
            let slice = char_slice(&self.text, s.start, s.end).ok_or("sentence offset beyond section text")?;
            if slice != s.text {
                return Err(format!(
                    "sentence {i} of section {:?} does not match its offsets",
                    self.title
                ));
            }
            cursor = s.end;
        }
        if cursor > total {
            return Err("sentence offset beyond section text".into());
        }
        let tail = char_slice(&self.text, cursor, total).unwrap_or_default();
        if !tail.chars().all(char::is_whitespace) {
            return Err(format!("section {:?} has text outside any sentence", self.title));
        }
        Ok(())
    }
}

/// One version of an article.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArticleRecord {
    pub article_id: String,
    pub title: String,
    pub qid: Option<String>,
    pub lang: String,
    pub lead: String,
    pub sections: Vec<Section>,
    pub snapshot: String,
}

impl ArticleRecord {
    pub fn section(&self, title: &str) -> Option<&Section> {
        self.sections.iter().find(|s| s.title == title)
    }

    pub fn sentence_count(&self) -> usize {
        self.sections.iter().map(|s| s.sentences.len()).sum()
    }

    pub fn qid(&self) -> &str {
        self.qid.as_deref().unwrap_or("")
    }
}

impl Record for ArticleRecord {
    const KIND: &'static str = "article";

    fn validate(&self) -> Result<(), InvariantError> {
        let err = |m: String| InvariantError::new(Self::KIND, m);
        if self.qid.as_deref().is_none_or(|q| q.trim().is_empty()) {
            return Err(err("missing qid".into()));
        }
        if self.lead.trim().is_empty() {
            return Err(err("no lead".into()));
        }
        if self.lang.is_empty() {
            return Err(err("missing lang".into()));
        }
        if self.article_id != ids::article_id(&self.lang, &self.title, &self.snapshot) {
            return Err(err("article_id does not match (lang, title, snapshot)".into()));
        }
        for s in &self.sections {
            s.check().map_err(err)?;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Links

/// One link occurrence with its context window. Offsets are char offsets
/// into `context`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkRecord {
    pub src_qid: String,
    pub tgt_qid: String,
    pub src_title: String,
    pub tgt_title: String,
    pub tgt_lead: String,
    pub section_title: String,
    pub context: String,
    pub mention: String,
    pub mention_start: usize,
    pub mention_end: usize,
    pub sentence_start: usize,
    pub sentence_end: usize,
    pub lang: String,
}

impl LinkRecord {
    pub fn pair(&self) -> (&str, &str) {
        (&self.src_qid, &self.tgt_qid)
    }

    /// The sentence (or sentences, for a multi-sentence anchor) holding the mention.
    pub fn sentence(&self) -> &str {
        char_slice(&self.context, self.sentence_start, self.sentence_end).unwrap_or_default()
    }

    pub fn positions(&self) -> GoldPositions {
        GoldPositions {
            mention_start: self.mention_start,
            mention_end: self.mention_end,
            sentence_start: self.sentence_start,
            sentence_end: self.sentence_end,
        }
    }
}

impl Record for LinkRecord {
    const KIND: &'static str = "link";

    fn validate(&self) -> Result<(), InvariantError> {
        let err = |m: &str| InvariantError::new(Self::KIND, m);
        if self.src_qid.is_empty() || self.tgt_qid.is_empty() {
            return Err(err("missing qid"));
        }
        if self.src_qid == self.tgt_qid {
            return Err(err("self-link"));
        }
        self.positions()
            .check(&self.context)
            .map_err(|m| InvariantError::new(Self::KIND, m))?;
        let sliced = char_slice(&self.context, self.mention_start, self.mention_end);
        if sliced != Some(self.mention.as_str()) {
            return Err(err("mention offsets do not slice the mention"));
        }
        Ok(())
    }
}

/// Mention and sentence offsets relative to a piece of text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldPositions {
    pub mention_start: usize,
    pub mention_end: usize,
    pub sentence_start: usize,
    pub sentence_end: usize,
}

impl GoldPositions {
    fn check(&self, text: &str) -> Result<(), &'static str> {
        if self.mention_start >= self.mention_end {
            return Err("mention offsets out of order");
        }
        if self.sentence_start > self.mention_start || self.mention_end > self.sentence_end {
            return Err("sentence offsets do not enclose the mention");
        }
        if self.sentence_end > char_len(text) {
            return Err("offset beyond context");
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Insertion events

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InsertionScenario {
    TextPresent,
    MissingMention,
    MissingSentence,
    MissingSpan,
    MissingSection,
}

impl InsertionScenario {
    pub const ALL: [InsertionScenario; 5] = [
        InsertionScenario::TextPresent,
        InsertionScenario::MissingMention,
        InsertionScenario::MissingSentence,
        InsertionScenario::MissingSpan,
        InsertionScenario::MissingSection,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            InsertionScenario::TextPresent => "text_present",
            InsertionScenario::MissingMention => "missing_mention",
            InsertionScenario::MissingSentence => "missing_sentence",
            InsertionScenario::MissingSpan => "missing_span",
            InsertionScenario::MissingSection => "missing_section",
        }
    }
}

impl fmt::Display for InsertionScenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown scenario tag {0:?}")]
pub struct UnknownScenario(pub String);

impl FromStr for InsertionScenario {
    type Err = UnknownScenario;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| UnknownScenario(s.to_string()))
    }
}

/// An added link localized to a revision and classified.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InsertionEvent {
    pub link: LinkRecord,
    pub scenario: InsertionScenario,
    pub before_version_id: String,
    pub after_version_id: String,
    pub insertion_section: String,
    pub insertion_anchor: usize,
}

impl Record for InsertionEvent {
    const KIND: &'static str = "event";

    fn validate(&self) -> Result<(), InvariantError> {
        self.link
            .validate()
            .map_err(|e| InvariantError::new(Self::KIND, format!("link: {}", e.invariant)))?;
        if self.before_version_id == self.after_version_id {
            return Err(InvariantError::new(
                Self::KIND,
                "before and after versions are identical",
            ));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Candidates and ranking examples

/// A sentence-anchored context window inside one section.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateSpan {
    pub article_id: String,
    pub section_title: String,
    pub anchor_index: usize,
    pub window: usize,
    pub text: String,
    pub is_gold: bool,
}

impl CandidateSpan {
    /// Same (article, section, anchor) identity, ignoring text and gold flag.
    pub fn same_anchor(&self, other: &CandidateSpan) -> bool {
        self.article_id == other.article_id
            && self.section_title == other.section_title
            && self.anchor_index == other.anchor_index
    }
}

impl Record for CandidateSpan {
    const KIND: &'static str = "span";

    fn validate(&self) -> Result<(), InvariantError> {
        if self.text.trim().is_empty() {
            return Err(InvariantError::new(Self::KIND, "empty span"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Target {
    pub title: String,
    pub lead: String,
    pub mentions: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankingExample {
    pub example_id: String,
    pub target: Target,
    pub candidates: Vec<CandidateSpan>,
    pub gold_index: usize,
    pub scenario: InsertionScenario,
    pub lang: String,
    /// Mention and sentence offsets inside the gold text, present for
    /// examples built from existing links.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_positions: Option<GoldPositions>,
}

impl RankingExample {
    pub fn gold(&self) -> &CandidateSpan {
        &self.candidates[self.gold_index]
    }
}

impl Record for RankingExample {
    const KIND: &'static str = "example";

    fn validate(&self) -> Result<(), InvariantError> {
        let err = |m: &str| InvariantError::new(Self::KIND, m);
        if self.candidates.is_empty() {
            return Err(err("no candidates"));
        }
        if self.gold_index >= self.candidates.len() {
            return Err(err("gold_index out of range"));
        }
        let golds = self.candidates.iter().filter(|c| c.is_gold).count();
        if golds != 1 || !self.candidates[self.gold_index].is_gold {
            return Err(err("exactly one gold candidate must sit at gold_index"));
        }
        for c in &self.candidates {
            c.validate().map_err(|e| InvariantError::new(Self::KIND, e.invariant))?;
        }
        let matcher = MentionMatcher::new(&self.target.mentions);
        if self.candidates.iter().any(|c| !c.is_gold && matcher.matches(&c.text)) {
            return Err(err("a negative candidate contains a target mention"));
        }
        if let Some(p) = &self.gold_positions {
            p.check(&self.gold().text).map_err(err)?;
        }
        Ok(())
    }
}

/// Training-time context removal strategies, from least to most aggressive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RemovalStrategy {
    RmNth,
    RmMention,
    RmSent,
    RmSpan,
}

impl RemovalStrategy {
    pub const ALL: [RemovalStrategy; 4] = [
        RemovalStrategy::RmNth,
        RemovalStrategy::RmMention,
        RemovalStrategy::RmSent,
        RemovalStrategy::RmSpan,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RemovalStrategy::RmNth => "rm_nth",
            RemovalStrategy::RmMention => "rm_mention",
            RemovalStrategy::RmSent => "rm_sent",
            RemovalStrategy::RmSpan => "rm_span",
        }
    }
}

impl fmt::Display for RemovalStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentedExample {
    pub base: RankingExample,
    pub applied_strategy: RemovalStrategy,
    /// Char range removed from the original gold text.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub removed_range: Option<(usize, usize)>,
}

impl Record for AugmentedExample {
    const KIND: &'static str = "augmented";

    fn validate(&self) -> Result<(), InvariantError> {
        self.base
            .validate()
            .map_err(|e| InvariantError::new(Self::KIND, e.invariant))?;
        if let Some((s, e)) = self.removed_range {
            if s >= e {
                return Err(InvariantError::new(Self::KIND, "removed range out of order"));
            }
        }
        Ok(())
    }
}

/// Scores for one example, with the induced order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranking {
    pub example_id: String,
    pub method: String,
    pub scores: Vec<f64>,
    pub order: Vec<usize>,
}

impl Ranking {
    /// Order candidates by descending score, breaking ties by ascending index.
    pub fn from_scores(example_id: impl Into<String>, method: impl Into<String>, scores: Vec<f64>) -> Self {
        let mut order: Vec<usize> = (0..scores.len()).collect();
        // Numeric comparison, so 0.0 and -0.0 tie and fall back to index order.
        order.sort_by(|&a, &b| {
            scores[b]
                .partial_cmp(&scores[a])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        Self {
            example_id: example_id.into(),
            method: method.into(),
            scores,
            order,
        }
    }

    /// 1-based rank of candidate `index`.
    pub fn rank_of(&self, index: usize) -> Option<usize> {
        self.order.iter().position(|&i| i == index).map(|p| p + 1)
    }
}

impl Record for Ranking {
    const KIND: &'static str = "ranking";

    fn validate(&self) -> Result<(), InvariantError> {
        let err = |m: &str| InvariantError::new(Self::KIND, m);
        if self.scores.len() != self.order.len() {
            return Err(err("scores and order differ in length"));
        }
        if self.scores.iter().any(|s| !s.is_finite()) {
            return Err(err("non-finite score"));
        }
        let mut seen = vec![false; self.order.len()];
        for &i in &self.order {
            if i >= seen.len() || std::mem::replace(&mut seen[i], true) {
                return Err(err("order is not a permutation"));
            }
        }
        let sorted = self.order.windows(2).all(|w| {
            let (a, b) = (w[0], w[1]);
            self.scores[a] > self.scores[b] || (self.scores[a] == self.scores[b] && a < b)
        });
        if !sorted {
            return Err(err("order does not sort scores descending with index tie-break"));
        }
        Ok(())
    }
}
