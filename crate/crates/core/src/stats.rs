//! Corpus statistics: scenario frequencies per language and the
//! complementary CDF of candidate counts.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::BufRead;

use crate::model::{
    read_body, read_header, ArticleRecord, InsertionEvent, InsertionScenario, LinkRecord, RankingExample, RecordError,
};

/// `P(D ≥ x)` at every distinct value `x`, ascending.
pub fn ccdf(values: &[usize]) -> Vec<(usize, f64)> {
    let mut sorted = values.to_vec();
    sorted.sort_unstable();
    let n = sorted.len() as f64;
    let mut out = Vec::new();
    for (i, &x) in sorted.iter().enumerate() {
        if i == 0 || sorted[i - 1] != x {
            out.push((x, (sorted.len() - i) as f64 / n));
        }
    }
    out
}

/// `P(D ≥ x)` for an arbitrary `x`.
pub fn ccdf_at(values: &[usize], x: usize) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().filter(|&&v| v >= x).count() as f64 / values.len() as f64
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct StatsReport {
    /// Header kind of the input, `None` for an empty file.
    pub kind: Option<String>,
    pub records: usize,
    pub scenarios: BTreeMap<String, BTreeMap<InsertionScenario, usize>>,
    /// Links per language, for link files.
    pub links: BTreeMap<String, usize>,
    /// One count per article (articles) or per example (examples).
    pub candidate_counts: Vec<usize>,
}

impl StatsReport {
    pub fn add_scenario(&mut self, lang: &str, s: InsertionScenario) {
        *self
            .scenarios
            .entry(lang.to_string())
            .or_default()
            .entry(s)
            .or_default() += 1;
    }

    /// Share of each scenario within `lang`.
    pub fn frequencies(&self, lang: &str) -> BTreeMap<InsertionScenario, f64> {
        let Some(counts) = self.scenarios.get(lang) else {
            return BTreeMap::new();
        };
        let total: usize = counts.values().sum();
        counts.iter().map(|(&s, &c)| (s, c as f64 / total as f64)).collect()
    }

    pub fn ccdf(&self) -> Vec<(usize, f64)> {
        ccdf(&self.candidate_counts)
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let Some(kind) = &self.kind else {
            return s;
        };
        let _ = writeln!(s, "records\t{}\nkind\t{kind}", self.records);
        if !self.scenarios.is_empty() {
            let _ = writeln!(s, "\nlang\tscenario\tcount\tfrequency");
            for (lang, counts) in &self.scenarios {
                let freq = self.frequencies(lang);
                for (sc, c) in counts {
                    let _ = writeln!(s, "{lang}\t{sc}\t{c}\t{:.6}", freq[sc]);
                }
            }
        }
        if !self.links.is_empty() {
            let _ = writeln!(s, "\nlang\tlinks");
            for (lang, c) in &self.links {
                let _ = writeln!(s, "{lang}\t{c}");
            }
        }
        if !self.candidate_counts.is_empty() {
            let _ = writeln!(s, "\ncandidates\tccdf");
            for (x, p) in self.ccdf() {
                let _ = writeln!(s, "{x}\t{p:.6}");
            }
        }
        s
    }
}

/// Read any linkforge file and summarize it according to its header kind.
pub fn corpus_stats<B: BufRead>(mut reader: B) -> Result<StatsReport, RecordError> {
    let Some(header) = read_header(&mut reader)? else {
        return Ok(StatsReport::default());
    };
    let mut report = StatsReport {
        kind: Some(header.kind.clone()),
        ..StatsReport::default()
    };
    match header.kind.as_str() {
        "event" => {
            let events: Vec<InsertionEvent> = read_body(reader)?;
            report.records = events.len();
            for e in &events {
                report.add_scenario(&e.link.lang, e.scenario);
            }
        }
        "example" => {
            let examples: Vec<RankingExample> = read_body(reader)?;
            report.records = examples.len();
            for e in &examples {
                report.add_scenario(&e.lang, e.scenario);
                report.candidate_counts.push(e.candidates.len());
            }
        }
        "article" => {
            let articles: Vec<ArticleRecord> = read_body(reader)?;
            report.records = articles.len();
            report.candidate_counts = articles.iter().map(ArticleRecord::sentence_count).collect();
        }
        "link" => {
            let links: Vec<LinkRecord> = read_body(reader)?;
            report.records = links.len();
            for l in &links {
                *report.links.entry(l.lang.clone()).or_default() += 1;
            }
        }
        other => return Err(RecordError::Header(format!("no statistics for kind {other:?}"))),
    }
    Ok(report)
}
