//! Okapi BM25 with per-example corpus statistics.
//!
//! The candidate set of one example is the whole corpus: document
//! frequencies and the average length are computed over it alone.

use std::collections::{BTreeSet, HashMap, HashSet};

use crate::model::CandidateSpan;
use crate::text::folded_tokens;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.5, b: 0.75 }
    }
}

impl Bm25Params {
    pub fn new(k1: f64, b: f64) -> Result<Self, String> {
        if !(k1.is_finite() && k1 >= 0.0) {
            return Err(format!("k1 must be a finite non-negative number, got {k1}"));
        }
        if !(0.0..=1.0).contains(&b) {
            return Err(format!("b must lie in [0, 1], got {b}"));
        }
        Ok(Self { k1, b })
    }
}

/// Per-language stop lists shipped with the crate.
#[derive(Debug, Clone, Default)]
pub struct Stopwords(HashSet<String>);

impl Stopwords {
    pub fn for_lang(lang: &str) -> Self {
        static DATA: &str = include_str!("../../data/stopwords.toml");
        let table: HashMap<String, Vec<String>> = toml::from_str(DATA).expect("bundled stop lists parse");
        Self(table.get(lang).into_iter().flatten().cloned().collect())
    }

    pub fn contains(&self, token: &str) -> bool {
        self.0.contains(token)
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

fn terms(text: &str, stop: Option<&Stopwords>) -> Vec<String> {
    folded_tokens(text)
        .into_iter()
        .filter(|t| stop.is_none_or(|s| !s.contains(t)))
        .collect()
}

#[derive(Debug, Clone)]
pub struct Bm25Index {
    tf: Vec<HashMap<String, usize>>,
    dl: Vec<usize>,
    df: HashMap<String, usize>,
    avgdl: f64,
}

impl Bm25Index {
    pub fn build(candidates: &[CandidateSpan], stop: Option<&Stopwords>) -> Self {
        Self::from_texts(candidates.iter().map(|c| c.text.as_str()), stop)
    }

    pub fn from_texts<'a>(texts: impl IntoIterator<Item = &'a str>, stop: Option<&Stopwords>) -> Self {
        let mut tf = Vec::new();
        let mut dl = Vec::new();
        let mut df: HashMap<String, usize> = HashMap::new();
        for text in texts {
            let toks = terms(text, stop);
            dl.push(toks.len());
            let mut counts: HashMap<String, usize> = HashMap::new();
            for t in toks {
                *counts.entry(t).or_default() += 1;
            }
            for t in counts.keys() {
                *df.entry(t.clone()).or_default() += 1;
            }
            tf.push(counts);
        }
        let avgdl = if dl.is_empty() {
            0.0
        } else {
            dl.iter().sum::<usize>() as f64 / dl.len() as f64
        };
        Self { tf, dl, df, avgdl }
    }

    pub fn len(&self) -> usize {
        self.dl.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dl.is_empty()
    }

    pub fn avgdl(&self) -> f64 {
        self.avgdl
    }

    pub fn doc_len(&self, i: usize) -> usize {
        self.dl[i]
    }

    pub fn df(&self, term: &str) -> usize {
        self.df.get(term).copied().unwrap_or(0)
    }

    pub fn tf(&self, i: usize, term: &str) -> usize {
        self.tf[i].get(term).copied().unwrap_or(0)
    }

    pub fn idf(&self, term: &str) -> f64 {
        let n = self.len() as f64;
        let df = self.df(term) as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    /// Score every document against a deduplicated query.
    pub fn scores(&self, query: &BTreeSet<String>, params: Bm25Params) -> Vec<f64> {
        let Bm25Params { k1, b } = params;
        let idf: Vec<(&str, f64)> = query.iter().map(|t| (t.as_str(), self.idf(t))).collect();
        (0..self.len())
            .map(|i| {
                // avgdl is zero only when every document is empty, and then tf is zero too.
                let norm = if self.avgdl > 0.0 {
                    1.0 - b + b * self.dl[i] as f64 / self.avgdl
                } else {
                    1.0
                };
                idf.iter()
                    .map(|&(t, w)| {
                        let f = self.tf(i, t) as f64;
                        if f == 0.0 {
                            0.0
                        } else {
                            w * f * (k1 + 1.0) / (f + k1 * norm)
                        }
                    })
                    .sum()
            })
            .collect()
    }
}

/// Case-folded, deduplicated query terms of a target lead.
pub fn query_terms(lead: &str, stop: Option<&Stopwords>) -> BTreeSet<String> {
    terms(lead, stop).into_iter().collect()
}
