//! Candidate rankers: uniform random, string match, BM25, and external
//! scorers speaking the line protocol in [`external`].

pub mod bm25;
pub mod external;

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::model::{Ranking, RankingExample};
use crate::text::MentionMatcher;
pub use bm25::{Bm25Index, Bm25Params, Stopwords};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Random,
    StringMatch,
    Bm25,
    External,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Random, Method::StringMatch, Method::Bm25, Method::External];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Random => "random",
            Method::StringMatch => "string_match",
            Method::Bm25 => "bm25",
            Method::External => "external",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown method {s:?}"))
    }
}

/// Scores form a uniformly random permutation of `0..D`.
pub fn rank_random<R: Rng + ?Sized>(example: &RankingExample, rng: &mut R) -> Ranking {
    let mut scores: Vec<f64> = (0..example.candidates.len()).map(|i| i as f64).collect();
    scores.shuffle(rng);
    Ranking::from_scores(&example.example_id, Method::Random.as_str(), scores)
}

/// 1 for candidates containing a known mention, 0 otherwise.
pub fn rank_string_match(example: &RankingExample) -> Ranking {
    let matcher = MentionMatcher::new(&example.target.mentions);
    let scores = example
        .candidates
        .iter()
        .map(|c| if matcher.matches(&c.text) { 1.0 } else { 0.0 })
        .collect();
    Ranking::from_scores(&example.example_id, Method::StringMatch.as_str(), scores)
}

pub fn rank_bm25(example: &RankingExample, params: Bm25Params, stop: Option<&Stopwords>) -> Ranking {
    let index = Bm25Index::build(&example.candidates, stop);
    let query = bm25::query_terms(&example.target.lead, stop);
    Ranking::from_scores(&example.example_id, Method::Bm25.as_str(), index.scores(&query, params))
}
