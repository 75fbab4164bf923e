//! Hits@k, MRR, bucketed aggregation and paired significance.
//!
//! Examples fall into the Present bucket (text_present) or the Missing
//! bucket (missing_mention, missing_sentence, missing_span); Overall is
//! their union. missing_section examples are outside every bucket. Per
//! language values are micro means; the macro row weighs languages equally.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{InsertionScenario, InvariantError, Ranking, RankingExample, Record};

pub const DEFAULT_ITERATIONS: usize = 10_000;
pub const SIGNIFICANCE_LEVEL: f64 = 0.05;
pub const MACRO: &str = "macro";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("gold index {gold} out of range for {len} candidates")]
    GoldOutOfRange { gold: usize, len: usize },
    #[error("k must be at least 1")]
    ZeroK,
    #[error("ranking for {ranking:?} does not match example {example:?}")]
    Mismatch { example: String, ranking: String },
    #[error("result sets are not aligned: {0}")]
    Misaligned(String),
}

fn gold_rank(ranking: &Ranking, gold_index: usize) -> Result<usize, EvalError> {
    ranking.rank_of(gold_index).ok_or(EvalError::GoldOutOfRange {
        gold: gold_index,
        len: ranking.order.len(),
    })
}

/// 1 when the gold is among the first `k` ranked candidates, else 0.
pub fn hits_at_k(ranking: &Ranking, gold_index: usize, k: usize) -> Result<f64, EvalError> {
    if k == 0 {
        return Err(EvalError::ZeroK);
    }
    Ok(if gold_rank(ranking, gold_index)? <= k { 1.0 } else { 0.0 })
}

/// Reciprocal rank of the gold.
pub fn mrr(ranking: &Ranking, gold_index: usize) -> Result<f64, EvalError> {
    Ok(1.0 / gold_rank(ranking, gold_index)? as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bucket {
    Overall,
    Present,
    Missing,
}

impl Bucket {
    pub const ALL: [Bucket; 3] = [Bucket::Overall, Bucket::Present, Bucket::Missing];

    pub fn contains(self, scenario: InsertionScenario) -> bool {
        use InsertionScenario::*;
        match (self, scenario) {
            (_, MissingSection) => false,
            (Bucket::Overall, _) => true,
            (Bucket::Present, s) => s == TextPresent,
            (Bucket::Missing, s) => s != TextPresent,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Bucket::Overall => "overall",
            Bucket::Present => "present",
            Bucket::Missing => "missing",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Metric {
    Hits1,
    Mrr,
    HitsK,
}

impl Metric {
    pub fn of(self, r: &ExampleResult) -> f64 {
        match self {
            Metric::Hits1 => r.hits1,
            Metric::Mrr => r.mrr,
            Metric::HitsK => r.hits_k,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Hits1 => "hits@1",
            Metric::Mrr => "mrr",
            Metric::HitsK => "hits@k",
        }
    }
}

/// Metrics of one ranked example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleResult {
    pub example_id: String,
    pub lang: String,
    pub scenario: InsertionScenario,
    pub hits1: f64,
    pub mrr: f64,
    pub hits_k: f64,
}

pub fn evaluate(example: &RankingExample, ranking: &Ranking, k: usize) -> Result<ExampleResult, EvalError> {
    if ranking.example_id != example.example_id || ranking.order.len() != example.candidates.len() {
        return Err(EvalError::Mismatch {
            example: example.example_id.clone(),
            ranking: ranking.example_id.clone(),
        });
    }
    Ok(ExampleResult {
        example_id: example.example_id.clone(),
        lang: example.lang.clone(),
        scenario: example.scenario,
        hits1: hits_at_k(ranking, example.gold_index, 1)?,
        mrr: mrr(ranking, example.gold_index)?,
        hits_k: hits_at_k(ranking, example.gold_index, k)?,
    })
}

/// Means over one bucket; metrics are `None` when the bucket is empty.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BucketMetrics {
    pub n: usize,
    pub hits1: Option<f64>,
    pub mrr: Option<f64>,
    pub hits_k: Option<f64>,
}

impl BucketMetrics {
    pub fn get(&self, m: Metric) -> Option<f64> {
        match m {
            Metric::Hits1 => self.hits1,
            Metric::Mrr => self.mrr,
            Metric::HitsK => self.hits_k,
        }
    }

    fn micro<'a>(results: impl Iterator<Item = &'a ExampleResult>) -> Self {
        let (mut n, mut h, mut m, mut k) = (0usize, 0.0, 0.0, 0.0);
        for r in results {
            n += 1;
            h += r.hits1;
            m += r.mrr;
            k += r.hits_k;
        }
        if n == 0 {
            return Self::default();
        }
        let d = n as f64;
        Self {
            n,
            hits1: Some(h / d),
            mrr: Some(m / d),
            hits_k: Some(k / d),
        }
    }

    fn macro_of(rows: &[BucketMetrics]) -> Self {
        let with_data: Vec<&BucketMetrics> = rows.iter().filter(|r| r.n > 0).collect();
        let n = rows.iter().map(|r| r.n).sum();
        if with_data.is_empty() {
            return Self { n, ..Self::default() };
        }
        let d = with_data.len() as f64;
        let mean = |f: fn(&BucketMetrics) -> Option<f64>| Some(with_data.iter().filter_map(|r| f(r)).sum::<f64>() / d);
        Self {
            n,
            hits1: mean(|r| r.hits1),
            mrr: mean(|r| r.mrr),
            hits_k: mean(|r| r.hits_k),
        }
    }
}

/// Overall, Present and Missing metrics for one language or the macro row.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Buckets {
    pub overall: BucketMetrics,
    pub present: BucketMetrics,
    pub missing: BucketMetrics,
}

impl Buckets {
    pub fn get(&self, b: Bucket) -> &BucketMetrics {
        match b {
            Bucket::Overall => &self.overall,
            Bucket::Present => &self.present,
            Bucket::Missing => &self.missing,
        }
    }

    fn of(results: &[&ExampleResult]) -> Self {
        let pick = |b: Bucket| BucketMetrics::micro(results.iter().copied().filter(|r| b.contains(r.scenario)));
        Self {
            overall: pick(Bucket::Overall),
            present: pick(Bucket::Present),
            missing: pick(Bucket::Missing),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Aggregate {
    /// Per-language micro values, sorted by language.
    pub languages: BTreeMap<String, Buckets>,
    pub macro_row: Buckets,
    /// missing_section examples seen and left out.
    pub excluded: usize,
}

pub fn aggregate(results: &[ExampleResult]) -> Aggregate {
    let mut by_lang: BTreeMap<String, Vec<&ExampleResult>> = BTreeMap::new();
    let mut excluded = 0;
    for r in results {
        if r.scenario == InsertionScenario::MissingSection {
            excluded += 1;
            continue;
        }
        by_lang.entry(r.lang.clone()).or_default().push(r);
    }
    let languages: BTreeMap<String, Buckets> = by_lang.iter().map(|(l, rs)| (l.clone(), Buckets::of(rs))).collect();
    let rows: Vec<&Buckets> = languages.values().collect();
    let macro_of = |b: Bucket| BucketMetrics::macro_of(&rows.iter().map(|r| *r.get(b)).collect::<Vec<_>>());
    Aggregate {
        macro_row: Buckets {
            overall: macro_of(Bucket::Overall),
            present: macro_of(Bucket::Present),
            missing: macro_of(Bucket::Missing),
        },
        languages,
        excluded,
    }
}

/// Two-sided paired bootstrap. Each iteration resamples the aligned
/// examples with replacement; the p-value is twice the share of resamples
/// whose mean difference does not keep the observed sign, capped at 1.
pub fn paired_significance(
    a: &[ExampleResult],
    b: &[ExampleResult],
    metric: Metric,
    iterations: usize,
    seed: u64,
) -> Result<f64, EvalError> {
    let (xa, xb) = align(a, b)?;
    let n = xa.len();
    if n == 0 || iterations == 0 {
        return Ok(1.0);
    }
    let diffs: Vec<f64> = xa.iter().zip(&xb).map(|(x, y)| metric.of(x) - metric.of(y)).collect();
    let observed: f64 = diffs.iter().sum::<f64>() / n as f64;
    if observed == 0.0 {
        return Ok(1.0);
    }
    let sign = observed.signum();
    let flips = (0..iterations as u64)
        .into_par_iter()
        .filter(|&i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i);
            let total: f64 = (0..n).map(|_| diffs[rng.gen_range(0..n)]).sum();
            total * sign <= 0.0
        })
        .count();
    Ok((2.0 * flips as f64 / iterations as f64).min(1.0))
}

fn align<'a>(
    a: &'a [ExampleResult],
    b: &'a [ExampleResult],
) -> Result<(Vec<&'a ExampleResult>, Vec<&'a ExampleResult>), EvalError> {
    if a.len() != b.len() {
        return Err(EvalError::Misaligned(format!("{} vs {} examples", a.len(), b.len())));
    }
    let index: HashMap<&str, &ExampleResult> = b.iter().map(|r| (r.example_id.as_str(), r)).collect();
    if index.len() != b.len() {
        return Err(EvalError::Misaligned("duplicate example ids".into()));
    }
    let mut xb = Vec::with_capacity(a.len());
    for r in a {
        let other = index
            .get(r.example_id.as_str())
            .ok_or_else(|| EvalError::Misaligned(format!("{:?} missing from the second set", r.example_id)))?;
        xb.push(*other);
    }
    Ok((a.iter().collect(), xb))
}

/// One line of an evaluation report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: String,
    /// A language code, or `macro`.
    pub lang: String,
    pub bucket: Bucket,
    pub k: usize,
    #[serde(flatten)]
    pub metrics: BucketMetrics,
    /// Best-versus-runner-up p-values, set on the best method's macro rows.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_hits1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_mrr: Option<f64>,
}

impl Record for ReportRow {
    const KIND: &'static str = "report";

    fn validate(&self) -> Result<(), InvariantError> {
        let unit = |x: Option<f64>| x.is_none_or(|v| (0.0..=1.0).contains(&v));
        let m = &self.metrics;
        if ![m.hits1, m.mrr, m.hits_k, self.p_hits1, self.p_mrr]
            .into_iter()
            .all(unit)
        {
            return Err(InvariantError::new(Self::KIND, "metric outside [0, 1]"));
        }
        if (m.n == 0) != m.hits1.is_none() {
            return Err(InvariantError::new(Self::KIND, "null metrics must coincide with n = 0"));
        }
        Ok(())
    }
}

/// Results of several methods over the same examples.
#[derive(Debug, Clone)]
pub struct MethodResults {
    pub method: String,
    pub results: Vec<ExampleResult>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub k: usize,
    pub methods: Vec<(String, Aggregate)>,
    /// (bucket, metric) → (best method, p-value against the runner-up).
    pub significance: BTreeMap<(Bucket, Metric), (String, f64)>,
}

impl Report {
    pub fn build(methods: &[MethodResults], k: usize, iterations: usize, seed: u64) -> Result<Self, EvalError> {
        let aggs: Vec<(String, Aggregate)> = methods
            .iter()
            .map(|m| (m.method.clone(), aggregate(&m.results)))
            .collect();
        let mut significance = BTreeMap::new();
        if methods.len() >= 2 {
            for bucket in Bucket::ALL {
                for metric in [Metric::Hits1, Metric::Mrr] {
                    let mut ranked: Vec<(usize, f64)> = aggs
                        .iter()
                        .enumerate()
                        .filter_map(|(i, (_, a))| a.macro_row.get(bucket).get(metric).map(|v| (i, v)))
                        .collect();
                    if ranked.len() < 2 {
                        continue;
                    }
                    ranked.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
                    let (best, second) = (ranked[0].0, ranked[1].0);
                    let only = |r: &[ExampleResult]| -> Vec<ExampleResult> {
                        r.iter().filter(|x| bucket.contains(x.scenario)).cloned().collect()
                    };
                    let p = paired_significance(
                        &only(&methods[best].results),
                        &only(&methods[second].results),
                        metric,
                        iterations,
                        seed,
                    )?;
                    significance.insert((bucket, metric), (methods[best].method.clone(), p));
                }
            }
        }
        Ok(Self {
            k,
            methods: aggs,
            significance,
        })
    }

    fn p_value(&self, method: &str, bucket: Bucket, metric: Metric) -> Option<f64> {
        self.significance
            .get(&(bucket, metric))
            .filter(|(m, _)| m == method)
            .map(|(_, p)| *p)
    }

    /// Macro rows first, then per-language rows, for every method.
    pub fn rows(&self) -> Vec<ReportRow> {
        let mut out = Vec::new();
        for (method, agg) in &self.methods {
            let langs =
                std::iter::once((MACRO, &agg.macro_row)).chain(agg.languages.iter().map(|(l, b)| (l.as_str(), b)));
            for (lang, buckets) in langs {
                for bucket in Bucket::ALL {
                    let is_macro = lang == MACRO;
                    out.push(ReportRow {
                        method: method.clone(),
                        lang: lang.to_string(),
                        bucket,
                        k: self.k,
                        metrics: *buckets.get(bucket),
                        p_hits1: is_macro.then(|| self.p_value(method, bucket, Metric::Hits1)).flatten(),
                        p_mrr: is_macro.then(|| self.p_value(method, bucket, Metric::Mrr)).flatten(),
                    });
                }
            }
        }
        out
    }

    /// Methods by Hits@1 and MRR, each split into Overall, Present and
    /// Missing, macro-averaged. `†` marks a best score significantly above
    /// the runner-up.
    pub fn table(&self) -> String {
        let width = self.methods.iter().map(|(m, _)| m.len()).max().unwrap_or(0).max(6);
        let mut s = String::new();
        let _ = writeln!(s, "{:width$} | {:^26} | {:^26}", "", "Hits@1", "MRR");
        let _ = writeln!(
            s,
            "{:width$} | {:>8} {:>8} {:>8} | {:>8} {:>8} {:>8}",
            "Method", "Overall", "Present", "Missing", "Overall", "Present", "Missing"
        );
        let _ = writeln!(s, "{}", "-".repeat(width + 59));
        for (method, agg) in &self.methods {
            let _ = write!(s, "{method:width$} |");
            for metric in [Metric::Hits1, Metric::Mrr] {
                for bucket in Bucket::ALL {
                    let cell = match agg.macro_row.get(bucket).get(metric) {
                        None => "-".to_string(),
                        Some(v) => {
                            let sig = self
                                .p_value(method, bucket, metric)
                                .is_some_and(|p| p < SIGNIFICANCE_LEVEL);
                            format!("{v:.3}{}", if sig { "†" } else { "" })
                        }
                    };
                    let _ = write!(s, " {cell:>8}");
                }
                if metric == Metric::Hits1 {
                    s.push_str(" |");
                }
            }
            s.push('\n');
        }
        if let Some((_, agg)) = self.methods.first() {
            let n = |b: Bucket| agg.macro_row.get(b).n;
            let _ = writeln!(
                s,
                "\nn: overall {}, present {}, missing {}; languages: {}",
                n(Bucket::Overall),
                n(Bucket::Present),
                n(Bucket::Missing),
                agg.languages.keys().cloned().collect::<Vec<_>>().join(", ")
            );
            if agg.excluded > 0 {
                let _ = writeln!(s, "missing_section examples excluded: {}", agg.excluded);
            }
        }
        s
    }
}
