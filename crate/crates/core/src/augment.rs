//! Dynamic context removal.
//!
//! Rewrites the gold context of an existing-link example so that it looks
//! like one of the harder insertion scenarios: the mention, its sentence, or
//! a block of sentences around it disappears. Draws happen per training
//! visit, so callers pass a fresh generator for each epoch.

use std::fmt;
use std::str::FromStr;

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use thiserror::Error;

use crate::ingest::segment_sentences;
use crate::model::{AugmentedExample, GoldPositions, RankingExample, RemovalStrategy};
use crate::text::{remove_char_range, MentionMatcher};

/// Bounds of the rm_span block size, inclusive.
pub const SPAN_MIN: usize = 2;
pub const SPAN_MAX: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AugmentError {
    #[error("invalid strategy weights: {0}")]
    InvalidWeights(String),
    #[error("{0} would leave the gold text empty")]
    Infeasible(RemovalStrategy),
    #[error("gold candidate carries no mention offsets")]
    MissingPositions,
}

/// Probabilities for rm_nth, rm_mention, rm_sent and rm_span, in that order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StrategyWeights([f64; 4]);

impl StrategyWeights {
    pub fn new(w: [f64; 4]) -> Result<Self, AugmentError> {
        if w.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(AugmentError::InvalidWeights(
                "weights must be finite and non-negative".into(),
            ));
        }
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(AugmentError::InvalidWeights(format!("weights sum to {sum}, not 1")));
        }
        Ok(Self(w))
    }

    pub fn get(&self, s: RemovalStrategy) -> f64 {
        self.0[s.index()]
    }

    pub fn as_array(&self) -> [f64; 4] {
        self.0
    }
}

impl Default for StrategyWeights {
    fn default() -> Self {
        Self([0.4, 0.2, 0.3, 0.1])
    }
}

impl FromStr for StrategyWeights {
    type Err = AugmentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        if parts.len() != 4 {
            return Err(AugmentError::InvalidWeights(format!(
                "expected 4 weights, got {}",
                parts.len()
            )));
        }
        let mut w = [0.0; 4];
        for (slot, p) in w.iter_mut().zip(parts) {
            *slot = p
                .parse()
                .map_err(|_| AugmentError::InvalidWeights(format!("not a number: {p:?}")))?;
        }
        Self::new(w)
    }
}

impl fmt::Display for StrategyWeights {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [a, b, c, d] = self.0;
        write!(f, "{a},{b},{c},{d}")
    }
}

/// Draw a strategy; an infeasible draw falls back to the next less
/// aggressive feasible one. `feasible` is indexed like [`RemovalStrategy::ALL`].
pub fn sample_strategy<R: Rng + ?Sized>(
    rng: &mut R,
    weights: &StrategyWeights,
    feasible: [bool; 4],
) -> RemovalStrategy {
    let dist = WeightedIndex::new(weights.0).expect("validated weights have positive mass");
    let drawn = dist.sample(rng);
    (0..=drawn)
        .rev()
        .find(|&i| i == 0 || feasible[i])
        .map(|i| RemovalStrategy::ALL[i])
        .expect("rm_nth terminates the fallback")
}

/// Sentence layout of a gold context. Units are char ranges in document
/// order; one of them is the (possibly multi-sentence) mention unit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContextLayout {
    pub units: Vec<(usize, usize)>,
    pub mention_unit: usize,
    pub positions: GoldPositions,
    len: usize,
}

impl ContextLayout {
    pub fn new(text: &str, positions: GoldPositions, lang: &str) -> Self {
        let chars: Vec<char> = text.chars().collect();
        let piece = |a: usize, b: usize| chars[a..b].iter().collect::<String>();
        let mut units: Vec<(usize, usize)> = segment_sentences(&piece(0, positions.sentence_start), lang)
            .into_iter()
            .map(|s| (s.start, s.end))
            .collect();
        let mention_unit = units.len();
        units.push((positions.sentence_start, positions.sentence_end));
        let tail = positions.sentence_end;
        units.extend(
            segment_sentences(&piece(tail, chars.len()), lang)
                .into_iter()
                .map(|s| (s.start + tail, s.end + tail)),
        );
        Self {
            units,
            mention_unit,
            positions,
            len: chars.len(),
        }
    }

    pub fn sentence_count(&self) -> usize {
        self.units.len()
    }

    /// Char range covering units `a..=b` plus one separating gap, so the
    /// remaining sentences keep their original spacing.
    pub fn unit_block(&self, a: usize, b: usize) -> (usize, usize) {
        if b + 1 < self.units.len() {
            (self.units[a].0, self.units[b + 1].0)
        } else if a > 0 {
            (self.units[a - 1].1, self.len)
        } else {
            (0, self.len)
        }
    }

    /// Block positions `a` such that `a..a+k` covers the mention unit.
    pub fn span_starts(&self, k: usize) -> std::ops::RangeInclusive<usize> {
        let m = self.mention_unit;
        (m + 1).saturating_sub(k)..=m.min(self.units.len() - k)
    }
}

/// Char range removed by rm_mention: the mention, plus the following
/// whitespace char when both neighbours are whitespace.
pub fn mention_cut(text: &str, p: &GoldPositions) -> (usize, usize) {
    let chars: Vec<char> = text.chars().collect();
    let ws = |i: usize| chars.get(i).is_some_and(|c| c.is_whitespace());
    let (s, e) = (p.mention_start, p.mention_end);
    if s > 0 && ws(s - 1) && ws(e) {
        (s, e + 1)
    } else {
        (s, e)
    }
}

fn nonempty_after(text: &str, (s, e): (usize, usize)) -> bool {
    !remove_char_range(text, s, e).trim().is_empty()
}

/// Which strategies keep the gold non-empty, given the rm_span size `k`.
/// rm_mention also needs the mention to be gone afterwards.
pub fn feasibility(text: &str, layout: &ContextLayout, mentions: &MentionMatcher, k: usize) -> [bool; 4] {
    let n = layout.sentence_count();
    let cut = mention_cut(text, &layout.positions);
    let rm_mention = {
        let rest = remove_char_range(text, cut.0, cut.1);
        !rest.trim().is_empty() && (mentions.is_empty() || !mentions.matches(&rest))
    };
    let m = layout.mention_unit;
    let rm_sent = n > 1 && nonempty_after(text, layout.unit_block(m, m));
    let rm_span = k.min(n) < n;
    [true, rm_mention, rm_sent, rm_span]
}

fn rewrite(base: &RankingExample, strategy: RemovalStrategy, range: (usize, usize)) -> AugmentedExample {
    let mut example = base.clone();
    let gi = example.gold_index;
    example.candidates[gi].text = remove_char_range(&base.gold().text, range.0, range.1);
    example.gold_positions = None;
    AugmentedExample {
        base: example,
        applied_strategy: strategy,
        removed_range: Some(range),
    }
}

fn identity(base: &RankingExample) -> AugmentedExample {
    AugmentedExample {
        base: base.clone(),
        applied_strategy: RemovalStrategy::RmNth,
        removed_range: None,
    }
}

/// Apply `strategy` with an explicit rm_span size `k` and block start.
/// `span_start` is ignored by the other strategies.
pub fn apply_removal_at(
    example: &RankingExample,
    strategy: RemovalStrategy,
    k: usize,
    span_start: usize,
) -> Result<AugmentedExample, AugmentError> {
    if strategy == RemovalStrategy::RmNth {
        return Ok(identity(example));
    }
    let positions = example.gold_positions.ok_or(AugmentError::MissingPositions)?;
    let text = &example.gold().text;
    let layout = ContextLayout::new(text, positions, &example.lang);
    let range = match strategy {
        RemovalStrategy::RmNth => unreachable!(),
        RemovalStrategy::RmMention => mention_cut(text, &positions),
        RemovalStrategy::RmSent => layout.unit_block(layout.mention_unit, layout.mention_unit),
        RemovalStrategy::RmSpan => {
            let k = k.min(layout.sentence_count());
            if k >= layout.sentence_count() || !layout.span_starts(k).contains(&span_start) {
                return Err(AugmentError::Infeasible(strategy));
            }
            layout.unit_block(span_start, span_start + k - 1)
        }
    };
    if !nonempty_after(text, range) {
        return Err(AugmentError::Infeasible(strategy));
    }
    Ok(rewrite(example, strategy, range))
}

/// Apply `strategy`, drawing the rm_span size and placement from `rng`.
pub fn apply_removal<R: Rng + ?Sized>(
    example: &RankingExample,
    strategy: RemovalStrategy,
    rng: &mut R,
) -> Result<AugmentedExample, AugmentError> {
    let k = rng.gen_range(SPAN_MIN..=SPAN_MAX);
    place_and_apply(example, strategy, k, rng)
}

fn place_and_apply<R: Rng + ?Sized>(
    example: &RankingExample,
    strategy: RemovalStrategy,
    k: usize,
    rng: &mut R,
) -> Result<AugmentedExample, AugmentError> {
    if strategy != RemovalStrategy::RmSpan {
        return apply_removal_at(example, strategy, k, 0);
    }
    let positions = example.gold_positions.ok_or(AugmentError::MissingPositions)?;
    let layout = ContextLayout::new(&example.gold().text, positions, &example.lang);
    let kk = k.min(layout.sentence_count());
    if kk >= layout.sentence_count() {
        return Err(AugmentError::Infeasible(strategy));
    }
    let start = rng.gen_range(layout.span_starts(kk));
    apply_removal_at(example, strategy, kk, start)
}

/// One augmentation draw: rm_span size first, then the strategy under the
/// resulting feasibility, then its placement. Examples without mention
/// offsets pass through unchanged.
pub fn augment_example<R: Rng + ?Sized>(
    example: &RankingExample,
    weights: &StrategyWeights,
    rng: &mut R,
) -> AugmentedExample {
    let Some(positions) = example.gold_positions else {
        return identity(example);
    };
    let k = rng.gen_range(SPAN_MIN..=SPAN_MAX);
    let text = &example.gold().text;
    let layout = ContextLayout::new(text, positions, &example.lang);
    let matcher = MentionMatcher::new(&[char_slice_owned(text, &positions)]);
    let feasible = feasibility(text, &layout, &matcher, k);
    let strategy = sample_strategy(rng, weights, feasible);
    place_and_apply(example, strategy, k, rng).expect("sampled strategy is feasible")
}

fn char_slice_owned(text: &str, p: &GoldPositions) -> String {
    text.chars()
        .skip(p.mention_start)
        .take(p.mention_end - p.mention_start)
        .collect()
}
