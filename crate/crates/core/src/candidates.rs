//! Candidate spans and ranking-example assembly.
//!
//! A span is anchored on one sentence and extends `W` sentences to each side,
//! clipped at the section edge. Negatives never contain a known mention of
//! the target; hard negatives come from the source article, easy ones from a
//! pool of spans drawn from other articles.

use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

use crate::ingest;
use crate::model::{
    ArticleRecord, CandidateSpan, GoldPositions, InsertionEvent, InsertionScenario, LinkRecord, RankingExample, Target,
};
use crate::text::MentionMatcher;

pub const DEFAULT_WINDOW: usize = 5;
pub const DEFAULT_NEGATIVES: usize = 9;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CandidateError {
    #[error("insufficient negatives: needed {needed}, found {found} (shortfall {})", needed - found)]
    InsufficientNegatives { needed: usize, found: usize },
    #[error("gold unresolvable: {0}")]
    GoldUnresolvable(String),
    #[error("missing_section events have no before-version gold")]
    MissingSection,
}

/// How many negatives an example carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// `N` sampled negatives, candidates shuffled.
    Train { negatives: usize },
    /// Every eligible span of the article, in document order.
    Eval,
}

/// One span per sentence per section.
pub fn partition_spans(article: &ArticleRecord, window: usize) -> Vec<CandidateSpan> {
    let mut spans = Vec::with_capacity(article.sentence_count());
    for section in &article.sections {
        let n = section.sentences.len();
        for anchor in 0..n {
            let lo = anchor.saturating_sub(window);
            let hi = (anchor + window).min(n - 1);
            spans.push(CandidateSpan {
                article_id: article.article_id.clone(),
                section_title: section.title.clone(),
                anchor_index: anchor,
                window,
                text: section.window_text(lo, hi).to_string(),
                is_gold: false,
            });
        }
    }
    spans
}

/// Spans that may serve as negatives for `gold`.
pub fn eligible<'a>(
    spans: &'a [CandidateSpan],
    gold: &'a CandidateSpan,
    matcher: &'a MentionMatcher,
) -> impl Iterator<Item = &'a CandidateSpan> + 'a {
    spans
        .iter()
        .filter(move |s| !s.same_anchor(gold) && !matcher.matches(&s.text))
}

/// Hard negatives first (document order), then easy ones from `pool`
/// (pool order). Pool spans from the gold's own article are skipped.
pub fn sample_negatives<R: Rng + ?Sized>(
    spans: &[CandidateSpan],
    gold: &CandidateSpan,
    mentions: &[String],
    n: usize,
    pool: &[CandidateSpan],
    rng: &mut R,
) -> Result<Vec<CandidateSpan>, CandidateError> {
    let matcher = MentionMatcher::new(mentions);
    let hard: Vec<&CandidateSpan> = eligible(spans, gold, &matcher).collect();
    let mut picked = rand::seq::index::sample(rng, hard.len(), n.min(hard.len())).into_vec();
    picked.sort_unstable();
    let mut out: Vec<CandidateSpan> = picked.into_iter().map(|i| hard[i].clone()).collect();

    if out.len() < n {
        let easy: Vec<&CandidateSpan> = pool
            .iter()
            .filter(|s| s.article_id != gold.article_id && !matcher.matches(&s.text) && !s.text.trim().is_empty())
            .collect();
        let need = n - out.len();
        if easy.len() < need {
            return Err(CandidateError::InsufficientNegatives {
                needed: n,
                found: out.len() + easy.len(),
            });
        }
        let mut picked = rand::seq::index::sample(rng, easy.len(), need).into_vec();
        picked.sort_unstable();
        out.extend(picked.into_iter().map(|i| easy[i].clone()));
    }
    for s in &mut out {
        s.is_gold = false;
    }
    Ok(out)
}

/// `lang:src:tgt:after_version`.
pub fn event_example_id(event: &InsertionEvent) -> String {
    let l = &event.link;
    format!("{}:{}:{}:{}", l.lang, l.src_qid, l.tgt_qid, event.after_version_id)
}

/// `lang:src:tgt@snapshot#occurrence`.
pub fn link_example_id(link: &LinkRecord, snapshot: &str, occurrence: usize) -> String {
    format!(
        "{}:{}:{}@{}#{}",
        link.lang, link.src_qid, link.tgt_qid, snapshot, occurrence
    )
}

/// Before-version anchor sentence for an insertion event.
pub fn resolve_gold_anchor(event: &InsertionEvent, before: &ArticleRecord) -> Result<usize, CandidateError> {
    let unresolvable = |m: &str| CandidateError::GoldUnresolvable(m.to_string());
    if event.scenario == InsertionScenario::MissingSection {
        return Err(CandidateError::MissingSection);
    }
    let section = before
        .section(&event.insertion_section)
        .ok_or_else(|| unresolvable("section absent from before-version"))?;
    let n = section.sentences.len();
    if n == 0 {
        return Err(unresolvable("section has no sentences"));
    }
    match event.scenario {
        InsertionScenario::TextPresent => {
            let mention = event.link.mention.as_str();
            let holds = |i: usize| section.sentences[i].text.contains(mention);
            if event.insertion_anchor < n && holds(event.insertion_anchor) {
                return Ok(event.insertion_anchor);
            }
            (0..n)
                .find(|&i| holds(i))
                .ok_or_else(|| unresolvable("mention absent from before-section"))
        }
        _ if event.insertion_anchor < n => Ok(event.insertion_anchor),
        _ => Err(unresolvable("insertion anchor beyond section")),
    }
}

#[allow(clippy::too_many_arguments)]
fn assemble<R: Rng + ?Sized>(
    example_id: String,
    target: Target,
    spans: &[CandidateSpan],
    mut gold: CandidateSpan,
    mode: Mode,
    pool: &[CandidateSpan],
    scenario: InsertionScenario,
    lang: String,
    gold_positions: Option<GoldPositions>,
    rng: &mut R,
) -> Result<RankingExample, CandidateError> {
    gold.is_gold = true;
    let candidates = match mode {
        Mode::Train { negatives } => {
            let mut c = sample_negatives(spans, &gold, &target.mentions, negatives, pool, rng)?;
            c.push(gold);
            c.shuffle(rng);
            c
        }
        Mode::Eval => {
            let matcher = MentionMatcher::new(&target.mentions);
            spans
                .iter()
                .filter_map(|s| {
                    if s.same_anchor(&gold) {
                        Some(gold.clone())
                    } else if matcher.matches(&s.text) {
                        None
                    } else {
                        Some(s.clone())
                    }
                })
                .collect()
        }
    };
    let gold_index = candidates
        .iter()
        .position(|c| c.is_gold)
        .expect("gold is always placed");
    Ok(RankingExample {
        example_id,
        target,
        candidates,
        gold_index,
        scenario,
        lang,
        gold_positions,
    })
}

/// Ranking example for an added link, with candidates from the
/// before-version of the source article.
pub fn build_example<R: Rng + ?Sized>(
    event: &InsertionEvent,
    before: &ArticleRecord,
    target: Target,
    mode: Mode,
    window: usize,
    pool: &[CandidateSpan],
    rng: &mut R,
) -> Result<RankingExample, CandidateError> {
    let anchor = resolve_gold_anchor(event, before)?;
    let spans = partition_spans(before, window);
    let gold = spans
        .iter()
        .find(|s| s.section_title == event.insertion_section && s.anchor_index == anchor)
        .cloned()
        .ok_or_else(|| CandidateError::GoldUnresolvable("anchor span missing".into()))?;
    assemble(
        event_example_id(event),
        target,
        &spans,
        gold,
        mode,
        pool,
        event.scenario,
        event.link.lang.clone(),
        None,
        rng,
    )
}

/// Ranking example for a link already present in `article`. The gold span
/// carries the mention offsets so it can later be augmented.
#[allow(clippy::too_many_arguments)]
pub fn build_link_example<R: Rng + ?Sized>(
    link: &LinkRecord,
    article: &ArticleRecord,
    example_id: String,
    target: Target,
    mode: Mode,
    window: usize,
    pool: &[CandidateSpan],
    rng: &mut R,
) -> Result<RankingExample, CandidateError> {
    let unresolvable = |m: &str| CandidateError::GoldUnresolvable(m.to_string());
    let section = article
        .section(&link.section_title)
        .ok_or_else(|| unresolvable("link section absent"))?;
    let (ctx, anchor) = ingest::locate_link(section, link).ok_or_else(|| unresolvable("link context not found"))?;
    let spans = partition_spans(article, window);
    let gold = spans
        .iter()
        .find(|s| s.section_title == link.section_title && s.anchor_index == anchor)
        .cloned()
        .ok_or_else(|| unresolvable("anchor span missing"))?;

    let span_start = section.sentences[anchor.saturating_sub(window)].start;
    let shift = |x: usize| (ctx + x).checked_sub(span_start);
    let positions = match (
        shift(link.mention_start),
        shift(link.mention_end),
        shift(link.sentence_start),
        shift(link.sentence_end),
    ) {
        (Some(ms), Some(me), Some(ss), Some(se)) if se <= gold.text.chars().count() => GoldPositions {
            mention_start: ms,
            mention_end: me,
            sentence_start: ss,
            sentence_end: se,
        },
        _ => return Err(unresolvable("mention extends past the gold span")),
    };
    assemble(
        example_id,
        target,
        &spans,
        gold,
        mode,
        pool,
        InsertionScenario::TextPresent,
        link.lang.clone(),
        Some(positions),
        rng,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ids;
    use crate::ingest::{parse_article, RawArticle};
    use crate::model::Record;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn article(body: &str) -> ArticleRecord {
        let raw = RawArticle {
            markup: format!("<article>{body}</article>"),
            title: "Src".into(),
            qid: Some("Q1".into()),
            lang: "en".into(),
            snapshot: "s".into(),
        };
        parse_article(&raw).unwrap().record
    }

    fn sentences(prefix: &str, n: usize) -> String {
        (0..n)
            .map(|i| format!("{prefix} number {i} is here."))
            .collect::<Vec<_>>()
            .join(" ")
    }

    fn pool(n: usize) -> Vec<CandidateSpan> {
        (0..n)
            .map(|i| CandidateSpan {
                article_id: "other".into(),
                section_title: "Lead".into(),
                anchor_index: i,
                window: 0,
                text: format!("Pool sentence {i}."),
                is_gold: false,
            })
            .collect()
    }

    #[test]
    fn single_sentence_section_yields_one_clipped_span() {
        let a = article("<p>Only one sentence here.</p>");
        let spans = partition_spans(&a, 5);
        assert_eq!(spans.len(), 1);
        assert_eq!(spans[0].text, "Only one sentence here.");
    }

    #[test]
    fn spans_never_mix_sections() {
        let a = article(&format!(
            "<p>Lead text.</p><section title=\"A\"><p>{}</p></section><section title=\"B\"><p>{}</p></section>",
            sentences("Alpha", 10),
            sentences("Beta", 5)
        ));
        let spans = partition_spans(&a, 5);
        assert_eq!(spans.len(), 16);
        for s in &spans {
            match s.section_title.as_str() {
                "A" => assert!(!s.text.contains("Beta") && !s.text.contains("Lead")),
                "B" => assert!(!s.text.contains("Alpha")),
                _ => assert_eq!(s.text, "Lead text."),
            }
        }
        let a_spans: Vec<_> = spans.iter().filter(|s| s.section_title == "A").collect();
        assert_eq!(a_spans[0].text, sentences("Alpha", 6));
    }

    #[test]
    fn zero_window_spans_are_sentences() {
        let a = article(&format!("<p>{}</p>", sentences("Gamma", 4)));
        let spans = partition_spans(&a, 0);
        let texts: Vec<_> = spans.iter().map(|s| s.text.as_str()).collect();
        let want: Vec<_> = a.sections[0].sentences.iter().map(|s| s.text.as_str()).collect();
        assert_eq!(texts, want);
    }

    #[test]
    fn big_article_needs_no_easy_negatives() {
        let a = article(&format!("<p>{}</p>", sentences("Delta", 31)));
        let spans = partition_spans(&a, 0);
        let gold = spans[0].clone();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let neg = sample_negatives(&spans, &gold, &[], 9, &pool(20), &mut rng).unwrap();
        assert_eq!(neg.len(), 9);
        assert!(neg.iter().all(|s| s.article_id == a.article_id));
    }

    #[test]
    fn small_article_tops_up_from_pool() {
        let a = article(&format!("<p>{}</p>", sentences("Eps", 5)));
        let spans = partition_spans(&a, 0);
        let gold = spans[2].clone();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let neg = sample_negatives(&spans, &gold, &[], 9, &pool(20), &mut rng).unwrap();
        assert_eq!(neg.iter().filter(|s| s.article_id == a.article_id).count(), 4);
        assert_eq!(neg.iter().filter(|s| s.article_id == "other").count(), 5);
        let err = sample_negatives(&spans, &gold, &[], 9, &pool(3), &mut rng).unwrap_err();
        assert_eq!(err, CandidateError::InsufficientNegatives { needed: 9, found: 7 });
        assert!(err.to_string().contains("shortfall 2"));
    }

    #[test]
    fn mention_bearing_spans_are_not_negatives() {
        let a = article("<p>We use the BM25 formula daily. Nothing to see. Another line.</p>");
        let spans = partition_spans(&a, 0);
        let gold = spans[2].clone();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let neg = sample_negatives(&spans, &gold, &["BM25".to_string()], 1, &[], &mut rng).unwrap();
        assert_eq!(neg.len(), 1);
        assert_eq!(neg[0].text, "Nothing to see.");
    }

    fn event(
        scenario: InsertionScenario,
        section: &str,
        anchor: usize,
        mention: &str,
        context: &str,
    ) -> InsertionEvent {
        let start = context.find(mention).unwrap();
        let ms = context[..start].chars().count();
        InsertionEvent {
            link: LinkRecord {
                src_qid: "Q1".into(),
                tgt_qid: "Q2".into(),
                src_title: "Src".into(),
                tgt_title: "Tgt".into(),
                tgt_lead: "Tgt lead.".into(),
                section_title: section.into(),
                context: context.into(),
                mention: mention.into(),
                mention_start: ms,
                mention_end: ms + mention.chars().count(),
                sentence_start: 0,
                sentence_end: context.chars().count(),
                lang: "en".into(),
            },
            scenario,
            before_version_id: "v1".into(),
            after_version_id: "v2".into(),
            insertion_section: section.into(),
            insertion_anchor: anchor,
        }
    }

    fn target(mentions: &[&str]) -> Target {
        Target {
            title: "Tgt".into(),
            lead: "Tgt lead.".into(),
            mentions: mentions.iter().map(|m| m.to_string()).collect(),
        }
    }

    #[test]
    fn text_present_gold_is_mention_sentence() {
        let a = article(
            "<p>Brie is a soft cheese. It is best eaten when it is somewhat below normal room temperature. It is made from milk.</p>",
        );
        let ev = event(
            InsertionScenario::TextPresent,
            "Lead",
            0,
            "room temperature",
            "It is best eaten when it is somewhat below normal room temperature.",
        );
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ex = build_example(&ev, &a, target(&[]), Mode::Eval, 0, &[], &mut rng).unwrap();
        assert_eq!(ex.gold().anchor_index, 1);
        assert!(ex.gold().text.contains("room temperature"));
        assert_eq!(ex.candidates.len(), 3);
        ex.validate().unwrap();
    }

    #[test]
    fn missing_cases_use_insertion_anchor() {
        let a = article("<p>Intro here.</p><section title=\"Life\"><p>He was born in Nurmijärvi. He lived in time when Finnish was not a literary language. He died a Finnish poet.</p></section>");
        let ev = event(
            InsertionScenario::MissingSentence,
            "Life",
            1,
            "Finnish",
            "Finnish literature was young.",
        );
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ex = build_example(&ev, &a, target(&["Finnish"]), Mode::Eval, 0, &[], &mut rng).unwrap();
        assert!(ex.gold().text.starts_with("He lived in time"));
        // The gold keeps its mention; other mention-bearing spans are dropped.
        assert_eq!(ex.candidates.len(), 3);
    }

    #[test]
    fn missing_section_is_routed_aside() {
        let a = article("<p>Intro here.</p>");
        let ev = event(InsertionScenario::MissingSection, "Population", 0, "x", "x y.");
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(
            build_example(&ev, &a, target(&[]), Mode::Eval, 0, &[], &mut rng).unwrap_err(),
            CandidateError::MissingSection
        );
    }

    #[test]
    fn unresolvable_anchor_is_reported() {
        let a = article("<p>Intro here.</p>");
        let ev = event(InsertionScenario::MissingSpan, "Lead", 7, "x", "x y.");
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let err = build_example(&ev, &a, target(&[]), Mode::Eval, 0, &[], &mut rng).unwrap_err();
        assert!(err.to_string().starts_with("gold unresolvable"));
    }

    #[test]
    fn train_mode_has_n_plus_one_candidates_and_is_seeded() {
        let a = article(&format!("<p>{}</p>", sentences("Zeta", 20)));
        let ev = event(
            InsertionScenario::MissingMention,
            "Lead",
            4,
            "Zeta",
            "Zeta number 4 is here.",
        );
        let build = |seed| {
            let mut rng = ids::rng_for(seed, &event_example_id(&ev));
            build_example(&ev, &a, target(&[]), Mode::Train { negatives: 9 }, 2, &[], &mut rng).unwrap()
        };
        let ex = build(13);
        assert_eq!(ex.candidates.len(), 10);
        assert_eq!(ex.gold().anchor_index, 4);
        ex.validate().unwrap();
        assert_eq!(ex, build(13));
        assert_ne!(ex.candidates, build(14).candidates);
    }

    #[test]
    fn link_example_positions_slice_the_gold() {
        let a = article(&format!(
            "<p>{} The <a href=\"qid:Q2\">target thing</a> appears here. {}</p>",
            sentences("Eta", 6),
            sentences("Theta", 6)
        ));
        let raw = RawArticle {
            markup: format!(
                "<article><p>{} The <a href=\"qid:Q2\">target thing</a> appears here. {}</p></article>",
                sentences("Eta", 6),
                sentences("Theta", 6)
            ),
            title: "Src".into(),
            qid: Some("Q1".into()),
            lang: "en".into(),
            snapshot: "s".into(),
        };
        let parsed = parse_article(&raw).unwrap();
        let mut index = ingest::TargetIndex::new();
        index.insert(
            "Q2".into(),
            ingest::TargetMeta {
                title: "Target thing".into(),
                lead: "A thing.".into(),
            },
        );
        let link = ingest::extract_links(&parsed, &index).links.remove(0);
        for w in [0, 2, 5] {
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let ex = build_link_example(
                &link,
                &a,
                "id".into(),
                target(&["target thing"]),
                Mode::Eval,
                w,
                &[],
                &mut rng,
            )
            .unwrap();
            let p = ex.gold_positions.unwrap();
            let g: Vec<char> = ex.gold().text.chars().collect();
            let mention: String = g[p.mention_start..p.mention_end].iter().collect();
            assert_eq!(mention, "target thing");
            ex.validate().unwrap();
            if w == 5 {
                assert_eq!(ex.gold().text, link.context);
            }
        }
    }
}
