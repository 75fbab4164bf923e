//! Negative sampling and example assembly over randomized articles.

mod common;

use common::{article, MENTION};
use linkforge::candidates::{self, partition_spans, sample_negatives, CandidateError, Mode};
use linkforge::ids;
use linkforge::model::{ArticleRecord, CandidateSpan, InsertionEvent, InsertionScenario, LinkRecord, Record, Target};
use linkforge::text::MentionMatcher;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn inside_one_section(article: &ArticleRecord, span: &CandidateSpan) -> bool {
    article
        .section(&span.section_title)
        .is_some_and(|s| s.text.contains(&span.text))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn partition_covers_every_sentence_within_sections(a in article("Src", 4, 12), w in 0usize..7) {
        let spans = partition_spans(&a, w);
        prop_assert_eq!(spans.len(), a.sentence_count());
        for s in &spans {
            prop_assert!(inside_one_section(&a, s));
            let sec = a.section(&s.section_title).unwrap();
            prop_assert!(s.text.contains(&sec.sentences[s.anchor_index].text));
        }
    }

    #[test]
    fn negatives_follow_the_sampling_rules(
        a in article("Src", 3, 10),
        others in prop::collection::vec(article("Other", 2, 6), 0..4),
        n in 1usize..14,
        w in 0usize..4,
        pick in any::<prop::sample::Index>(),
        seed in any::<u64>(),
    ) {
        let others: Vec<ArticleRecord> = others
            .into_iter()
            .enumerate()
            .map(|(i, mut o)| {
                o.title = format!("Other{i}");
                o.article_id = ids::article_id("en", &o.title, &o.snapshot);
                o
            })
            .collect();
        let spans = partition_spans(&a, w);
        let gold = spans[pick.index(spans.len())].clone();
        let pool: Vec<CandidateSpan> = others.iter().flat_map(|o| partition_spans(o, w)).collect();
        let mentions = vec![MENTION.to_string()];
        let matcher = MentionMatcher::new(&mentions);
        let hard_available = spans.iter().filter(|s| !s.same_anchor(&gold) && !matcher.matches(&s.text)).count();
        let easy_available = pool.iter().filter(|s| !matcher.matches(&s.text)).count();

        let run = |seed| sample_negatives(&spans, &gold, &mentions, n, &pool, &mut ChaCha8Rng::seed_from_u64(seed));
        match run(seed) {
            Ok(neg) => {
                prop_assert_eq!(neg.len(), n);
                let hard = neg.iter().take_while(|s| s.article_id == a.article_id).count();
                prop_assert_eq!(hard, n.min(hard_available));
                prop_assert!(neg[hard..].iter().all(|s| s.article_id != a.article_id));
                for s in &neg {
                    prop_assert!(!s.is_gold);
                    prop_assert!(!s.same_anchor(&gold));
                    prop_assert!(!matcher.matches(&s.text));
                    let home = if s.article_id == a.article_id { &a } else {
                        others.iter().find(|o| o.article_id == s.article_id).unwrap()
                    };
                    prop_assert!(inside_one_section(home, s));
                }
                let again = run(seed).unwrap();
                prop_assert_eq!(
                    serde_json::to_string(&neg).unwrap(),
                    serde_json::to_string(&again).unwrap()
                );
            }
            Err(CandidateError::InsufficientNegatives { needed, found }) => {
                prop_assert_eq!(needed, n);
                prop_assert_eq!(found, hard_available + easy_available);
                prop_assert!(found < n);
            }
            Err(e) => prop_assert!(false, "unexpected {e}"),
        }
    }

    #[test]
    fn examples_have_one_gold_and_the_declared_size(
        a in article("Src", 3, 10),
        n in 1usize..6,
        pick in any::<prop::sample::Index>(),
        seed in any::<u64>(),
    ) {
        let spans = partition_spans(&a, 0);
        let g = &spans[pick.index(spans.len())];
        let sec = a.section(&g.section_title).unwrap();
        let event = InsertionEvent {
            link: LinkRecord {
                src_qid: "Q1".into(),
                tgt_qid: "Q2".into(),
                src_title: a.title.clone(),
                tgt_title: MENTION.into(),
                tgt_lead: "Lead.".into(),
                section_title: g.section_title.clone(),
                context: "x y.".into(),
                mention: "x".into(),
                mention_start: 0,
                mention_end: 1,
                sentence_start: 0,
                sentence_end: 4,
                lang: "en".into(),
            },
            scenario: InsertionScenario::MissingSentence,
            before_version_id: "1".into(),
            after_version_id: "2".into(),
            insertion_section: sec.title.clone(),
            insertion_anchor: g.anchor_index,
        };
        let target = Target { title: MENTION.into(), lead: "Lead.".into(), mentions: vec![MENTION.into()] };
        let matcher = MentionMatcher::new(&[MENTION]);
        let spans = partition_spans(&a, 2);
        let eligible = spans.iter().filter(|s| !s.same_anchor(g) && !matcher.matches(&s.text)).count();

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ex = candidates::build_example(&event, &a, target.clone(), Mode::Eval, 2, &[], &mut rng).unwrap();
        ex.validate().unwrap();
        prop_assert_eq!(ex.candidates.len(), eligible + 1);
        prop_assert_eq!(ex.gold().anchor_index, g.anchor_index);

        let train = candidates::build_example(&event, &a, target, Mode::Train { negatives: n }, 2, &[], &mut rng);
        match train {
            Ok(ex) => {
                ex.validate().unwrap();
                prop_assert_eq!(ex.candidates.len(), n + 1);
                prop_assert_eq!(ex.candidates.iter().filter(|c| c.is_gold).count(), 1);
            }
            Err(CandidateError::InsufficientNegatives { .. }) => prop_assert!(eligible < n),
            Err(e) => prop_assert!(false, "unexpected {e}"),
        }
    }
}
