//! Acceptance suite: one [PASS]/[FAIL] line per criterion, each checked at
//! its stated tolerance. Exits non-zero when any criterion fails.

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use linkforge::augment::{augment_example, sample_strategy, StrategyWeights, SPAN_MAX, SPAN_MIN};
use linkforge::candidates::{partition_spans, sample_negatives};
use linkforge::diff::{self, ClassifierConfig, RevisionHistory};
use linkforge::eval::{aggregate, evaluate, hits_at_k, mrr, Bucket, ExampleResult};
use linkforge::ids;
use linkforge::ingest::TargetMeta;
use linkforge::model::{
    serialize_record, ArticleRecord, CandidateSpan, GoldPositions, InsertionScenario, Ranking, RankingExample,
    RemovalStrategy, Section, Sentence, Target,
};
use linkforge::rank::bm25::{query_terms, Bm25Index};
use linkforge::rank::external::{ExternalScorer, FnTransport, ProcessTransport};
use linkforge::rank::{rank_bm25, rank_random, rank_string_match, Bm25Params};
use linkforge::text::MentionMatcher;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// Scenario classifier against the five before/after fixtures.
fn scenarios() -> Check {
    #[derive(Deserialize)]
    struct Cases {
        case: Vec<Case>,
    }
    #[derive(Deserialize)]
    struct Case {
        file: String,
        scenario: String,
    }
    let dir = root().join("fixtures/scenarios");
    let cases: Cases = toml::from_str(&fs::read_to_string(dir.join("cases.toml")).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let target = TargetMeta {
        title: "Target".into(),
        lead: "The target entity.".into(),
    };
    let started = Instant::now();
    let mut correct = 0;
    let mut wrong = Vec::new();
    for case in &cases.case {
        let text = fs::read_to_string(dir.join(&case.file)).map_err(|e| e.to_string())?;
        let history = RevisionHistory::parse(&text).map_err(|e| e.to_string())?;
        let counts = history.link_counts().map_err(|e| e.to_string())?;
        let src = history.qid().ok_or("fixture without qid")?.to_string();
        let got = diff::trace_insertion(&history, &counts, (&src, "Q100"), &target, &ClassifierConfig::default())
            .map(|t| t.event.scenario.to_string())
            .unwrap_or_else(|e| format!("error: {e}"));
        if got == case.scenario {
            correct += 1;
        } else {
            wrong.push(format!("{}: {got}", case.file));
        }
    }
    let elapsed = started.elapsed();
    ensure(cases.case.len() == 5 && correct == 5, || {
        format!("{correct}/{} correct; {wrong:?}", cases.case.len())
    })?;
    ensure(elapsed < Duration::from_secs(1), || format!("took {elapsed:?}"))?;
    Ok(format!("5/5 in {:.1} ms", elapsed.as_secs_f64() * 1e3))
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for i in 0..=p.len() {
            let mut q = p.clone();
            q.insert(i, n - 1);
            out.push(q);
        }
    }
    out
}

// Uniform-ranker MRR by exhaustive enumeration, and Hits@1 ⇔ MRR = 1.
fn metric_oracle() -> Check {
    let perms = permutations(4);
    ensure(perms.len() == 24, || format!("{} permutations", perms.len()))?;
    let mut total = 0.0;
    for p in &perms {
        let scores: Vec<f64> = p.iter().map(|&x| x as f64).collect();
        let r = Ranking::from_scores("x", "uniform", scores);
        total += mrr(&r, 0).map_err(|e| e.to_string())?;
    }
    let mean = total / 24.0;
    let expected = 25.0 / 48.0;
    ensure((mean - expected).abs() <= 1e-12, || {
        format!("mean MRR {mean} vs {expected}")
    })?;

    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for i in 0..10_000 {
        let d = rng.gen_range(1..=20);
        // Small integer scores force plenty of ties.
        let scores: Vec<f64> = (0..d).map(|_| rng.gen_range(0..4) as f64).collect();
        let r = Ranking::from_scores(format!("r{i}"), "random", scores);
        let g = rng.gen_range(0..d);
        let h = hits_at_k(&r, g, 1).map_err(|e| e.to_string())?;
        let m = mrr(&r, g).map_err(|e| e.to_string())?;
        ensure((h == 1.0) == (m == 1.0), || format!("ranking {i}: hits1 {h}, mrr {m}"))?;
        ensure(m >= h, || format!("ranking {i}: mrr {m} < hits1 {h}"))?;
    }
    Ok(format!(
        "mean MRR {mean:.15} (25/48 = {expected:.15}); 10000 rankings consistent"
    ))
}

// BM25 fixture scores and b = 0 length invariance.
fn bm25() -> Check {
    #[derive(Deserialize)]
    struct Fixture {
        candidates: Vec<String>,
        lead: String,
        cases: Vec<Case>,
    }
    #[derive(Deserialize)]
    struct Case {
        k1: f64,
        b: f64,
        scores: Vec<f64>,
    }
    let text = fs::read_to_string(root().join("fixtures/bm25/fixture.json")).map_err(|e| e.to_string())?;
    let f: Fixture = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    let index = Bm25Index::from_texts(f.candidates.iter().map(String::as_str), None);
    let query = query_terms(&f.lead, None);
    let mut worst: f64 = 0.0;
    for case in &f.cases {
        let got = index.scores(&query, Bm25Params::new(case.k1, case.b)?);
        ensure(got.len() == case.scores.len(), || "score count differs".into())?;
        for (g, w) in got.iter().zip(&case.scores) {
            worst = worst.max((g - w).abs());
        }
    }
    ensure(worst <= 1e-9, || format!("max deviation {worst:e}"))?;

    let words = [
        "river", "forest", "town", "author", "wrote", "kivi", "finnish", "novel", "bank", "edge",
    ];
    let filler = ["zebra", "quartz", "violin", "copper", "lantern"];
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for trial in 0..1000 {
        let d = rng.gen_range(1..8);
        let docs: Vec<String> = (0..d)
            .map(|_| {
                let n = rng.gen_range(1..12);
                (0..n)
                    .map(|_| *words.choose(&mut rng).unwrap())
                    .collect::<Vec<_>>()
                    .join(" ")
            })
            .collect();
        let lead: String = (0..4)
            .map(|_| *words.choose(&mut rng).unwrap())
            .collect::<Vec<_>>()
            .join(" ");
        let mut padded = docs.clone();
        for p in &mut padded {
            for _ in 0..rng.gen_range(0..10) {
                p.push(' ');
                p.push_str(filler.choose(&mut rng).unwrap());
            }
        }
        let params = Bm25Params::new(rng.gen_range(0.0..3.0), 0.0)?;
        let q = query_terms(&lead, None);
        let a = Bm25Index::from_texts(docs.iter().map(String::as_str), None).scores(&q, params);
        let b = Bm25Index::from_texts(padded.iter().map(String::as_str), None).scores(&q, params);
        ensure(a == b, || format!("trial {trial}: b=0 scores moved under padding"))?;
    }
    Ok(format!(
        "max deviation {worst:.1e} over {} cases; b=0 invariant in 1000 padded corpora",
        f.cases.len()
    ))
}

/// A gold context of `n` distinct sentences with the mention in sentence `m`.
fn augment_example_with(n: usize, m: usize, id: usize) -> (RankingExample, Vec<String>) {
    const MENTION: &str = "Perthes";
    let sentences: Vec<String> = (0..n)
        .map(|i| {
            if i == m {
                format!("Line {i} of case {id} names {MENTION} here.")
            } else {
                format!("Line {i} of case {id} is plain.")
            }
        })
        .collect();
    let ss: usize = sentences[..m].iter().map(|s| s.chars().count() + 1).sum();
    let ms = ss + sentences[m].find(MENTION).unwrap();
    let ex = RankingExample {
        example_id: format!("aug{id}"),
        target: Target {
            title: MENTION.into(),
            lead: "A commune.".into(),
            mentions: vec![MENTION.into()],
        },
        candidates: vec![CandidateSpan {
            article_id: "a".into(),
            section_title: "Lead".into(),
            anchor_index: m,
            window: 5,
            text: sentences.join(" "),
            is_gold: true,
        }],
        gold_index: 0,
        scenario: InsertionScenario::TextPresent,
        lang: "en".into(),
        gold_positions: Some(GoldPositions {
            mention_start: ms,
            mention_end: ms + MENTION.len(),
            sentence_start: ss,
            sentence_end: ss + sentences[m].chars().count(),
        }),
    };
    (ex, sentences)
}

// Strategy draw frequencies, rm_span sizes and the non-empty gold rule.
fn augmentation() -> Check {
    let w = StrategyWeights::new([0.4, 0.2, 0.3, 0.1]).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let draws = 100_000;
    let mut counts = [0usize; 4];
    for _ in 0..draws {
        counts[sample_strategy(&mut rng, &w, [true; 4]).index()] += 1;
    }
    let freq = counts.map(|c| c as f64 / draws as f64);
    for (i, f) in freq.iter().enumerate() {
        let want = w.as_array()[i];
        ensure((f - want).abs() <= 0.01, || {
            format!("{}: {f:.4} vs {want}", RemovalStrategy::ALL[i].as_str())
        })?;
    }

    let mut spans = BTreeMap::new();
    for id in 0..10_000 {
        let n = rng.gen_range(1..=12);
        let m = rng.gen_range(0..n);
        let (ex, sentences) = augment_example_with(n, m, id);
        let out = augment_example(&ex, &w, &mut rng);
        let gold = &out.base.gold().text;
        ensure(!gold.trim().is_empty(), || {
            format!("example {id}: empty gold after {}", out.applied_strategy.as_str())
        })?;
        if out.applied_strategy == RemovalStrategy::RmSpan {
            let removed = sentences.iter().filter(|s| !gold.contains(s.as_str())).count();
            ensure((SPAN_MIN..=SPAN_MAX).contains(&removed), || {
                format!("example {id}: rm_span removed {removed} of {n} sentences")
            })?;
            *spans.entry(removed).or_insert(0usize) += 1;
        }
    }
    Ok(format!(
        "frequencies {:.4}/{:.4}/{:.4}/{:.4}; rm_span sizes {spans:?}; 0 empty golds",
        freq[0], freq[1], freq[2], freq[3]
    ))
}

fn section(title: String, sentences: Vec<String>) -> Section {
    let mut text = String::new();
    let mut out = Vec::new();
    for s in sentences {
        if !text.is_empty() {
            text.push(' ');
        }
        let start = text.chars().count();
        text.push_str(&s);
        out.push(Sentence {
            end: start + s.chars().count(),
            start,
            text: s,
        });
    }
    Section {
        title,
        text,
        sentences: out,
    }
}

fn random_article(rng: &mut ChaCha8Rng, title: &str, mention: &str) -> ArticleRecord {
    let words = [
        "stone", "river", "mill", "bell", "harbour", "field", "road", "tower", "salt", "grain",
    ];
    let sections: Vec<Section> = (0..rng.gen_range(1..=4))
        .map(|si| {
            let sentences = (0..rng.gen_range(1..=9))
                .map(|j| {
                    let body: Vec<&str> = (0..rng.gen_range(1..5)).map(|_| *words.choose(rng).unwrap()).collect();
                    if rng.gen_bool(0.2) {
                        format!("By {mention} the {} {j}.", body.join(" "))
                    } else {
                        format!("The {} {j}.", body.join(" "))
                    }
                })
                .collect();
            section(if si == 0 { "Lead".into() } else { format!("Part {si}") }, sentences)
        })
        .collect();
    ArticleRecord {
        article_id: ids::article_id("en", title, "s"),
        title: title.into(),
        qid: Some(format!("Q{}", ids::stable_hash64(&[title]) % 100_000)),
        lang: "en".into(),
        lead: sections[0].text.clone(),
        sections,
        snapshot: "s".into(),
    }
}

// Negative sampling rules over randomized articles.
fn negative_sampling() -> Check {
    const MENTION: &str = "Zorblax";
    let mentions = vec![MENTION.to_string()];
    let matcher = MentionMatcher::new(&mentions);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut easy_used, mut insufficient) = (0, 0);
    let trials = 2000;
    for t in 0..trials {
        let src = random_article(&mut rng, &format!("Src{t}"), MENTION);
        let others: Vec<ArticleRecord> = (0..rng.gen_range(0..4))
            .map(|i| random_article(&mut rng, &format!("Other{t}-{i}"), MENTION))
            .collect();
        let w = rng.gen_range(0..4);
        let n = rng.gen_range(1..=12);
        let spans = partition_spans(&src, w);
        let gold = spans[rng.gen_range(0..spans.len())].clone();
        let pool: Vec<CandidateSpan> = others.iter().flat_map(|o| partition_spans(o, w)).collect();
        let seed: u64 = rng.gen();
        let run = || sample_negatives(&spans, &gold, &mentions, n, &pool, &mut ChaCha8Rng::seed_from_u64(seed));
        let Ok(negs) = run() else {
            insufficient += 1;
            continue;
        };
        let hard_available = spans
            .iter()
            .filter(|s| !s.same_anchor(&gold) && !matcher.matches(&s.text))
            .count();
        let hard = n.min(hard_available);
        ensure(negs.len() == n, || {
            format!("trial {t}: {} negatives, wanted {n}", negs.len())
        })?;
        for (i, s) in negs.iter().enumerate() {
            let owner = std::iter::once(&src)
                .chain(&others)
                .find(|a| a.article_id == s.article_id);
            let inside = owner
                .and_then(|a| a.section(&s.section_title))
                .is_some_and(|sec| sec.text.contains(&s.text));
            ensure(inside, || format!("trial {t}: negative {i} is not inside one section"))?;
            ensure(!matcher.matches(&s.text), || {
                format!("trial {t}: negative {i} contains the mention")
            })?;
            ensure(!s.same_anchor(&gold) && !s.is_gold, || {
                format!("trial {t}: gold among negatives")
            })?;
            let from_source = s.article_id == src.article_id;
            ensure(from_source == (i < hard), || {
                format!("trial {t}: negative {i} breaks hard-before-easy")
            })?;
        }
        easy_used += usize::from(hard < n);
        let again = run().map_err(|e| e.to_string())?;
        let bytes = |v: &[CandidateSpan]| v.iter().map(|s| serialize_record(s).unwrap()).collect::<Vec<_>>();
        ensure(bytes(&negs) == bytes(&again), || {
            format!("trial {t}: seeded rerun differs")
        })?;
    }
    ensure(easy_used > 0 && insufficient < trials, || "degenerate trials".into())?;
    Ok(format!(
        "{} trials checked ({easy_used} needing easy negatives, {insufficient} short of pool)",
        trials - insufficient
    ))
}

fn pipeline_run(out: &Path, workers: &str) -> Result<Duration, String> {
    let started = Instant::now();
    let o = Command::new(env!("CARGO_BIN_EXE_linkforge"))
        .arg("--config")
        .arg(root().join("fixtures/demo/pipeline.toml"))
        .args(["--workers", workers, "--log-level", "warn", "run", "--out-dir"])
        .arg(out)
        .output()
        .map_err(|e| e.to_string())?;
    ensure(o.status.success(), || String::from_utf8_lossy(&o.stderr).into_owned())?;
    Ok(started.elapsed())
}

// Two runs of the bundled pipeline, byte for byte.
fn determinism() -> Check {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (a, b) = (tmp.path().join("one"), tmp.path().join("two"));
    let ta = pipeline_run(&a, "1")?;
    let tb = pipeline_run(&b, "4")?;
    let limit = Duration::from_secs(30);
    ensure(ta < limit && tb < limit, || format!("runs took {ta:?} and {tb:?}"))?;
    let mut names: Vec<String> = fs::read_dir(&a)
        .map_err(|e| e.to_string())?
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n != "timings.json")
        .collect();
    names.sort();
    ensure(names.iter().any(|n| n == "manifest.json"), || "no manifest".into())?;
    ensure(names.len() >= 14, || format!("only {} outputs: {names:?}", names.len()))?;
    for n in &names {
        let x = fs::read(a.join(n)).map_err(|e| e.to_string())?;
        let y = fs::read(b.join(n)).map_err(|e| e.to_string())?;
        ensure(x == y, || format!("{n} differs"))?;
    }
    Ok(format!(
        "{} files identical (1 vs 4 workers); {:.2} s and {:.2} s",
        names.len(),
        ta.as_secs_f64(),
        tb.as_secs_f64()
    ))
}

// Random, string match and BM25 on a corpus built so that the Present half
// is solvable by mentions and the Missing half only by lead keywords.
fn baselines() -> Check {
    let keywords = [
        "glacier",
        "moraine",
        "cirque",
        "tarn",
        "serac",
        "crevasse",
        "icefall",
        "firn",
        "nunatak",
        "esker",
        "drumlin",
        "kame",
        "arete",
        "col",
        "bergschrund",
        "ablation",
    ];
    let filler = [
        "market", "bakery", "tram", "ledger", "pottery", "choir", "harbour", "orchard", "ferry", "mill", "bridge",
        "school", "chapel", "garden", "quarry", "tavern", "bell", "loom", "cellar", "barn",
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(500);
    let sentence = |rng: &mut ChaCha8Rng, extra: &[&str]| {
        let mut ws: Vec<&str> = (0..rng.gen_range(5..9)).map(|_| *filler.choose(rng).unwrap()).collect();
        ws.extend_from_slice(extra);
        ws.shuffle(rng);
        let mut s = ws.join(" ");
        s[..1].make_ascii_uppercase();
        s + "."
    };
    let missing = [
        InsertionScenario::MissingMention,
        InsertionScenario::MissingSentence,
        InsertionScenario::MissingSpan,
    ];
    let mut examples = Vec::new();
    for i in 0..500 {
        let mention = format!("Velkor{i}");
        let kws: Vec<&str> = keywords.choose_multiple(&mut rng, 4).copied().collect();
        let present = i < 250;
        let d = rng.gen_range(5..=15);
        let mut candidates: Vec<CandidateSpan> = (0..d - 1)
            .map(|j| CandidateSpan {
                article_id: format!("art{i}"),
                section_title: "Body".into(),
                anchor_index: j,
                window: 1,
                text: format!("{} {}", sentence(&mut rng, &[]), sentence(&mut rng, &[])),
                is_gold: false,
            })
            .collect();
        let gold_text = if present {
            format!(
                "{} {}",
                sentence(&mut rng, &[]),
                sentence(&mut rng, &[mention.as_str()])
            )
        } else {
            format!("{} {}", sentence(&mut rng, &[]), sentence(&mut rng, &kws[..2]))
        };
        let gold_index = rng.gen_range(0..d);
        candidates.insert(
            gold_index,
            CandidateSpan {
                article_id: format!("art{i}"),
                section_title: "Body".into(),
                anchor_index: d,
                window: 1,
                text: gold_text,
                is_gold: true,
            },
        );
        examples.push(RankingExample {
            example_id: format!("en:Q{i}:T{i}:v1"),
            target: Target {
                title: mention.clone(),
                lead: format!(
                    "{mention} is a {} {} shaped by {} and {}.",
                    kws[0], kws[1], kws[2], kws[3]
                ),
                mentions: vec![mention],
            },
            candidates,
            gold_index,
            scenario: if present {
                InsertionScenario::TextPresent
            } else {
                missing[i % 3]
            },
            lang: "en".into(),
            gold_positions: None,
        });
    }
    let score = |rank: &dyn Fn(&RankingExample) -> Ranking| -> Result<Vec<ExampleResult>, String> {
        examples
            .iter()
            .map(|e| evaluate(e, &rank(e), 1).map_err(|x| x.to_string()))
            .collect()
    };
    let random = score(&|e| rank_random(e, &mut ids::rng_for(13, &e.example_id)))?;
    let sm = score(&rank_string_match)?;
    let bm = score(&|e| rank_bm25(e, Bm25Params::default(), None))?;
    let agg = |r: &[ExampleResult], b: Bucket| {
        let a = aggregate(r);
        let m = *a.macro_row.get(b);
        (m.hits1.unwrap(), m.mrr.unwrap())
    };
    let chance: f64 = examples
        .iter()
        .filter(|e| e.scenario != InsertionScenario::TextPresent)
        .map(|e| 1.0 / e.candidates.len() as f64)
        .sum::<f64>()
        / 250.0;
    let (sm_present, _) = agg(&sm, Bucket::Present);
    let (sm_missing, _) = agg(&sm, Bucket::Missing);
    let (bm_h, bm_m) = agg(&bm, Bucket::Overall);
    let (rn_h, rn_m) = agg(&random, Bucket::Overall);
    ensure(sm_present >= 0.99, || {
        format!("string match Present Hits@1 {sm_present}")
    })?;
    ensure((sm_missing - chance).abs() <= 0.05, || {
        format!("string match Missing Hits@1 {sm_missing:.3} vs chance {chance:.3}")
    })?;
    ensure(bm_h > rn_h && bm_m > rn_m, || {
        format!("BM25 {bm_h:.3}/{bm_m:.3} not above random {rn_h:.3}/{rn_m:.3}")
    })?;
    Ok(format!(
        "SM Present {sm_present:.3}, SM Missing {sm_missing:.3} (chance {chance:.3}); \
         Overall Hits@1/MRR BM25 {bm_h:.3}/{bm_m:.3} > random {rn_h:.3}/{rn_m:.3}"
    ))
}

fn protocol_example(id: &str, d: usize) -> RankingExample {
    RankingExample {
        example_id: id.into(),
        target: Target {
            title: "Target".into(),
            lead: "Target lead.".into(),
            mentions: vec!["target".into()],
        },
        candidates: (0..d)
            .map(|i| CandidateSpan {
                article_id: "a".into(),
                section_title: "Body".into(),
                anchor_index: i,
                window: 0,
                text: format!("Candidate number {i}."),
                is_gold: i == 0,
            })
            .collect(),
        gold_index: 0,
        scenario: InsertionScenario::TextPresent,
        lang: "en".into(),
        gold_positions: None,
    }
}

// Echo scorer round trips and the malformed-reply fixtures.
fn protocol() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1000);
    let examples: Vec<RankingExample> = (0..1000)
        .map(|i| protocol_example(&format!("ex{i}"), rng.gen_range(1..=12)))
        .collect();
    let cmd = format!("{} echo-scorer", env!("CARGO_BIN_EXE_linkforge"));
    let transport = ProcessTransport::spawn(&cmd).map_err(|e| e.to_string())?;
    let mut scorer = ExternalScorer::connect(transport, Duration::from_secs(30)).map_err(|e| e.to_string())?;
    let results = scorer.score_many(&examples, 16).map_err(|e| e.to_string())?;
    let errors = results.iter().filter(|r| r.is_err()).count();
    ensure(errors == 0, || format!("{errors} protocol errors"))?;
    for (e, r) in examples.iter().zip(&results) {
        let r = r.as_ref().unwrap();
        let d = e.candidates.len();
        ensure(r.example_id == e.example_id, || format!("{}: wrong id", e.example_id))?;
        ensure(r.order == (0..d).rev().collect::<Vec<_>>(), || {
            format!("{}: order {:?}", e.example_id, r.order)
        })?;
    }

    #[derive(Deserialize)]
    struct Cases {
        case: Vec<Case>,
    }
    #[derive(Deserialize)]
    struct Case {
        name: String,
        handshake: Option<String>,
        reply: Option<String>,
        error: String,
    }
    let text = fs::read_to_string(root().join("fixtures/protocol/replies.toml")).map_err(|e| e.to_string())?;
    let cases: Cases = toml::from_str(&text).map_err(|e| e.to_string())?;
    let example = protocol_example("probe", 3);
    for case in &cases.case {
        let handshake = case
            .handshake
            .clone()
            .unwrap_or_else(|| r#"{"type":"ready","name":"fixture"}"#.into());
        let reply = case.reply.clone();
        let transport = FnTransport::new(move |line: &str| {
            if line.contains(r#""type":"hello""#) {
                vec![handshake.clone()]
            } else {
                reply.iter().map(|r| r.replace("{id}", "probe")).collect()
            }
        });
        let got = ExternalScorer::connect(transport, Duration::from_millis(50)).and_then(|mut s| s.score(&example));
        let name = match &got {
            Ok(_) => "ok",
            Err(e) => e.name(),
        };
        ensure(name == case.error, || {
            format!("{}: raised {name}, expected {}", case.name, case.error)
        })?;
    }
    Ok(format!(
        "1000 round trips, 0 errors; {} malformed fixtures named",
        cases.case.len()
    ))
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("scenario classifier reproduces 5/5 fixtures in < 1 s", scenarios),
        (
            "uniform-ranker MRR = 25/48 ± 1e-12; Hits@1 ⇔ MRR = 1 on 10 000 rankings",
            metric_oracle,
        ),
        ("BM25 fixture within 1e-9; b = 0 length invariance", bm25),
        (
            "augmentation draws within ±0.01; rm_span in 2..5; no empty golds in 10 000",
            augmentation,
        ),
        ("negative sampling rules and seeded reruns", negative_sampling),
        ("pipeline reruns are byte-identical, each < 30 s", determinism),
        ("baseline ordering on 500 constructed examples", baselines),
        (
            "scorer protocol: 1 000 echo round trips, malformed replies named",
            protocol,
        ),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("[PASS] {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("[FAIL] {name}: {detail}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
