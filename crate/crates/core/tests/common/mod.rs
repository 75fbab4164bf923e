//! Generators shared by the property tests.

#![allow(dead_code)]

use linkforge::ids;
use linkforge::model::{ArticleRecord, Section, Sentence};
use proptest::prelude::*;

pub const MENTION: &str = "Zorblax";

/// A sentence; roughly one in five carries [`MENTION`].
pub fn sentence() -> impl Strategy<Value = String> {
    (prop::collection::vec("[a-z]{1,6}", 1..6), 0u8..5).prop_map(|(ws, m)| {
        let body = ws.join(" ");
        if m == 0 {
            format!("Near {MENTION} {body}.")
        } else {
            format!("Plain {body}.")
        }
    })
}

pub fn section(title: String, sentences: Vec<String>) -> Section {
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

pub fn article_from(title: &str, sections: Vec<Vec<String>>) -> ArticleRecord {
    let sections: Vec<Section> = sections
        .into_iter()
        .enumerate()
        .map(|(i, s)| section(if i == 0 { "Lead".into() } else { format!("S{i}") }, s))
        .collect();
    ArticleRecord {
        article_id: ids::article_id("en", title, "snap"),
        title: title.into(),
        qid: Some(format!("Q{}", title.len())),
        lang: "en".into(),
        lead: sections[0].text.clone(),
        sections,
        snapshot: "snap".into(),
    }
}

pub fn article(title: &'static str, max_sections: usize, max_sentences: usize) -> impl Strategy<Value = ArticleRecord> {
    prop::collection::vec(prop::collection::vec(sentence(), 1..=max_sentences), 1..=max_sections)
        .prop_map(move |secs| article_from(title, secs))
}
