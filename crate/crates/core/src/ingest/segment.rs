//! Rule-based sentence segmentation.
//!
//! Space-delimited scripts split after terminal punctuation followed by
//! whitespace and an uppercase letter, a digit or a caseless letter, unless
//! the period closes a known abbreviation. CJK text splits after 。！？
//! with no whitespace requirement.

use std::collections::{BTreeMap, HashSet};
use std::sync::OnceLock;

use crate::model::Sentence;
use crate::text::char_len;

const ABBREVIATIONS_TOML: &str = include_str!("../../data/abbreviations.toml");

fn builtin_table() -> &'static BTreeMap<String, Vec<String>> {
    static TABLE: OnceLock<BTreeMap<String, Vec<String>>> = OnceLock::new();
    TABLE.get_or_init(|| toml::from_str(ABBREVIATIONS_TOML).expect("bundled abbreviation table parses"))
}

/// A set of period-terminated tokens that never end a sentence.
#[derive(Debug, Clone, Default)]
pub struct Abbreviations {
    set: HashSet<String>,
}

impl Abbreviations {
    pub fn new<I, S>(items: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            set: items.into_iter().map(Into::into).collect(),
        }
    }

    /// The bundled common list plus the list for `lang`, if any.
    pub fn for_lang(lang: &str) -> Self {
        let table = builtin_table();
        let common = table.get("common").into_iter().flatten();
        let own = table.get(lang).into_iter().flatten();
        Self::new(common.chain(own).cloned())
    }

    pub fn contains(&self, token: &str) -> bool {
        self.set.contains(token)
    }
}

fn is_terminal(c: char) -> bool {
    matches!(
        c,
        '.' | '!' | '?' | '…' | '।' | '॥' | '؟' | '۔' | '።' | '፧' | '։' | '\u{037E}' | '‼' | '⁇' | '⁈' | '⁉'
    )
}

fn is_cjk_terminal(c: char) -> bool {
    matches!(c, '。' | '！' | '？' | '｡')
}

fn is_closing(c: char) -> bool {
    matches!(
        c,
        '"' | '\'' | ')' | ']' | '}' | '»' | '”' | '’' | '」' | '』' | '）' | '】' | '〉' | '》'
    )
}

fn is_opening(c: char) -> bool {
    matches!(c, '"' | '\'' | '(' | '[' | '«' | '“' | '‘' | '¿' | '¡' | '「' | '『')
}

fn starts_sentence(c: char) -> bool {
    c.is_uppercase() || c.is_numeric() || (c.is_alphabetic() && !c.is_lowercase() && !c.is_uppercase())
}

/// Segment with the bundled abbreviation table for `lang`.
pub fn segment_sentences(text: &str, lang: &str) -> Vec<Sentence> {
    segment_with(text, &Abbreviations::for_lang(lang))
}

/// Segment `text` into trimmed sentences with char offsets. Text without any
/// boundary comes back as a single sentence; whitespace-only text yields none.
pub fn segment_with(text: &str, abbreviations: &Abbreviations) -> Vec<Sentence> {
    let chars: Vec<char> = text.chars().collect();
    let n = chars.len();
    let mut cuts = Vec::new();
    let mut i = 0;
    while i < n {
        let c = chars[i];
        if is_cjk_terminal(c) {
            let mut j = i + 1;
            while j < n && (is_cjk_terminal(chars[j]) || is_closing(chars[j])) {
                j += 1;
            }
            cuts.push(j);
            i = j;
            continue;
        }
        if !is_terminal(c) {
            i += 1;
            continue;
        }
        let mut j = i + 1;
        while j < n && (is_terminal(chars[j]) || is_closing(chars[j])) {
            j += 1;
        }
        if j < n && chars[j].is_whitespace() {
            let mut k = j;
            while k < n && chars[k].is_whitespace() {
                k += 1;
            }
            while k < n && is_opening(chars[k]) {
                k += 1;
            }
            let single_period = c == '.' && !chars[i + 1..j].iter().any(|&x| is_terminal(x));
            if k < n && starts_sentence(chars[k]) && !(single_period && ends_abbreviation(&chars, i, abbreviations)) {
                cuts.push(j);
            }
        }
        i = j;
    }
    cuts.push(n);

    let mut out = Vec::new();
    let mut prev = 0;
    for cut in cuts {
        if cut <= prev {
            continue;
        }
        let mut s = prev;
        while s < cut && chars[s].is_whitespace() {
            s += 1;
        }
        let mut e = cut;
        while e > s && chars[e - 1].is_whitespace() {
            e -= 1;
        }
        if s < e {
            out.push(Sentence {
                text: chars[s..e].iter().collect(),
                start: s,
                end: e,
            });
        }
        prev = cut;
    }
    debug_assert!(out.last().is_none_or(|s| s.end <= char_len(text)));
    out
}

/// Whether the word ending with the period at `dot` is a listed abbreviation.
fn ends_abbreviation(chars: &[char], dot: usize, abbreviations: &Abbreviations) -> bool {
    let mut start = dot;
    while start > 0 && !chars[start - 1].is_whitespace() {
        start -= 1;
    }
    while start < dot && is_opening(chars[start]) {
        start += 1;
    }
    let token: String = chars[start..=dot].iter().collect();
    abbreviations.contains(&token)
}
