//! Character-indexed string helpers, word tokenization and mention matching.
//!
//! All offsets in this crate are Unicode scalar-value indices, never byte
//! indices.

use unicode_normalization::UnicodeNormalization;
use unicode_segmentation::UnicodeSegmentation;

/// Number of Unicode scalar values in `s`.
pub fn char_len(s: &str) -> usize {
    s.chars().count()
}

/// Byte offset of the `idx`-th char, or `s.len()` when `idx == char_len(s)`.
fn byte_offset(s: &str, idx: usize) -> Option<usize> {
    if idx == 0 {
        return Some(0);
    }
    let mut count = 0;
    for (b, _) in s.char_indices() {
        if count == idx {
            return Some(b);
        }
        count += 1;
    }
    (count == idx).then_some(s.len())
}

/// Slice `s` by char offsets `[start, end)`. Returns `None` when out of range.
pub fn char_slice(s: &str, start: usize, end: usize) -> Option<&str> {
    if start > end {
        return None;
    }
    let b0 = byte_offset(s, start)?;
    let b1 = b0 + byte_offset(&s[b0..], end - start)?;
    Some(&s[b0..b1])
}

/// Remove the char range `[start, end)` from `s`.
pub fn remove_char_range(s: &str, start: usize, end: usize) -> String {
    s.chars()
        .enumerate()
        .filter(|(i, _)| *i < start || *i >= end)
        .map(|(_, c)| c)
        .collect()
}

/// A word token with char offsets into the tokenized text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token<'a> {
    pub text: &'a str,
    pub start: usize,
    pub end: usize,
}

/// Word tokens following Unicode word boundaries (UAX #29). Ideographic and
/// kana characters come out as one token each.
pub fn tokenize(text: &str) -> Vec<Token<'_>> {
    let mut out = Vec::new();
    let mut chars_seen = 0usize;
    let mut last_byte = 0usize;
    for (b, word) in text.unicode_word_indices() {
        chars_seen += text[last_byte..b].chars().count();
        let len = word.chars().count();
        out.push(Token {
            text: word,
            start: chars_seen,
            end: chars_seen + len,
        });
        chars_seen += len;
        last_byte = b + word.len();
    }
    out
}

/// Case-folded word tokens.
pub fn folded_tokens(text: &str) -> Vec<String> {
    tokenize(text).into_iter().map(|t| fold(t.text)).collect()
}

/// NFKC normalization followed by lowercasing.
pub fn fold(s: &str) -> String {
    s.nfkc().collect::<String>().to_lowercase()
}

/// True for scripts written without spaces between words, where mentions are
/// matched as plain substrings.
pub fn is_scriptio_continua(c: char) -> bool {
    matches!(c as u32,
        0x0E00..=0x0E7F   // Thai
        | 0x0E80..=0x0EFF // Lao
        | 0x0F00..=0x0FFF // Tibetan
        | 0x1000..=0x109F // Myanmar
        | 0x1780..=0x17FF // Khmer
        | 0x3040..=0x30FF // Hiragana, Katakana
        | 0x3400..=0x4DBF // CJK ext A
        | 0x4E00..=0x9FFF // CJK unified
        | 0xF900..=0xFAFF // CJK compatibility
        | 0xFF66..=0xFF9F // halfwidth katakana
        | 0x20000..=0x2FA1F)
}

#[derive(Debug, Clone)]
struct NormalizedMention {
    folded: String,
    substring: bool,
}

/// Matches a fixed set of mentions against candidate texts.
///
/// Both sides are NFKC-normalized and case-folded. Mentions in space-delimited
/// scripts must sit on word boundaries; mentions in CJK-like scripts match as
/// substrings.
#[derive(Debug, Clone, Default)]
pub struct MentionMatcher {
    mentions: Vec<NormalizedMention>,
}

impl MentionMatcher {
    pub fn new<S: AsRef<str>>(mentions: &[S]) -> Self {
        let mentions = mentions
            .iter()
            .filter_map(|m| {
                let folded = fold(m.as_ref().trim());
                if folded.is_empty() {
                    return None;
                }
                let first = folded.chars().next()?;
                let last = folded.chars().last()?;
                let substring = is_scriptio_continua(first) || is_scriptio_continua(last);
                Some(NormalizedMention { folded, substring })
            })
            .collect();
        Self { mentions }
    }

    pub fn is_empty(&self) -> bool {
        self.mentions.is_empty()
    }

    /// True when `text` contains any of the mentions.
    pub fn matches(&self, text: &str) -> bool {
        if self.mentions.is_empty() {
            return false;
        }
        let hay = fold(text);
        self.mentions.iter().any(|m| {
            if m.substring {
                hay.contains(&m.folded)
            } else {
                contains_on_word_boundary(&hay, &m.folded)
            }
        })
    }
}

fn contains_on_word_boundary(hay: &str, needle: &str) -> bool {
    hay.match_indices(needle).any(|(b, _)| {
        let before = hay[..b].chars().next_back();
        let after = hay[b + needle.len()..].chars().next();
        !before.is_some_and(char::is_alphanumeric) && !after.is_some_and(char::is_alphanumeric)
    })
}
