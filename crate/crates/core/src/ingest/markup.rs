//! Parser for the restricted article markup.
//!
//! ```text
//! <article title="…" qid="Q…" lang="…">
//!   <p>…</p>                         (paragraphs before any section form the lead section)
//!   <section title="…">
//!     <p>text <a href="qid:Q…">anchor</a> text</p>
//!   </section>
//! </article>
//! ```
//!
//! `<figure>`, `<table>`, `<note>` and `<caption>` may appear anywhere below
//! `<article>`; everything inside them is dropped. Comments are skipped.
//! Whitespace inside paragraphs is collapsed to single spaces.

use thiserror::Error;

/// Title given to paragraphs that precede the first `<section>`.
pub const LEAD_SECTION_TITLE: &str = "Lead";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("markup error at line {line}, column {column}: {message}")]
pub struct MarkupError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Anchor {
    /// Char offsets into the paragraph text. `None` when the anchor text is empty.
    pub span: Option<(usize, usize)>,
    pub href: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Paragraph {
    pub text: String,
    pub anchors: Vec<Anchor>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawSection {
    pub title: String,
    pub paragraphs: Vec<Paragraph>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ParsedMarkup {
    pub title: Option<String>,
    pub qid: Option<String>,
    pub lang: Option<String>,
    pub sections: Vec<RawSection>,
    /// Links found inside figure/table/note/caption elements.
    pub excluded_links: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Token {
    Text(String),
    Start {
        name: String,
        attrs: Vec<(String, String)>,
        self_closing: bool,
    },
    End(String),
}

struct Lexer<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn error_at(&self, pos: usize, message: impl Into<String>) -> MarkupError {
        let before = &self.src[..pos.min(self.src.len())];
        let line = before.matches('\n').count() + 1;
        let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
        MarkupError {
            line,
            column,
            message: message.into(),
        }
    }

    /// Next token and the byte position it started at.
    fn next(&mut self) -> Result<Option<(usize, Token)>, MarkupError> {
        loop {
            let start = self.pos;
            let rest = &self.src[self.pos..];
            if rest.is_empty() {
                return Ok(None);
            }
            if let Some(body) = rest.strip_prefix("<!--") {
                let end = body
                    .find("-->")
                    .ok_or_else(|| self.error_at(start, "unterminated comment"))?;
                self.pos += 4 + end + 3;
                continue;
            }
            if rest.starts_with('<') {
                let end = rest.find('>').ok_or_else(|| self.error_at(start, "unterminated tag"))?;
                let inner = &rest[1..end];
                self.pos += end + 1;
                return self.tag(start, inner).map(|t| Some((start, t)));
            }
            let end = rest.find('<').unwrap_or(rest.len());
            self.pos += end;
            return Ok(Some((start, Token::Text(decode_entities(&rest[..end])))));
        }
    }

    fn tag(&self, at: usize, inner: &str) -> Result<Token, MarkupError> {
        if let Some(name) = inner.strip_prefix('/') {
            let name = name.trim();
            if name.is_empty() || !name.chars().all(is_name_char) {
                return Err(self.error_at(at, format!("malformed end tag </{name}>")));
            }
            return Ok(Token::End(name.to_ascii_lowercase()));
        }
        let (inner, self_closing) = match inner.strip_suffix('/') {
            Some(s) => (s, true),
            None => (inner, false),
        };
        let name_end = inner.find(|c: char| !is_name_char(c)).unwrap_or(inner.len());
        let name = &inner[..name_end];
        if name.is_empty() {
            return Err(self.error_at(at, "tag without a name"));
        }
        let attrs = parse_attrs(&inner[name_end..]).map_err(|m| self.error_at(at, format!("in <{name}>: {m}")))?;
        Ok(Token::Start {
            name: name.to_ascii_lowercase(),
            attrs,
            self_closing,
        })
    }
}

fn is_name_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '-' || c == '_'
}

fn parse_attrs(mut s: &str) -> Result<Vec<(String, String)>, String> {
    let mut out = Vec::new();
    loop {
        s = s.trim_start();
        if s.is_empty() {
            return Ok(out);
        }
        let eq = s.find('=').ok_or("attribute without value")?;
        let key = s[..eq].trim();
        if key.is_empty() || !key.chars().all(is_name_char) {
            return Err(format!("bad attribute name {key:?}"));
        }
        let rest = s[eq + 1..].trim_start();
        let quote = rest
            .chars()
            .next()
            .filter(|c| *c == '"' || *c == '\'')
            .ok_or("attribute value must be quoted")?;
        let close = rest[1..].find(quote).ok_or("unterminated attribute value")?;
        out.push((key.to_ascii_lowercase(), decode_entities(&rest[1..1 + close])));
        s = &rest[1 + close + 1..];
    }
}

/// Decode the five XML entities and numeric references. Unknown `&…;`
/// sequences and bare ampersands are kept literally.
pub fn decode_entities(s: &str) -> String {
    if !s.contains('&') {
        return s.to_string();
    }
    let mut out = String::with_capacity(s.len());
    let mut rest = s;
    while let Some(i) = rest.find('&') {
        out.push_str(&rest[..i]);
        let tail = &rest[i..];
        let decoded = tail.find(';').filter(|&j| j <= 10).and_then(|j| {
            let ent = &tail[1..j];
            let c = match ent {
                "amp" => Some('&'),
                "lt" => Some('<'),
                "gt" => Some('>'),
                "quot" => Some('"'),
                "apos" => Some('\''),
                "nbsp" => Some('\u{a0}'),
                _ => ent
                    .strip_prefix("#x")
                    .or_else(|| ent.strip_prefix("#X"))
                    .and_then(|h| u32::from_str_radix(h, 16).ok())
                    .or_else(|| ent.strip_prefix('#').and_then(|d| d.parse().ok()))
                    .and_then(char::from_u32),
            };
            c.map(|c| (c, j))
        });
        match decoded {
            Some((c, j)) => {
                out.push(c);
                rest = &tail[j + 1..];
            }
            None => {
                out.push('&');
                rest = &tail[1..];
            }
        }
    }
    out.push_str(rest);
    out
}

fn is_excluded(name: &str) -> bool {
    matches!(name, "figure" | "table" | "note" | "caption")
}

/// Accumulates paragraph text with whitespace collapsing and anchor offsets.
#[derive(Default)]
struct ParagraphBuilder {
    text: String,
    len: usize,
    pending_space: bool,
    anchors: Vec<Anchor>,
    open: Option<(Option<usize>, String)>,
}

impl ParagraphBuilder {
    fn push_text(&mut self, s: &str) {
        for c in s.chars() {
            if c.is_whitespace() {
                if self.len > 0 {
                    self.pending_space = true;
                }
                continue;
            }
            if self.pending_space {
                self.text.push(' ');
                self.len += 1;
                self.pending_space = false;
            }
            if let Some((start @ None, _)) = &mut self.open {
                *start = Some(self.len);
            }
            self.text.push(c);
            self.len += 1;
        }
    }

    fn close_anchor(&mut self) {
        if let Some((start, href)) = self.open.take() {
            self.anchors.push(Anchor {
                span: start.map(|s| (s, self.len)),
                href,
            });
        }
    }

    fn finish(self) -> Paragraph {
        Paragraph {
            text: self.text,
            anchors: self.anchors,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Frame {
    Article,
    Section,
    Paragraph,
    Anchor,
    Excluded,
    Other,
}

/// Parse one article. Exactly one `<article>` element is required.
pub fn parse_markup(src: &str) -> Result<ParsedMarkup, MarkupError> {
    let mut lx = Lexer { src, pos: 0 };
    let mut out = ParsedMarkup::default();
    let mut stack: Vec<(String, Frame)> = Vec::new();
    let mut para: Option<ParagraphBuilder> = None;
    let mut seen_article = false;
    let mut explicit_section_seen = false;
    let mut excluded_depth = 0usize;

    while let Some((at, tok)) = lx.next()? {
        let top = stack.last().map(|(_, f)| *f);
        if excluded_depth > 0 {
            match tok {
                Token::Start { name, self_closing, .. } => {
                    if name == "a" {
                        out.excluded_links += 1;
                    }
                    if !self_closing {
                        stack.push((name, Frame::Other));
                        excluded_depth += 1;
                    }
                }
                Token::End(name) => {
                    let (open, frame) = stack.pop().expect("excluded frames are on the stack");
                    if open != name {
                        return Err(lx.error_at(at, format!("expected </{open}>, found </{name}>")));
                    }
                    if frame == Frame::Excluded || frame == Frame::Other {
                        excluded_depth -= 1;
                    }
                }
                Token::Text(_) => {}
            }
            continue;
        }
        match tok {
            Token::Text(t) => match top {
                Some(Frame::Paragraph) | Some(Frame::Anchor) => para.as_mut().expect("paragraph open").push_text(&t),
                _ if t.trim().is_empty() => {}
                _ => return Err(lx.error_at(at, "text outside a paragraph")),
            },
            Token::Start {
                name,
                attrs,
                self_closing,
            } => {
                let attr = |k: &str| attrs.iter().find(|(n, _)| n == k).map(|(_, v)| v.clone());
                if self_closing {
                    return Err(lx.error_at(at, format!("unexpected self-closing <{name}/>")));
                }
                let frame = match (name.as_str(), top) {
                    ("article", None) if !seen_article => {
                        seen_article = true;
                        out.title = attr("title");
                        out.qid = attr("qid").filter(|q| !q.trim().is_empty());
                        out.lang = attr("lang");
                        Frame::Article
                    }
                    ("section", Some(Frame::Article)) => {
                        explicit_section_seen = true;
                        let title = attr("title").ok_or_else(|| lx.error_at(at, "<section> requires a title"))?;
                        out.sections.push(RawSection {
                            title,
                            paragraphs: Vec::new(),
                        });
                        Frame::Section
                    }
                    ("p", Some(Frame::Article)) | ("p", Some(Frame::Section)) => {
                        if top == Some(Frame::Article) {
                            if explicit_section_seen {
                                return Err(lx.error_at(at, "<p> outside a section after the first <section>"));
                            }
                            if out.sections.is_empty() {
                                out.sections.push(RawSection {
                                    title: LEAD_SECTION_TITLE.to_string(),
                                    paragraphs: Vec::new(),
                                });
                            }
                        }
                        para = Some(ParagraphBuilder::default());
                        Frame::Paragraph
                    }
                    ("a", Some(Frame::Paragraph)) => {
                        let href = attr("href").unwrap_or_default();
                        para.as_mut().expect("paragraph open").open = Some((None, href));
                        Frame::Anchor
                    }
                    (n, Some(_)) if is_excluded(n) => {
                        excluded_depth = 1;
                        Frame::Excluded
                    }
                    (n, _) => return Err(lx.error_at(at, format!("unexpected <{n}>"))),
                };
                stack.push((name, frame));
            }
            Token::End(name) => {
                let Some((open, frame)) = stack.pop() else {
                    return Err(lx.error_at(at, format!("unmatched </{name}>")));
                };
                if open != name {
                    return Err(lx.error_at(at, format!("expected </{open}>, found </{name}>")));
                }
                match frame {
                    Frame::Anchor => para.as_mut().expect("paragraph open").close_anchor(),
                    Frame::Paragraph => {
                        let p = para.take().expect("paragraph open").finish();
                        if !p.text.is_empty() {
                            out.sections
                                .last_mut()
                                .expect("paragraphs live in sections")
                                .paragraphs
                                .push(p);
                        }
                    }
                    _ => {}
                }
            }
        }
    }
    if let Some((open, _)) = stack.last() {
        return Err(lx.error_at(src.len(), format!("unclosed <{open}>")));
    }
    if !seen_article {
        return Err(lx.error_at(0, "no <article> element"));
    }
    Ok(out)
}
