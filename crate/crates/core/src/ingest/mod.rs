//! Article parsing and link extraction.

pub mod markup;
pub mod segment;

use std::collections::HashMap;

use thiserror::Error;

use crate::ids;
use crate::model::{ArticleRecord, LinkRecord, Section, Sentence};
use crate::text::char_slice;
pub use markup::{MarkupError, LEAD_SECTION_TITLE};
pub use segment::{segment_sentences, segment_with, Abbreviations};

/// Sentences kept on each side of the link sentence.
pub const CONTEXT_SENTENCES: usize = 5;

/// One article version as markup plus its metadata.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawArticle {
    pub markup: String,
    pub title: String,
    pub qid: Option<String>,
    pub lang: String,
    pub snapshot: String,
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error(transparent)]
    Markup(#[from] MarkupError),
    #[error("<article> is missing the {0} attribute")]
    MissingAttribute(&'static str),
}

impl RawArticle {
    /// Build from a markup document, taking title, qid and lang from the
    /// `<article>` attributes.
    pub fn from_markup(markup: impl Into<String>, snapshot: impl Into<String>) -> Result<Self, IngestError> {
        let markup = markup.into();
        let parsed = markup::parse_markup(&markup)?;
        Ok(Self {
            title: parsed.title.ok_or(IngestError::MissingAttribute("title"))?,
            lang: parsed.lang.ok_or(IngestError::MissingAttribute("lang"))?,
            qid: parsed.qid,
            markup,
            snapshot: snapshot.into(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Rejection {
    NoLead,
    MissingQid,
}

impl Rejection {
    pub fn reason(self) -> &'static str {
        match self {
            Rejection::NoLead => "no lead",
            Rejection::MissingQid => "missing qid",
        }
    }
}

/// A main-body anchor located in section coordinates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnchorOccurrence {
    pub section: usize,
    pub start: usize,
    pub end: usize,
    pub target_qid: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedArticle {
    pub record: ArticleRecord,
    pub rejection: Option<Rejection>,
    pub anchors: Vec<AnchorOccurrence>,
    pub empty_anchors: usize,
    pub excluded_links: usize,
    pub external_links: usize,
}

impl ParsedArticle {
    pub fn is_admitted(&self) -> bool {
        self.rejection.is_none()
    }
}

/// Parse markup into an [`ArticleRecord`] plus the anchors needed for link
/// extraction. Articles without a lead or qid come back flagged, not failed.
pub fn parse_article(raw: &RawArticle) -> Result<ParsedArticle, MarkupError> {
    let parsed = markup::parse_markup(&raw.markup)?;
    let abbreviations = Abbreviations::for_lang(&raw.lang);

    let mut sections = Vec::with_capacity(parsed.sections.len());
    let mut anchors = Vec::new();
    let mut empty_anchors = 0;
    let mut external_links = 0;
    for (si, raw_section) in parsed.sections.iter().enumerate() {
        let mut text = String::new();
        let mut offset = 0usize;
        let mut sentences: Vec<Sentence> = Vec::new();
        for (pi, para) in raw_section.paragraphs.iter().enumerate() {
            if pi > 0 {
                text.push('\n');
                offset += 1;
            }
            for s in segment_with(&para.text, &abbreviations) {
                sentences.push(Sentence {
                    text: s.text,
                    start: s.start + offset,
                    end: s.end + offset,
                });
            }
            for a in &para.anchors {
                let Some((start, end)) = a.span else {
                    empty_anchors += 1;
                    continue;
                };
                match a.href.strip_prefix("qid:") {
                    Some(q) if !q.is_empty() => anchors.push(AnchorOccurrence {
                        section: si,
                        start: start + offset,
                        end: end + offset,
                        target_qid: q.to_string(),
                    }),
                    _ => external_links += 1,
                }
            }
            text.push_str(&para.text);
            offset += para.text.chars().count();
        }
        sections.push(Section {
            title: raw_section.title.clone(),
            text,
            sentences,
        });
    }

    let lead = parsed
        .sections
        .first()
        .and_then(|s| s.paragraphs.first())
        .map(|p| p.text.clone())
        .unwrap_or_default();
    let qid = raw.qid.clone().filter(|q| !q.trim().is_empty());
    let rejection = if lead.trim().is_empty() {
        Some(Rejection::NoLead)
    } else if qid.is_none() {
        Some(Rejection::MissingQid)
    } else {
        None
    };

    Ok(ParsedArticle {
        record: ArticleRecord {
            article_id: ids::article_id(&raw.lang, &raw.title, &raw.snapshot),
            title: raw.title.clone(),
            qid,
            lang: raw.lang.clone(),
            lead,
            sections,
            snapshot: raw.snapshot.clone(),
        },
        rejection,
        anchors,
        empty_anchors,
        excluded_links: parsed.excluded_links,
        external_links,
    })
}

/// Title and lead of a link target.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TargetMeta {
    pub title: String,
    pub lead: String,
}

pub type TargetIndex = HashMap<String, TargetMeta>;

/// Index admitted articles by qid.
pub fn build_target_index<'a>(articles: impl IntoIterator<Item = &'a ArticleRecord>) -> TargetIndex {
    articles
        .into_iter()
        .filter_map(|a| {
            let qid = a.qid.clone()?;
            Some((
                qid,
                TargetMeta {
                    title: a.title.clone(),
                    lead: a.lead.clone(),
                },
            ))
        })
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LinkExtraction {
    pub links: Vec<LinkRecord>,
    pub self_links: usize,
    pub unknown_targets: usize,
}

/// One record per main-body link, with the standard five-sentence context.
pub fn extract_links(article: &ParsedArticle, targets: &TargetIndex) -> LinkExtraction {
    extract_links_with_window(article, targets, CONTEXT_SENTENCES)
}

/// Link records with `window` sentences of context on either side, clipped at
/// the section boundary. Rejected articles yield nothing.
pub fn extract_links_with_window(article: &ParsedArticle, targets: &TargetIndex, window: usize) -> LinkExtraction {
    let mut out = LinkExtraction::default();
    if !article.is_admitted() {
        return out;
    }
    let record = &article.record;
    let src_qid = record.qid();
    for anchor in &article.anchors {
        if anchor.target_qid == src_qid {
            out.self_links += 1;
            continue;
        }
        let Some(target) = targets.get(&anchor.target_qid) else {
            out.unknown_targets += 1;
            continue;
        };
        let section = &record.sections[anchor.section];
        let first = section
            .sentence_at(anchor.start)
            .expect("anchor text is non-whitespace and lies in a sentence");
        let last = section.sentence_at(anchor.end - 1).unwrap_or(first);
        let lo = first.saturating_sub(window);
        let hi = (first + window).min(section.sentences.len() - 1).max(last);
        let ctx_start = section.sentences[lo].start;
        out.links.push(LinkRecord {
            src_qid: src_qid.to_string(),
            tgt_qid: anchor.target_qid.clone(),
            src_title: record.title.clone(),
            tgt_title: target.title.clone(),
            tgt_lead: target.lead.clone(),
            section_title: section.title.clone(),
            context: section.window_text(lo, hi).to_string(),
            mention: char_slice(&section.text, anchor.start, anchor.end)
                .expect("anchor inside section")
                .to_string(),
            mention_start: anchor.start - ctx_start,
            mention_end: anchor.end - ctx_start,
            sentence_start: section.sentences[first].start - ctx_start,
            sentence_end: section.sentences[last].end - ctx_start,
            lang: record.lang.clone(),
        });
    }
    out
}

/// Find a link's context inside `section`. Returns the char offset of the
/// context start and the index of the sentence holding the mention start.
pub fn locate_link(section: &Section, link: &LinkRecord) -> Option<(usize, usize)> {
    let text = &section.text;
    text.match_indices(link.context.as_str()).find_map(|(b, _)| {
        let ctx = text[..b].chars().count();
        let aligned = section.sentences.iter().any(|s| s.start == ctx + link.sentence_start);
        if !aligned {
            return None;
        }
        section.sentence_at(ctx + link.mention_start).map(|j| (ctx, j))
    })
}
