//! Link-annotated article corpus: ingestion, sentence segmentation and the
//! linkability filter used before hop-chain sampling.
//!
//! Corpus files are line-delimited JSON, one article per line:
//!
//! ```text
//! {"id": "A", "title": "Alpha", "sentences": ["..."], "first_paragraph_end": 2,
//!  "links": [{"sentence_index": 0, "start": 4, "end": 9, "target_id": "B"}]}
//! ```
//!
//! Link offsets are byte offsets into the UTF-8 encoding of the sentence.
//! Instead of `sentences`/`first_paragraph_end` a record may carry
//! `paragraphs` (raw text, one string per paragraph); those are run through
//! [`segment`] and the first paragraph's sentence count becomes
//! `first_paragraph_end`.

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("duplicate article id `{id}` on line {second} (first seen on line {first})")]
    DuplicateId {
        id: String,
        first: usize,
        second: usize,
    },
    #[error("article `{id}` has no sentences")]
    EmptyArticle { id: String },
    #[error("article `{id}` is invalid: {message}")]
    Invalid { id: String, message: String },
}

/// A link from a span of one sentence to another article.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkAnnotation {
    pub sentence_index: usize,
    pub start: usize,
    pub end: usize,
    pub target_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Article {
    pub id: String,
    pub title: String,
    pub sentences: Vec<String>,
    pub first_paragraph_end: usize,
    pub links: Vec<LinkAnnotation>,
}

impl Article {
    /// Checks the structural invariants of a single article.
    pub fn validate(&self) -> Result<(), CorpusError> {
        let invalid = |message: String| CorpusError::Invalid {
            id: self.id.clone(),
            message,
        };
        if self.id.is_empty() {
            return Err(invalid("empty id".into()));
        }
        if self.first_paragraph_end > self.sentences.len() {
            return Err(invalid(format!(
                "first_paragraph_end {} exceeds sentence count {}",
                self.first_paragraph_end,
                self.sentences.len()
            )));
        }
        if !self.sentences.is_empty() && self.first_paragraph_end == 0 {
            return Err(invalid("first_paragraph_end must be at least 1".into()));
        }
        for (i, link) in self.links.iter().enumerate() {
            let Some(sentence) = self.sentences.get(link.sentence_index) else {
                return Err(invalid(format!(
                    "link {i} points at sentence {} of {}",
                    link.sentence_index,
                    self.sentences.len()
                )));
            };
            if link.start > link.end || link.end > sentence.len() {
                return Err(invalid(format!(
                    "link {i} span {}..{} outside sentence of {} bytes",
                    link.start,
                    link.end,
                    sentence.len()
                )));
            }
            if !sentence.is_char_boundary(link.start) || !sentence.is_char_boundary(link.end) {
                return Err(invalid(format!("link {i} span splits a UTF-8 character")));
            }
            if link.target_id.is_empty() {
                return Err(invalid(format!("link {i} has an empty target_id")));
            }
        }
        Ok(())
    }

    /// Links whose sentence lies in the first paragraph.
    pub fn first_paragraph_links(&self) -> impl Iterator<Item = &LinkAnnotation> {
        let end = self.first_paragraph_end;
        self.links.iter().filter(move |l| l.sentence_index < end)
    }

    /// Sentences of the first paragraph.
    pub fn first_paragraph_sentences(&self) -> &[String] {
        &self.sentences[..self.first_paragraph_end]
    }
}

/// (article id, sentence index) — the atomic attribution unit inside a store.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SentenceRef {
    pub article_id: String,
    pub sentence_index: usize,
}

impl SentenceRef {
    pub fn new(article_id: impl Into<String>, sentence_index: usize) -> Self {
        Self {
            article_id: article_id.into(),
            sentence_index,
        }
    }
}

/// Immutable collection of articles in ingestion order.
///
/// `candidates` marks the articles that may start a hop chain. A freshly
/// ingested store has every article as a candidate; [`filter_linkable`]
/// narrows the set while keeping all articles resolvable, since chains walk
/// into articles that are not themselves start candidates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArticleStore {
    articles: Vec<Article>,
    by_id: HashMap<String, usize>,
    candidates: BTreeSet<usize>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ArticleRecord {
    id: String,
    title: String,
    sentences: Option<Vec<String>>,
    paragraphs: Option<Vec<String>>,
    first_paragraph_end: Option<usize>,
    #[serde(default)]
    links: Vec<LinkAnnotation>,
}

impl ArticleRecord {
    fn into_article(self) -> Result<Article, String> {
        let (sentences, first_paragraph_end) = match (self.sentences, self.paragraphs) {
            (Some(_), Some(_)) => {
                return Err("record has both `sentences` and `paragraphs`".into());
            }
            (Some(sentences), None) => {
                let end = self.first_paragraph_end.unwrap_or(sentences.len());
                (sentences, end)
            }
            (None, Some(paragraphs)) => {
                if self.first_paragraph_end.is_some() {
                    return Err("`first_paragraph_end` is derived when `paragraphs` is given".into());
                }
                let mut sentences = Vec::new();
                let mut first_end = None;
                for paragraph in &paragraphs {
                    sentences.extend(segment(paragraph));
                    if first_end.is_none() && !sentences.is_empty() {
                        first_end = Some(sentences.len());
                    }
                }
                (sentences, first_end.unwrap_or(0))
            }
            (None, None) => return Err("missing field `sentences`".into()),
        };
        Ok(Article {
            id: self.id,
            title: self.title,
            sentences,
            first_paragraph_end,
            links: self.links,
        })
    }
}

impl ArticleStore {
    /// Builds a store from articles, validating each and rejecting duplicate ids.
    pub fn from_articles(articles: Vec<Article>) -> Result<Self, CorpusError> {
        let mut by_id = HashMap::with_capacity(articles.len());
        for (pos, article) in articles.iter().enumerate() {
            article.validate()?;
            if let Some(first) = by_id.insert(article.id.clone(), pos) {
                return Err(CorpusError::DuplicateId {
                    id: article.id.clone(),
                    first: first + 1,
                    second: pos + 1,
                });
            }
        }
        let candidates = (0..articles.len()).collect();
        Ok(Self {
            articles,
            by_id,
            candidates,
        })
    }

    /// Reads a line-delimited corpus file. Blank lines are skipped.
    pub fn ingest(path: impl AsRef<Path>) -> Result<Self, CorpusError> {
        let path = path.as_ref();
        let io_err = |source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        };
        let reader = BufReader::new(File::open(path).map_err(io_err)?);
        let mut articles = Vec::new();
        let mut lines_of: HashMap<String, usize> = HashMap::new();
        for (idx, line) in reader.lines().enumerate() {
            let line_no = idx + 1;
            let line = line.map_err(io_err)?;
            if line.trim().is_empty() {
                continue;
            }
            let record: ArticleRecord =
                serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
                    line: line_no,
                    message: e.to_string(),
                })?;
            let article = record.into_article().map_err(|message| CorpusError::Parse {
                line: line_no,
                message,
            })?;
            article.validate().map_err(|e| CorpusError::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
            if let Some(&first) = lines_of.get(&article.id) {
                return Err(CorpusError::DuplicateId {
                    id: article.id,
                    first,
                    second: line_no,
                });
            }
            lines_of.insert(article.id.clone(), line_no);
            articles.push(article);
        }
        Self::from_articles(articles)
    }

    /// Writes every article in the canonical `sentences` form.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CorpusError> {
        let path = path.as_ref();
        let io_err = |source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut out = BufWriter::new(File::create(path).map_err(io_err)?);
        for article in &self.articles {
            let line = serde_json::to_string(article).expect("article serializes");
            writeln!(out, "{line}").map_err(io_err)?;
        }
        out.flush().map_err(io_err)
    }

    pub fn len(&self) -> usize {
        self.articles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.articles.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Article> {
        self.by_id.get(id).map(|&pos| &self.articles[pos])
    }

    pub fn contains(&self, id: &str) -> bool {
        self.by_id.contains_key(id)
    }

    /// Position of an article in ingestion order.
    pub fn position(&self, id: &str) -> Option<usize> {
        self.by_id.get(id).copied()
    }

    /// All articles in ingestion order.
    pub fn articles(&self) -> &[Article] {
        &self.articles
    }

    /// Articles eligible to start a hop chain, in ingestion order.
    pub fn candidates(&self) -> impl Iterator<Item = &Article> {
        self.candidates.iter().map(|&pos| &self.articles[pos])
    }

    pub fn candidate_count(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_candidate(&self, id: &str) -> bool {
        self.by_id
            .get(id)
            .is_some_and(|pos| self.candidates.contains(pos))
    }

    /// Text of the referenced sentence, if the reference resolves.
    pub fn resolve(&self, r: &SentenceRef) -> Option<&str> {
        self.get(&r.article_id)
            .and_then(|a| a.sentences.get(r.sentence_index))
            .map(String::as_str)
    }

    /// True when `link` points at another article present in this store.
    pub fn link_resolves(&self, from: &Article, link: &LinkAnnotation) -> bool {
        link.target_id != from.id && self.contains(&link.target_id)
    }
}

/// Sentence range `[0, first_paragraph_end)` of an article.
pub fn first_paragraph(article: &Article) -> Result<Range<usize>, CorpusError> {
    if article.sentences.is_empty() || article.first_paragraph_end == 0 {
        return Err(CorpusError::EmptyArticle {
            id: article.id.clone(),
        });
    }
    Ok(0..article.first_paragraph_end)
}

fn has_resolvable_first_paragraph_link(store: &ArticleStore, article: &Article) -> bool {
    article
        .first_paragraph_links()
        .any(|l| store.link_resolves(article, l))
}

/// Narrows the start candidates to articles with a first-paragraph link to
/// an article that itself has a resolvable first-paragraph link.
///
/// The predicate is evaluated against every article in the store, not only
/// the current candidates, so the filter is idempotent. Dangling links are
/// ignored.
pub fn filter_linkable(store: &ArticleStore) -> ArticleStore {
    let candidates = store
        .candidates
        .iter()
        .copied()
        .filter(|&pos| {
            let article = &store.articles[pos];
            article.first_paragraph_links().any(|l| {
                store.link_resolves(article, l)
                    && store
                        .get(&l.target_id)
                        .is_some_and(|target| has_resolvable_first_paragraph_link(store, target))
            })
        })
        .collect();
    ArticleStore {
        articles: store.articles.clone(),
        by_id: store.by_id.clone(),
        candidates,
    }
}

/// Tokens that end in a period without ending a sentence. Matched
/// case-insensitively against the token with its final period removed.
pub const ABBREVIATIONS: &[&str] = &[
    "mr", "mrs", "ms", "dr", "prof", "sr", "jr", "st", "mt", "ft", "gen", "col", "lt", "sgt",
    "capt", "cmdr", "adm", "gov", "sen", "rep", "rev", "hon", "pres", "vs", "etc", "e.g", "i.e",
    "cf", "al", "approx", "ca", "inc", "ltd", "co", "corp", "no", "vol", "fig", "pp", "ed", "jan",
    "feb", "mar", "apr", "jun", "jul", "aug", "sep", "sept", "oct", "nov", "dec",
];

fn is_terminal(c: char) -> bool {
    matches!(c, '.' | '!' | '?')
}

fn is_closing(c: char) -> bool {
    matches!(c, '"' | '\'' | ')' | ']' | '”' | '’' | '»')
}

fn is_abbreviation(token: &str) -> bool {
    let stem = token
        .trim_start_matches(|c: char| !c.is_alphanumeric())
        .strip_suffix('.')
        .unwrap_or("");
    if stem.is_empty() {
        return false;
    }
    // Dotted forms such as "U.S." or "Ph.D." never end a sentence.
    if stem.contains('.') && stem.split('.').all(|p| !p.is_empty() && p.len() <= 3) {
        return true;
    }
    let lower = stem.to_lowercase();
    ABBREVIATIONS.contains(&lower.as_str())
}

/// Byte ranges of the sentences in `text`.
pub fn segment_spans(text: &str) -> Vec<Range<usize>> {
    let mut spans = Vec::new();
    let mut start: Option<usize> = None;
    let mut token_start = 0;
    let mut iter = text.char_indices().peekable();
    while let Some((i, c)) = iter.next() {
        if c.is_whitespace() {
            token_start = i + c.len_utf8();
            continue;
        }
        if start.is_none() {
            start = Some(i);
        }
        if !is_terminal(c) {
            continue;
        }
        let mut end = i + c.len_utf8();
        while let Some(&(j, next)) = iter.peek() {
            if is_terminal(next) || is_closing(next) {
                end = j + next.len_utf8();
                iter.next();
            } else {
                break;
            }
        }
        let at_break = iter.peek().is_none_or(|&(_, next)| next.is_whitespace());
        if !at_break {
            continue;
        }
        if c == '.' && is_abbreviation(&text[token_start..end]) {
            continue;
        }
        if let Some(s) = start.take() {
            spans.push(s..end);
        }
    }
    if let Some(s) = start {
        let end = text.trim_end().len();
        if end > s {
            spans.push(s..end);
        }
    }
    spans
}

/// Splits plain text into sentences on terminal punctuation, skipping
/// periods that close a known abbreviation. Deterministic; never yields an
/// empty sentence.
pub fn segment(text: &str) -> Vec<String> {
    segment_spans(text)
        .into_iter()
        .map(|r| text[r].to_string())
        .collect()
}
