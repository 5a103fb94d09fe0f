//! Word segmentation shared by every detector.
//!
//! Words are maximal runs of characters that are neither whitespace nor in a
//! Unicode punctuation (`P*`) or symbol (`S*`) category. Digits are word
//! characters. Offsets are counted in Unicode scalar values, never bytes.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use unicode_general_category::{get_general_category, GeneralCategory as Gc};

use crate::corpus::{Perspective, Span};
use crate::{Error, Result};

const ENGLISH_STOP_WORDS: &str = include_str!("../data/stopwords_en.txt");

/// Where a word or token came from.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Segment {
    Prompt,
    Query,
    ProArgument(String),
    ConArgument(String),
    PriorResponse,
    Response,
}

impl Segment {
    pub fn argument(perspective: Perspective, id: impl Into<String>) -> Self {
        match perspective {
            Perspective::Pro => Segment::ProArgument(id.into()),
            Perspective::Con => Segment::ConArgument(id.into()),
        }
    }

    /// Perspective and argument id for argument segments.
    pub fn as_argument(&self) -> Option<(Perspective, &str)> {
        match self {
            Segment::ProArgument(id) => Some((Perspective::Pro, id)),
            Segment::ConArgument(id) => Some((Perspective::Con, id)),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Word {
    pub surface: String,
    pub char_range: Span,
    pub source: Segment,
    pub is_stop: bool,
    /// Empty for stop words.
    pub stem: String,
}

/// One model token. `text` may carry a leading whitespace marker (`▁` or
/// `Ġ`) in place of the space it encodes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubwordToken {
    pub text: String,
    pub start: usize,
    pub end: usize,
    pub segment: Segment,
}

impl SubwordToken {
    pub fn new(text: impl Into<String>, start: usize, end: usize, segment: Segment) -> Self {
        Self {
            text: text.into(),
            start,
            end,
            segment,
        }
    }
}

/// A word assembled from consecutive subword tokens.
#[derive(Clone, Debug, PartialEq)]
pub struct MergedWord {
    pub word: Word,
    /// Indices into the token list, ascending.
    pub tokens: Vec<usize>,
}

#[derive(Clone, Debug, Default)]
pub struct StopWords(HashSet<String>);

impl StopWords {
    pub fn english() -> Self {
        Self::parse(ENGLISH_STOP_WORDS)
    }

    /// One word per line; blank lines and `#` comments are ignored.
    pub fn parse(text: &str) -> Self {
        let words = text
            .lines()
            .map(str::trim)
            .filter(|line| !line.is_empty() && !line.starts_with('#'))
            .map(str::to_lowercase)
            .collect();
        Self(words)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::parse(&text))
    }

    pub fn contains(&self, word: &str) -> bool {
        self.0.contains(&word.to_lowercase())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

pub fn is_separator(c: char) -> bool {
    if c.is_whitespace() {
        return true;
    }
    matches!(
        get_general_category(c),
        Gc::ConnectorPunctuation
            | Gc::DashPunctuation
            | Gc::OpenPunctuation
            | Gc::ClosePunctuation
            | Gc::InitialPunctuation
            | Gc::FinalPunctuation
            | Gc::OtherPunctuation
            | Gc::MathSymbol
            | Gc::CurrencySymbol
            | Gc::ModifierSymbol
            | Gc::OtherSymbol
    )
}

/// Lowercased Porter stem, iterated until it stops changing.
///
/// Classic Porter is not idempotent on a handful of inputs (`agreed` →
/// `agre` → `agr`); iterating makes `stem(stem(w)) == stem(w)` hold.
pub fn stem(word: &str) -> String {
    let mut current = word.to_lowercase();
    loop {
        let next = porter_stemmer::stem(&current);
        if next == current {
            return current;
        }
        current = next;
    }
}

/// Keeps non-stop words, preserving order.
pub fn content_words(words: &[Word]) -> Vec<Word> {
    words.iter().filter(|w| !w.is_stop).cloned().collect()
}

#[derive(Clone, Debug)]
pub struct TextProcessor {
    stop_words: StopWords,
}

/// English stop words.
impl Default for TextProcessor {
    fn default() -> Self {
        Self::english()
    }
}

impl TextProcessor {
    pub fn new(stop_words: StopWords) -> Self {
        Self { stop_words }
    }

    pub fn english() -> Self {
        Self::new(StopWords::english())
    }

    pub fn stop_words(&self) -> &StopWords {
        &self.stop_words
    }

    pub fn make_word(&self, surface: String, char_range: Span, source: Segment) -> Word {
        let is_stop = self.stop_words.contains(&surface);
        let stem = if is_stop { String::new() } else { stem(&surface) };
        Word {
            surface,
            char_range,
            source,
            is_stop,
            stem,
        }
    }

    pub fn tokenize(&self, text: &str, source: Segment) -> Vec<Word> {
        let len = text.chars().count();
        self.tokenize_span(text, Span::new(0, len), source)
    }

    /// Words of the characters `span.start..span.end` of `text`, with offsets
    /// relative to the whole of `text`. The span is clamped to the text.
    pub fn tokenize_span(&self, text: &str, span: Span, source: Segment) -> Vec<Word> {
        let mut words = Vec::new();
        let mut current = String::new();
        let mut start = span.start;
        let mut pos = span.start;
        for c in text.chars().skip(span.start).take(span.len()) {
            if is_separator(c) {
                if !current.is_empty() {
                    words.push(self.make_word(
                        std::mem::take(&mut current),
                        Span::new(start, pos),
                        source.clone(),
                    ));
                }
            } else {
                if current.is_empty() {
                    start = pos;
                }
                current.push(c);
            }
            pos += 1;
        }
        if !current.is_empty() {
            words.push(self.make_word(current, Span::new(start, pos), source));
        }
        words
    }

    /// Joins consecutive tokens that are not separated by whitespace,
    /// punctuation, a gap in offsets, or a change of segment.
    ///
    /// Offsets are relative to the text of each segment, so they restart
    /// whenever the segment changes; within a run of one segment they must
    /// ascend without overlap.
    pub fn merge_subword_tokens(&self, tokens: &[SubwordToken]) -> Result<Vec<MergedWord>> {
        for (index, token) in tokens.iter().enumerate() {
            if token.start > token.end {
                return Err(Error::validation(
                    format!("token {index}"),
                    format!("range {}..{} is reversed", token.start, token.end),
                ));
            }
            let same_segment = index > 0 && token.segment == tokens[index - 1].segment;
            if same_segment && token.start < tokens[index - 1].end {
                return Err(Error::validation(
                    format!("token {index}"),
                    format!(
                        "range {}..{} overlaps or precedes token {} ({}..{})",
                        token.start,
                        token.end,
                        index - 1,
                        tokens[index - 1].start,
                        tokens[index - 1].end
                    ),
                ));
            }
        }

        struct Pending {
            surface: String,
            start: usize,
            end: usize,
            segment: Segment,
            tokens: Vec<usize>,
        }

        let mut merged = Vec::new();
        let mut pending: Option<Pending> = None;
        let flush = |pending: &mut Option<Pending>, merged: &mut Vec<MergedWord>| {
            if let Some(p) = pending.take() {
                let word = self.make_word(p.surface, Span::new(p.start, p.end), p.segment);
                merged.push(MergedWord {
                    word,
                    tokens: p.tokens,
                });
            }
        };

        for (index, token) in tokens.iter().enumerate() {
            let continues = index > 0
                && token.start == tokens[index - 1].end
                && token.segment == tokens[index - 1].segment;
            if !continues {
                flush(&mut pending, &mut merged);
            }
            for (offset, c) in token.text.chars().enumerate() {
                let leading_marker = offset == 0 && (c == '\u{2581}' || c == '\u{120}');
                let pos = (token.start + offset).min(token.end.saturating_sub(1));
                if leading_marker || is_separator(c) {
                    flush(&mut pending, &mut merged);
                    continue;
                }
                match pending.as_mut() {
                    Some(p) => {
                        p.surface.push(c);
                        p.end = pos + 1;
                        if p.tokens.last() != Some(&index) {
                            p.tokens.push(index);
                        }
                    }
                    None => {
                        pending = Some(Pending {
                            surface: c.to_string(),
                            start: pos,
                            end: pos + 1,
                            segment: token.segment.clone(),
                            tokens: vec![index],
                        })
                    }
                }
            }
        }
        flush(&mut pending, &mut merged);
        Ok(merged)
    }
}
