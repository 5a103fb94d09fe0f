//! ROUGE-1 hallucination and coverage scores.
//!
//! Example level uses clipped multiset overlap of content-word stems:
//! precision of the main response against all given arguments, and recall
//! of each perspective against the response. Word level uses type-level
//! membership: a word scores 0 when its stem occurs on the other side.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::corpus::{Argument, Example, Perspective};
use crate::textproc::{content_words, Segment, TextProcessor, Word};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RougeOptions {
    /// Match against argument phrases only, ignoring explanations.
    pub phrases_only: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RougeDetail {
    pub precision: f64,
    pub recall_pro: f64,
    pub recall_con: f64,
    /// Set when a side had no content words and its empty-side convention
    /// (recall 1, precision 1) was applied.
    pub empty_pro: bool,
    pub empty_con: bool,
    pub empty_response: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RougeScores {
    pub hallucination: f64,
    pub coverage: f64,
    pub detail: RougeDetail,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WordScore {
    pub word: Word,
    pub score: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct WordScores {
    /// Hallucination score per response content word.
    pub response_word_scores: Vec<WordScore>,
    /// Coverage error score per argument content word.
    pub input_word_scores: Vec<WordScore>,
}

type StemCounts<'a> = HashMap<&'a str, usize>;

fn stem_counts(words: &[Word]) -> StemCounts<'_> {
    let mut counts = HashMap::new();
    for w in words {
        *counts.entry(w.stem.as_str()).or_insert(0) += 1;
    }
    counts
}

/// Σ over stems of min(candidate count, reference count).
fn clipped_overlap(candidate: &StemCounts<'_>, reference: &StemCounts<'_>) -> usize {
    candidate
        .iter()
        .map(|(stem, &n)| n.min(reference.get(stem).copied().unwrap_or(0)))
        .sum()
}

#[derive(Clone, Debug, Default)]
pub struct RougeDetector {
    text: TextProcessor,
    options: RougeOptions,
}

impl RougeDetector {
    pub fn new(text: TextProcessor, options: RougeOptions) -> Self {
        Self { text, options }
    }

    /// Content words of the main response span.
    pub fn response_words(&self, example: &Example) -> Vec<Word> {
        content_words(&self.text.tokenize_span(
            &example.response,
            example.main_span(),
            Segment::Response,
        ))
    }

    /// Content words of one argument, offsets relative to
    /// [`Argument::full_text`].
    pub fn argument_words(&self, argument: &Argument) -> Vec<Word> {
        let source = Segment::argument(argument.perspective, argument.id.clone());
        let words = if self.options.phrases_only {
            self.text.tokenize(&argument.phrase, source)
        } else {
            self.text.tokenize(&argument.full_text(), source)
        };
        content_words(&words)
    }

    fn perspective_words(&self, example: &Example, perspective: Perspective) -> Vec<Word> {
        example
            .arguments_for(perspective)
            .iter()
            .flat_map(|a| self.argument_words(a))
            .collect()
    }

    pub fn example_scores(&self, example: &Example) -> Result<RougeScores> {
        let response = self.response_words(example);
        let pro = self.perspective_words(example, Perspective::Pro);
        let con = self.perspective_words(example, Perspective::Con);
        if response.is_empty() && pro.is_empty() && con.is_empty() {
            return Err(Error::InvalidInput(format!(
                "example `{}` has no content words to score",
                example.id
            )));
        }

        let response_counts = stem_counts(&response);
        let mut input_counts = stem_counts(&pro);
        for (stem, n) in stem_counts(&con) {
            *input_counts.entry(stem).or_insert(0) += n;
        }

        let precision = if response.is_empty() {
            1.0
        } else {
            clipped_overlap(&response_counts, &input_counts) as f64 / response.len() as f64
        };
        let recall = |words: &[Word]| {
            if words.is_empty() {
                1.0
            } else {
                clipped_overlap(&stem_counts(words), &response_counts) as f64 / words.len() as f64
            }
        };
        let recall_pro = recall(&pro);
        let recall_con = recall(&con);

        Ok(RougeScores {
            hallucination: 1.0 - precision,
            coverage: 1.0 - recall_pro.min(recall_con),
            detail: RougeDetail {
                precision,
                recall_pro,
                recall_con,
                empty_pro: pro.is_empty(),
                empty_con: con.is_empty(),
                empty_response: response.is_empty(),
            },
        })
    }

    pub fn word_scores(&self, example: &Example) -> WordScores {
        let response = self.response_words(example);
        let inputs: Vec<Word> = example
            .arguments()
            .flat_map(|a| self.argument_words(a))
            .collect();
        let response_stems: HashSet<&str> = response.iter().map(|w| w.stem.as_str()).collect();
        let input_stems: HashSet<&str> = inputs.iter().map(|w| w.stem.as_str()).collect();

        let score = |stems: &HashSet<&str>, w: &Word| {
            if stems.contains(w.stem.as_str()) {
                0.0
            } else {
                1.0
            }
        };
        WordScores {
            response_word_scores: response
                .iter()
                .map(|w| WordScore {
                    score: score(&input_stems, w),
                    word: w.clone(),
                })
                .collect(),
            input_word_scores: inputs
                .iter()
                .map(|w| WordScore {
                    score: score(&response_stems, w),
                    word: w.clone(),
                })
                .collect(),
        }
    }
}
