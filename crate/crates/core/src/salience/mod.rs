//! Hallucination and coverage scores from token-to-token salience maps.
//!
//! A raw map has one row per input token (prompt, query, arguments and the
//! previously generated response) and one column per response token. The
//! pipeline squares the map and normalizes each column to sum to one, lifts
//! it to a word-to-word map over argument content words (rows) and main
//! response content words (columns) by taking the maximum over constituent
//! token pairs, aggregates rows into contribution scores and columns into
//! attribution scores, and finally averages those per perspective.

pub mod synthetic;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{read_json, write_json, Example, Perspective};
use crate::textproc::{SubwordToken, TextProcessor, Word};
use crate::{Error, Result};

/// Values below this are raised to it before taking a geometric mean.
pub const GMEAN_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SalienceMap {
    pub input_tokens: Vec<SubwordToken>,
    pub response_tokens: Vec<SubwordToken>,
    /// Row-major, `input_tokens.len()` rows by `response_tokens.len()`
    /// columns.
    pub matrix: Vec<Vec<f64>>,
}

impl SalienceMap {
    pub fn load(path: &Path) -> Result<Self> {
        let map: SalienceMap = read_json(path)?;
        map.validate()
            .map_err(|e| Error::validation(path.display().to_string(), e.to_string()))?;
        Ok(map)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn validate(&self) -> Result<()> {
        let cols = self.response_tokens.len();
        if self.matrix.len() != self.input_tokens.len() {
            return Err(Error::validation(
                "salience map",
                format!(
                    "{} matrix rows for {} input tokens",
                    self.matrix.len(),
                    self.input_tokens.len()
                ),
            ));
        }
        for (i, row) in self.matrix.iter().enumerate() {
            if row.len() != cols {
                return Err(Error::validation(
                    "salience map",
                    format!("row {i} has {} entries for {cols} response tokens", row.len()),
                ));
            }
            if let Some(j) = row.iter().position(|v| !v.is_finite()) {
                return Err(Error::validation(
                    "salience map",
                    format!("entry ({i}, {j}) is not finite"),
                ));
            }
        }
        Ok(())
    }

    /// Squares every entry, then divides each column by its sum.
    pub fn normalize(&self) -> Result<NormalizedSalienceMap> {
        self.validate()?;
        let cols = self.response_tokens.len();
        let mut matrix: Vec<Vec<f64>> = self
            .matrix
            .iter()
            .map(|row| row.iter().map(|v| v * v).collect())
            .collect();
        for j in 0..cols {
            let total: f64 = matrix.iter().map(|row| row[j]).sum();
            if total <= 0.0 {
                return Err(Error::ZeroColumn { index: j });
            }
            for row in matrix.iter_mut() {
                row[j] /= total;
            }
        }
        Ok(NormalizedSalienceMap(SalienceMap {
            input_tokens: self.input_tokens.clone(),
            response_tokens: self.response_tokens.clone(),
            matrix,
        }))
    }
}

/// A salience map whose columns have been squared and normalized.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedSalienceMap(SalienceMap);

impl NormalizedSalienceMap {
    pub fn map(&self) -> &SalienceMap {
        &self.0
    }

    pub fn value(&self, input: usize, response: usize) -> f64 {
        self.0.matrix[input][response]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WordSalienceMap {
    /// Argument content words, in token order.
    pub input_words: Vec<Word>,
    /// Main-response content words, in token order.
    pub response_words: Vec<Word>,
    /// `input_words.len()` rows by `response_words.len()` columns.
    pub matrix: Vec<Vec<f64>>,
}

impl WordSalienceMap {
    pub fn perspective_of(&self, row: usize) -> Option<Perspective> {
        self.input_words[row].source.as_argument().map(|(p, _)| p)
    }
}

/// Lifts a normalized token map to argument-word × response-word salience.
///
/// Each entry is the maximum over all (input token, response token) pairs
/// drawn from the two words. Rows keep argument content words only; columns
/// keep content words inside the example's main response span.
pub fn tokens_to_words(
    map: &NormalizedSalienceMap,
    example: &Example,
    text: &TextProcessor,
) -> Result<WordSalienceMap> {
    let tokens = map.map();
    if !tokens
        .input_tokens
        .iter()
        .any(|t| t.segment.as_argument().is_some())
    {
        return Err(Error::validation(
            format!("salience map for `{}`", example.id),
            "no input token carries an argument segment",
        ));
    }
    let main = example.main_span();
    let inputs: Vec<_> = text
        .merge_subword_tokens(&tokens.input_tokens)?
        .into_iter()
        .filter(|m| !m.word.is_stop && m.word.source.as_argument().is_some())
        .collect();
    let responses: Vec<_> = text
        .merge_subword_tokens(&tokens.response_tokens)?
        .into_iter()
        .filter(|m| !m.word.is_stop && main.contains(&m.word.char_range))
        .collect();

    let matrix = inputs
        .iter()
        .map(|input| {
            responses
                .iter()
                .map(|response| {
                    input
                        .tokens
                        .iter()
                        .flat_map(|&i| response.tokens.iter().map(move |&j| map.value(i, j)))
                        .fold(0.0, f64::max)
                })
                .collect()
        })
        .collect();

    Ok(WordSalienceMap {
        input_words: inputs.into_iter().map(|m| m.word).collect(),
        response_words: responses.into_iter().map(|m| m.word).collect(),
        matrix,
    })
}

/// How a row (contribution) or column (attribution) of the word map is
/// reduced to a single score.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    #[default]
    Max,
    /// Sum, clamped to `[0, 1]`.
    Sum,
    /// `1 − H(p) / ln(n)` for the normalized vector `p` of length `n`; 1 for
    /// a single entry, 0 for an all-zero vector.
    NegEntropy,
}

/// How word scores are averaged within a perspective or the response.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeanKind {
    #[default]
    Geometric,
    Arithmetic,
}

fn aggregate(values: &[f64], aggregation: Aggregation) -> f64 {
    match aggregation {
        Aggregation::Max => values.iter().copied().fold(0.0, f64::max),
        Aggregation::Sum => values.iter().sum::<f64>().clamp(0.0, 1.0),
        Aggregation::NegEntropy => {
            if values.len() == 1 {
                return 1.0;
            }
            let total: f64 = values.iter().sum();
            if total <= 0.0 {
                return 0.0;
            }
            let entropy: f64 = values
                .iter()
                .filter(|&&v| v > 0.0)
                .map(|&v| {
                    let p = v / total;
                    -p * p.ln()
                })
                .sum();
            (1.0 - entropy / (values.len() as f64).ln()).clamp(0.0, 1.0)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WordLevelScores {
    pub aggregation: Aggregation,
    /// One per input word (row).
    pub contributions: Vec<f64>,
    /// One per response word (column).
    pub attributions: Vec<f64>,
}

pub fn word_scores(words: &WordSalienceMap, aggregation: Aggregation) -> Result<WordLevelScores> {
    let rows = words.matrix.len();
    let cols = words.response_words.len();
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidInput(format!(
            "word salience map is empty ({rows} input words, {cols} response words)"
        )));
    }
    let contributions = words
        .matrix
        .iter()
        .map(|row| aggregate(row, aggregation))
        .collect();
    let attributions = (0..cols)
        .map(|j| {
            let column: Vec<f64> = words.matrix.iter().map(|row| row[j]).collect();
            aggregate(&column, aggregation)
        })
        .collect();
    Ok(WordLevelScores {
        aggregation,
        contributions,
        attributions,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SalienceScores {
    pub aggregation: Aggregation,
    pub mean: MeanKind,
    pub contributions: Vec<f64>,
    pub attributions: Vec<f64>,
    pub hallucination: f64,
    pub coverage: f64,
    /// Mean contribution of each perspective; 1 when it has no words.
    pub pro_contribution: f64,
    pub con_contribution: f64,
    /// Number of word scores raised to [`GMEAN_FLOOR`].
    pub floored: usize,
}

fn mean_of(values: &[f64], mean: MeanKind, floored: &mut usize) -> f64 {
    if values.is_empty() {
        return 1.0;
    }
    match mean {
        MeanKind::Arithmetic => values.iter().sum::<f64>() / values.len() as f64,
        MeanKind::Geometric => {
            let log_sum: f64 = values
                .iter()
                .map(|&v| {
                    if v < GMEAN_FLOOR {
                        *floored += 1;
                        GMEAN_FLOOR.ln()
                    } else {
                        v.ln()
                    }
                })
                .sum();
            (log_sum / values.len() as f64).exp().min(1.0)
        }
    }
}

/// Example-level scores:
/// `coverage = 1 − min(mean α over pro words, mean α over con words)` and
/// `hallucination = 1 − mean β over response words`.
pub fn example_scores(
    words: &WordSalienceMap,
    scores: &WordLevelScores,
    mean: MeanKind,
) -> Result<SalienceScores> {
    if scores.attributions.is_empty() {
        return Err(Error::InvalidInput("no response words to score".into()));
    }
    let mut per_side = [Vec::new(), Vec::new()];
    for (row, &alpha) in scores.contributions.iter().enumerate() {
        match words.perspective_of(row) {
            Some(Perspective::Pro) => per_side[0].push(alpha),
            Some(Perspective::Con) => per_side[1].push(alpha),
            None => {
                return Err(Error::validation(
                    "word salience map",
                    format!("input word {row} belongs to no perspective"),
                ))
            }
        }
    }
    let mut floored = 0;
    let pro_contribution = mean_of(&per_side[0], mean, &mut floored);
    let con_contribution = mean_of(&per_side[1], mean, &mut floored);
    let attribution = mean_of(&scores.attributions, mean, &mut floored);
    Ok(SalienceScores {
        aggregation: scores.aggregation,
        mean,
        contributions: scores.contributions.clone(),
        attributions: scores.attributions.clone(),
        hallucination: (1.0 - attribution).clamp(0.0, 1.0),
        coverage: (1.0 - pro_contribution.min(con_contribution)).clamp(0.0, 1.0),
        pro_contribution,
        con_contribution,
        floored,
    })
}

/// Full pipeline from a raw map, with the settings it runs under.
#[derive(Clone, Debug, Default)]
pub struct SalienceDetector {
    pub text: TextProcessor,
    pub aggregation: Aggregation,
    pub mean: MeanKind,
}

/// Word-level output: `1 − β` per response word and `1 − α` per input word.
#[derive(Clone, Debug, PartialEq)]
pub struct SalienceResult {
    pub words: WordSalienceMap,
    pub scores: SalienceScores,
}

impl SalienceResult {
    pub fn response_word_scores(&self) -> impl Iterator<Item = (&Word, f64)> {
        self.words
            .response_words
            .iter()
            .zip(&self.scores.attributions)
            .map(|(w, b)| (w, 1.0 - b))
    }

    pub fn input_word_scores(&self) -> impl Iterator<Item = (&Word, f64)> {
        self.words
            .input_words
            .iter()
            .zip(&self.scores.contributions)
            .map(|(w, a)| (w, 1.0 - a))
    }
}

impl SalienceDetector {
    pub fn new(text: TextProcessor, aggregation: Aggregation, mean: MeanKind) -> Self {
        Self {
            text,
            aggregation,
            mean,
        }
    }

    pub fn score(&self, example: &Example, map: &SalienceMap) -> Result<SalienceResult> {
        let normalized = map.normalize()?;
        let words = tokens_to_words(&normalized, example, &self.text)?;
        let level = word_scores(&words, self.aggregation)?;
        let scores = example_scores(&words, &level, self.mean)?;
        Ok(SalienceResult { words, scores })
    }
}

/// File name of the salience map for an example inside a map directory.
/// Characters outside `[A-Za-z0-9._#-]` become `_`.
pub fn map_file_name(example_id: &str) -> String {
    let safe: String = example_id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '#' | '-') {
                c
            } else {
                '_'
            }
        })
        .collect();
    format!("{safe}.json")
}
