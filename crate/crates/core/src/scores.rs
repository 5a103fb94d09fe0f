//! Detector output files: a JSON list with one record per example.
//!
//! ```json
//! [{"id": "e1", "hallucination": 0.2, "coverage": 0.0,
//!   "word_scores": {"response": [{"surface": "tax", "start": 31, "end": 34, "score": 0.0}],
//!                   "input": [{"argument_id": "a1", "perspective": "pro",
//!                              "surface": "tax", "start": 0, "end": 3, "score": 0.0}]}}]
//! ```
//!
//! Response word offsets are character offsets into the response; input word
//! offsets are relative to the argument text (phrase, a space, explanation).

use std::collections::HashSet;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{classify_batch, BatchOptions, ClassifyFailure, Scorer};
use crate::corpus::{read_json, write_json, ErrorType, Example, Perspective};
use crate::rouge::RougeDetector;
use crate::salience::{SalienceDetector, SalienceMap};
use crate::textproc::Word;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResponseWordScore {
    pub surface: String,
    pub start: usize,
    pub end: usize,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputWordScore {
    pub argument_id: String,
    pub perspective: Perspective,
    pub surface: String,
    pub start: usize,
    pub end: usize,
    pub score: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct WordScoreRecords {
    pub response: Vec<ResponseWordScore>,
    pub input: Vec<InputWordScore>,
}

impl WordScoreRecords {
    pub fn from_words<'a>(
        response: impl IntoIterator<Item = (&'a Word, f64)>,
        input: impl IntoIterator<Item = (&'a Word, f64)>,
    ) -> Self {
        Self {
            response: response
                .into_iter()
                .map(|(w, score)| ResponseWordScore {
                    surface: w.surface.clone(),
                    start: w.char_range.start,
                    end: w.char_range.end,
                    score,
                })
                .collect(),
            input: input
                .into_iter()
                .filter_map(|(w, score)| {
                    let (perspective, id) = w.source.as_argument()?;
                    Some(InputWordScore {
                        argument_id: id.to_string(),
                        perspective,
                        surface: w.surface.clone(),
                        start: w.char_range.start,
                        end: w.char_range.end,
                        score,
                    })
                })
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExampleScoreRecord {
    pub id: String,
    pub hallucination: f64,
    pub coverage: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub word_scores: Option<WordScoreRecords>,
}

pub fn validate_scores(records: &[ExampleScoreRecord]) -> Result<()> {
    let mut seen = HashSet::new();
    for r in records {
        if !seen.insert(r.id.as_str()) {
            return Err(Error::DuplicateId {
                kind: "score record",
                id: r.id.clone(),
            });
        }
        let mut values = vec![r.hallucination, r.coverage];
        if let Some(ws) = &r.word_scores {
            values.extend(ws.response.iter().map(|w| w.score));
            values.extend(ws.input.iter().map(|w| w.score));
        }
        if let Some(bad) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::validation(
                format!("scores of `{}`", r.id),
                format!("value {bad} outside [0, 1]"),
            ));
        }
    }
    Ok(())
}

pub fn load_scores(path: &Path) -> Result<Vec<ExampleScoreRecord>> {
    let records: Vec<ExampleScoreRecord> = read_json(path)?;
    validate_scores(&records)?;
    Ok(records)
}

pub fn save_scores(records: &[ExampleScoreRecord], path: &Path) -> Result<()> {
    write_json(path, records)
}

/// ROUGE scores of every example, in input order. Runs on the current
/// rayon pool.
pub fn rouge_records(
    examples: &[Example],
    detector: &RougeDetector,
    word_level: bool,
) -> Result<Vec<ExampleScoreRecord>> {
    examples
        .par_iter()
        .map(|example| {
            let scores = detector.example_scores(example)?;
            let word_scores = word_level.then(|| {
                let ws = detector.word_scores(example);
                WordScoreRecords::from_words(
                    ws.response_word_scores.iter().map(|w| (&w.word, w.score)),
                    ws.input_word_scores.iter().map(|w| (&w.word, w.score)),
                )
            });
            Ok(ExampleScoreRecord {
                id: example.id.clone(),
                hallucination: scores.hallucination,
                coverage: scores.coverage,
                word_scores,
            })
        })
        .collect()
}

/// Salience scores of every example; `map_for` supplies the raw map.
pub fn salience_records<F>(
    examples: &[Example],
    detector: &SalienceDetector,
    map_for: F,
    word_level: bool,
) -> Result<Vec<ExampleScoreRecord>>
where
    F: Fn(&Example) -> Result<SalienceMap> + Sync,
{
    examples
        .par_iter()
        .map(|example| {
            let map = map_for(example)?;
            let result = detector.score(example, &map).map_err(|e| match e {
                Error::ZeroColumn { .. } | Error::InvalidInput(_) => {
                    Error::validation(format!("salience of `{}`", example.id), e.to_string())
                }
                other => other,
            })?;
            let word_scores = word_level.then(|| {
                WordScoreRecords::from_words(result.response_word_scores(), result.input_word_scores())
            });
            Ok(ExampleScoreRecord {
                id: example.id.clone(),
                hallucination: result.scores.hallucination,
                coverage: result.scores.coverage,
                word_scores,
            })
        })
        .collect()
}

/// Classifier probabilities for both error types. Examples that failed for
/// either task are reported instead of scored.
pub fn classifier_records(
    examples: &[Example],
    scorer: &dyn Scorer,
    options: &BatchOptions,
) -> (Vec<ExampleScoreRecord>, Vec<(ErrorType, ClassifyFailure)>) {
    let hal = classify_batch(examples, ErrorType::Hallucination, scorer, options);
    let cov = classify_batch(examples, ErrorType::Coverage, scorer, options);
    let mut failures: Vec<(ErrorType, ClassifyFailure)> = hal
        .failures
        .into_iter()
        .map(|f| (ErrorType::Hallucination, f))
        .chain(cov.failures.into_iter().map(|f| (ErrorType::Coverage, f)))
        .collect();
    failures.sort_by_key(|(t, f)| (f.index, *t));
    let hal: std::collections::HashMap<String, f64> =
        hal.scored.into_iter().map(|c| (c.id, c.probability)).collect();
    let cov: std::collections::HashMap<String, f64> =
        cov.scored.into_iter().map(|c| (c.id, c.probability)).collect();
    let records = examples
        .iter()
        .filter_map(|e| {
            Some(ExampleScoreRecord {
                id: e.id.clone(),
                hallucination: *hal.get(&e.id)?,
                coverage: *cov.get(&e.id)?,
                word_scores: None,
            })
        })
        .collect();
    (records, failures)
}
