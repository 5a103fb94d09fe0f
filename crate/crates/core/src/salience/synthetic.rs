//! Synthetic salience maps for exercising the pipeline offline.
//!
//! The generator splits each segment into subword pieces of at most four
//! word characters (whitespace attaches to the following piece, punctuation
//! stands alone) and fills the matrix with a strong entry wherever an
//! argument token and a response token belong to content words with the
//! same stem, and low uniform noise elsewhere. Copy-like responses therefore
//! produce concentrated columns, and response words with no source in the
//! arguments produce diffuse ones.

use rand::Rng;

use super::SalienceMap;
use crate::corpus::Example;
use crate::seed;
use crate::textproc::{Segment, SubwordToken, TextProcessor};
use crate::Result;

const PROMPT: &str = "Write a neutral response that covers every given argument.";
const MAX_PIECE: usize = 4;

/// Strong entries are `MATCH + MATCH_JITTER·u`, the rest `NOISE·u` (plus a
/// small floor so no column is zero), for `u` uniform on `[0, 1)`.
const MATCH: f64 = 1.0;
const MATCH_JITTER: f64 = 0.1;
const NOISE: f64 = 0.25;
const NOISE_FLOOR: f64 = 0.001;

/// Splits `text` into contiguous subword pieces with offsets relative to
/// `text`.
pub fn subword_tokens(text: &str, segment: Segment) -> Vec<SubwordToken> {
    let chars: Vec<char> = text.chars().collect();
    let mut tokens = Vec::new();
    let mut start = 0;
    while start < chars.len() {
        let mut end = start;
        while end < chars.len() && chars[end].is_whitespace() {
            end += 1;
        }
        if end < chars.len() && crate::textproc::is_separator(chars[end]) {
            end += 1;
        } else {
            let body = end;
            while end < chars.len()
                && end - body < MAX_PIECE
                && !crate::textproc::is_separator(chars[end])
            {
                end += 1;
            }
        }
        let piece: String = chars[start..end].iter().collect();
        tokens.push(SubwordToken::new(piece, start, end, segment.clone()));
        start = end;
    }
    tokens
}

/// Stem of the content word each token belongs to, if any.
fn token_stems(text: &TextProcessor, tokens: &[SubwordToken]) -> Result<Vec<Option<String>>> {
    let mut stems = vec![None; tokens.len()];
    for merged in text.merge_subword_tokens(tokens)? {
        if merged.word.is_stop {
            continue;
        }
        for &t in &merged.tokens {
            stems[t] = Some(merged.word.stem.clone());
        }
    }
    Ok(stems)
}

/// Deterministic map for `example`, keyed on `seed` and the example id.
pub fn synthetic_map(example: &Example, text: &TextProcessor, seed: u64) -> Result<SalienceMap> {
    let mut input_tokens = subword_tokens(PROMPT, Segment::Prompt);
    input_tokens.extend(subword_tokens(&example.query, Segment::Query));
    for arg in example.arguments() {
        let segment = Segment::argument(arg.perspective, arg.id.clone());
        input_tokens.extend(subword_tokens(&arg.full_text(), segment));
    }
    input_tokens.extend(subword_tokens(&example.response, Segment::PriorResponse));
    let response_tokens = subword_tokens(&example.response, Segment::Response);

    let input_stems = token_stems(text, &input_tokens)?;
    let response_stems = token_stems(text, &response_tokens)?;

    let mut rng = seed::stream_rng(seed::derive(seed, &example.id), 0);
    let matrix = input_tokens
        .iter()
        .zip(&input_stems)
        .map(|(token, input_stem)| {
            let is_argument = token.segment.as_argument().is_some();
            response_stems
                .iter()
                .map(|response_stem| {
                    let u: f64 = rng.gen();
                    let matched = is_argument
                        && input_stem.is_some()
                        && input_stem == response_stem;
                    let value = if matched {
                        MATCH + MATCH_JITTER * u
                    } else {
                        NOISE_FLOOR + NOISE * u
                    };
                    (value * 1e4).round() / 1e4
                })
                .collect()
        })
        .collect();

    Ok(SalienceMap {
        input_tokens,
        response_tokens,
        matrix,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::fixtures::example;
    use crate::salience::SalienceDetector;

    #[test]
    fn pieces_are_contiguous_and_short() {
        let toks = subword_tokens("Unanimity, taxes!", Segment::Response);
        let texts: Vec<&str> = toks.iter().map(|t| t.text.as_str()).collect();
        assert_eq!(texts, ["Unan", "imit", "y", ",", " taxe", "s", "!"]);
        for pair in toks.windows(2) {
            assert_eq!(pair[0].end, pair[1].start);
        }
    }

    #[test]
    fn merging_pieces_recovers_the_words() {
        let tp = TextProcessor::english();
        let text = "Unanimity, taxes  rise again.";
        let merged = tp
            .merge_subword_tokens(&subword_tokens(text, Segment::Response))
            .unwrap();
        let words: Vec<_> = merged.into_iter().map(|m| m.word).collect();
        assert_eq!(words, tp.tokenize(text, Segment::Response));
    }

    #[test]
    fn copied_words_score_better_than_invented_ones() {
        let tp = TextProcessor::english();
        let faithful = example("e1", &[("a1", "Taxes fund schools")], &[("b1", "Deficits grow")], "Taxes fund schools, but deficits grow.");
        let invented = example("e2", &[("a1", "Taxes fund schools")], &[("b1", "Deficits grow")], "Taxes fund schools, but moons orbit planets.");
        let det = SalienceDetector::default();
        let a = det.score(&faithful, &synthetic_map(&faithful, &tp, 1).unwrap()).unwrap();
        let b = det.score(&invented, &synthetic_map(&invented, &tp, 1).unwrap()).unwrap();
        assert!(a.scores.hallucination < b.scores.hallucination);
        assert!(a.scores.coverage < b.scores.coverage);
    }

    #[test]
    fn maps_are_deterministic() {
        let tp = TextProcessor::english();
        let ex = example("e1", &[("a1", "Taxes fund schools")], &[("b1", "Deficits grow")], "Taxes grow.");
        assert_eq!(synthetic_map(&ex, &tp, 9).unwrap(), synthetic_map(&ex, &tp, 9).unwrap());
        assert_ne!(synthetic_map(&ex, &tp, 9).unwrap(), synthetic_map(&ex, &tp, 10).unwrap());
    }
}
