//! Evaluation of detector score files against labeled slices, and the
//! report written by the CLI.
//!
//! Word-level evaluation uses the span annotations: an example contributes
//! its words when it sits on the error-free side of the slice (every word
//! is then labeled clean) or when it carries annotations. For hallucination,
//! response words overlapping a hallucinated span are errors; for coverage,
//! argument words overlapping an uncovered span of their argument are.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{write_json, read_json, ErrorClass, ErrorType, EvalSlice, Example, SliceKind, Span};
use crate::scores::ExampleScoreRecord;
use crate::stats::{self, ScoredEntry, ScoredSet};
use crate::{seed, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    Example,
    Word,
}

impl Granularity {
    pub fn name(self) -> &'static str {
        match self {
            Granularity::Example => "example",
            Granularity::Word => "word",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AucEntry {
    pub slice: SliceKind,
    pub error_type: ErrorType,
    pub method: String,
    pub granularity: Granularity,
    pub auc: f64,
    /// Hanley–McNeil standard error.
    pub std_error: f64,
    pub n_error: usize,
    pub n_clean: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub slice: SliceKind,
    pub error_type: ErrorType,
    pub granularity: Granularity,
    pub method_a: String,
    pub method_b: String,
    pub auc_a: f64,
    pub auc_b: f64,
    pub n_items: usize,
    pub p_raw: f64,
    /// Corrected across every comparison in the report.
    pub p_bonferroni: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgreementStats {
    pub error_type: ErrorType,
    pub alpha: f64,
    pub majority_vote_agreement: f64,
    pub n_items: usize,
    pub n_raters: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub entries: Vec<AucEntry>,
    pub comparisons: Vec<Comparison>,
    pub agreement: Vec<AgreementStats>,
    /// Evaluations that could not be computed, with the reason.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub skipped: Vec<String>,
}

impl EvalReport {
    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    /// One row per slice × error type × method × granularity.
    pub fn to_csv(&self) -> Result<String> {
        let mut writer = csv::Writer::from_writer(Vec::new());
        for entry in &self.entries {
            writer
                .serialize(entry)
                .map_err(|e| Error::InvalidInput(format!("CSV serialization: {e}")))?;
        }
        let bytes = writer
            .into_inner()
            .map_err(|e| Error::InvalidInput(format!("CSV serialization: {e}")))?;
        Ok(String::from_utf8(bytes).expect("CSV output is UTF-8"))
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()?).map_err(|e| Error::io(path, e))
    }

    pub fn entry(&self, slice: SliceKind, error_type: ErrorType, method: &str, granularity: Granularity) -> Option<&AucEntry> {
        self.entries.iter().find(|e| {
            e.slice == slice && e.error_type == error_type && e.method == method && e.granularity == granularity
        })
    }
}

#[derive(Clone, Debug)]
pub struct MethodScores {
    pub name: String,
    pub records: Vec<ExampleScoreRecord>,
}

#[derive(Clone, Copy, Debug)]
pub struct EvalOptions {
    pub n_perm: usize,
    pub seed: u64,
    pub word_level: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            n_perm: 10_000,
            seed: 0,
            word_level: false,
        }
    }
}

fn score_of(record: &ExampleScoreRecord, error_type: ErrorType) -> f64 {
    match error_type {
        ErrorType::Hallucination => record.hallucination,
        ErrorType::Coverage => record.coverage,
    }
}

fn index_records(method: &MethodScores) -> HashMap<&str, &ExampleScoreRecord> {
    method.records.iter().map(|r| (r.id.as_str(), r)).collect()
}

fn example_level_set(slice: &EvalSlice, method: &MethodScores) -> Result<ScoredSet> {
    let by_id = index_records(method);
    let entries = slice
        .labeled()
        .map(|(example, is_error)| {
            let record = by_id.get(example.id.as_str()).ok_or_else(|| Error::UnknownReference {
                kind: "example in scores file",
                id: format!("{} (method {})", example.id, method.name),
            })?;
            Ok(ScoredEntry::new(
                example.id.clone(),
                score_of(record, slice.error_type),
                is_error,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    ScoredSet::new(entries)
}

fn overlaps_any<'a>(range: Span, spans: impl IntoIterator<Item = &'a Span>) -> bool {
    spans.into_iter().any(|s| s.overlaps(&range))
}

/// Word-level entries keyed by `example|argument|start-end` (argument empty
/// for response words).
fn word_level_entries(slice: &EvalSlice, method: &MethodScores) -> Result<BTreeMap<String, ScoredEntry>> {
    let by_id = index_records(method);
    let mut out = BTreeMap::new();
    for (example, is_error) in slice.labeled() {
        if is_error && example.annotations.is_none() {
            continue;
        }
        let words = by_id
            .get(example.id.as_str())
            .and_then(|r| r.word_scores.as_ref())
            .ok_or_else(|| {
                Error::InvalidInput(format!(
                    "method `{}` has no word scores for `{}`",
                    method.name, example.id
                ))
            })?;
        let ann = example.annotations.clone().unwrap_or_default();
        match slice.error_type {
            ErrorType::Hallucination => {
                for w in &words.response {
                    let range = Span::new(w.start, w.end);
                    let key = format!("{}||{}-{}", example.id, w.start, w.end);
                    let label = overlaps_any(range, &ann.hallucinated_response_spans);
                    out.insert(key.clone(), ScoredEntry::new(key, w.score, label));
                }
            }
            ErrorType::Coverage => {
                for w in &words.input {
                    let range = Span::new(w.start, w.end);
                    let key = format!("{}|{}|{}-{}", example.id, w.argument_id, w.start, w.end);
                    let label = overlaps_any(
                        range,
                        ann.uncovered_argument_spans
                            .iter()
                            .filter(|u| u.argument_id == w.argument_id)
                            .map(|u| &u.span),
                    );
                    out.insert(key.clone(), ScoredEntry::new(key, w.score, label));
                }
            }
        }
    }
    Ok(out)
}

fn auc_entry(
    slice: &EvalSlice,
    method: &str,
    granularity: Granularity,
    set: &ScoredSet,
) -> Result<AucEntry> {
    let auc = stats::roc_auc(set)?;
    let (n_error, n_clean) = (set.n_error(), set.n_clean());
    Ok(AucEntry {
        slice: slice.kind,
        error_type: slice.error_type,
        method: method.to_string(),
        granularity,
        auc,
        std_error: stats::auc_std_error(auc, n_error, n_clean)?,
        n_error,
        n_clean,
    })
}

fn restrict(entries: &BTreeMap<String, ScoredEntry>, keys: &BTreeSet<&String>) -> Result<ScoredSet> {
    ScoredSet::new(
        entries
            .iter()
            .filter(|(k, _)| keys.contains(k))
            .map(|(_, e)| e.clone())
            .collect(),
    )
}

/// AUCs of every method on every slice plus pairwise paired permutation
/// tests, Bonferroni-corrected over all comparisons in the report.
pub fn evaluate(slices: &[EvalSlice], methods: &[MethodScores], options: &EvalOptions) -> Result<EvalReport> {
    let mut names = BTreeSet::new();
    for m in methods {
        if !names.insert(m.name.as_str()) {
            return Err(Error::DuplicateId {
                kind: "method",
                id: m.name.clone(),
            });
        }
    }
    let mut report = EvalReport::default();
    for slice in slices {
        let label = format!("{}/{}", slice.kind.name(), slice.error_type);
        let sets = methods
            .iter()
            .map(|m| example_level_set(slice, m))
            .collect::<Result<Vec<_>>>()?;
        for (m, set) in methods.iter().zip(&sets) {
            report.entries.push(auc_entry(slice, &m.name, Granularity::Example, set)?);
        }
        for i in 0..methods.len() {
            for j in i + 1..methods.len() {
                report.comparisons.push(compare(
                    slice,
                    Granularity::Example,
                    (&methods[i].name, &sets[i]),
                    (&methods[j].name, &sets[j]),
                    options,
                )?);
            }
        }

        if !options.word_level {
            continue;
        }
        let words = methods
            .iter()
            .map(|m| word_level_entries(slice, m))
            .collect::<Result<Vec<_>>>()?;
        let mut word_sets = Vec::new();
        for (m, entries) in methods.iter().zip(&words) {
            let all: BTreeSet<&String> = entries.keys().collect();
            let set = restrict(entries, &all)?;
            match auc_entry(slice, &m.name, Granularity::Word, &set) {
                Ok(entry) => report.entries.push(entry),
                Err(e) => report.skipped.push(format!("{label} word-level {}: {e}", m.name)),
            }
            word_sets.push(set);
        }
        for i in 0..methods.len() {
            for j in i + 1..methods.len() {
                // Methods may tokenize differently; compare on shared words.
                let shared: BTreeSet<&String> = words[i]
                    .keys()
                    .filter(|k| words[j].contains_key(*k))
                    .collect();
                let a = restrict(&words[i], &shared)?;
                let b = restrict(&words[j], &shared)?;
                match compare(slice, Granularity::Word, (&methods[i].name, &a), (&methods[j].name, &b), options) {
                    Ok(c) => report.comparisons.push(c),
                    Err(e) => report.skipped.push(format!(
                        "{label} word-level {} vs {}: {e}",
                        methods[i].name, methods[j].name
                    )),
                }
            }
        }
    }
    let corrected = stats::bonferroni(&report.comparisons.iter().map(|c| c.p_raw).collect::<Vec<_>>());
    for (c, p) in report.comparisons.iter_mut().zip(corrected) {
        c.p_bonferroni = p;
    }
    Ok(report)
}

fn compare(
    slice: &EvalSlice,
    granularity: Granularity,
    (name_a, a): (&str, &ScoredSet),
    (name_b, b): (&str, &ScoredSet),
    options: &EvalOptions,
) -> Result<Comparison> {
    let stage = format!(
        "eval/{}/{}/{}/{name_a}/{name_b}",
        slice.kind.name(),
        slice.error_type,
        granularity.name()
    );
    let result = stats::compare_auc_paired(a, b, options.n_perm, seed::derive(options.seed, &stage))?;
    Ok(Comparison {
        slice: slice.kind,
        error_type: slice.error_type,
        granularity,
        method_a: name_a.to_string(),
        method_b: name_b.to_string(),
        auc_a: result.auc_a,
        auc_b: result.auc_b,
        n_items: a.len(),
        p_raw: result.p_value,
        p_bonferroni: result.p_value,
    })
}

/// One annotator judgement, as stored in a ratings file (a JSON list).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatingRecord {
    pub rater: String,
    pub example_id: String,
    pub error_type: ErrorType,
    pub label: ErrorClass,
}

/// Reference label of an example, as stored in a gold file (a JSON list).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoldRecord {
    pub example_id: String,
    pub error_type: ErrorType,
    pub label: ErrorClass,
}

pub fn load_ratings(path: &Path) -> Result<Vec<RatingRecord>> {
    read_json(path)
}

pub fn load_gold(path: &Path) -> Result<Vec<GoldRecord>> {
    read_json(path)
}

/// Gold labels as records, one per example and error type.
pub fn gold_from_examples(examples: &[Example]) -> Vec<GoldRecord> {
    examples
        .iter()
        .flat_map(|e| {
            ErrorType::BOTH.iter().map(|t| GoldRecord {
                example_id: e.id.clone(),
                error_type: *t,
                label: e.labels.get(*t),
            })
        })
        .collect()
}

/// Krippendorff's alpha over every rated item and majority-vote agreement
/// with the gold label, per error type present in the gold file.
pub fn agreement(ratings: &[RatingRecord], gold: &[GoldRecord]) -> Result<Vec<AgreementStats>> {
    let mut out = Vec::new();
    for error_type in ErrorType::BOTH {
        let mut gold_labels: BTreeMap<&str, ErrorClass> = BTreeMap::new();
        for g in gold.iter().filter(|g| g.error_type == error_type) {
            if gold_labels.insert(&g.example_id, g.label).is_some() {
                return Err(Error::DuplicateId {
                    kind: "gold label",
                    id: format!("{} ({})", g.example_id, error_type),
                });
            }
        }
        if gold_labels.is_empty() {
            continue;
        }
        let relevant: Vec<&RatingRecord> = ratings.iter().filter(|r| r.error_type == error_type).collect();
        let raters: BTreeSet<&str> = relevant.iter().map(|r| r.rater.as_str()).collect();
        let items: BTreeSet<&str> = relevant
            .iter()
            .map(|r| r.example_id.as_str())
            .chain(gold_labels.keys().copied())
            .collect();
        let item_index: HashMap<&str, usize> = items.iter().enumerate().map(|(i, id)| (*id, i)).collect();
        let rater_index: HashMap<&str, usize> = raters.iter().enumerate().map(|(i, id)| (*id, i)).collect();
        let mut table: Vec<Vec<Option<ErrorClassKey>>> = vec![vec![None; items.len()]; raters.len()];
        for r in &relevant {
            let cell = &mut table[rater_index[r.rater.as_str()]][item_index[r.example_id.as_str()]];
            if cell.is_some() {
                return Err(Error::DuplicateId {
                    kind: "rating",
                    id: format!("{} by {} ({})", r.example_id, r.rater, error_type),
                });
            }
            *cell = Some(ErrorClassKey(r.label));
        }
        let alpha = stats::krippendorff_alpha(&table)?;

        let gold_items: Vec<usize> = gold_labels.keys().map(|id| item_index[id]).collect();
        let gold_table: Vec<Vec<Option<ErrorClassKey>>> = table
            .iter()
            .map(|row| gold_items.iter().map(|&i| row[i]).collect())
            .collect();
        let gold_vec: Vec<ErrorClassKey> = gold_labels.values().map(|l| ErrorClassKey(*l)).collect();
        let majority = stats::majority_vote_agreement(&gold_table, &gold_vec).map_err(|e| {
            Error::InvalidInput(format!("{} agreement: {e}", error_type))
        })?;
        out.push(AgreementStats {
            error_type,
            alpha,
            majority_vote_agreement: majority,
            n_items: items.len(),
            n_raters: raters.len(),
        });
    }
    Ok(out)
}

/// Orderable wrapper so labels can key the coincidence matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct ErrorClassKey(ErrorClass);

impl ErrorClassKey {
    fn rank(self) -> u8 {
        match self.0 {
            ErrorClass::None => 0,
            ErrorClass::Full => 1,
            ErrorClass::Ambiguous => 2,
        }
    }
}

impl PartialOrd for ErrorClassKey {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for ErrorClassKey {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.rank().cmp(&other.rank())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::fixtures::example;
    use crate::corpus::{ArgumentSpan, SpanAnnotations};
    use crate::scores::{InputWordScore, ResponseWordScore, WordScoreRecords};
    use crate::corpus::Perspective;

    fn record(id: &str, hal: f64, cov: f64) -> ExampleScoreRecord {
        ExampleScoreRecord {
            id: id.into(),
            hallucination: hal,
            coverage: cov,
            word_scores: None,
        }
    }

    fn slice(error_type: ErrorType) -> EvalSlice {
        let mk = |id: &str| example(id, &[("a1", "tax cuts")], &[("b1", "deficits")], "tax cuts help growth");
        EvalSlice {
            kind: SliceKind::FullOrganic,
            error_type,
            error_free: vec![mk("c1"), mk("c2")],
            with_error: vec![mk("e1"), mk("e2")],
        }
    }

    #[test]
    fn example_level_report() {
        let methods = vec![
            MethodScores {
                name: "perfect".into(),
                records: vec![record("c1", 0.1, 0.0), record("c2", 0.2, 0.0), record("e1", 0.8, 0.0), record("e2", 0.9, 0.0)],
            },
            MethodScores {
                name: "mixed".into(),
                records: vec![record("c1", 0.9, 0.0), record("c2", 0.2, 0.0), record("e1", 0.8, 0.0), record("e2", 0.1, 0.0)],
            },
        ];
        let options = EvalOptions { n_perm: 1000, seed: 1, word_level: false };
        let report = evaluate(&[slice(ErrorType::Hallucination), slice(ErrorType::Coverage)], &methods, &options).unwrap();
        assert_eq!(report.entries.len(), 4);
        let perfect = report.entry(SliceKind::FullOrganic, ErrorType::Hallucination, "perfect", Granularity::Example).unwrap();
        assert_eq!(perfect.auc, 1.0);
        assert_eq!(perfect.std_error, 0.0);
        assert_eq!((perfect.n_error, perfect.n_clean), (2, 2));
        let mixed = report.entry(SliceKind::FullOrganic, ErrorType::Hallucination, "mixed", Granularity::Example).unwrap();
        assert_eq!(mixed.auc, 0.25);
        // Coverage scores are constant: every method sits at 0.5 and the
        // comparison is exactly null.
        assert_eq!(report.comparisons.len(), 2);
        assert_eq!(report.comparisons[1].p_raw, 1.0);
        for c in &report.comparisons {
            assert_eq!(c.p_bonferroni, (c.p_raw * 2.0).min(1.0));
        }
        assert_eq!(report, evaluate(&[slice(ErrorType::Hallucination), slice(ErrorType::Coverage)], &methods, &options).unwrap());

        let csv = report.to_csv().unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "slice,error_type,method,granularity,auc,std_error,n_error,n_clean");
        assert_eq!(lines.next().unwrap(), "full_organic,hallucination,perfect,example,1.0,0.0,2,2");
    }

    #[test]
    fn missing_scores_are_an_error() {
        let methods = vec![MethodScores { name: "m".into(), records: vec![record("c1", 0.1, 0.1)] }];
        assert!(evaluate(&[slice(ErrorType::Hallucination)], &methods, &EvalOptions::default()).is_err());
    }

    #[test]
    fn word_level_labels_come_from_annotations() {
        let mut s = slice(ErrorType::Hallucination);
        s.with_error[0].annotations = Some(SpanAnnotations {
            hallucinated_response_spans: vec![Span::new(10, 20)],
            ..Default::default()
        });
        let word = |start, end, score| ResponseWordScore { surface: "w".into(), start, end, score };
        let records: Vec<ExampleScoreRecord> = ["c1", "c2", "e1", "e2"]
            .iter()
            .map(|id| ExampleScoreRecord {
                word_scores: Some(WordScoreRecords {
                    response: vec![word(0, 3, 0.0), word(15, 21, 1.0)],
                    input: vec![],
                }),
                ..record(id, 0.5, 0.5)
            })
            .collect();
        let methods = vec![MethodScores { name: "m".into(), records }];
        let options = EvalOptions { n_perm: 1000, seed: 0, word_level: true };
        let report = evaluate(&[s], &methods, &options).unwrap();
        let entry = report.entry(SliceKind::FullOrganic, ErrorType::Hallucination, "m", Granularity::Word).unwrap();
        // e2 is unannotated and dropped; c1, c2 contribute clean words.
        assert_eq!((entry.n_error, entry.n_clean), (1, 5));
        assert_eq!(entry.auc, 0.8);
    }

    #[test]
    fn coverage_word_labels_match_argument() {
        let mut s = slice(ErrorType::Coverage);
        s.with_error[0].annotations = Some(SpanAnnotations {
            uncovered_argument_spans: vec![ArgumentSpan { argument_id: "b1".into(), span: Span::new(0, 8) }],
            ..Default::default()
        });
        let input = |arg: &str, score| InputWordScore {
            argument_id: arg.into(),
            perspective: if arg == "a1" { Perspective::Pro } else { Perspective::Con },
            surface: "w".into(),
            start: 0,
            end: 3,
            score,
        };
        let mut s_err = s.clone();
        s_err.with_error.truncate(1);
        s_err.error_free.truncate(1);
        let records: Vec<ExampleScoreRecord> = ["c1", "e1"]
            .iter()
            .map(|id| ExampleScoreRecord {
                word_scores: Some(WordScoreRecords { response: vec![], input: vec![input("a1", 0.2), input("b1", 0.9)] }),
                ..record(id, 0.5, 0.5)
            })
            .collect();
        let entries = word_level_entries(&s_err, &MethodScores { name: "m".into(), records }).unwrap();
        let errors: Vec<&String> = entries.values().filter(|e| e.is_error).map(|e| &e.id).collect();
        assert_eq!(errors, ["e1|b1|0-3"]);
        assert_eq!(entries.len(), 4);
    }

    #[test]
    fn agreement_from_records() {
        let rate = |rater: &str, id: &str, label| RatingRecord {
            rater: rater.into(),
            example_id: id.into(),
            error_type: ErrorType::Hallucination,
            label,
        };
        let ratings = vec![
            rate("r1", "x", ErrorClass::Full),
            rate("r2", "x", ErrorClass::Full),
            rate("r3", "x", ErrorClass::None),
            rate("r1", "y", ErrorClass::None),
            rate("r2", "y", ErrorClass::None),
        ];
        let gold = vec![
            GoldRecord { example_id: "x".into(), error_type: ErrorType::Hallucination, label: ErrorClass::Full },
            GoldRecord { example_id: "y".into(), error_type: ErrorType::Hallucination, label: ErrorClass::Full },
        ];
        let stats = agreement(&ratings, &gold).unwrap();
        assert_eq!(stats.len(), 1);
        assert_eq!(stats[0].majority_vote_agreement, 0.5);
        assert_eq!((stats[0].n_items, stats[0].n_raters), (2, 3));
        // Item x: o_FF = 1, o_FN = o_NF = 1; item y: o_NN = 2.
        // n_F = 2, n_N = 3, n = 5: α = 1 − (2/5) / (2·2·3/(5·4)) = 1/3.
        assert!((stats[0].alpha - 1.0 / 3.0).abs() < 1e-12);

        let mut unrated = gold.clone();
        unrated.push(GoldRecord { example_id: "z".into(), error_type: ErrorType::Hallucination, label: ErrorClass::None });
        assert!(agreement(&ratings, &unrated).is_err());
    }

    #[test]
    fn gold_from_labels() {
        let mut e = example("e", &[("a1", "x")], &[], "r");
        e.labels.coverage = ErrorClass::Full;
        let gold = gold_from_examples(&[e]);
        assert_eq!(gold.len(), 2);
        assert_eq!(gold[1].label, ErrorClass::Full);
    }
}
