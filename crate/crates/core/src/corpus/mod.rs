//! Knowledge bases of pro/con arguments, labeled query-response examples,
//! and the JSON files that carry them.

mod slice;
mod split;

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use slice::{slice_membership, slice_test_set, EvalSlice, SliceKind};
pub use split::{split_topics, SplitAssignment, TopicSplits};

/// Half-open range of character (Unicode scalar) offsets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub const fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn contains(&self, other: &Span) -> bool {
        self.start <= other.start && other.end <= self.end
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        self.start < other.end && other.start < self.end
    }

    fn check_within(&self, host_len: usize, entity: &str, strict: bool) -> Result<()> {
        let malformed = if strict {
            self.start >= self.end
        } else {
            self.start > self.end
        };
        if malformed || self.end > host_len {
            return Err(Error::validation(
                entity,
                format!(
                    "range {}..{} is not a well-formed range within a text of {} characters",
                    self.start, self.end, host_len
                ),
            ));
        }
        Ok(())
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}..{}", self.start, self.end)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Perspective {
    Pro,
    Con,
}

impl Perspective {
    pub const BOTH: [Perspective; 2] = [Perspective::Pro, Perspective::Con];
}

impl fmt::Display for Perspective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Perspective::Pro => "pro",
            Perspective::Con => "con",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Argument {
    pub id: String,
    pub perspective: Perspective,
    pub phrase: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub explanation: Option<String>,
}

impl Argument {
    pub fn new(id: impl Into<String>, perspective: Perspective, phrase: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            perspective,
            phrase: phrase.into(),
            explanation: None,
        }
    }

    pub fn with_explanation(mut self, explanation: impl Into<String>) -> Self {
        self.explanation = Some(explanation.into());
        self
    }

    /// The phrase, followed by a single space and the explanation when one
    /// exists. Argument-side annotation ranges index into this text.
    pub fn full_text(&self) -> String {
        match &self.explanation {
            Some(explanation) => format!("{} {}", self.phrase, explanation),
            None => self.phrase.clone(),
        }
    }

    /// Character length of the phrase, i.e. where the explanation part of
    /// [`Argument::full_text`] begins.
    pub fn phrase_len(&self) -> usize {
        self.phrase.chars().count()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topic {
    pub id: String,
    pub title: String,
    pub query: String,
    pub arguments: Vec<Argument>,
}

impl Topic {
    pub fn argument(&self, id: &str) -> Option<&Argument> {
        self.arguments.iter().find(|a| a.id == id)
    }

    pub fn arguments_for(&self, perspective: Perspective) -> impl Iterator<Item = &Argument> {
        self.arguments
            .iter()
            .filter(move |a| a.perspective == perspective)
    }

    pub fn validate(&self) -> Result<()> {
        let entity = format!("topic `{}`", self.id);
        if self.id.is_empty() {
            return Err(Error::validation("topic", "empty id"));
        }
        if self.query.trim().is_empty() {
            return Err(Error::validation(entity, "empty query"));
        }
        let mut seen = HashSet::new();
        for arg in &self.arguments {
            if !seen.insert(arg.id.as_str()) {
                return Err(Error::DuplicateId {
                    kind: "argument",
                    id: arg.id.clone(),
                });
            }
            if arg.phrase.trim().is_empty() {
                return Err(Error::validation(
                    format!("argument `{}`", arg.id),
                    "empty phrase",
                ));
            }
        }
        for perspective in Perspective::BOTH {
            if self.arguments_for(perspective).next().is_none() {
                return Err(Error::validation(
                    entity,
                    format!("no {perspective} arguments"),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeBase {
    pub topics: Vec<Topic>,
}

impl KnowledgeBase {
    pub fn from_json(text: &str) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let kb: KnowledgeBase = read_json(path)?;
        kb.validate()?;
        Ok(kb)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for topic in &self.topics {
            if !seen.insert(topic.id.as_str()) {
                return Err(Error::DuplicateId {
                    kind: "topic",
                    id: topic.id.clone(),
                });
            }
            topic.validate()?;
        }
        Ok(())
    }

    pub fn topic(&self, id: &str) -> Option<&Topic> {
        self.topics.iter().find(|t| t.id == id)
    }

    /// Median over every (topic, perspective) pair of the number of
    /// arguments on that side. `None` for an empty knowledge base.
    pub fn median_arguments_per_perspective(&self) -> Option<f64> {
        let mut counts: Vec<usize> = self
            .topics
            .iter()
            .flat_map(|t| Perspective::BOTH.map(|p| t.arguments_for(p).count()))
            .collect();
        if counts.is_empty() {
            return None;
        }
        counts.sort_unstable();
        let mid = counts.len() / 2;
        Some(if counts.len() % 2 == 1 {
            counts[mid] as f64
        } else {
            (counts[mid - 1] + counts[mid]) as f64 / 2.0
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ErrorType {
    Hallucination,
    Coverage,
}

impl ErrorType {
    pub const BOTH: [ErrorType; 2] = [ErrorType::Hallucination, ErrorType::Coverage];
}

impl fmt::Display for ErrorType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ErrorType::Hallucination => "hallucination",
            ErrorType::Coverage => "coverage",
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ErrorClass {
    #[default]
    None,
    Full,
    Ambiguous,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AmbiguousKind {
    PartialHallucination,
    PartialCoverage,
    Repetition,
    PerspectiveConfusion,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorLabels {
    pub hallucination: ErrorClass,
    pub coverage: ErrorClass,
    #[serde(default)]
    pub ambiguous_subtypes: BTreeSet<AmbiguousKind>,
}

impl ErrorLabels {
    pub fn error_free() -> Self {
        Self::default()
    }

    pub fn full(error_type: ErrorType) -> Self {
        let mut labels = Self::default();
        match error_type {
            ErrorType::Hallucination => labels.hallucination = ErrorClass::Full,
            ErrorType::Coverage => labels.coverage = ErrorClass::Full,
        }
        labels
    }

    pub fn get(&self, error_type: ErrorType) -> ErrorClass {
        match error_type {
            ErrorType::Hallucination => self.hallucination,
            ErrorType::Coverage => self.coverage,
        }
    }

    pub fn is_error_free(&self) -> bool {
        self.hallucination == ErrorClass::None && self.coverage == ErrorClass::None
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        let ambiguous = self.hallucination == ErrorClass::Ambiguous
            || self.coverage == ErrorClass::Ambiguous;
        match (ambiguous, self.ambiguous_subtypes.is_empty()) {
            (true, true) => Err("ambiguous label without ambiguous_subtypes".into()),
            (false, false) => Err("ambiguous_subtypes given without an ambiguous label".into()),
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArgumentSpan {
    pub argument_id: String,
    pub span: Span,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpanAnnotations {
    /// Response ranges that express a given argument.
    #[serde(default)]
    pub covered_spans: Vec<ArgumentSpan>,
    #[serde(default)]
    pub hallucinated_response_spans: Vec<Span>,
    /// Ranges within an argument's [`Argument::full_text`].
    #[serde(default)]
    pub uncovered_argument_spans: Vec<ArgumentSpan>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    #[default]
    Organic,
    SyntheticCoverage,
    SyntheticHallucination,
    SyntheticBoth,
}

impl Provenance {
    pub fn is_synthetic(&self) -> bool {
        !matches!(self, Provenance::Organic)
    }
}

const SYNTH_MARKER: &str = "#synth-";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub id: String,
    pub topic_id: String,
    pub query: String,
    pub pro_args: Vec<Argument>,
    pub con_args: Vec<Argument>,
    pub response: String,
    /// Response range after the introduction sentence. Absent means the
    /// whole response.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub main_response_span: Option<Span>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    #[serde(default)]
    pub paraphrased: bool,
    #[serde(default)]
    pub labels: ErrorLabels,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotations: Option<SpanAnnotations>,
    #[serde(default)]
    pub provenance: Provenance,
}

impl Example {
    pub fn response_len(&self) -> usize {
        self.response.chars().count()
    }

    pub fn main_span(&self) -> Span {
        self.main_response_span
            .unwrap_or_else(|| Span::new(0, self.response_len()))
    }

    pub fn arguments(&self) -> impl Iterator<Item = &Argument> {
        self.pro_args.iter().chain(self.con_args.iter())
    }

    pub fn arguments_for(&self, perspective: Perspective) -> &[Argument] {
        match perspective {
            Perspective::Pro => &self.pro_args,
            Perspective::Con => &self.con_args,
        }
    }

    pub fn arguments_for_mut(&mut self, perspective: Perspective) -> &mut Vec<Argument> {
        match perspective {
            Perspective::Pro => &mut self.pro_args,
            Perspective::Con => &mut self.con_args,
        }
    }

    pub fn argument(&self, id: &str) -> Option<&Argument> {
        self.arguments().find(|a| a.id == id)
    }

    pub fn argument_count(&self) -> usize {
        self.pro_args.len() + self.con_args.len()
    }

    /// The example a synthetic derivative was generated from, read from the
    /// `<parent>#synth-<kind>-<n>` id convention.
    pub fn parent_id(&self) -> Option<&str> {
        self.id.rfind(SYNTH_MARKER).map(|at| &self.id[..at])
    }

    pub fn validate(&self) -> Result<()> {
        let entity = format!("example `{}`", self.id);
        if self.id.is_empty() {
            return Err(Error::validation("example", "empty id"));
        }
        let response_len = self.response_len();
        if let Some(span) = self.main_response_span {
            span.check_within(response_len, &format!("{entity} main_response_span"), false)?;
        }
        let mut seen = HashSet::new();
        for perspective in Perspective::BOTH {
            for arg in self.arguments_for(perspective) {
                if arg.perspective != perspective {
                    return Err(Error::validation(
                        &entity,
                        format!("argument `{}` listed under {perspective}", arg.id),
                    ));
                }
                if !seen.insert(arg.id.as_str()) {
                    return Err(Error::DuplicateId {
                        kind: "argument",
                        id: arg.id.clone(),
                    });
                }
                if arg.phrase.trim().is_empty() {
                    return Err(Error::validation(
                        format!("{entity} argument `{}`", arg.id),
                        "empty phrase",
                    ));
                }
            }
        }
        self.labels
            .validate()
            .map_err(|reason| Error::validation(&entity, reason))?;
        if let Some(ann) = &self.annotations {
            for covered in &ann.covered_spans {
                if self.argument(&covered.argument_id).is_none() {
                    return Err(Error::UnknownReference {
                        kind: "argument",
                        id: covered.argument_id.clone(),
                    });
                }
                covered
                    .span
                    .check_within(response_len, &format!("{entity} covered span"), true)?;
            }
            for span in &ann.hallucinated_response_spans {
                span.check_within(response_len, &format!("{entity} hallucinated span"), true)?;
            }
            for uncovered in &ann.uncovered_argument_spans {
                let arg = self.argument(&uncovered.argument_id).ok_or_else(|| {
                    Error::UnknownReference {
                        kind: "argument",
                        id: uncovered.argument_id.clone(),
                    }
                })?;
                uncovered.span.check_within(
                    arg.full_text().chars().count(),
                    &format!("{entity} uncovered span of `{}`", arg.id),
                    true,
                )?;
            }
        }
        Ok(())
    }

    /// Checks the topic and every argument id against the knowledge base.
    pub fn validate_against(&self, kb: &KnowledgeBase) -> Result<()> {
        let topic = kb
            .topic(&self.topic_id)
            .ok_or_else(|| Error::UnknownReference {
                kind: "topic",
                id: self.topic_id.clone(),
            })?;
        for arg in self.arguments() {
            match topic.argument(&arg.id) {
                Some(source) if source.perspective == arg.perspective => {}
                Some(_) => {
                    return Err(Error::validation(
                        format!("example `{}`", self.id),
                        format!(
                            "argument `{}` has a different perspective in topic `{}`",
                            arg.id, topic.id
                        ),
                    ))
                }
                None => {
                    return Err(Error::UnknownReference {
                        kind: "argument",
                        id: format!("{}/{}", topic.id, arg.id),
                    })
                }
            }
        }
        Ok(())
    }
}

pub fn load_examples(path: &Path, kb: Option<&KnowledgeBase>) -> Result<Vec<Example>> {
    let examples: Vec<Example> = read_json(path)?;
    let mut seen = HashSet::new();
    for example in &examples {
        if !seen.insert(example.id.as_str()) {
            return Err(Error::DuplicateId {
                kind: "example",
                id: example.id.clone(),
            });
        }
        example.validate()?;
        if let Some(kb) = kb {
            example.validate_against(kb)?;
        }
    }
    Ok(examples)
}

pub fn save_examples(examples: &[Example], path: &Path) -> Result<()> {
    write_json(path, &examples)
}

pub(crate) fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Parse {
        path: path.to_path_buf(),
        source,
    })
}

/// Pretty JSON with a trailing newline.
pub(crate) fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("in-memory values serialize");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}


#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;

    const KB_JSON: &str = r#"{"topics":[{"id":"t1","title":"Taxes","query":"Should taxes rise?",
        "arguments":[
          {"id":"a1","perspective":"pro","phrase":"Taxes fund schools"},
          {"id":"a2","perspective":"pro","phrase":"Growth follows investment","explanation":"Public investment pays off."},
          {"id":"b1","perspective":"con","phrase":"Deficits shrink anyway"},
          {"id":"b2","perspective":"con","phrase":"Families lose income"}]}]}"#;

    fn write_tmp(text: &str) -> tempfile::NamedTempFile {
        let file = tempfile::NamedTempFile::new().unwrap();
        std::fs::write(file.path(), text).unwrap();
        file
    }

    #[test]
    fn loads_a_small_knowledge_base() {
        let file = write_tmp(KB_JSON);
        let kb = KnowledgeBase::load(file.path()).unwrap();
        assert_eq!(kb.topics.len(), 1);
        assert_eq!(kb.topics[0].arguments.len(), 4);
        assert_eq!(kb.topics[0].arguments[1].id, "a2");
        assert_eq!(kb.median_arguments_per_perspective(), Some(2.0));
    }

    #[test]
    fn duplicate_argument_id_is_named() {
        let file = write_tmp(&KB_JSON.replace("\"b2\"", "\"a1\""));
        let err = KnowledgeBase::load(file.path()).unwrap_err();
        assert!(err.to_string().contains("`a1`"), "{err}");
    }

    #[test]
    fn missing_perspective_is_rejected() {
        let text = KB_JSON
            .replace("\"con\",\"phrase\":\"Deficits", "\"pro\",\"phrase\":\"Deficits")
            .replace("\"con\",\"phrase\":\"Families", "\"pro\",\"phrase\":\"Families");
        let err = KnowledgeBase::load(write_tmp(&text).path()).unwrap_err();
        assert!(err.to_string().contains("no con arguments"), "{err}");
    }

    #[test]
    fn malformed_json_is_a_parse_error() {
        let err = KnowledgeBase::load(write_tmp("{\"topics\": [").path()).unwrap_err();
        assert!(matches!(err, Error::Parse { .. }));
    }

    #[test]
    fn median_over_seventy_two_topics() {
        let topics = (0..72)
            .map(|t| {
                let per_side = [2, 3, 4, 4, 5, 23][t % 6];
                let arguments = Perspective::BOTH
                    .iter()
                    .flat_map(|&p| {
                        (0..per_side).map(move |i| Argument::new(format!("{p}{i}"), p, "claim"))
                    })
                    .collect();
                Topic {
                    id: format!("topic-{t}"),
                    title: format!("Topic {t}"),
                    query: "Is it good?".into(),
                    arguments,
                }
            })
            .collect();
        let kb = KnowledgeBase { topics };
        let file = tempfile::NamedTempFile::new().unwrap();
        kb.save(file.path()).unwrap();
        let loaded = KnowledgeBase::load(file.path()).unwrap();
        assert_eq!(loaded, kb);
        assert_eq!(loaded.topics.len(), 72);
        assert_eq!(loaded.median_arguments_per_perspective(), Some(4.0));
    }

    #[test]
    fn main_span_past_the_response_is_rejected() {
        let mut ex = example("e1", &[("a1", "Taxes fund schools")], &[("b1", "x")], "short");
        ex.main_response_span = Some(Span::new(0, 6));
        assert!(matches!(ex.validate(), Err(Error::Validation { .. })));
        ex.main_response_span = Some(Span::new(2, 5));
        ex.validate().unwrap();
        assert_eq!(ex.main_span(), Span::new(2, 5));
    }

    #[test]
    fn ambiguous_labels_need_subtypes() {
        let mut ex = example("e1", &[("a1", "p")], &[("b1", "c")], "r");
        ex.labels.hallucination = ErrorClass::Ambiguous;
        assert!(ex.validate().is_err());
        ex.labels.ambiguous_subtypes.insert(AmbiguousKind::Repetition);
        ex.validate().unwrap();
        ex.labels.hallucination = ErrorClass::None;
        assert!(ex.validate().is_err());
    }

    #[test]
    fn save_then_load_round_trips() {
        let mut ex = example("e1", &[("a1", "Taxes fund schools")], &[("b1", "Deficits shrink anyway")], "Yes. Taxes fund schools.");
        ex.labels.hallucination = ErrorClass::Ambiguous;
        ex.labels.ambiguous_subtypes.insert(AmbiguousKind::Repetition);
        ex.main_response_span = Some(Span::new(5, 24));
        ex.annotations = Some(SpanAnnotations {
            covered_spans: vec![ArgumentSpan {
                argument_id: "a1".into(),
                span: Span::new(5, 23),
            }],
            hallucinated_response_spans: vec![],
            uncovered_argument_spans: vec![ArgumentSpan {
                argument_id: "b1".into(),
                span: Span::new(0, 8),
            }],
        });
        let second = example("e1#synth-cov-0", &[("a1", "Taxes fund schools")], &[], "Yes.");
        let examples = vec![ex, second];
        let file = tempfile::NamedTempFile::new().unwrap();
        save_examples(&examples, file.path()).unwrap();
        let first_bytes = std::fs::read(file.path()).unwrap();
        let loaded = load_examples(file.path(), None).unwrap();
        assert_eq!(loaded, examples);
        save_examples(&loaded, file.path()).unwrap();
        assert_eq!(std::fs::read(file.path()).unwrap(), first_bytes);
    }

    #[test]
    fn dangling_references_are_reported() {
        let kb = KnowledgeBase::from_json(KB_JSON).unwrap();
        let ok = example("e1", &[("a1", "paraphrase of a1")], &[("b1", "x")], "r");
        ok.validate_against(&kb).unwrap();
        let bad = example("e2", &[("a9", "p")], &[("b1", "x")], "r");
        let err = bad.validate_against(&kb).unwrap_err();
        assert!(err.to_string().contains("a9"));
        let mut other_topic = ok.clone();
        other_topic.topic_id = "nope".into();
        assert!(matches!(
            other_topic.validate_against(&kb),
            Err(Error::UnknownReference { kind: "topic", .. })
        ));
    }

    #[test]
    fn parent_id_follows_the_suffix_convention() {
        let ex = example("topic-3/e7#synth-hal-0", &[], &[], "");
        assert_eq!(ex.parent_id(), Some("topic-3/e7"));
        assert_eq!(example("e7", &[], &[], "").parent_id(), None);
    }

    #[test]
    fn annotation_ranges_are_checked() {
        let mut ex = example("e1", &[("a1", "abc")], &[("b1", "x")], "resp");
        ex.annotations = Some(SpanAnnotations {
            hallucinated_response_spans: vec![Span::new(2, 2)],
            ..Default::default()
        });
        assert!(ex.validate().is_err());
        ex.annotations = Some(SpanAnnotations {
            uncovered_argument_spans: vec![ArgumentSpan {
                argument_id: "a1".into(),
                span: Span::new(0, 4),
            }],
            ..Default::default()
        });
        assert!(ex.validate().is_err());
    }
}
