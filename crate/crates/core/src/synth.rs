//! Synthetic errors built by editing the argument list of an error-free
//! example while keeping its response fixed.
//!
//! Adding an unused argument of the topic yields a coverage error (the
//! response cannot mention it); removing a given argument yields a
//! hallucination (the response still expresses it). Derivatives carry the
//! parent id in their own id as `<parent>#synth-{cov,hal,both}-<n>`.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{
    Argument, ArgumentSpan, ErrorClass, ErrorLabels, Example, KnowledgeBase, Perspective,
    Provenance, Span,
};
use crate::seed;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArgumentRef {
    pub id: String,
    pub perspective: Perspective,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthEdit {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub added: Option<ArgumentRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub removed: Option<ArgumentRef>,
    /// Set when the removal left a perspective without arguments.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub emptied_perspective: Option<Perspective>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthExample {
    pub example: Example,
    pub edit: SynthEdit,
}

fn require_error_free(example: &Example) -> Result<()> {
    if example.labels.is_error_free() {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!(
            "example `{}` is not labeled error-free",
            example.id
        )))
    }
}

fn derivative(parent: &Example, suffix: &str, index: usize, provenance: Provenance) -> Example {
    let mut child = parent.clone();
    child.id = format!("{}#synth-{suffix}-{index}", parent.id);
    child.provenance = provenance;
    child.labels = ErrorLabels::error_free();
    child
}

fn add_unused_argument(
    example: &mut Example,
    exclude: &[&str],
    kb: &KnowledgeBase,
    rng: &mut impl Rng,
) -> Result<ArgumentRef> {
    let topic = kb.topic(&example.topic_id).ok_or_else(|| Error::UnknownReference {
        kind: "topic",
        id: example.topic_id.clone(),
    })?;
    let pool: Vec<&Argument> = topic
        .arguments
        .iter()
        .filter(|a| !exclude.contains(&a.id.as_str()))
        .collect();
    let chosen = (*pool.choose(rng).ok_or_else(|| {
        Error::InvalidInput(format!(
            "topic `{}` has no argument unused by `{}`",
            topic.id, example.id
        ))
    })?)
    .clone();
    if let Some(ann) = example.annotations.as_mut() {
        ann.uncovered_argument_spans.push(ArgumentSpan {
            argument_id: chosen.id.clone(),
            span: Span::new(0, chosen.full_text().chars().count()),
        });
    }
    let added = ArgumentRef {
        id: chosen.id.clone(),
        perspective: chosen.perspective,
    };
    example.arguments_for_mut(chosen.perspective).push(chosen);
    Ok(added)
}

fn remove_given_argument(example: &mut Example, rng: &mut impl Rng) -> Result<(ArgumentRef, Option<Perspective>)> {
    let total = example.argument_count();
    if total < 2 {
        return Err(Error::InvalidInput(format!(
            "example `{}` has {total} argument(s); removal needs at least 2",
            example.id
        )));
    }
    let pick = rng.gen_range(0..total);
    let (perspective, index) = if pick < example.pro_args.len() {
        (Perspective::Pro, pick)
    } else {
        (Perspective::Con, pick - example.pro_args.len())
    };
    let removed = example.arguments_for_mut(perspective).remove(index);
    if let Some(ann) = example.annotations.as_mut() {
        let (moved, kept): (Vec<_>, Vec<_>) = std::mem::take(&mut ann.covered_spans)
            .into_iter()
            .partition(|c| c.argument_id == removed.id);
        ann.covered_spans = kept;
        ann.hallucinated_response_spans
            .extend(moved.into_iter().map(|c| c.span));
        ann.hallucinated_response_spans.sort();
        ann.hallucinated_response_spans.dedup();
        ann.uncovered_argument_spans
            .retain(|u| u.argument_id != removed.id);
    }
    let emptied = example
        .arguments_for(perspective)
        .is_empty()
        .then_some(perspective);
    Ok((
        ArgumentRef {
            id: removed.id,
            perspective,
        },
        emptied,
    ))
}

fn coverage_with(example: &Example, kb: &KnowledgeBase, rng: &mut impl Rng) -> Result<SynthExample> {
    require_error_free(example)?;
    let mut child = derivative(example, "cov", 0, Provenance::SyntheticCoverage);
    let given: Vec<&str> = example.arguments().map(|a| a.id.as_str()).collect();
    let added = add_unused_argument(&mut child, &given, kb, rng)?;
    child.labels.coverage = ErrorClass::Full;
    Ok(SynthExample {
        example: child,
        edit: SynthEdit {
            added: Some(added),
            ..Default::default()
        },
    })
}

fn hallucination_with(example: &Example, rng: &mut impl Rng) -> Result<SynthExample> {
    require_error_free(example)?;
    let mut child = derivative(example, "hal", 0, Provenance::SyntheticHallucination);
    let (removed, emptied) = remove_given_argument(&mut child, rng)?;
    child.labels.hallucination = ErrorClass::Full;
    Ok(SynthExample {
        example: child,
        edit: SynthEdit {
            removed: Some(removed),
            emptied_perspective: emptied,
            ..Default::default()
        },
    })
}

/// One removal followed by one addition drawn from arguments the parent did
/// not use.
fn both_with(example: &Example, kb: &KnowledgeBase, rng: &mut impl Rng) -> Result<SynthExample> {
    require_error_free(example)?;
    let mut child = derivative(example, "both", 0, Provenance::SyntheticBoth);
    let given: Vec<String> = example.arguments().map(|a| a.id.clone()).collect();
    let given: Vec<&str> = given.iter().map(String::as_str).collect();
    let (removed, emptied) = remove_given_argument(&mut child, rng)?;
    let added = add_unused_argument(&mut child, &given, kb, rng)?;
    child.labels.hallucination = ErrorClass::Full;
    child.labels.coverage = ErrorClass::Full;
    let emptied = emptied.filter(|p| child.arguments_for(*p).is_empty());
    Ok(SynthExample {
        example: child,
        edit: SynthEdit {
            added: Some(added),
            removed: Some(removed),
            emptied_perspective: emptied,
        },
    })
}

/// Appends one uniformly chosen unused argument of the topic.
pub fn make_synthetic_coverage(example: &Example, kb: &KnowledgeBase, seed: u64) -> Result<SynthExample> {
    coverage_with(example, kb, &mut seed::stream_rng(seed, 0))
}

/// Removes one uniformly chosen given argument.
pub fn make_synthetic_hallucination(example: &Example, seed: u64) -> Result<SynthExample> {
    hallucination_with(example, &mut seed::stream_rng(seed, 0))
}

pub fn make_synthetic_both(example: &Example, kb: &KnowledgeBase, seed: u64) -> Result<SynthExample> {
    both_with(example, kb, &mut seed::stream_rng(seed, 0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthRecord {
    pub id: String,
    pub parent_id: String,
    pub edit: SynthEdit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Skipped {
    pub id: String,
    pub variant: String,
    pub reason: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SynthCorpus {
    pub examples: Vec<Example>,
    pub records: Vec<SynthRecord>,
    pub skipped: Vec<Skipped>,
}

/// Emits coverage, hallucination and both-error derivatives of every input,
/// in input order. Input `i` draws its variants from ChaCha streams `3i`,
/// `3i + 1` and `3i + 2` of `seed`.
pub fn generate_synthetic_corpus(error_free: &[Example], kb: &KnowledgeBase, seed: u64) -> SynthCorpus {
    let mut corpus = SynthCorpus::default();
    for (i, example) in error_free.iter().enumerate() {
        let base = 3 * i as u64;
        let attempts: [(&str, Result<SynthExample>); 3] = [
            ("cov", coverage_with(example, kb, &mut seed::stream_rng(seed, base))),
            ("hal", hallucination_with(example, &mut seed::stream_rng(seed, base + 1))),
            ("both", both_with(example, kb, &mut seed::stream_rng(seed, base + 2))),
        ];
        for (variant, attempt) in attempts {
            match attempt {
                Ok(synth) => {
                    corpus.records.push(SynthRecord {
                        id: synth.example.id.clone(),
                        parent_id: example.id.clone(),
                        edit: synth.edit,
                    });
                    corpus.examples.push(synth.example);
                }
                Err(e) => corpus.skipped.push(Skipped {
                    id: example.id.clone(),
                    variant: variant.into(),
                    reason: e.to_string(),
                }),
            }
        }
    }
    corpus
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::fixtures::example;
    use crate::corpus::{SpanAnnotations, Topic};

    fn kb(pro: &[&str], con: &[&str]) -> KnowledgeBase {
        let arguments = pro
            .iter()
            .map(|id| Argument::new(*id, Perspective::Pro, format!("phrase {id}")))
            .chain(
                con.iter()
                    .map(|id| Argument::new(*id, Perspective::Con, format!("phrase {id}"))),
            )
            .collect();
        KnowledgeBase {
            topics: vec![Topic {
                id: "t1".into(),
                title: "T".into(),
                query: "Q?".into(),
                arguments,
            }],
        }
    }

    fn ids(args: &[Argument]) -> Vec<&str> {
        args.iter().map(|a| a.id.as_str()).collect()
    }

    #[test]
    fn coverage_adds_the_only_unused_argument() {
        let kb = kb(&["a1", "a2"], &["b1"]);
        let parent = example("e", &[("a1", "phrase a1")], &[("b1", "phrase b1")], "resp");
        let synth = make_synthetic_coverage(&parent, &kb, 3).unwrap();
        assert_eq!(ids(&synth.example.pro_args), ["a1", "a2"]);
        assert_eq!(synth.example.response, parent.response);
        assert_eq!(synth.example.labels.coverage, ErrorClass::Full);
        assert_eq!(synth.example.labels.hallucination, ErrorClass::None);
        assert_eq!(synth.example.provenance, Provenance::SyntheticCoverage);
        assert_eq!(synth.example.parent_id(), Some("e"));
    }

    #[test]
    fn same_seed_same_output() {
        let kb = kb(&["a1", "a2", "a3", "a4"], &["b1", "b2", "b3"]);
        let parent = example("e", &[("a1", "x")], &[("b1", "y")], "resp");
        assert_eq!(
            make_synthetic_coverage(&parent, &kb, 11).unwrap(),
            make_synthetic_coverage(&parent, &kb, 11).unwrap()
        );
        assert_eq!(
            make_synthetic_hallucination(&parent, 11).unwrap(),
            make_synthetic_hallucination(&parent, 11).unwrap()
        );
    }

    #[test]
    fn no_unused_arguments_is_an_error() {
        let kb = kb(&["a1"], &["b1"]);
        let parent = example("e", &[("a1", "x")], &[("b1", "y")], "resp");
        assert!(make_synthetic_coverage(&parent, &kb, 0).is_err());
    }

    #[test]
    fn hallucination_removes_one_argument() {
        let parent = example("e", &[("a1", "x"), ("a2", "z")], &[("b1", "y")], "resp");
        let mut removed = std::collections::BTreeSet::new();
        for seed in 0..40 {
            let synth = make_synthetic_hallucination(&parent, seed).unwrap();
            assert_eq!(synth.example.argument_count(), 2);
            assert_eq!(synth.example.labels.hallucination, ErrorClass::Full);
            assert_eq!(synth.example.labels.coverage, ErrorClass::None);
            removed.insert(synth.edit.removed.unwrap().id);
        }
        assert_eq!(removed.len(), 3, "every argument is eligible");
    }

    #[test]
    fn removal_may_empty_a_perspective() {
        let parent = example("e", &[("a1", "x")], &[("b1", "y")], "resp");
        let emptied: Vec<_> = (0..20)
            .map(|s| make_synthetic_hallucination(&parent, s).unwrap().edit.emptied_perspective)
            .collect();
        assert!(emptied.contains(&Some(Perspective::Pro)));
        assert!(emptied.iter().all(Option::is_some));
        let single = example("e", &[("a1", "x")], &[], "resp");
        assert!(make_synthetic_hallucination(&single, 0).is_err());
    }

    #[test]
    fn only_error_free_inputs() {
        let kb = kb(&["a1", "a2"], &["b1"]);
        let mut parent = example("e", &[("a1", "x")], &[("b1", "y")], "resp");
        parent.labels.coverage = ErrorClass::Full;
        assert!(make_synthetic_coverage(&parent, &kb, 0).is_err());
        assert!(make_synthetic_hallucination(&parent, 0).is_err());
    }

    #[test]
    fn corpus_enumerates_variants() {
        let kb = kb(&["a1", "a2"], &["b1", "b2"]);
        let full = example("e1", &[("a1", "x")], &[("b1", "y")], "resp");
        let saturated = example("e2", &[("a1", "x"), ("a2", "x")], &[("b1", "y"), ("b2", "y")], "resp");
        let corpus = generate_synthetic_corpus(&[full.clone()], &kb, 5);
        assert_eq!(corpus.examples.len(), 3);
        let kinds: Vec<_> = corpus.examples.iter().map(|e| e.provenance).collect();
        assert_eq!(
            kinds,
            [
                Provenance::SyntheticCoverage,
                Provenance::SyntheticHallucination,
                Provenance::SyntheticBoth
            ]
        );
        let both = &corpus.examples[2];
        assert_eq!(both.argument_count(), 2);
        assert_ne!(ids(&both.pro_args).into_iter().chain(ids(&both.con_args)).collect::<Vec<_>>(), ["a1", "b1"]);

        let corpus = generate_synthetic_corpus(&[saturated], &kb, 5);
        assert_eq!(corpus.examples.len(), 1);
        assert_eq!(corpus.examples[0].provenance, Provenance::SyntheticHallucination);
        assert_eq!(corpus.skipped.len(), 2);

        assert_eq!(
            generate_synthetic_corpus(&[full.clone()], &kb, 5),
            generate_synthetic_corpus(&[full], &kb, 5)
        );
    }

    #[test]
    fn paraphrased_flag_is_inherited() {
        let kb = kb(&["a1", "a2"], &["b1"]);
        let mut parent = example("e", &[("a1", "x")], &[("b1", "y")], "resp");
        parent.paraphrased = true;
        for ex in generate_synthetic_corpus(&[parent], &kb, 1).examples {
            assert!(ex.paraphrased);
        }
    }

    #[test]
    fn annotations_follow_the_edit() {
        let kb = kb(&["a1", "a2"], &["b1"]);
        let mut parent = example("e", &[("a1", "x")], &[("b1", "y")], "x then y");
        parent.annotations = Some(SpanAnnotations {
            covered_spans: vec![
                ArgumentSpan { argument_id: "a1".into(), span: Span::new(0, 1) },
                ArgumentSpan { argument_id: "b1".into(), span: Span::new(7, 8) },
            ],
            ..Default::default()
        });
        let cov = make_synthetic_coverage(&parent, &kb, 0).unwrap().example;
        let ann = cov.annotations.as_ref().unwrap();
        assert_eq!(ann.uncovered_argument_spans[0].argument_id, "a2");
        assert_eq!(ann.uncovered_argument_spans[0].span, Span::new(0, 9));
        cov.validate().unwrap();

        for seed in 0..10 {
            let hal = make_synthetic_hallucination(&parent, seed).unwrap();
            let removed = hal.edit.removed.unwrap().id;
            let ann = hal.example.annotations.as_ref().unwrap();
            assert_eq!(ann.covered_spans.len(), 1);
            let expected = if removed == "a1" { Span::new(0, 1) } else { Span::new(7, 8) };
            assert_eq!(ann.hallucinated_response_spans, [expected]);
            hal.example.validate().unwrap();
        }
    }
}
