use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{read_json, Example, KnowledgeBase};
use crate::{Error, Result};

const PROCON_SPLITS: &str = include_str!("../../data/procon_splits.json");

/// Topic ids per dataset split.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitAssignment {
    pub train: BTreeSet<String>,
    pub dev: BTreeSet<String>,
    pub test: BTreeSet<String>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TopicSplits {
    pub train: Vec<Example>,
    pub dev: Vec<Example>,
    pub test: Vec<Example>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Split {
    Train,
    Dev,
    Test,
}

impl SplitAssignment {
    /// The 9/28/35 assignment of the 72 ProCon topics, keyed by topic name.
    pub fn procon_default() -> Self {
        let assignment: Self =
            serde_json::from_str(PROCON_SPLITS).expect("bundled split file parses");
        assignment.validate().expect("bundled split file is disjoint");
        assignment
    }

    pub fn load(path: &Path) -> Result<Self> {
        let assignment: Self = read_json(path)?;
        assignment.validate()?;
        Ok(assignment)
    }

    pub fn validate(&self) -> Result<()> {
        self.lookup().map(|_| ())
    }

    /// Every topic of the knowledge base must be assigned.
    pub fn check_covers(&self, kb: &KnowledgeBase) -> Result<()> {
        let lookup = self.lookup()?;
        match kb.topics.iter().find(|t| !lookup.contains_key(t.id.as_str())) {
            Some(topic) => Err(Error::UnknownReference {
                kind: "topic in split assignment",
                id: topic.id.clone(),
            }),
            None => Ok(()),
        }
    }

    fn lookup(&self) -> Result<HashMap<&str, Split>> {
        let mut lookup = HashMap::new();
        for (split, topics) in [
            (Split::Train, &self.train),
            (Split::Dev, &self.dev),
            (Split::Test, &self.test),
        ] {
            for topic in topics {
                if lookup.insert(topic.as_str(), split).is_some() {
                    return Err(Error::validation(
                        "split assignment",
                        format!("topic `{topic}` assigned to more than one split"),
                    ));
                }
            }
        }
        Ok(lookup)
    }
}

pub fn split_topics(assignment: &SplitAssignment, examples: &[Example]) -> Result<TopicSplits> {
    let lookup = assignment.lookup()?;
    let mut splits = TopicSplits::default();
    for example in examples {
        let target = match lookup.get(example.topic_id.as_str()) {
            Some(Split::Train) => &mut splits.train,
            Some(Split::Dev) => &mut splits.dev,
            Some(Split::Test) => &mut splits.test,
            None => {
                return Err(Error::UnknownReference {
                    kind: "topic in split assignment",
                    id: example.topic_id.clone(),
                })
            }
        };
        target.push(example.clone());
    }
    Ok(splits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::fixtures::example;

    #[test]
    fn bundled_assignment_has_paper_sizes() {
        let a = SplitAssignment::procon_default();
        assert_eq!((a.train.len(), a.dev.len(), a.test.len()), (9, 28, 35));
        assert!(a.test.contains("Abortion"));
        assert!(a.train.contains("GMOs (Genetically Modified Organisms)"));
    }

    #[test]
    fn partitions_examples_over_all_72_topics() {
        let a = SplitAssignment::procon_default();
        let examples: Vec<Example> = a
            .train
            .iter()
            .chain(&a.dev)
            .chain(&a.test)
            .enumerate()
            .map(|(i, topic)| {
                let mut ex = example(&format!("e{i}"), &[], &[], "");
                ex.topic_id = topic.clone();
                ex
            })
            .collect();
        let splits = split_topics(&a, &examples).unwrap();
        assert_eq!(
            (splits.train.len(), splits.dev.len(), splits.test.len()),
            (9, 28, 35)
        );
        let topics = |v: &[Example]| v.iter().map(|e| e.topic_id.clone()).collect::<BTreeSet<_>>();
        assert!(topics(&splits.train).is_disjoint(&topics(&splits.test)));
        assert!(topics(&splits.dev).is_disjoint(&topics(&splits.test)));
    }

    #[test]
    fn unassigned_topic_is_named() {
        let mut ex = example("e", &[], &[], "");
        ex.topic_id = "Nowhere".into();
        let err = split_topics(&SplitAssignment::procon_default(), &[ex]).unwrap_err();
        assert!(err.to_string().contains("Nowhere"));
    }

    #[test]
    fn empty_examples_give_empty_splits() {
        let splits = split_topics(&SplitAssignment::procon_default(), &[]).unwrap();
        assert_eq!(splits, TopicSplits::default());
    }

    #[test]
    fn overlapping_assignment_is_rejected() {
        let mut a = SplitAssignment::default();
        a.train.insert("x".into());
        a.test.insert("x".into());
        assert!(a.validate().is_err());
    }
}
