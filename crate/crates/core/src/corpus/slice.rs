use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{read_json, write_json, ErrorClass, ErrorType, Example, Provenance};
use crate::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SliceKind {
    FullOrganic,
    UnparaphrasedSynthetic,
    ParaphrasedSynthetic,
    AmbiguousOrganic,
}

impl SliceKind {
    pub const ALL: [SliceKind; 4] = [
        SliceKind::FullOrganic,
        SliceKind::UnparaphrasedSynthetic,
        SliceKind::ParaphrasedSynthetic,
        SliceKind::AmbiguousOrganic,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            SliceKind::FullOrganic => "full_organic",
            SliceKind::UnparaphrasedSynthetic => "unparaphrased_synthetic",
            SliceKind::ParaphrasedSynthetic => "paraphrased_synthetic",
            SliceKind::AmbiguousOrganic => "ambiguous_organic",
        }
    }
}

impl fmt::Display for SliceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Error-free examples against erroneous ones for one error type.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSlice {
    pub kind: SliceKind,
    pub error_type: ErrorType,
    pub error_free: Vec<Example>,
    pub with_error: Vec<Example>,
}

impl EvalSlice {
    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    /// `(example, is_error)` pairs, error-free examples first.
    pub fn labeled(&self) -> impl Iterator<Item = (&Example, bool)> {
        self.error_free
            .iter()
            .map(|e| (e, false))
            .chain(self.with_error.iter().map(|e| (e, true)))
    }

    pub fn is_empty(&self) -> bool {
        self.error_free.is_empty() && self.with_error.is_empty()
    }
}

/// `Some(false)` when the example is on the error-free side of the slice,
/// `Some(true)` when it is on the error side, `None` when excluded.
pub fn slice_membership(example: &Example, kind: SliceKind, error_type: ErrorType) -> Option<bool> {
    let organic = example.provenance == Provenance::Organic;
    let want_paraphrased = kind == SliceKind::ParaphrasedSynthetic;

    if organic && example.labels.is_error_free() {
        return (example.paraphrased == want_paraphrased).then_some(false);
    }
    if example.paraphrased != want_paraphrased {
        return None;
    }
    let class = example.labels.get(error_type);
    let on_error_side = match kind {
        SliceKind::FullOrganic => organic && class == ErrorClass::Full,
        SliceKind::UnparaphrasedSynthetic | SliceKind::ParaphrasedSynthetic => {
            !organic && class == ErrorClass::Full
        }
        SliceKind::AmbiguousOrganic => organic && class == ErrorClass::Ambiguous,
    };
    on_error_side.then_some(true)
}

pub fn slice_test_set(examples: &[Example], kind: SliceKind, error_type: ErrorType) -> EvalSlice {
    let mut slice = EvalSlice {
        kind,
        error_type,
        error_free: Vec::new(),
        with_error: Vec::new(),
    };
    for example in examples {
        match slice_membership(example, kind, error_type) {
            Some(false) => slice.error_free.push(example.clone()),
            Some(true) => slice.with_error.push(example.clone()),
            None => {}
        }
    }
    slice
}
