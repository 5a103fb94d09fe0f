//! Hallucination and coverage error detection for responses generated from
//! retrieved pro/con arguments.
//!
//! The crate is organised around the pipeline it supports:
//!
//! - [`corpus`]: knowledge bases, labeled examples, topic splits and the four
//!   evaluation slices.
//! - [`textproc`]: word tokenization, stop words, stemming and subword merging.
//! - [`rouge`]: ROUGE-1 based example- and word-level scores.
//! - [`salience`]: scores derived from token-to-token attribution maps.
//! - [`classifier`]: prompt serialization and label-likelihood scoring against
//!   an external model.
//! - [`synth`]: synthetic coverage and hallucination errors.
//! - [`stats`]: ROC AUC, standard errors, paired permutation tests and
//!   annotator agreement.
//! - [`scores`] and [`report`]: the file formats exchanged by the CLI.
//! - [`demo`]: a bundled miniature knowledge base and copy-like generator.

pub mod classifier;
pub mod corpus;
pub mod demo;
pub mod error;
pub mod report;
pub mod rouge;
pub mod salience;
pub mod scores;
pub mod seed;
pub mod stats;
pub mod synth;
pub mod textproc;

pub use error::{Error, Result};
