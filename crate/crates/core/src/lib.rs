//! Contextual lemmatization and morphological analysis.
//!
//! Lemmatization is cast as classification over *lemma rules* (a casing
//! script plus a prefix/suffix edit script), morphological analysis as
//! classification over whole UniMorph feature bundles regularized by
//! per-category auxiliary heads. The crate is `no_std` and only needs `alloc`;
//! file formats and the command-line front end live in the `udmorph` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod conllu;
pub mod embeddings;
pub mod ensemble;
pub mod index;
pub mod lemma_rules;
pub mod merge;
pub mod metrics;
pub mod model;
pub mod tagset;

pub use conllu::{Corpus, Sentence, Token};
pub use lemma_rules::{apply_rule, induce_rule, is_applicable, LemmaRule};
pub use tagset::{CategoryTable, FeatureBundle};
