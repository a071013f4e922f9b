//! UniMorph feature bundles and their decomposition into categories.

use alloc::borrow::ToOwned;
use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

use crate::conllu::Corpus;
use crate::index::Indexer;

/// Synthetic category receiving every value missing from the table.
pub const UNK_CATEGORY: &str = "UNK";

const UNIMORPH_TABLE: &str = include_str!("../data/unimorph_categories.tsv");

#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum BundleError {
    #[error("empty feature bundle")]
    Empty,
    #[error("empty feature value at position {0} in `{1}`")]
    EmptyValue(usize, String),
}

#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum TableError {
    #[error("category table line {0}: expected `value<TAB>category`")]
    Malformed(usize),
    #[error("category table line {line}: value `{value}` already belongs to `{category}`")]
    Duplicate {
        line: usize,
        value: String,
        category: String,
    },
}

/// An ordered list of feature values such as `N;NOM;PL`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FeatureBundle {
    text: String,
}

impl FeatureBundle {
    pub fn parse(text: &str) -> Result<Self, BundleError> {
        if text.is_empty() {
            return Err(BundleError::Empty);
        }
        if let Some(position) = text.split(';').position(str::is_empty) {
            return Err(BundleError::EmptyValue(position, text.to_owned()));
        }
        Ok(FeatureBundle {
            text: text.to_owned(),
        })
    }

    pub fn from_values<S: AsRef<str>>(values: &[S]) -> Result<Self, BundleError> {
        let joined = values
            .iter()
            .map(AsRef::as_ref)
            .collect::<Vec<_>>()
            .join(";");
        Self::parse(&joined)
    }

    pub fn canonical_text(&self) -> &str {
        &self.text
    }

    pub fn values(&self) -> impl Iterator<Item = &str> {
        self.text.split(';')
    }
}

impl core::fmt::Display for FeatureBundle {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(&self.text)
    }
}

/// Maps feature values to morphological categories.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CategoryTable {
    categories: Indexer<String>,
    values: BTreeMap<String, usize>,
}

impl CategoryTable {
    /// A table covering nothing: every value decomposes under `UNK`.
    pub fn empty() -> Self {
        Self::default()
    }

    /// The UniMorph dimensions-of-meaning table shipped with the crate.
    pub fn unimorph() -> Self {
        Self::from_tsv(UNIMORPH_TABLE).expect("bundled category table is well-formed")
    }

    /// Reads `value<TAB>category` lines; blank lines and `#` comments are
    /// skipped.
    pub fn from_tsv(text: &str) -> Result<Self, TableError> {
        let mut table = Self::empty();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split('\t');
            let (Some(value), Some(category), None) = (parts.next(), parts.next(), parts.next())
            else {
                return Err(TableError::Malformed(i + 1));
            };
            if value.is_empty() || category.is_empty() {
                return Err(TableError::Malformed(i + 1));
            }
            if let Some(existing) = table.category_of_known(value) {
                return Err(TableError::Duplicate {
                    line: i + 1,
                    value: value.to_owned(),
                    category: existing.to_owned(),
                });
            }
            table.insert(value, category);
        }
        Ok(table)
    }

    pub fn insert(&mut self, value: &str, category: &str) {
        let c = self.categories.insert(category.to_owned());
        self.values.insert(value.to_owned(), c);
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (value, &c) in &self.values {
            out.push_str(value);
            out.push('\t');
            out.push_str(&self.categories.items()[c]);
            out.push('\n');
        }
        out
    }

    pub fn categories(&self) -> &[String] {
        self.categories.items()
    }

    fn category_of_known(&self, value: &str) -> Option<&str> {
        self.values
            .get(value)
            .map(|&c| self.categories.items()[c].as_str())
    }

    /// Category of a value. Composite values such as `IN+ESS` resolve when all
    /// components share one category; anything else is `UNK`.
    pub fn category_of(&self, value: &str) -> &str {
        if let Some(category) = self.category_of_known(value) {
            return category;
        }
        if value.contains('+') {
            let mut parts = value.split('+').map(|part| self.category_of_known(part));
            if let Some(Some(first)) = parts.next() {
                if parts.all(|c| c == Some(first)) {
                    return first;
                }
            }
        }
        UNK_CATEGORY
    }
}

/// A bundle split per category. Categories not listed take the value None.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Decomposition {
    values: BTreeMap<String, (String, usize)>,
    /// `(category, value)` pairs dropped because the category was already
    /// filled by an earlier value of the bundle.
    pub conflicts: Vec<(String, String)>,
}

impl Decomposition {
    /// The value for `category`, or `None` when the bundle does not use it.
    pub fn get(&self, category: &str) -> Option<&str> {
        self.values.get(category).map(|(v, _)| v.as_str())
    }

    pub fn categories(&self) -> impl Iterator<Item = &str> {
        self.values.keys().map(String::as_str)
    }

    /// Rebuilds a bundle from the retained values in their original order.
    pub fn recompose(&self) -> Option<FeatureBundle> {
        let mut values: Vec<_> = self.values.values().collect();
        values.sort_by_key(|(_, position)| *position);
        let values: Vec<&str> = values.into_iter().map(|(v, _)| v.as_str()).collect();
        FeatureBundle::from_values(&values).ok()
    }
}

pub fn decompose(bundle: &FeatureBundle, table: &CategoryTable) -> Decomposition {
    let mut decomposition = Decomposition::default();
    for (position, value) in bundle.values().enumerate() {
        let category = table.category_of(value);
        if let Some((kept, _)) = decomposition.values.get(category) {
            log::warn!(
                "bundle `{bundle}`: value `{value}` conflicts with `{kept}` in category {category}; keeping the first"
            );
            decomposition
                .conflicts
                .push((category.to_owned(), value.to_owned()));
            continue;
        }
        decomposition
            .values
            .insert(category.to_owned(), (value.to_owned(), position));
    }
    decomposition
}

/// Distinct bundles, feature values and categories of a corpus.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TagInventory {
    pub bundles: Indexer<String>,
    pub features: BTreeSet<String>,
    /// Values seen per used category; the None value is implicit.
    pub categories: BTreeMap<String, BTreeSet<String>>,
}

impl TagInventory {
    pub fn bundle_count(&self) -> usize {
        self.bundles.len()
    }

    pub fn feature_count(&self) -> usize {
        self.features.len()
    }

    pub fn category_count(&self) -> usize {
        self.categories.len()
    }
}

pub fn build_inventory(corpus: &Corpus, table: &CategoryTable) -> TagInventory {
    let mut inventory = TagInventory::default();
    for bundle in corpus.tokens().filter_map(|t| t.bundle()) {
        inventory.bundles.insert(bundle.canonical_text().to_owned());
        for value in bundle.values() {
            inventory.features.insert(value.to_owned());
            inventory
                .categories
                .entry(table.category_of(value).to_owned())
                .or_default()
                .insert(value.to_owned());
        }
    }
    inventory
}
