//! Merging same-language corpora and restricting a merged model to the
//! labels of one target treebank.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::ops::Range;

use thiserror::Error;

use crate::conllu::Corpus;
use crate::lemma_rules::rule_inventory;
use crate::model::vocab::UNK;
use crate::model::Vocabulary;

#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum MergeError {
    #[error("no corpora to merge")]
    NoCorpora,
    #[error("`{treebank}` is {found}, expected {expected}")]
    MixedLanguages {
        treebank: String,
        expected: String,
        found: String,
    },
    #[error("mask for `{treebank}` has no {what} in the model vocabulary")]
    EmptyMask {
        treebank: String,
        what: &'static str,
    },
    #[error("mask {what} `{label}` is not in the model vocabulary")]
    UnknownLabel { what: &'static str, label: String },
    #[error("mask file line {line}: {message}")]
    Syntax { line: usize, message: String },
}

/// Concatenated corpora with the sentence range each member contributed.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MergedCorpus {
    pub corpus: Corpus,
    pub provenance: Vec<(String, Range<usize>)>,
}

impl MergedCorpus {
    /// Treebank a merged sentence came from.
    pub fn source_of(&self, sentence: usize) -> Option<&str> {
        self.provenance
            .iter()
            .find(|(_, range)| range.contains(&sentence))
            .map(|(id, _)| id.as_str())
    }
}

/// Concatenates corpora of one language in input order. The result's
/// treebank id is `<language>-merged`.
pub fn merge_corpora(corpora: &[Corpus]) -> Result<MergedCorpus, MergeError> {
    let first = corpora.first().ok_or(MergeError::NoCorpora)?;
    let language = first.language_id.clone();
    let mut sentences = Vec::with_capacity(corpora.iter().map(|c| c.sentences.len()).sum());
    let mut provenance = Vec::with_capacity(corpora.len());
    for corpus in corpora {
        if corpus.language_id != language {
            return Err(MergeError::MixedLanguages {
                treebank: corpus.treebank_id.clone(),
                expected: language,
                found: corpus.language_id.clone(),
            });
        }
        let start = sentences.len();
        sentences.extend(corpus.sentences.iter().cloned());
        provenance.push((corpus.treebank_id.clone(), start..sentences.len()));
    }
    let mut corpus = Corpus::new(format!("{language}-merged"), sentences);
    corpus.language_id = language;
    Ok(MergedCorpus { corpus, provenance })
}

/// Lemma rules and feature bundles a target treebank may be assigned.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RestrictionMask {
    pub rules: BTreeSet<String>,
    pub bundles: BTreeSet<String>,
    pub source: String,
}

impl RestrictionMask {
    /// Every rule and bundle of the vocabulary.
    pub fn full(vocab: &Vocabulary, source: &str) -> Self {
        let real = |items: &[String]| items.iter().filter(|i| *i != UNK).cloned().collect();
        RestrictionMask {
            rules: real(vocab.rules.items()),
            bundles: real(vocab.bundles.items()),
            source: source.to_string(),
        }
    }

    /// Checks that the mask is non-empty and within `vocab`.
    pub fn check(&self, vocab: &Vocabulary) -> Result<(), MergeError> {
        for (what, set, items) in [
            ("lemma rule", &self.rules, &vocab.rules),
            ("bundle", &self.bundles, &vocab.bundles),
        ] {
            if set.is_empty() {
                return Err(MergeError::EmptyMask {
                    treebank: self.source.clone(),
                    what,
                });
            }
            if let Some(label) = set
                .iter()
                .find(|l| *l == UNK || items.get(l.as_str()).is_none())
            {
                return Err(MergeError::UnknownLabel {
                    what,
                    label: label.clone(),
                });
            }
        }
        Ok(())
    }

    /// Mask file text: optional `# source = ...`, then `[rules]` and
    /// `[bundles]` sections with one canonical string per line.
    pub fn to_text(&self) -> String {
        let mut out = format!("# source = {}\n[rules]\n", self.source);
        for rule in &self.rules {
            out.push_str(rule);
            out.push('\n');
        }
        out.push_str("[bundles]\n");
        for bundle in &self.bundles {
            out.push_str(bundle);
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, MergeError> {
        let mut mask = RestrictionMask {
            rules: BTreeSet::new(),
            bundles: BTreeSet::new(),
            source: String::new(),
        };
        let mut section: Option<bool> = None;
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            if let Some(source) = line.strip_prefix("# source = ") {
                mask.source = source.trim().to_string();
                continue;
            }
            if line.starts_with('#') {
                continue;
            }
            // entries are not trimmed: a rule may insert a trailing space
            let entry = line.strip_suffix('\r').unwrap_or(line);
            match entry.trim() {
                "[rules]" => section = Some(true),
                "[bundles]" => section = Some(false),
                _ => match section {
                    Some(true) => {
                        mask.rules.insert(entry.to_string());
                    }
                    Some(false) => {
                        mask.bundles.insert(entry.to_string());
                    }
                    None => {
                        return Err(MergeError::Syntax {
                            line: i + 1,
                            message: "entry before a [rules] or [bundles] header".into(),
                        })
                    }
                },
            }
        }
        Ok(mask)
    }
}

/// Mask of the rules and bundles occurring in `target`'s training data,
/// intersected with the merged vocabulary.
pub fn build_mask(
    merged_vocab: &Vocabulary,
    target: &Corpus,
) -> Result<RestrictionMask, MergeError> {
    let rules: BTreeSet<String> = rule_inventory(target)
        .entries
        .into_iter()
        .map(|(rule, _)| rule)
        .filter(|rule| merged_vocab.rules.get(rule.as_str()).is_some())
        .collect();
    let bundles: BTreeSet<String> = target
        .tokens()
        .filter_map(|t| t.bundle())
        .map(|b| b.canonical_text().to_string())
        .filter(|b| merged_vocab.bundles.get(b.as_str()).is_some())
        .collect();
    let mask = RestrictionMask {
        rules,
        bundles,
        source: target.treebank_id.clone(),
    };
    mask.check(merged_vocab)?;
    Ok(mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conllu::Sentence;
    use crate::lemma_rules::induce_rule;
    use crate::tagset::{CategoryTable, FeatureBundle};
    use alloc::vec;

    fn corpus(id: &str, sentences: &[&[(&str, &str, &str)]]) -> Corpus {
        Corpus::new(
            id,
            sentences
                .iter()
                .map(|rows| {
                    Sentence::from_tokens(rows.iter().map(|(f, l, b)| {
                        (
                            f.to_string(),
                            Some(l.to_string()),
                            Some(FeatureBundle::parse(b).unwrap()),
                        )
                    }))
                })
                .collect(),
        )
    }

    fn two_treebanks() -> (Corpus, Corpus) {
        let a = corpus(
            "Toy-A",
            &[
                &[("Dogs", "dog", "N;PL"), ("bark", "bark", "V;PRS")],
                &[("cats", "cat", "N;PL"), (".", ".", "PUNCT")],
                &[("ran", "run", "V;PST")],
            ],
        );
        let b = corpus(
            "Toy-B",
            &[
                &[("geese", "goose", "N;PL")],
                &[("walked", "walk", "V;PST"), ("!", "!", "PUNCT")],
                &[("A", "a", "DET")],
                &[("dogs", "dog", "N;PL")],
                &[("sang", "sing", "V;PST")],
            ],
        );
        (a, b)
    }

    #[test]
    fn single_corpus_is_identity() {
        let (a, _) = two_treebanks();
        let merged = merge_corpora(core::slice::from_ref(&a)).unwrap();
        assert_eq!(merged.corpus.sentences, a.sentences);
        assert_eq!(merged.corpus.language_id, "Toy");
        assert_eq!(merged.provenance, vec![("Toy-A".to_string(), 0..3)]);
    }

    #[test]
    fn concatenates_in_order() {
        let (a, b) = two_treebanks();
        let merged = merge_corpora(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(merged.corpus.sentences.len(), 8);
        assert_eq!(merged.corpus.sentences[..3], a.sentences[..]);
        assert_eq!(merged.corpus.sentences[3..], b.sentences[..]);
        assert_eq!(
            merged.corpus.token_count(),
            a.token_count() + b.token_count()
        );
        assert_eq!(merged.source_of(2), Some("Toy-A"));
        assert_eq!(merged.source_of(3), Some("Toy-B"));
        assert_eq!(merged.source_of(8), None);
        assert_eq!(merged.corpus.treebank_id, "Toy-merged");
    }

    #[test]
    fn mixed_languages_rejected() {
        let (a, _) = two_treebanks();
        let other = corpus("Other-X", &[&[("x", "x", "N")]]);
        assert!(matches!(
            merge_corpora(&[a, other]),
            Err(MergeError::MixedLanguages { .. })
        ));
        assert_eq!(merge_corpora(&[]), Err(MergeError::NoCorpora));
    }

    #[test]
    fn merged_vocabulary_is_union_of_members() {
        let (a, b) = two_treebanks();
        let table = CategoryTable::unimorph();
        let merged = merge_corpora(&[a.clone(), b.clone()]).unwrap();
        let vocab = Vocabulary::build(&merged.corpus, &table, 2).unwrap();
        let va = Vocabulary::build(&a, &table, 2).unwrap();
        let vb = Vocabulary::build(&b, &table, 2).unwrap();
        let union: BTreeSet<&String> = va.rules.items().iter().chain(vb.rules.items()).collect();
        let got: BTreeSet<&String> = vocab.rules.items().iter().collect();
        assert_eq!(got, union);
    }

    #[test]
    fn target_equal_to_merge_covers_vocabulary() {
        let (a, b) = two_treebanks();
        let merged = merge_corpora(&[a, b]).unwrap();
        let vocab = Vocabulary::build(&merged.corpus, &CategoryTable::unimorph(), 2).unwrap();
        let mask = build_mask(&vocab, &merged.corpus).unwrap();
        assert_eq!(mask, RestrictionMask::full(&vocab, "Toy-merged"));
    }

    #[test]
    fn mask_matches_brute_force_inventory() {
        let (a, b) = two_treebanks();
        let merged = merge_corpora(&[a.clone(), b.clone()]).unwrap();
        let vocab = Vocabulary::build(&merged.corpus, &CategoryTable::unimorph(), 2).unwrap();
        for target in [&a, &b] {
            let mut rules = BTreeSet::new();
            let mut bundles = BTreeSet::new();
            for sentence in &target.sentences {
                for token in &sentence.tokens {
                    rules.insert(
                        induce_rule(token.form(), token.lemma().unwrap())
                            .unwrap()
                            .to_string(),
                    );
                    bundles.insert(token.bundle().unwrap().canonical_text().to_string());
                }
            }
            let mask = build_mask(&vocab, target).unwrap();
            assert_eq!(mask.rules, rules);
            assert_eq!(mask.bundles, bundles);
            assert_eq!(mask.source, target.treebank_id);
        }
    }

    #[test]
    fn punctuation_only_target() {
        let (a, b) = two_treebanks();
        let merged = merge_corpora(&[a, b]).unwrap();
        let vocab = Vocabulary::build(&merged.corpus, &CategoryTable::unimorph(), 2).unwrap();
        let punct = corpus("Toy-P", &[&[(".", ".", "PUNCT"), ("!", "!", "PUNCT")]]);
        let mask = build_mask(&vocab, &punct).unwrap();
        assert_eq!(mask.bundles.len(), 1);
        assert_eq!(mask.rules.len(), 1);
    }

    #[test]
    fn degenerate_target_rejected() {
        let (a, _) = two_treebanks();
        let vocab = Vocabulary::build(&a, &CategoryTable::unimorph(), 2).unwrap();
        let alien = corpus("Toy-Z", &[&[("foo", "bar", "ADV")]]);
        assert!(matches!(
            build_mask(&vocab, &alien),
            Err(MergeError::EmptyMask { .. })
        ));
    }

    #[test]
    fn text_roundtrip() {
        let (a, _) = two_treebanks();
        let vocab = Vocabulary::build(&a, &CategoryTable::unimorph(), 2).unwrap();
        let mask = build_mask(&vocab, &a).unwrap();
        let parsed = RestrictionMask::from_text(&mask.to_text()).unwrap();
        assert_eq!(parsed, mask);
        assert!(parsed.check(&vocab).is_ok());
        let mut bad = mask.clone();
        bad.rules.insert("↑0;ahello".into());
        assert!(matches!(
            bad.check(&vocab),
            Err(MergeError::UnknownLabel { .. })
        ));
        assert!(matches!(
            RestrictionMask::from_text("dangling\n[rules]\n"),
            Err(MergeError::Syntax { line: 1, .. })
        ));
    }
}
