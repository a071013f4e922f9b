use alloc::borrow::ToOwned;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::conllu::{Corpus, Token};
use crate::index::Indexer;
use crate::lemma_rules::{induce_rule, lowercase, rule_inventory, LemmaRule};
use crate::tagset::{build_inventory, decompose, CategoryTable};

use super::ModelError;

/// Reserved index 0 of every map.
pub const UNK: &str = "<unk>";
/// Reserved index 1 of every category map: the category is not used.
pub const NONE: &str = "<none>";
pub const UNK_INDEX: usize = 0;
pub const NONE_INDEX: usize = 1;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CategoryVocab {
    pub name: String,
    pub values: Indexer<String>,
}

/// Label and input vocabularies of a tagger.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    pub words: Indexer<String>,
    pub chars: Indexer<String>,
    pub ngrams: Indexer<String>,
    pub rules: Indexer<String>,
    pub bundles: Indexer<String>,
    pub categories: Vec<CategoryVocab>,
    parsed_rules: Vec<Option<LemmaRule>>,
}

/// Per-token gold label indices. `None` means the token carries no gold
/// annotation for that head.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GoldLabels {
    pub rule: Option<usize>,
    pub bundle: Option<usize>,
    /// One value index per category vocabulary; empty when `bundle` is None.
    pub categories: Vec<usize>,
}

fn reserved() -> Indexer<String> {
    let mut indexer = Indexer::new();
    indexer.insert(UNK.to_owned());
    indexer
}

/// Boundary character n-grams of a word: `^a`, `^ab`, ..., `b$`, `ab$`, ...
pub fn boundary_ngrams(form: &str, max_n: usize) -> Vec<String> {
    let chars: Vec<char> = lowercase(form).chars().collect();
    let mut grams = Vec::with_capacity(2 * max_n);
    for n in 1..=max_n.min(chars.len()) {
        let mut prefix = String::from("^");
        prefix.extend(&chars[..n]);
        grams.push(prefix);
        let mut suffix: String = chars[chars.len() - n..].iter().collect();
        suffix.push('$');
        grams.push(suffix);
    }
    grams
}

impl Vocabulary {
    /// Builds every vocabulary from gold-annotated training data.
    pub fn build(
        corpus: &Corpus,
        table: &CategoryTable,
        ngram_max: usize,
    ) -> Result<Self, ModelError> {
        if corpus.token_count() == 0 {
            return Err(ModelError::EmptyCorpus);
        }
        let mut words = reserved();
        let mut chars = reserved();
        let mut ngrams = reserved();
        for token in corpus.tokens() {
            words.insert(token.form().to_owned());
            for c in token.form().chars() {
                chars.insert(c.to_string());
            }
            for gram in boundary_ngrams(token.form(), ngram_max) {
                ngrams.insert(gram);
            }
        }

        let mut rules = reserved();
        for (rule, _) in rule_inventory(corpus).entries {
            rules.insert(rule);
        }

        let inventory = build_inventory(corpus, table);
        let mut bundles = reserved();
        for bundle in inventory.bundles.items() {
            bundles.insert(bundle.clone());
        }
        let categories = inventory
            .categories
            .into_iter()
            .map(|(name, values)| {
                let mut indexer = reserved();
                indexer.insert(NONE.to_owned());
                for value in values {
                    indexer.insert(value);
                }
                CategoryVocab {
                    name,
                    values: indexer,
                }
            })
            .collect();

        Self::from_parts(words, chars, ngrams, rules, bundles, categories)
    }

    /// Reassembles a vocabulary, checking reserved entries and rule syntax.
    pub fn from_parts(
        words: Indexer<String>,
        chars: Indexer<String>,
        ngrams: Indexer<String>,
        rules: Indexer<String>,
        bundles: Indexer<String>,
        categories: Vec<CategoryVocab>,
    ) -> Result<Self, ModelError> {
        for (name, indexer) in [
            ("words", &words),
            ("chars", &chars),
            ("ngrams", &ngrams),
            ("rules", &rules),
            ("bundles", &bundles),
        ] {
            if indexer.item(UNK_INDEX).map(String::as_str) != Some(UNK) {
                return Err(ModelError::Vocabulary(format!(
                    "{name}: index 0 must be {UNK}"
                )));
            }
        }
        for category in &categories {
            if category.values.item(UNK_INDEX).map(String::as_str) != Some(UNK)
                || category.values.item(NONE_INDEX).map(String::as_str) != Some(NONE)
            {
                return Err(ModelError::Vocabulary(format!(
                    "category {}: indices 0 and 1 must be {UNK} and {NONE}",
                    category.name
                )));
            }
        }
        let parsed_rules = rules
            .items()
            .iter()
            .enumerate()
            .map(|(i, text)| {
                if i == UNK_INDEX {
                    return Ok(None);
                }
                text.parse::<LemmaRule>()
                    .map(Some)
                    .map_err(|e| ModelError::Vocabulary(format!("rule `{text}`: {e}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Vocabulary {
            words,
            chars,
            ngrams,
            rules,
            bundles,
            categories,
            parsed_rules,
        })
    }

    /// Parsed rule at `index`; `None` for the reserved entry.
    pub fn rule(&self, index: usize) -> Option<&LemmaRule> {
        self.parsed_rules.get(index).and_then(Option::as_ref)
    }

    /// Parsed rules aligned with `rules`; entry 0 is `None`.
    pub(crate) fn parsed_rules(&self) -> &[Option<LemmaRule>] {
        &self.parsed_rules
    }

    /// Number of real (non-reserved) lemma rules.
    pub fn rule_count(&self) -> usize {
        self.rules.len() - 1
    }

    pub fn bundle_count(&self) -> usize {
        self.bundles.len() - 1
    }

    /// Same vocabulary without category maps (and hence without category
    /// heads once a model is rebuilt over it).
    pub fn without_categories(&self) -> Self {
        Vocabulary {
            categories: Vec::new(),
            ..self.clone()
        }
    }

    /// Resolves a token's gold labels. Labels missing from the vocabulary map
    /// to the reserved unknown index with a warning.
    pub fn gold_labels(&self, token: &Token, table: &CategoryTable) -> GoldLabels {
        let rule = token.lemma().map(|lemma| {
            let text = induce_rule(token.form(), lemma)
                .map(|r| r.to_string())
                .unwrap_or_default();
            self.rules.get(text.as_str()).unwrap_or_else(|| {
                log::warn!(
                    "unseen lemma rule `{text}` for `{}` mapped to {UNK}",
                    token.form()
                );
                UNK_INDEX
            })
        });
        let bundle = token.bundle().map(|bundle| {
            self.bundles
                .get(bundle.canonical_text())
                .unwrap_or_else(|| {
                    log::warn!("unseen feature bundle `{bundle}` mapped to {UNK}");
                    UNK_INDEX
                })
        });
        let categories = match token.bundle() {
            None => Vec::new(),
            Some(bundle) => {
                let decomposition = decompose(bundle, table);
                self.categories
                    .iter()
                    .map(|category| match decomposition.get(&category.name) {
                        None => NONE_INDEX,
                        Some(value) => category.values.get(value).unwrap_or(UNK_INDEX),
                    })
                    .collect()
            }
        };
        GoldLabels {
            rule,
            bundle,
            categories,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conllu::Sentence;
    use crate::tagset::FeatureBundle;
    use alloc::vec;

    fn corpus(rows: &[(&str, &str, &str)]) -> Corpus {
        let sentence = Sentence::from_tokens(rows.iter().map(|(f, l, b)| {
            (
                f.to_string(),
                Some(l.to_string()),
                Some(FeatureBundle::parse(b).unwrap()),
            )
        }));
        Corpus::new("Toy-V", vec![sentence])
    }

    #[test]
    fn identity_corpus_has_one_rule() {
        let c = corpus(&[("a", "a", "N"), ("Big", "big", "ADJ"), ("dog", "dog", "N")]);
        let vocab = Vocabulary::build(&c, &CategoryTable::unimorph(), 3).unwrap();
        assert_eq!(vocab.rules.items(), [UNK, "↓0;d¦"]);
        assert_eq!(vocab.rule_count(), 1);
        assert_eq!(vocab.bundle_count(), 2);
        assert_eq!(vocab.categories.len(), 1);
        assert_eq!(vocab.categories[0].values.items(), [UNK, NONE, "ADJ", "N"]);
    }

    #[test]
    fn matches_set_counts() {
        let rows = [
            ("dogs", "dog", "N;PL"),
            ("ran", "run", "V;PST"),
            ("cats", "cat", "N;PL"),
            ("The", "the", "DET"),
            ("ran", "run", "V;PST"),
            ("Bob", "Bob", "PROPN;SG"),
        ];
        let c = corpus(&rows);
        let vocab = Vocabulary::build(&c, &CategoryTable::unimorph(), 2).unwrap();
        let mut rules: Vec<String> = Vec::new();
        let mut bundles: Vec<&str> = Vec::new();
        for (f, l, b) in rows {
            let r = induce_rule(f, l).unwrap().to_string();
            if !rules.contains(&r) {
                rules.push(r);
            }
            if !bundles.contains(&b) {
                bundles.push(b);
            }
        }
        assert_eq!(vocab.rule_count(), rules.len());
        assert_eq!(vocab.bundle_count(), bundles.len());
        assert_eq!(vocab.words.len(), 1 + 5);
        let names: Vec<&str> = vocab.categories.iter().map(|c| c.name.as_str()).collect();
        assert_eq!(names, ["Number", "POS", "Tense"]);
    }

    #[test]
    fn gold_labels_resolve_categories() {
        let c = corpus(&[("dogs", "dog", "N;PL"), ("ran", "run", "V;PST")]);
        let table = CategoryTable::unimorph();
        let vocab = Vocabulary::build(&c, &table, 2).unwrap();
        let gold = vocab.gold_labels(&c.sentences[0].tokens[1], &table);
        assert_eq!(gold.rule, vocab.rules.get("↓0;d¦-+u→"));
        assert_eq!(gold.bundle, Some(2));
        // Number: None, POS: V, Tense: PST
        let names: Vec<&str> = vocab.categories.iter().map(|c| c.name.as_str()).collect();
        assert_eq!(names, ["Number", "POS", "Tense"]);
        assert_eq!(gold.categories[0], NONE_INDEX);
        assert_eq!(
            vocab.categories[1].values.item(gold.categories[1]).unwrap(),
            "V"
        );
        assert_eq!(
            vocab.categories[2].values.item(gold.categories[2]).unwrap(),
            "PST"
        );

        let unseen = Token::new(
            1,
            "geese",
            Some("goose".into()),
            Some(FeatureBundle::parse("N;PL;DEF").unwrap()),
        );
        let gold = vocab.gold_labels(&unseen, &table);
        assert_eq!(gold.rule, Some(UNK_INDEX));
        assert_eq!(gold.bundle, Some(UNK_INDEX));
    }

    #[test]
    fn empty_corpus_is_an_error() {
        let c = Corpus::new("Toy-V", vec![]);
        assert!(matches!(
            Vocabulary::build(&c, &CategoryTable::unimorph(), 2),
            Err(ModelError::EmptyCorpus)
        ));
    }

    #[test]
    fn ngrams() {
        assert_eq!(boundary_ngrams("Cat", 2), ["^c", "t$", "^ca", "at$"]);
        assert_eq!(boundary_ngrams("a", 3), ["^a", "a$"]);
    }
}
