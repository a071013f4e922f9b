//! Synthetic morphological language for tests.
//!
//! Sentences are `Det Noun Verb [Det Noun] .` with number agreement between
//! determiner, noun and present-tense verb. Some nouns have no plural
//! marking, so their number is only recoverable from context. One verb is
//! suppletive.
#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use udmorph_core::conllu::{Corpus, Sentence};
use udmorph_core::model::{EncoderKind, ModelConfig};
use udmorph_core::FeatureBundle;

const ONSETS: [&str; 10] = ["k", "t", "p", "m", "n", "s", "l", "r", "v", "d"];
const VOWELS: [&str; 4] = ["a", "o", "u", "e"];

pub struct Toy {
    nouns: Vec<String>,
    invariant_nouns: Vec<String>,
    verbs: Vec<String>,
}

fn stem(rng: &mut ChaCha8Rng, syllables: usize) -> String {
    (0..syllables)
        .map(|_| {
            format!(
                "{}{}",
                ONSETS.choose(rng).unwrap(),
                VOWELS.choose(rng).unwrap()
            )
        })
        .collect::<String>()
        + ONSETS.choose(rng).unwrap()
}

fn distinct(rng: &mut ChaCha8Rng, n: usize, taken: &mut Vec<String>) -> Vec<String> {
    let mut out = Vec::new();
    while out.len() < n {
        let syllables = rng.gen_range(1..=2);
        let s = stem(rng, syllables);
        if !taken.contains(&s) {
            taken.push(s.clone());
            out.push(s);
        }
    }
    out
}

type Row = (String, String, String);

impl Toy {
    pub fn new() -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut taken = Vec::new();
        Toy {
            nouns: distinct(&mut rng, 10, &mut taken),
            invariant_nouns: distinct(&mut rng, 4, &mut taken),
            verbs: distinct(&mut rng, 8, &mut taken),
        }
    }

    fn noun(&self, rng: &mut ChaCha8Rng, plural: bool, accusative: bool) -> Row {
        let invariant = rng.gen_bool(0.3);
        let stem = if invariant {
            self.invariant_nouns.choose(rng).unwrap()
        } else {
            self.nouns.choose(rng).unwrap()
        };
        let mut form = stem.clone();
        if plural && !invariant {
            form.push('i');
        }
        if accusative {
            form.push('m');
        }
        let case = if accusative { "ACC" } else { "NOM" };
        let number = if plural { "PL" } else { "SG" };
        (form, stem.clone(), format!("N;{case};{number}"))
    }

    fn determiner(plural: bool, initial: bool) -> Row {
        let form = match (plural, initial) {
            (false, false) => "la",
            (false, true) => "La",
            (true, false) => "le",
            (true, true) => "Le",
        };
        let number = if plural { "PL" } else { "SG" };
        (form.into(), "la".into(), format!("DET;{number}"))
    }

    fn verb(&self, rng: &mut ChaCha8Rng, plural: bool) -> Row {
        let past = rng.gen_bool(0.4);
        let irregular = rng.gen_bool(0.15);
        let (form, lemma) = if irregular {
            let form = match (past, plural) {
                (true, _) => "fu",
                (false, false) => "is",
                (false, true) => "son",
            };
            (form.to_string(), "esa".to_string())
        } else {
            let stem = self.verbs.choose(rng).unwrap();
            let suffix = match (past, plural) {
                (true, _) => "ta",
                (false, false) => "s",
                (false, true) => "n",
            };
            (format!("{stem}{suffix}"), format!("{stem}a"))
        };
        let bundle = if past {
            "V;PST".to_string()
        } else if plural {
            "V;PRS;3;PL".to_string()
        } else {
            "V;PRS;3;SG".to_string()
        };
        (form, lemma, bundle)
    }

    pub fn sentence(&self, rng: &mut ChaCha8Rng) -> Sentence {
        let subject_plural = rng.gen_bool(0.5);
        let mut rows = vec![
            Self::determiner(subject_plural, true),
            self.noun(rng, subject_plural, false),
            self.verb(rng, subject_plural),
        ];
        if rng.gen_bool(0.6) {
            let object_plural = rng.gen_bool(0.5);
            rows.push(Self::determiner(object_plural, false));
            rows.push(self.noun(rng, object_plural, true));
        }
        rows.push((".".into(), ".".into(), "PUNCT".into()));
        Sentence::from_tokens(
            rows.into_iter()
                .map(|(f, l, b)| (f, Some(l), Some(FeatureBundle::parse(&b).unwrap()))),
        )
    }

    /// `n` sentences with `sent_id` comments `<id>-<k>`.
    pub fn corpus(&self, treebank_id: &str, seed: u64, n: usize) -> Corpus {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sentences = (0..n)
            .map(|k| {
                let mut s = self.sentence(&mut rng);
                s.comments
                    .push(format!("# sent_id = {treebank_id}-{}", k + 1));
                s
            })
            .collect();
        Corpus::new(treebank_id, sentences)
    }
}

/// A model small enough for finite-difference checks.
pub fn tiny_config(encoder: EncoderKind) -> ModelConfig {
    ModelConfig {
        word_dim: 3,
        char_dim: 3,
        hidden_dim: 3,
        encoder,
        layers: 1,
        window: 1,
        ngram_max: 1,
        ..ModelConfig::default()
    }
}

pub fn small_config(encoder: EncoderKind) -> ModelConfig {
    ModelConfig {
        word_dim: 16,
        char_dim: 16,
        hidden_dim: 24,
        encoder,
        layers: 1,
        window: 2,
        ngram_max: 3,
        ..ModelConfig::default()
    }
}

/// Corpus from `(form, lemma, bundle)` rows, one slice per sentence.
pub fn corpus(id: &str, sentences: &[&[(&str, &str, &str)]]) -> Corpus {
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
