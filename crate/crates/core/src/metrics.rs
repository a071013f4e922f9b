//! Lemma accuracy, lemma Levenshtein distance, morphological accuracy and
//! morphological F1.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

use crate::conllu::{Corpus, Token};

#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum AlignmentError {
    #[error("gold has {gold} sentences, prediction has {predicted}")]
    SentenceCount { gold: usize, predicted: usize },
    #[error("sentence {sentence}: gold has {gold} tokens, prediction has {predicted}")]
    TokenCount {
        sentence: usize,
        gold: usize,
        predicted: usize,
    },
    #[error("sentence {sentence}, token {token}: forms `{gold}` and `{predicted}` differ")]
    Form {
        sentence: usize,
        token: usize,
        gold: String,
        predicted: String,
    },
}

/// How per-token feature matches are aggregated into one F1 score.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum F1Averaging {
    /// Global true/false positive counts over all tokens.
    #[default]
    Micro,
    /// Mean of per-token F1 scores.
    PerToken,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalReport {
    /// Percent of exactly matching lemmas.
    pub lemma_accuracy: f64,
    /// Mean character edit distance between predicted and gold lemmas.
    pub lemma_levenshtein: f64,
    /// Percent of exactly matching feature bundles.
    pub morph_accuracy: f64,
    /// Feature-level F1, in percent.
    pub morph_f1: f64,
    pub token_count: usize,
}

impl EvalReport {
    /// Machine-readable block with keys `lemma_acc lemma_lev morph_acc
    /// morph_f1 tokens`.
    pub fn key_values(&self) -> String {
        format!(
            "lemma_acc={:.4}\nlemma_lev={:.4}\nmorph_acc={:.4}\nmorph_f1={:.4}\ntokens={}\n",
            self.lemma_accuracy,
            self.lemma_levenshtein,
            self.morph_accuracy,
            self.morph_f1,
            self.token_count
        )
    }

    pub fn table(&self) -> String {
        format!(
            "Metric              Value\n\
             Lemma accuracy   {:>8.2}\n\
             Lemma Levenshtein{:>8.4}\n\
             Morph accuracy   {:>8.2}\n\
             Morph F1         {:>8.2}\n\
             Tokens           {:>8}\n",
            self.lemma_accuracy,
            self.lemma_levenshtein,
            self.morph_accuracy,
            self.morph_f1,
            self.token_count
        )
    }

    /// Mean of lemma and morph accuracy, the default model-selection score.
    pub fn selection_score(&self) -> f64 {
        (self.lemma_accuracy + self.morph_accuracy) / 2.0
    }
}

/// Unit-cost edit distance over Unicode scalar values.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut previous: Vec<usize> = (0..=b.len()).collect();
    let mut current = alloc::vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        current[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let substitution = previous[j] + usize::from(ca != cb);
            current[j + 1] = substitution.min(previous[j + 1] + 1).min(current[j] + 1);
        }
        core::mem::swap(&mut previous, &mut current);
    }
    previous[b.len()]
}

/// True positives, false positives and false negatives of one token's
/// predicted feature values, compared as multisets.
pub fn feature_matches(gold: &Token, predicted: &Token) -> (usize, usize, usize) {
    let mut remaining: BTreeMap<&str, usize> = BTreeMap::new();
    let gold_values: Vec<&str> = gold
        .bundle()
        .map(|b| b.values().collect())
        .unwrap_or_default();
    for value in &gold_values {
        *remaining.entry(value).or_default() += 1;
    }
    let mut true_positives = 0;
    let mut predicted_count = 0;
    for value in predicted.bundle().into_iter().flat_map(|b| b.values()) {
        predicted_count += 1;
        if let Some(n) = remaining.get_mut(value).filter(|n| **n > 0) {
            *n -= 1;
            true_positives += 1;
        }
    }
    (
        true_positives,
        predicted_count - true_positives,
        gold_values.len() - true_positives,
    )
}

fn f1(tp: usize, fp: usize, fn_: usize) -> f64 {
    let denominator = 2 * tp + fp + fn_;
    if denominator == 0 {
        1.0
    } else {
        (2 * tp) as f64 / denominator as f64
    }
}

fn lemma_text(token: &Token) -> &str {
    token.lemma().unwrap_or("_")
}

fn bundle_text(token: &Token) -> &str {
    token.bundle().map_or("_", |b| b.canonical_text())
}

/// Checks that two corpora have the same sentences and forms.
pub fn check_alignment(gold: &Corpus, predicted: &Corpus) -> Result<(), AlignmentError> {
    if gold.sentences.len() != predicted.sentences.len() {
        return Err(AlignmentError::SentenceCount {
            gold: gold.sentences.len(),
            predicted: predicted.sentences.len(),
        });
    }
    for (s, (g, p)) in gold.sentences.iter().zip(&predicted.sentences).enumerate() {
        if g.len() != p.len() {
            return Err(AlignmentError::TokenCount {
                sentence: s + 1,
                gold: g.len(),
                predicted: p.len(),
            });
        }
        for (t, (gt, pt)) in g.tokens.iter().zip(&p.tokens).enumerate() {
            if gt.form() != pt.form() {
                return Err(AlignmentError::Form {
                    sentence: s + 1,
                    token: t + 1,
                    gold: gt.form().into(),
                    predicted: pt.form().into(),
                });
            }
        }
    }
    Ok(())
}

pub fn evaluate(gold: &Corpus, predicted: &Corpus) -> Result<EvalReport, AlignmentError> {
    evaluate_with(gold, predicted, F1Averaging::Micro)
}

pub fn evaluate_with(
    gold: &Corpus,
    predicted: &Corpus,
    averaging: F1Averaging,
) -> Result<EvalReport, AlignmentError> {
    check_alignment(gold, predicted)?;

    let mut tokens = 0usize;
    let mut lemma_hits = 0usize;
    let mut distance = 0usize;
    let mut morph_hits = 0usize;
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    let mut token_f1_sum = 0.0;

    for (g, p) in gold.tokens().zip(predicted.tokens()) {
        tokens += 1;
        lemma_hits += usize::from(lemma_text(g) == lemma_text(p));
        distance += levenshtein(lemma_text(g), lemma_text(p));
        morph_hits += usize::from(bundle_text(g) == bundle_text(p));
        let (t, f, n) = feature_matches(g, p);
        tp += t;
        fp += f;
        fn_ += n;
        token_f1_sum += f1(t, f, n);
    }

    if tokens == 0 {
        return Ok(EvalReport {
            lemma_accuracy: 100.0,
            lemma_levenshtein: 0.0,
            morph_accuracy: 100.0,
            morph_f1: 100.0,
            token_count: 0,
        });
    }
    let n = tokens as f64;
    let morph_f1 = match averaging {
        F1Averaging::Micro => f1(tp, fp, fn_),
        F1Averaging::PerToken => token_f1_sum / n,
    };
    Ok(EvalReport {
        lemma_accuracy: 100.0 * lemma_hits as f64 / n,
        lemma_levenshtein: distance as f64 / n,
        morph_accuracy: 100.0 * morph_hits as f64 / n,
        morph_f1: 100.0 * morph_f1,
        token_count: tokens,
    })
}
