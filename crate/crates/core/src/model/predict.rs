//! Decoding head distributions into lemmas and feature bundles.

use alloc::collections::BTreeSet;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::conllu::{Corpus, Sentence};
use crate::lemma_rules::{apply_rule, LemmaRule};
use crate::merge::RestrictionMask;
use crate::tagset::FeatureBundle;

use super::network::TokenDistribution;
use super::vocab::UNK_INDEX;
use super::{AuxInputs, ModelError, TaggerModel};

/// Decoded output for one token.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenPrediction {
    pub distribution: TokenDistribution,
    /// Chosen rule index; `None` only when the identity fallback was used
    /// and the identity rule is not in the vocabulary.
    pub rule: Option<usize>,
    pub bundle: Option<usize>,
    pub lemma: String,
    /// No allowed rule was applicable, so `↓0;d¦` was applied.
    pub fallback: bool,
}

pub(crate) struct RuleChoice {
    pub index: Option<usize>,
    pub lemma: String,
    pub fallback: bool,
}

/// Highest-probability allowed rule that yields a non-empty lemma for
/// `form`. Ties go to the lower index; index 0 is never chosen.
pub(crate) fn choose_rule(
    probs: &[f64],
    rules: &[Option<LemmaRule>],
    allowed: Option<&[bool]>,
    identity: Option<usize>,
    form: &str,
) -> RuleChoice {
    let mut order: Vec<usize> = (0..probs.len())
        .filter(|&i| i != UNK_INDEX && allowed.is_none_or(|a| a[i]))
        .collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    for i in order {
        if let Some(rule) = &rules[i] {
            if let Ok(lemma) = apply_rule(rule, form) {
                return RuleChoice {
                    index: Some(i),
                    lemma,
                    fallback: false,
                };
            }
        }
    }
    RuleChoice {
        index: identity,
        lemma: apply_rule(&LemmaRule::identity(), form).unwrap_or_else(|_| String::from(form)),
        fallback: true,
    }
}

/// Highest-probability allowed bundle; ties go to the lower index.
pub(crate) fn choose_bundle(probs: &[f64], allowed: Option<&[bool]>) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &p) in probs.iter().enumerate() {
        if i == UNK_INDEX || !allowed.is_none_or(|a| a[i]) {
            continue;
        }
        if best.is_none_or(|b| p > probs[b]) {
            best = Some(i);
        }
    }
    best
}

/// Membership flags of `items` in `set`.
pub(crate) fn allowed_flags(items: &[String], set: &BTreeSet<String>) -> Vec<bool> {
    items.iter().map(|item| set.contains(item)).collect()
}

/// Writes predicted lemmas and bundles into a sentence.
pub(crate) fn fill_sentence<'a>(
    sentence: &mut Sentence,
    outputs: impl IntoIterator<Item = (String, Option<&'a str>)>,
) {
    for (token, (lemma, bundle)) in sentence.tokens.iter_mut().zip(outputs) {
        token.set_lemma(Some(lemma));
        token.set_bundle(bundle.and_then(|b| FeatureBundle::parse(b).ok()));
    }
}

struct MaskFlags {
    rules: Vec<bool>,
    bundles: Vec<bool>,
}

fn mask_flags(model: &TaggerModel, mask: Option<&RestrictionMask>) -> Option<MaskFlags> {
    mask.map(|m| MaskFlags {
        rules: allowed_flags(model.vocab().rules.items(), &m.rules),
        bundles: allowed_flags(model.vocab().bundles.items(), &m.bundles),
    })
}

fn decode(
    model: &TaggerModel,
    sentence: &Sentence,
    distributions: Vec<TokenDistribution>,
    flags: Option<&MaskFlags>,
) -> Vec<TokenPrediction> {
    let vocab = model.vocab();
    let identity = vocab.rules.get(LemmaRule::identity().to_string().as_str());
    sentence
        .tokens
        .iter()
        .zip(distributions)
        .map(|(token, distribution)| {
            let choice = choose_rule(
                &distribution.rules,
                vocab.parsed_rules(),
                flags.map(|f| f.rules.as_slice()),
                identity,
                token.form(),
            );
            let bundle = choose_bundle(&distribution.bundles, flags.map(|f| f.bundles.as_slice()));
            TokenPrediction {
                distribution,
                rule: choice.index,
                bundle,
                lemma: choice.lemma,
                fallback: choice.fallback,
            }
        })
        .collect()
}

/// Predictions for one sentence at position `ordinal` of its corpus.
pub fn predict_sentence(
    model: &TaggerModel,
    sentence: &Sentence,
    ordinal: usize,
    aux: AuxInputs<'_>,
    mask: Option<&RestrictionMask>,
) -> Result<Vec<TokenPrediction>, ModelError> {
    let encoded = model.encode_input(sentence, ordinal, aux)?;
    let flags = mask_flags(model, mask);
    Ok(decode(
        model,
        sentence,
        model.distributions(&encoded),
        flags.as_ref(),
    ))
}

/// Copy of `corpus` with lemma and feature columns filled by the model.
pub fn predict(
    model: &TaggerModel,
    corpus: &Corpus,
    aux: AuxInputs<'_>,
    mask: Option<&RestrictionMask>,
) -> Result<Corpus, ModelError> {
    let flags = mask_flags(model, mask);
    let mut output = corpus.clone();
    let mut fallbacks = 0usize;
    for (ordinal, sentence) in output.sentences.iter_mut().enumerate() {
        let encoded = model.encode_input(sentence, ordinal, aux)?;
        let predictions = decode(
            model,
            sentence,
            model.distributions(&encoded),
            flags.as_ref(),
        );
        fallbacks += predictions.iter().filter(|p| p.fallback).count();
        let bundles = &model.vocab().bundles;
        fill_sentence(
            sentence,
            predictions.into_iter().map(|p| {
                (
                    p.lemma,
                    p.bundle.and_then(|b| bundles.item(b)).map(String::as_str),
                )
            }),
        );
    }
    if fallbacks > 0 {
        log::debug!("identity fallback used for {fallbacks} tokens");
    }
    Ok(output)
}
