//! Probability-averaging ensembles and dev-set ensemble selection.
//!
//! Members may have different label vocabularies (a merged model knows
//! more rules than a per-treebank one), so distributions are projected into
//! the union of the members' label spaces, keyed by canonical rule and
//! bundle strings. Labels a member does not know get probability zero.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use thiserror::Error;

use crate::conllu::{Corpus, Sentence};
use crate::index::Indexer;
use crate::lemma_rules::LemmaRule;
use crate::merge::RestrictionMask;
use crate::metrics::{evaluate, AlignmentError, EvalReport};
use crate::model::predict::{allowed_flags, choose_bundle, choose_rule, fill_sentence};
use crate::model::vocab::UNK;
use crate::model::{AuxInputs, ModelError, TaggerModel, TokenDistribution};

#[derive(Clone, Debug, Error, PartialEq)]
pub enum EnsembleError {
    #[error("ensemble has no members")]
    NoMembers,
    #[error("any-subset selection over {0} members is too large")]
    TooManyMembers(usize),
    #[error("member `{0}` has no configuration id")]
    MissingId(String),
    #[error("configuration {0} appears twice")]
    DuplicateId(ModelConfigurationId),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Alignment(#[from] AlignmentError),
    #[error("ensemble spec line {line}: {message}")]
    Syntax { line: usize, message: String },
}

/// The three training configurations, in tie-breaking order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Configuration {
    Regular,
    Merged,
    NoContextual,
}

impl Configuration {
    pub const ALL: [Configuration; 3] = [
        Configuration::Regular,
        Configuration::Merged,
        Configuration::NoContextual,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Configuration::Regular => "regular",
            Configuration::Merged => "merged",
            Configuration::NoContextual => "no_contextual",
        }
    }
}

impl FromStr for Configuration {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Configuration::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown configuration `{s}`"))
    }
}

/// Replicas trained per configuration.
pub const REPLICAS: u8 = 3;

/// One cell of the configuration x replica grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ModelConfigurationId {
    pub configuration: Configuration,
    /// 1-based.
    pub replica: u8,
}

impl ModelConfigurationId {
    pub fn new(configuration: Configuration, replica: u8) -> Option<Self> {
        (1..=REPLICAS)
            .contains(&replica)
            .then_some(ModelConfigurationId {
                configuration,
                replica,
            })
    }

    /// All nine ids in canonical order.
    pub fn grid() -> Vec<Self> {
        Configuration::ALL
            .into_iter()
            .flat_map(|c| (1..=REPLICAS).map(move |r| ModelConfigurationId::new(c, r).unwrap()))
            .collect()
    }
}

impl fmt::Display for ModelConfigurationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.configuration.as_str(), self.replica)
    }
}

impl FromStr for ModelConfigurationId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (c, r) = s
            .rsplit_once('-')
            .ok_or_else(|| format!("malformed id `{s}`"))?;
        let replica: u8 = r
            .parse()
            .map_err(|_| format!("malformed replica in `{s}`"))?;
        ModelConfigurationId::new(c.parse()?, replica)
            .ok_or_else(|| format!("replica out of range in `{s}`"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SelectionMethod {
    /// Best of all non-empty member subsets.
    AnySubset,
    /// Best of the per-configuration three-model ensembles.
    Configuration,
    /// Members given explicitly.
    Manual,
}

impl SelectionMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            SelectionMethod::AnySubset => "any_subset",
            SelectionMethod::Configuration => "configuration",
            SelectionMethod::Manual => "manual",
        }
    }
}

impl FromStr for SelectionMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "any_subset" => Ok(SelectionMethod::AnySubset),
            "configuration" => Ok(SelectionMethod::Configuration),
            "manual" => Ok(SelectionMethod::Manual),
            _ => Err(format!("unknown selection method `{s}`")),
        }
    }
}

/// Members of an ensemble and how they were chosen.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EnsembleSpec {
    pub members: Vec<String>,
    pub method: SelectionMethod,
}

impl EnsembleSpec {
    /// `method=<tag>` followed by one `member=<reference>` line per member.
    pub fn to_text(&self) -> String {
        let mut out = format!("method={}\n", self.method.as_str());
        for member in &self.members {
            out.push_str("member=");
            out.push_str(member);
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, EnsembleError> {
        let mut method = None;
        let mut members = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let syntax = |message: String| EnsembleError::Syntax {
                line: i + 1,
                message,
            };
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            match line.split_once('=') {
                Some(("method", tag)) => method = Some(tag.trim().parse().map_err(syntax)?),
                Some(("member", path)) => members.push(path.trim().to_string()),
                _ => return Err(syntax(format!("unexpected line `{line}`"))),
            }
        }
        if members.is_empty() {
            return Err(EnsembleError::NoMembers);
        }
        Ok(EnsembleSpec {
            members,
            method: method.unwrap_or(SelectionMethod::Manual),
        })
    }
}

/// What dev-set selection maximizes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Objective {
    /// Mean of lemma accuracy and morph accuracy.
    #[default]
    MeanAccuracy,
    LemmaAccuracy,
    MorphAccuracy,
}

impl Objective {
    pub fn score(self, report: &EvalReport) -> f64 {
        match self {
            Objective::MeanAccuracy => report.selection_score(),
            Objective::LemmaAccuracy => report.lemma_accuracy,
            Objective::MorphAccuracy => report.morph_accuracy,
        }
    }
}

/// A candidate ensemble member.
#[derive(Clone, Copy, Debug)]
pub struct Member<'a> {
    pub name: &'a str,
    pub model: &'a TaggerModel,
    pub id: Option<ModelConfigurationId>,
}

/// Union of the members' rule and bundle label spaces.
#[derive(Clone, Debug)]
pub struct UnionSpace {
    pub rules: Indexer<String>,
    pub bundles: Indexer<String>,
    parsed_rules: Vec<Option<LemmaRule>>,
    rule_maps: Vec<Vec<usize>>,
    bundle_maps: Vec<Vec<usize>>,
}

impl UnionSpace {
    pub fn new(models: &[&TaggerModel]) -> Self {
        let mut rules = Indexer::new();
        let mut bundles = Indexer::new();
        rules.insert(UNK.to_string());
        bundles.insert(UNK.to_string());
        let mut parsed_rules = vec![None];
        let mut rule_maps = Vec::with_capacity(models.len());
        let mut bundle_maps = Vec::with_capacity(models.len());
        for model in models {
            let vocab = model.vocab();
            rule_maps.push(
                vocab
                    .rules
                    .items()
                    .iter()
                    .enumerate()
                    .map(|(i, rule)| {
                        let before = rules.len();
                        let u = rules.insert(rule.clone());
                        if u == before {
                            parsed_rules.push(vocab.rule(i).cloned());
                        }
                        u
                    })
                    .collect(),
            );
            bundle_maps.push(
                vocab
                    .bundles
                    .items()
                    .iter()
                    .map(|b| bundles.insert(b.clone()))
                    .collect(),
            );
        }
        UnionSpace {
            rules,
            bundles,
            parsed_rules,
            rule_maps,
            bundle_maps,
        }
    }

    /// Mean of member distributions, projected into the union space.
    pub fn average(
        &self,
        members: &[usize],
        distributions: &[&TokenDistribution],
    ) -> TokenDistribution {
        let mut rules = vec![0.0; self.rules.len()];
        let mut bundles = vec![0.0; self.bundles.len()];
        let weight = 1.0 / members.len() as f64;
        for (&m, dist) in members.iter().zip(distributions) {
            for (i, p) in dist.rules.iter().enumerate() {
                rules[self.rule_maps[m][i]] += weight * p;
            }
            for (i, p) in dist.bundles.iter().enumerate() {
                bundles[self.bundle_maps[m][i]] += weight * p;
            }
        }
        TokenDistribution { rules, bundles }
    }
}

struct Decoder<'a> {
    space: &'a UnionSpace,
    rule_flags: Option<Vec<bool>>,
    bundle_flags: Option<Vec<bool>>,
    identity: Option<usize>,
}

impl<'a> Decoder<'a> {
    fn new(space: &'a UnionSpace, mask: Option<&RestrictionMask>) -> Self {
        Decoder {
            space,
            rule_flags: mask.map(|m| allowed_flags(space.rules.items(), &m.rules)),
            bundle_flags: mask.map(|m| allowed_flags(space.bundles.items(), &m.bundles)),
            identity: space.rules.get(LemmaRule::identity().to_string().as_str()),
        }
    }

    fn fill(&self, sentence: &mut Sentence, averaged: &[TokenDistribution]) {
        let outputs: Vec<(String, Option<&str>)> = sentence
            .tokens
            .iter()
            .zip(averaged)
            .map(|(token, dist)| {
                let choice = choose_rule(
                    &dist.rules,
                    &self.space.parsed_rules,
                    self.rule_flags.as_deref(),
                    self.identity,
                    token.form(),
                );
                let bundle = choose_bundle(&dist.bundles, self.bundle_flags.as_deref())
                    .and_then(|b| self.space.bundles.item(b))
                    .map(String::as_str);
                (choice.lemma, bundle)
            })
            .collect();
        fill_sentence(sentence, outputs);
    }
}

/// Member distributions for every token of a corpus:
/// `[member][sentence][token]`.
fn member_distributions(
    models: &[&TaggerModel],
    corpus: &Corpus,
    aux: AuxInputs<'_>,
) -> Result<Vec<Vec<Vec<TokenDistribution>>>, ModelError> {
    models
        .iter()
        .map(|model| {
            corpus
                .sentences
                .iter()
                .enumerate()
                .map(|(ordinal, sentence)| {
                    Ok(model.distributions(&model.encode_input(sentence, ordinal, aux)?))
                })
                .collect()
        })
        .collect()
}

fn predict_subset(
    space: &UnionSpace,
    decoder: &Decoder<'_>,
    cache: &[Vec<Vec<TokenDistribution>>],
    subset: &[usize],
    corpus: &Corpus,
) -> Corpus {
    let mut output = corpus.clone();
    for (s, sentence) in output.sentences.iter_mut().enumerate() {
        let averaged: Vec<TokenDistribution> = (0..sentence.len())
            .map(|t| {
                let dists: Vec<&TokenDistribution> =
                    subset.iter().map(|&m| &cache[m][s][t]).collect();
                space.average(subset, &dists)
            })
            .collect();
        decoder.fill(sentence, &averaged);
    }
    output
}

/// Averaged union-space distributions of one sentence.
pub fn ensemble_distributions(
    models: &[&TaggerModel],
    sentence: &Sentence,
    ordinal: usize,
    aux: AuxInputs<'_>,
) -> Result<(UnionSpace, Vec<TokenDistribution>), EnsembleError> {
    if models.is_empty() {
        return Err(EnsembleError::NoMembers);
    }
    let space = UnionSpace::new(models);
    let per_model = models
        .iter()
        .map(|m| Ok(m.distributions(&m.encode_input(sentence, ordinal, aux)?)))
        .collect::<Result<Vec<_>, ModelError>>()?;
    let all: Vec<usize> = (0..models.len()).collect();
    let averaged = (0..sentence.len())
        .map(|t| {
            let dists: Vec<&TokenDistribution> = per_model.iter().map(|d| &d[t]).collect();
            space.average(&all, &dists)
        })
        .collect();
    Ok((space, averaged))
}

/// Predicts with the averaged distributions of `models`.
pub fn ensemble_predict(
    models: &[&TaggerModel],
    corpus: &Corpus,
    aux: AuxInputs<'_>,
    mask: Option<&RestrictionMask>,
) -> Result<Corpus, EnsembleError> {
    if models.is_empty() {
        return Err(EnsembleError::NoMembers);
    }
    let space = UnionSpace::new(models);
    let decoder = Decoder::new(&space, mask);
    let cache = member_distributions(models, corpus, aux)?;
    let all: Vec<usize> = (0..models.len()).collect();
    Ok(predict_subset(&space, &decoder, &cache, &all, corpus))
}

/// Outcome of a dev-set selection.
#[derive(Clone, Debug, PartialEq)]
pub struct Selection {
    pub spec: EnsembleSpec,
    /// Indices into the candidate list, ascending.
    pub members: Vec<usize>,
    pub report: EvalReport,
    pub score: f64,
}

struct Evaluator<'a> {
    dev: &'a Corpus,
    space: UnionSpace,
    cache: Vec<Vec<Vec<TokenDistribution>>>,
    mask: Option<&'a RestrictionMask>,
    objective: Objective,
}

impl<'a> Evaluator<'a> {
    fn new(
        members: &[Member<'_>],
        dev: &'a Corpus,
        aux: AuxInputs<'_>,
        mask: Option<&'a RestrictionMask>,
        objective: Objective,
    ) -> Result<Self, EnsembleError> {
        let models: Vec<&TaggerModel> = members.iter().map(|m| m.model).collect();
        Ok(Evaluator {
            dev,
            space: UnionSpace::new(&models),
            cache: member_distributions(&models, dev, aux)?,
            mask,
            objective,
        })
    }

    fn evaluate(&self, subset: &[usize]) -> Result<(EvalReport, f64), EnsembleError> {
        let decoder = Decoder::new(&self.space, self.mask);
        let predicted = predict_subset(&self.space, &decoder, &self.cache, subset, self.dev);
        let report = evaluate(self.dev, &predicted)?;
        Ok((report, self.objective.score(&report)))
    }
}

/// Keeps the first candidate with the strictly highest score.
fn best_of(
    members: &[Member<'_>],
    evaluator: &Evaluator<'_>,
    candidates: impl Iterator<Item = Vec<usize>>,
    method: SelectionMethod,
) -> Result<Selection, EnsembleError> {
    let mut best: Option<Selection> = None;
    for subset in candidates {
        let (report, score) = evaluator.evaluate(&subset)?;
        log::debug!("subset {subset:?}: score {score:.4}");
        if best.as_ref().is_none_or(|b| score > b.score) {
            best = Some(Selection {
                spec: EnsembleSpec {
                    members: subset
                        .iter()
                        .map(|&i| members[i].name.to_string())
                        .collect(),
                    method,
                },
                members: subset,
                report,
                score,
            });
        }
    }
    best.ok_or(EnsembleError::NoMembers)
}

/// Non-empty subsets of `0..n`, by size and then lexicographically.
pub fn subsets_in_order(n: usize) -> Vec<Vec<usize>> {
    let mut all: Vec<Vec<usize>> = (1u32..(1 << n))
        .map(|bits| (0..n).filter(|i| bits & (1 << i) != 0).collect())
        .collect();
    all.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
    all
}

/// Largest candidate pool for exhaustive subset search.
pub const MAX_SUBSET_MEMBERS: usize = 16;

/// Evaluates every non-empty subset on `dev` and returns the best. Ties go
/// to the smaller subset, then the lexicographically first one. Prone to
/// overfitting the dev set.
pub fn select_any_subset(
    members: &[Member<'_>],
    dev: &Corpus,
    aux: AuxInputs<'_>,
    mask: Option<&RestrictionMask>,
    objective: Objective,
) -> Result<Selection, EnsembleError> {
    if members.is_empty() {
        return Err(EnsembleError::NoMembers);
    }
    if members.len() > MAX_SUBSET_MEMBERS {
        return Err(EnsembleError::TooManyMembers(members.len()));
    }
    let evaluator = Evaluator::new(members, dev, aux, mask, objective)?;
    best_of(
        members,
        &evaluator,
        subsets_in_order(members.len()).into_iter(),
        SelectionMethod::AnySubset,
    )
}

/// Forms one ensemble per configuration from its replicas and returns the
/// best on `dev`. Ties go to the earlier configuration in the order
/// regular, merged, no_contextual.
pub fn select_configuration(
    members: &[Member<'_>],
    dev: &Corpus,
    aux: AuxInputs<'_>,
    mask: Option<&RestrictionMask>,
    objective: Objective,
) -> Result<Selection, EnsembleError> {
    if members.is_empty() {
        return Err(EnsembleError::NoMembers);
    }
    let mut ids = Vec::with_capacity(members.len());
    for member in members {
        let id = member
            .id
            .ok_or_else(|| EnsembleError::MissingId(member.name.to_string()))?;
        if ids.contains(&id) {
            return Err(EnsembleError::DuplicateId(id));
        }
        ids.push(id);
    }
    if ids.len() != ModelConfigurationId::grid().len() {
        log::warn!(
            "configuration selection over {} models instead of the full grid",
            ids.len()
        );
    }
    let groups: Vec<Vec<usize>> = Configuration::ALL
        .into_iter()
        .map(|c| {
            let mut group: Vec<usize> = (0..members.len())
                .filter(|&i| ids[i].configuration == c)
                .collect();
            group.sort_by_key(|&i| ids[i].replica);
            group
        })
        .filter(|g| !g.is_empty())
        .collect();
    let evaluator = Evaluator::new(members, dev, aux, mask, objective)?;
    best_of(
        members,
        &evaluator,
        groups.into_iter(),
        SelectionMethod::Configuration,
    )
}
