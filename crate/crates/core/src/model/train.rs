//! Minibatch training with Adam and best-dev checkpointing.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::conllu::Corpus;
use crate::metrics::{evaluate, EvalReport};
use crate::tagset::CategoryTable;

use super::network::{EncodedSentence, LossBreakdown};
use super::params::Parameters;
use super::predict::predict;
use super::vocab::{GoldLabels, Vocabulary, UNK_INDEX};
use super::{AuxInputs, ModelConfig, ModelError, TaggerModel};

/// One training sentence with resolved gold labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub sentence: EncodedSentence,
    pub gold: Vec<GoldLabels>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Sentences per minibatch.
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Probability of replacing a word index by the unknown index.
    pub word_dropout: f64,
    /// Global gradient-norm clipping threshold.
    pub clip_norm: Option<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 32,
            epochs: 20,
            seed: 42,
            word_dropout: 0.2,
            clip_norm: Some(5.0),
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adaptive-moment optimizer state.
#[derive(Clone, Debug)]
pub struct Adam {
    m: Parameters,
    v: Parameters,
    step: i32,
    learning_rate: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
}

impl Adam {
    pub fn new(model: &TaggerModel, config: &TrainConfig) -> Self {
        Adam {
            m: model.zero_gradients(),
            v: model.zero_gradients(),
            step: 0,
            learning_rate: config.learning_rate,
            beta1: config.beta1,
            beta2: config.beta2,
            epsilon: config.epsilon,
        }
    }

    /// Applies one update. Parameters stay representable in `f32`.
    pub fn update(&mut self, params: &mut Parameters, grads: &Parameters) {
        self.step += 1;
        let c1 = 1.0 - libm::pow(self.beta1, f64::from(self.step));
        let c2 = 1.0 - libm::pow(self.beta2, f64::from(self.step));
        let tensors = params
            .tensors
            .iter_mut()
            .zip(&grads.tensors)
            .zip(self.m.tensors.iter_mut().zip(self.v.tensors.iter_mut()));
        for ((p, g), (m, v)) in tensors {
            for i in 0..p.data.len() {
                let grad = g.data[i];
                m.data[i] = self.beta1 * m.data[i] + (1.0 - self.beta1) * grad;
                v.data[i] = self.beta2 * v.data[i] + (1.0 - self.beta2) * grad * grad;
                let m_hat = m.data[i] / c1;
                let v_hat = v.data[i] / c2;
                let value =
                    p.data[i] - self.learning_rate * m_hat / (libm::sqrt(v_hat) + self.epsilon);
                p.data[i] = f64::from(value as f32);
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochReport {
    /// 1-based.
    pub epoch: usize,
    /// Loss over the whole training set after the epoch, without dropout.
    pub train_loss: LossBreakdown,
    pub dev: Option<EvalReport>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: TaggerModel,
    pub epochs: Vec<EpochReport>,
    /// Epoch whose parameters were kept, when a dev set was given.
    pub best_epoch: Option<usize>,
}

/// Encodes a gold-annotated corpus; empty sentences are skipped.
pub fn examples(
    model: &TaggerModel,
    corpus: &Corpus,
    table: &CategoryTable,
    aux: AuxInputs<'_>,
) -> Result<Vec<Example>, ModelError> {
    let mut out = Vec::with_capacity(corpus.sentences.len());
    for (ordinal, sentence) in corpus.sentences.iter().enumerate() {
        if sentence.is_empty() {
            continue;
        }
        out.push(Example {
            sentence: model.encode_input(sentence, ordinal, aux)?,
            gold: sentence
                .tokens
                .iter()
                .map(|t| model.vocab().gold_labels(t, table))
                .collect(),
        });
    }
    Ok(out)
}

/// Builds vocabularies from `corpus`, initializes a model and fits it.
#[allow(clippy::too_many_arguments)]
pub fn train(
    corpus: &Corpus,
    dev: Option<(&Corpus, AuxInputs<'_>)>,
    table: &CategoryTable,
    model_config: ModelConfig,
    train_config: &TrainConfig,
    aux: AuxInputs<'_>,
    on_epoch: &mut dyn FnMut(&EpochReport),
) -> Result<TrainOutcome, ModelError> {
    let vocab = Vocabulary::build(corpus, table, model_config.ngram_max)?;
    let model = TaggerModel::new(model_config, vocab, train_config.seed)?;
    let data = examples(&model, corpus, table, aux)?;
    fit(model, &data, dev, train_config, on_epoch)
}

fn drop_words(example: &Example, p: f64, rng: &mut ChaCha8Rng) -> Example {
    let mut example = example.clone();
    for token in &mut example.sentence.tokens {
        if rng.gen::<f64>() < p {
            token.word = UNK_INDEX;
        }
    }
    example
}

/// Trains `model` on `data`. With a dev set, the parameters of the epoch
/// with the best mean of lemma and morph accuracy are kept (earliest on
/// ties).
pub fn fit(
    mut model: TaggerModel,
    data: &[Example],
    dev: Option<(&Corpus, AuxInputs<'_>)>,
    config: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochReport),
) -> Result<TrainOutcome, ModelError> {
    if data.iter().all(|e| e.sentence.is_empty()) {
        return Err(ModelError::EmptyCorpus);
    }
    if config.batch_size == 0 {
        return Err(ModelError::Config("`batch_size` must be positive".into()));
    }
    let w = model.regularization_weight();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut adam = Adam::new(&model, config);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut reports = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, Parameters)> = None;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let dropped: Vec<Example>;
            let batch: Vec<&Example> = if config.word_dropout > 0.0 {
                dropped = chunk
                    .iter()
                    .map(|&i| drop_words(&data[i], config.word_dropout, &mut rng))
                    .collect();
                dropped.iter().collect()
            } else {
                chunk.iter().map(|&i| &data[i]).collect()
            };
            let (loss, mut grads) = model.loss_and_gradients(&batch, w);
            let total = loss.total();
            if !total.is_finite() {
                return Err(ModelError::Divergence {
                    epoch,
                    batch: b + 1,
                    loss: total,
                });
            }
            if let Some(max) = config.clip_norm {
                let norm = libm::sqrt(grads.squared_norm());
                if norm > max {
                    grads.scale(max / norm);
                }
            }
            adam.update(model.params_mut(), &grads);
        }

        let all: Vec<&Example> = data.iter().collect();
        let train_loss = model.loss(&all, w);
        if !train_loss.total().is_finite() {
            return Err(ModelError::Divergence {
                epoch,
                batch: 0,
                loss: train_loss.total(),
            });
        }
        let dev_report = match dev {
            Some((corpus, aux)) => {
                let predicted = predict(&model, corpus, aux, None)?;
                let report = evaluate(corpus, &predicted)
                    .map_err(|e| ModelError::Config(alloc::format!("dev evaluation: {e}")))?;
                let score = report.selection_score();
                if best.as_ref().is_none_or(|(s, _, _)| score > *s) {
                    best = Some((score, epoch, model.params().clone()));
                }
                Some(report)
            }
            None => None,
        };
        let report = EpochReport {
            epoch,
            train_loss,
            dev: dev_report,
        };
        log::info!(
            "epoch {epoch}: loss {:.4} (lemma {:.4}, bundle {:.4}, category {:.4})",
            train_loss.total(),
            train_loss.lemma,
            train_loss.bundle,
            train_loss.category
        );
        on_epoch(&report);
        reports.push(report);
    }

    let best_epoch = best.map(|(_, epoch, params)| {
        *model.params_mut() = params;
        epoch
    });
    Ok(TrainOutcome {
        model,
        epochs: reports,
        best_epoch,
    })
}
