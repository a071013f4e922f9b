//! The multi-task tagger: a contextual encoder over token representations
//! with a lemma-rule head, a whole-bundle head and one head per
//! morphological category.

pub mod math;
pub mod network;
pub mod params;
pub mod predict;
pub mod train;
pub mod vocab;

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write as _;
use core::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::conllu::Sentence;
use crate::embeddings::{sentence_key, ContextualSidecar, EmbeddingError, WordVectorTable};
use crate::index::Indexer;

pub use network::{EncodedSentence, EncodedToken, LossBreakdown, TokenDistribution};
pub use params::{Parameters, Tensor};
pub use predict::{predict, predict_sentence, TokenPrediction};
pub use train::{examples, fit, train, Adam, EpochReport, Example, TrainConfig, TrainOutcome};
pub use vocab::{boundary_ngrams, CategoryVocab, GoldLabels, Vocabulary};

use params::Layout;
use vocab::UNK_INDEX;

#[derive(Clone, Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("training corpus has no tokens")]
    EmptyCorpus,
    #[error("vocabulary: {0}")]
    Vocabulary(String),
    #[error("config: {0}")]
    Config(String),
    #[error("{what} has dimension {found}, model expects {expected}")]
    Dimension {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("model uses {0} but none were supplied")]
    MissingAux(&'static str),
    #[error("no contextual vectors for sentence `{0}`")]
    MissingContextual(String),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error("parameters: {0}")]
    Parameters(String),
    #[error("training diverged at epoch {epoch}, batch {batch}: loss {loss}")]
    Divergence {
        epoch: usize,
        batch: usize,
        loss: f64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EncoderKind {
    /// Bidirectional GRU layers.
    Recurrent,
    /// Feed-forward layers over a window of neighbouring tokens.
    Window,
}

impl EncoderKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EncoderKind::Recurrent => "recurrent",
            EncoderKind::Window => "window",
        }
    }
}

impl FromStr for EncoderKind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, ModelError> {
        match s {
            "recurrent" | "gru" | "bigru" => Ok(EncoderKind::Recurrent),
            "window" => Ok(EncoderKind::Window),
            _ => Err(ModelError::Config(format!("unknown encoder `{s}`"))),
        }
    }
}

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub word_dim: usize,
    /// Dimension of the character representation (character and n-gram
    /// embeddings).
    pub char_dim: usize,
    pub hidden_dim: usize,
    pub encoder: EncoderKind,
    pub layers: usize,
    /// Neighbours on each side seen by a window layer.
    pub window: usize,
    /// Longest boundary n-gram.
    pub ngram_max: usize,
    pub use_pretrained: bool,
    pub pretrained_dim: usize,
    pub use_contextual: bool,
    pub contextual_dim: usize,
    /// Weight `w` of the per-category loss term.
    pub regularization_weight: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            word_dim: 64,
            char_dim: 64,
            hidden_dim: 128,
            encoder: EncoderKind::Recurrent,
            layers: 1,
            window: 2,
            ngram_max: 3,
            use_pretrained: false,
            pretrained_dim: 0,
            use_contextual: false,
            contextual_dim: 0,
            regularization_weight: 1.0,
        }
    }
}

const CONFIG_KEYS: [&str; 12] = [
    "word_dim",
    "char_dim",
    "hidden_dim",
    "encoder",
    "layers",
    "window",
    "ngram_max",
    "use_pretrained",
    "pretrained_dim",
    "use_contextual",
    "contextual_dim",
    "w",
];

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T, ModelError> {
    value
        .parse()
        .map_err(|_| ModelError::Config(format!("invalid value `{value}` for `{key}`")))
}

impl ModelConfig {
    /// Width of the token input vector.
    pub fn input_dim(&self) -> usize {
        self.word_dim
            + self.char_dim
            + if self.use_pretrained {
                self.pretrained_dim
            } else {
                0
            }
            + if self.use_contextual {
                self.contextual_dim
            } else {
                0
            }
    }

    /// Width of the encoder output.
    pub fn state_dim(&self) -> usize {
        match self.encoder {
            EncoderKind::Recurrent => 2 * self.hidden_dim,
            EncoderKind::Window => self.hidden_dim,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let positive = [
            ("word_dim", self.word_dim),
            ("char_dim", self.char_dim),
            ("hidden_dim", self.hidden_dim),
            ("layers", self.layers),
            ("ngram_max", self.ngram_max),
        ];
        for (key, value) in positive {
            if value == 0 {
                return Err(ModelError::Config(format!("`{key}` must be positive")));
            }
        }
        if self.use_pretrained && self.pretrained_dim == 0 {
            return Err(ModelError::Config(
                "`pretrained_dim` must be positive".into(),
            ));
        }
        if self.use_contextual && self.contextual_dim == 0 {
            return Err(ModelError::Config(
                "`contextual_dim` must be positive".into(),
            ));
        }
        if !(self.regularization_weight >= 0.0 && self.regularization_weight.is_finite()) {
            return Err(ModelError::Config(
                "`w` must be a finite non-negative number".into(),
            ));
        }
        Ok(())
    }

    pub fn is_key(key: &str) -> bool {
        CONFIG_KEYS.contains(&key)
    }

    /// Sets one `key=value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ModelError> {
        let value = value.trim();
        match key {
            "word_dim" => self.word_dim = parse_value(key, value)?,
            "char_dim" => self.char_dim = parse_value(key, value)?,
            "hidden_dim" => self.hidden_dim = parse_value(key, value)?,
            "encoder" => self.encoder = value.parse()?,
            "layers" => self.layers = parse_value(key, value)?,
            "window" => self.window = parse_value(key, value)?,
            "ngram_max" => self.ngram_max = parse_value(key, value)?,
            "use_pretrained" => self.use_pretrained = parse_value(key, value)?,
            "pretrained_dim" => self.pretrained_dim = parse_value(key, value)?,
            "use_contextual" => self.use_contextual = parse_value(key, value)?,
            "contextual_dim" => self.contextual_dim = parse_value(key, value)?,
            "w" => self.regularization_weight = parse_value(key, value)?,
            _ => return Err(ModelError::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// `key=value` lines, one per setting.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = write!(
            out,
            "word_dim={}\nchar_dim={}\nhidden_dim={}\nencoder={}\nlayers={}\nwindow={}\n\
             ngram_max={}\nuse_pretrained={}\npretrained_dim={}\nuse_contextual={}\n\
             contextual_dim={}\nw={:?}\n",
            self.word_dim,
            self.char_dim,
            self.hidden_dim,
            self.encoder.as_str(),
            self.layers,
            self.window,
            self.ngram_max,
            self.use_pretrained,
            self.pretrained_dim,
            self.use_contextual,
            self.contextual_dim,
            self.regularization_weight,
        );
        out
    }

    /// Parses `key=value` lines over the defaults. Blank lines and `#`
    /// comments are skipped.
    pub fn from_text(text: &str) -> Result<Self, ModelError> {
        let mut config = ModelConfig::default();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| ModelError::Config(format!("expected key=value, got `{line}`")))?;
            config.set(key.trim(), value)?;
        }
        Ok(config)
    }
}

/// Frozen per-token inputs supplied at encoding time.
#[derive(Clone, Copy, Debug, Default)]
pub struct AuxInputs<'a> {
    pub word_vectors: Option<&'a WordVectorTable>,
    pub contextual: Option<&'a ContextualSidecar>,
}

/// A trained or freshly initialized tagger.
#[derive(Clone, Debug, PartialEq)]
pub struct TaggerModel {
    config: ModelConfig,
    vocab: Vocabulary,
    params: Parameters,
    layout: Layout,
}

impl TaggerModel {
    /// Randomly initialized model over `vocab`.
    pub fn new(config: ModelConfig, vocab: Vocabulary, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let layout = Layout::new(&config, &vocab);
        let params = layout.initialize(&mut ChaCha8Rng::seed_from_u64(seed));
        Ok(TaggerModel {
            config,
            vocab,
            params,
            layout,
        })
    }

    /// Reassembles a model, checking every tensor's name and shape.
    pub fn from_parts(
        config: ModelConfig,
        vocab: Vocabulary,
        params: Parameters,
    ) -> Result<Self, ModelError> {
        config.validate()?;
        let layout = Layout::new(&config, &vocab);
        if params.tensors.len() != layout.shapes.len() {
            return Err(ModelError::Parameters(format!(
                "expected {} tensors, found {}",
                layout.shapes.len(),
                params.tensors.len()
            )));
        }
        for (tensor, (name, rows, cols)) in params.tensors.iter().zip(&layout.shapes) {
            if &tensor.name != name
                || tensor.rows != *rows
                || tensor.cols != *cols
                || tensor.data.len() != rows * cols
            {
                return Err(ModelError::Parameters(format!(
                    "tensor `{}` ({}x{}) does not match `{name}` ({rows}x{cols})",
                    tensor.name, tensor.rows, tensor.cols
                )));
            }
        }
        if !params.is_finite() {
            return Err(ModelError::Parameters("non-finite value".into()));
        }
        Ok(TaggerModel {
            config,
            vocab,
            params,
            layout,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn params(&self) -> &Parameters {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Parameters {
        &mut self.params
    }

    pub fn regularization_weight(&self) -> f64 {
        self.config.regularization_weight
    }

    pub fn set_regularization_weight(&mut self, w: f64) -> Result<(), ModelError> {
        let mut config = self.config.clone();
        config.regularization_weight = w;
        config.validate()?;
        self.config = config;
        Ok(())
    }

    /// Zero-valued parameters of the same shapes.
    pub fn zero_gradients(&self) -> Parameters {
        Parameters::zeros_like(&self.layout)
    }

    /// Copy of the model with the per-category heads removed.
    pub fn without_category_heads(&self) -> Self {
        let vocab = self.vocab.without_categories();
        let layout = Layout::new(&self.config, &vocab);
        let mut params = self.params.clone();
        params.tensors.truncate(layout.shapes.len());
        TaggerModel {
            config: self.config.clone(),
            vocab,
            params,
            layout,
        }
    }

    /// Maps a sentence to vocabulary indices and resolves its frozen input
    /// vectors. `ordinal` is the sentence's 0-based position in its corpus.
    pub fn encode_input(
        &self,
        sentence: &Sentence,
        ordinal: usize,
        aux: AuxInputs<'_>,
    ) -> Result<EncodedSentence, ModelError> {
        let tokens = sentence
            .tokens
            .iter()
            .map(|token| {
                let form = token.form();
                EncodedToken {
                    word: self.vocab.words.get(form).unwrap_or(UNK_INDEX),
                    chars: form
                        .chars()
                        .map(|c| {
                            let mut buf = [0u8; 4];
                            self.vocab
                                .chars
                                .get(&*c.encode_utf8(&mut buf))
                                .unwrap_or(UNK_INDEX)
                        })
                        .collect(),
                    ngrams: boundary_ngrams(form, self.config.ngram_max)
                        .iter()
                        .map(|g| self.vocab.ngrams.get(g.as_str()).unwrap_or(UNK_INDEX))
                        .collect(),
                }
            })
            .collect();

        let pretrained = if self.config.use_pretrained {
            let table = aux
                .word_vectors
                .ok_or(ModelError::MissingAux("pretrained word vectors"))?;
            if table.dimension() != self.config.pretrained_dim {
                return Err(ModelError::Dimension {
                    what: "pretrained word vectors",
                    expected: self.config.pretrained_dim,
                    found: table.dimension(),
                });
            }
            Some(
                sentence
                    .tokens
                    .iter()
                    .flat_map(|t| table.lookup(t.form()).iter().map(|&v| f64::from(v)))
                    .collect(),
            )
        } else {
            None
        };

        let contextual = if self.config.use_contextual {
            let sidecar = aux
                .contextual
                .ok_or(ModelError::MissingAux("contextual vectors"))?;
            if sidecar.dimension() != self.config.contextual_dim {
                return Err(ModelError::Dimension {
                    what: "contextual vectors",
                    expected: self.config.contextual_dim,
                    found: sidecar.dimension(),
                });
            }
            let rows = sidecar
                .for_sentence(sentence, ordinal)?
                .ok_or_else(|| ModelError::MissingContextual(sentence_key(sentence, ordinal)))?;
            Some(rows.iter().map(|&v| f64::from(v)).collect())
        } else {
            None
        };

        Ok(EncodedSentence {
            tokens,
            pretrained,
            contextual,
        })
    }

    /// Per-token encoder states.
    pub fn encode(&self, sentence: &EncodedSentence) -> Vec<Vec<f64>> {
        let mut cache = network::forward(&self.params, &self.layout, &self.config, sentence);
        cache.sequences.pop().unwrap_or_default()
    }

    /// Lemma-rule and bundle distributions of every token.
    pub fn distributions(&self, sentence: &EncodedSentence) -> Vec<TokenDistribution> {
        network::distributions(&self.params, &self.layout, &self.config, sentence)
    }

    /// Per token, one distribution per category head, in vocabulary order.
    pub fn category_distributions(&self, sentence: &EncodedSentence) -> Vec<Vec<Vec<f64>>> {
        network::category_distributions(&self.params, &self.layout, &self.config, sentence)
    }

    /// Loss averaged over all tokens of the batch, with category weight `w`.
    pub fn loss(&self, batch: &[&Example], w: f64) -> LossBreakdown {
        self.batch_loss(batch, w, None)
    }

    /// Loss and its gradient with respect to every parameter.
    pub fn loss_and_gradients(&self, batch: &[&Example], w: f64) -> (LossBreakdown, Parameters) {
        let mut grads = self.zero_gradients();
        let loss = self.batch_loss(batch, w, Some(&mut grads));
        (loss, grads)
    }

    fn batch_loss(
        &self,
        batch: &[&Example],
        w: f64,
        mut grads: Option<&mut Parameters>,
    ) -> LossBreakdown {
        let tokens: usize = batch.iter().map(|e| e.sentence.len()).sum();
        let mut total = LossBreakdown {
            weight: w,
            tokens,
            ..Default::default()
        };
        if tokens == 0 {
            return total;
        }
        let scale = 1.0 / tokens as f64;
        for example in batch {
            let (lemma, bundle, category) = network::sentence_loss(
                &self.params,
                &self.layout,
                &self.config,
                &example.sentence,
                &example.gold,
                w,
                scale,
                grads.as_deref_mut(),
            );
            total.lemma += lemma;
            total.bundle += bundle;
            total.category += category;
        }
        total.lemma *= scale;
        total.bundle *= scale;
        total.category *= scale;
        total
    }

    /// Text block holding the configuration and every vocabulary.
    pub fn metadata_text(&self) -> String {
        let mut out = String::from("[config]\n");
        out.push_str(&self.config.to_text());
        let mut section = |name: &str, items: &Indexer<String>| {
            let _ = writeln!(out, "[{name} {}]", items.len());
            for item in items.items() {
                out.push_str(item);
                out.push('\n');
            }
        };
        section("words", &self.vocab.words);
        section("chars", &self.vocab.chars);
        section("ngrams", &self.vocab.ngrams);
        section("rules", &self.vocab.rules);
        section("bundles", &self.vocab.bundles);
        for category in &self.vocab.categories {
            section(&format!("category {}", category.name), &category.values);
        }
        out
    }

    /// Inverse of [`metadata_text`](Self::metadata_text).
    pub fn parse_metadata(text: &str) -> Result<(ModelConfig, Vocabulary), ModelError> {
        let bad = |m: &str| ModelError::Vocabulary(format!("metadata: {m}"));
        let mut lines = text.split('\n');
        if lines.next() != Some("[config]") {
            return Err(bad("missing [config] section"));
        }
        let mut config_text = String::new();
        let mut header = None;
        for line in lines.by_ref() {
            if line.starts_with('[') {
                header = Some(line);
                break;
            }
            config_text.push_str(line);
            config_text.push('\n');
        }
        let config = ModelConfig::from_text(&config_text)?;

        let mut sections: Vec<(String, Indexer<String>)> = Vec::new();
        while let Some(h) = header {
            let inner = h
                .strip_prefix('[')
                .and_then(|h| h.strip_suffix(']'))
                .ok_or_else(|| bad("malformed section header"))?;
            let (name, count) = inner
                .rsplit_once(' ')
                .ok_or_else(|| bad("section without count"))?;
            let count: usize = count.parse().map_err(|_| bad("invalid section count"))?;
            let mut items = Indexer::new();
            for _ in 0..count {
                let item = lines.next().ok_or_else(|| bad("truncated section"))?;
                let before = items.len();
                if items.insert(item.to_string()) != before {
                    return Err(bad("duplicate item"));
                }
            }
            sections.push((name.to_string(), items));
            header = match lines.next() {
                None | Some("") => None,
                Some(line) => Some(line),
            };
        }
        if lines.any(|l| !l.is_empty()) {
            return Err(bad("trailing content"));
        }

        let mut take = |name: &str| {
            let pos = sections
                .iter()
                .position(|(n, _)| n == name)
                .ok_or_else(|| bad("missing section"))?;
            Ok::<_, ModelError>(sections.remove(pos).1)
        };
        let words = take("words")?;
        let chars = take("chars")?;
        let ngrams = take("ngrams")?;
        let rules = take("rules")?;
        let bundles = take("bundles")?;
        let categories = sections
            .into_iter()
            .map(|(name, values)| {
                name.strip_prefix("category ")
                    .map(|n| CategoryVocab {
                        name: n.to_string(),
                        values,
                    })
                    .ok_or_else(|| bad("unknown section"))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let vocab = Vocabulary::from_parts(words, chars, ngrams, rules, bundles, categories)?;
        Ok((config, vocab))
    }
}
