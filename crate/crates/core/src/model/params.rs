use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::vocab::Vocabulary;
use super::{EncoderKind, ModelConfig};

/// A named dense matrix. Values are kept in `f64` for arithmetic but are
/// always representable as `f32`, the storage precision of saved models.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Parameters {
    pub tensors: Vec<Tensor>,
}

impl Parameters {
    pub(crate) fn zeros_like(layout: &Layout) -> Self {
        Parameters {
            tensors: layout
                .shapes
                .iter()
                .map(|(name, rows, cols)| Tensor {
                    name: name.clone(),
                    rows: *rows,
                    cols: *cols,
                    data: vec![0.0; rows * cols],
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.iter_mut().find(|t| t.name == name)
    }

    pub fn is_finite(&self) -> bool {
        self.tensors
            .iter()
            .all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    /// Flat view over all values, in tensor order.
    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.tensors.iter().flat_map(|t| t.data.iter().copied())
    }

    pub fn value_mut(&mut self, mut flat: usize) -> &mut f64 {
        for tensor in &mut self.tensors {
            if flat < tensor.data.len() {
                return &mut tensor.data[flat];
            }
            flat -= tensor.data.len();
        }
        panic!("parameter index out of range")
    }

    pub fn fill(&mut self, value: f64) {
        for tensor in &mut self.tensors {
            tensor.data.fill(value);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for tensor in &mut self.tensors {
            for v in &mut tensor.data {
                *v *= factor;
            }
        }
    }

    pub fn squared_norm(&self) -> f64 {
        self.values().map(|v| v * v).sum()
    }
}

impl core::ops::Index<usize> for Parameters {
    type Output = [f64];

    fn index(&self, handle: usize) -> &[f64] {
        &self.tensors[handle].data
    }
}

impl core::ops::IndexMut<usize> for Parameters {
    fn index_mut(&mut self, handle: usize) -> &mut [f64] {
        &mut self.tensors[handle].data
    }
}

/// Tensor handles of one GRU direction; gates ordered update, reset,
/// candidate.
#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) struct GruHandles {
    pub input: [usize; 3],
    pub recurrent: [usize; 3],
    pub bias: [usize; 3],
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) enum LayerHandles {
    Window {
        weight: usize,
        bias: usize,
        input_dim: usize,
    },
    Recurrent {
        forward: GruHandles,
        backward: GruHandles,
        input_dim: usize,
    },
}

/// Where every tensor lives and how large it is. Category heads come last so
/// that dropping them leaves every other handle valid.
#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) struct Layout {
    pub word_embedding: usize,
    pub char_embedding: usize,
    pub ngram_embedding: usize,
    pub layers: Vec<LayerHandles>,
    pub lemma: (usize, usize),
    pub bundle: (usize, usize),
    pub categories: Vec<(usize, usize)>,
    pub input_dim: usize,
    pub state_dim: usize,
    pub shapes: Vec<(String, usize, usize)>,
}

impl Layout {
    pub fn new(config: &ModelConfig, vocab: &Vocabulary) -> Self {
        let mut shapes = Vec::new();
        let mut add = |name: String, rows: usize, cols: usize| {
            shapes.push((name, rows, cols));
            shapes.len() - 1
        };

        let word_embedding = add("word_embedding".into(), vocab.words.len(), config.word_dim);
        let char_embedding = add("char_embedding".into(), vocab.chars.len(), config.char_dim);
        let ngram_embedding = add(
            "ngram_embedding".into(),
            vocab.ngrams.len(),
            config.char_dim,
        );

        let input_dim = config.input_dim();
        let mut layers = Vec::new();
        let mut layer_input = input_dim;
        for l in 0..config.layers {
            let hidden = config.hidden_dim;
            match config.encoder {
                EncoderKind::Window => {
                    let span = 2 * config.window + 1;
                    let weight = add(format!("encoder.{l}.weight"), hidden, span * layer_input);
                    let bias = add(format!("encoder.{l}.bias"), hidden, 1);
                    layers.push(LayerHandles::Window {
                        weight,
                        bias,
                        input_dim: layer_input,
                    });
                    layer_input = hidden;
                }
                EncoderKind::Recurrent => {
                    let mut direction = |dir: &str| {
                        let gates = ["update", "reset", "candidate"];
                        GruHandles {
                            input: gates.map(|g| {
                                add(format!("encoder.{l}.{dir}.{g}.input"), hidden, layer_input)
                            }),
                            recurrent: gates.map(|g| {
                                add(format!("encoder.{l}.{dir}.{g}.recurrent"), hidden, hidden)
                            }),
                            bias: gates
                                .map(|g| add(format!("encoder.{l}.{dir}.{g}.bias"), hidden, 1)),
                        }
                    };
                    let forward = direction("forward");
                    let backward = direction("backward");
                    layers.push(LayerHandles::Recurrent {
                        forward,
                        backward,
                        input_dim: layer_input,
                    });
                    layer_input = 2 * hidden;
                }
            }
        }
        let state_dim = layer_input;

        let lemma = (
            add(
                "lemma.weight".into(),
                vocab.rules.len(),
                state_dim + config.char_dim,
            ),
            add("lemma.bias".into(), vocab.rules.len(), 1),
        );
        let bundle = (
            add("bundle.weight".into(), vocab.bundles.len(), state_dim),
            add("bundle.bias".into(), vocab.bundles.len(), 1),
        );
        let categories = vocab
            .categories
            .iter()
            .map(|c| {
                (
                    add(
                        format!("category.{}.weight", c.name),
                        c.values.len(),
                        state_dim,
                    ),
                    add(format!("category.{}.bias", c.name), c.values.len(), 1),
                )
            })
            .collect();

        Layout {
            word_embedding,
            char_embedding,
            ngram_embedding,
            layers,
            lemma,
            bundle,
            categories,
            input_dim,
            state_dim,
            shapes,
        }
    }

    pub fn initialize(&self, rng: &mut ChaCha8Rng) -> Parameters {
        let mut params = Parameters::zeros_like(self);
        for tensor in &mut params.tensors {
            let name = tensor.name.as_str();
            if name.ends_with("bias") {
                continue;
            }
            let bound = if name.ends_with("_embedding") {
                libm::sqrt(3.0 / tensor.cols as f64)
            } else {
                libm::sqrt(6.0 / (tensor.rows + tensor.cols) as f64)
            };
            for v in &mut tensor.data {
                *v = f64::from(rng.gen_range(-bound..bound) as f32);
            }
        }
        params
    }
}
