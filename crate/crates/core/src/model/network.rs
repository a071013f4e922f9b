//! Forward and backward passes of the tagger network.
//!
//! Token input: `[word embedding; character representation; pretrained
//! vector; contextual vector]`, where the character representation is the
//! mean of the token's character embeddings plus the mean of its boundary
//! n-gram embeddings. The encoder (window feed-forward or bidirectional GRU
//! layers) produces one state per token. The lemma-rule head reads the state
//! concatenated with the character representation; the bundle head and the
//! per-category heads read the state alone.

use alloc::vec;
use alloc::vec::Vec;

use super::math::{axpy, gemv, gemv_t, ger, sigmoid, softmax, tanh};
use super::params::{GruHandles, LayerHandles, Layout, Parameters};
use super::vocab::GoldLabels;
use super::ModelConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct EncodedToken {
    pub word: usize,
    pub chars: Vec<usize>,
    pub ngrams: Vec<usize>,
}

/// A sentence mapped to vocabulary indices plus its frozen input vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedSentence {
    pub tokens: Vec<EncodedToken>,
    /// `tokens x pretrained_dim`, row-major.
    pub pretrained: Option<Vec<f64>>,
    /// `tokens x contextual_dim`, row-major.
    pub contextual: Option<Vec<f64>>,
}

impl EncodedSentence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Loss terms averaged over the tokens of a batch.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    /// Cross-entropy of the lemma-rule head.
    pub lemma: f64,
    /// Cross-entropy of the whole-bundle head.
    pub bundle: f64,
    /// Cross-entropy of the category heads, averaged over categories.
    pub category: f64,
    /// Weight of the category term.
    pub weight: f64,
    pub tokens: usize,
}

impl LossBreakdown {
    pub fn total(&self) -> f64 {
        self.lemma + self.bundle + self.weight * self.category
    }
}

struct GruStep {
    h_prev: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    n: Vec<f64>,
    rh: Vec<f64>,
}

enum LayerCache {
    Window {
        windows: Vec<Vec<f64>>,
        outputs: Vec<Vec<f64>>,
    },
    Recurrent {
        forward: Vec<GruStep>,
        backward: Vec<GruStep>,
    },
}

/// Activations kept for the backward pass.
pub(crate) struct Forward {
    pub cle: Vec<Vec<f64>>,
    /// Input sequence of every layer; the last entry is the final states.
    pub sequences: Vec<Vec<Vec<f64>>>,
    layers: Vec<LayerCache>,
}

impl Forward {
    pub fn states(&self) -> &[Vec<f64>] {
        self.sequences.last().expect("at least the input sequence")
    }
}

fn row(matrix: &[f64], cols: usize, index: usize) -> &[f64] {
    &matrix[index * cols..(index + 1) * cols]
}

fn row_mut(matrix: &mut [f64], cols: usize, index: usize) -> &mut [f64] {
    &mut matrix[index * cols..(index + 1) * cols]
}

fn character_representation(
    params: &Parameters,
    layout: &Layout,
    dim: usize,
    token: &EncodedToken,
) -> Vec<f64> {
    let mut cle = vec![0.0; dim];
    if !token.chars.is_empty() {
        let w = 1.0 / token.chars.len() as f64;
        for &c in &token.chars {
            axpy(w, row(&params[layout.char_embedding], dim, c), &mut cle);
        }
    }
    if !token.ngrams.is_empty() {
        let w = 1.0 / token.ngrams.len() as f64;
        for &g in &token.ngrams {
            axpy(w, row(&params[layout.ngram_embedding], dim, g), &mut cle);
        }
    }
    cle
}

fn gru_direction(
    params: &Parameters,
    handles: &GruHandles,
    inputs: &[Vec<f64>],
    hidden: usize,
    reverse: bool,
) -> Vec<GruStep> {
    let input_dim = inputs.first().map_or(0, Vec::len);
    let n = inputs.len();
    let mut steps: Vec<Option<GruStep>> = (0..n).map(|_| None).collect();
    let mut h = vec![0.0; hidden];
    for i in 0..n {
        let t = if reverse { n - 1 - i } else { i };
        let x = &inputs[t];
        let gate = |g: usize, recurrent_input: &[f64]| {
            let mut a = params[handles.bias[g]].to_vec();
            gemv(&params[handles.input[g]], input_dim, x, &mut a);
            gemv(
                &params[handles.recurrent[g]],
                hidden,
                recurrent_input,
                &mut a,
            );
            a
        };
        let z: Vec<f64> = gate(0, &h).into_iter().map(sigmoid).collect();
        let r: Vec<f64> = gate(1, &h).into_iter().map(sigmoid).collect();
        let rh: Vec<f64> = r.iter().zip(&h).map(|(a, b)| a * b).collect();
        let cand: Vec<f64> = gate(2, &rh).into_iter().map(tanh).collect();
        let next: Vec<f64> = (0..hidden)
            .map(|k| (1.0 - z[k]) * cand[k] + z[k] * h[k])
            .collect();
        steps[t] = Some(GruStep {
            h_prev: core::mem::replace(&mut h, next),
            z,
            r,
            n: cand,
            rh,
        });
    }
    steps
        .into_iter()
        .map(|s| s.expect("every step visited"))
        .collect()
}

/// Hidden state after a step, recomputed from the cached gates.
fn gru_output(step: &GruStep) -> impl Iterator<Item = f64> + '_ {
    (0..step.z.len()).map(|k| (1.0 - step.z[k]) * step.n[k] + step.z[k] * step.h_prev[k])
}

pub(crate) fn forward(
    params: &Parameters,
    layout: &Layout,
    config: &ModelConfig,
    sentence: &EncodedSentence,
) -> Forward {
    let dc = config.char_dim;
    let dw = config.word_dim;
    let n = sentence.len();

    let cle: Vec<Vec<f64>> = sentence
        .tokens
        .iter()
        .map(|t| character_representation(params, layout, dc, t))
        .collect();
    let inputs: Vec<Vec<f64>> = (0..n)
        .map(|t| {
            let mut x = Vec::with_capacity(layout.input_dim);
            x.extend_from_slice(row(
                &params[layout.word_embedding],
                dw,
                sentence.tokens[t].word,
            ));
            x.extend_from_slice(&cle[t]);
            if config.use_pretrained {
                let d = config.pretrained_dim;
                let aux = sentence
                    .pretrained
                    .as_deref()
                    .expect("pretrained vectors resolved");
                x.extend_from_slice(&aux[t * d..(t + 1) * d]);
            }
            if config.use_contextual {
                let d = config.contextual_dim;
                let aux = sentence
                    .contextual
                    .as_deref()
                    .expect("contextual vectors resolved");
                x.extend_from_slice(&aux[t * d..(t + 1) * d]);
            }
            x
        })
        .collect();

    let mut sequences = vec![inputs];
    let mut layers = Vec::with_capacity(layout.layers.len());
    for handles in &layout.layers {
        let input = sequences.last().expect("input sequence");
        match handles {
            LayerHandles::Window {
                weight,
                bias,
                input_dim,
            } => {
                let k = config.window;
                let span = 2 * k + 1;
                let mut windows = Vec::with_capacity(n);
                let mut outputs = Vec::with_capacity(n);
                for t in 0..n {
                    let mut window = vec![0.0; span * input_dim];
                    for o in 0..span {
                        if let Some(pos) = (t + o).checked_sub(k).filter(|&p| p < n) {
                            window[o * input_dim..(o + 1) * input_dim].copy_from_slice(&input[pos]);
                        }
                    }
                    let mut a = params[*bias].to_vec();
                    gemv(&params[*weight], span * input_dim, &window, &mut a);
                    outputs.push(a.into_iter().map(tanh).collect::<Vec<f64>>());
                    windows.push(window);
                }
                sequences.push(outputs.clone());
                layers.push(LayerCache::Window { windows, outputs });
            }
            LayerHandles::Recurrent {
                forward, backward, ..
            } => {
                let hidden = config.hidden_dim;
                let fwd = gru_direction(params, forward, input, hidden, false);
                let bwd = gru_direction(params, backward, input, hidden, true);
                let outputs = (0..n)
                    .map(|t| gru_output(&fwd[t]).chain(gru_output(&bwd[t])).collect())
                    .collect();
                sequences.push(outputs);
                layers.push(LayerCache::Recurrent {
                    forward: fwd,
                    backward: bwd,
                });
            }
        }
    }
    Forward {
        cle,
        sequences,
        layers,
    }
}

#[allow(clippy::too_many_arguments)]
fn gru_direction_backward(
    params: &Parameters,
    grads: &mut Parameters,
    handles: &GruHandles,
    steps: &[GruStep],
    inputs: &[Vec<f64>],
    d_outputs: &[Vec<f64>],
    offset: usize,
    d_inputs: &mut [Vec<f64>],
    reverse: bool,
) {
    let n = steps.len();
    let hidden = steps.first().map_or(0, |s| s.z.len());
    let input_dim = inputs.first().map_or(0, Vec::len);
    let mut carry = vec![0.0; hidden];
    for i in 0..n {
        // visit in reverse processing order
        let t = if reverse { i } else { n - 1 - i };
        let step = &steps[t];
        let x = &inputs[t];
        let dh: Vec<f64> = (0..hidden)
            .map(|k| d_outputs[t][offset + k] + carry[k])
            .collect();

        let mut dh_prev: Vec<f64> = (0..hidden).map(|k| dh[k] * step.z[k]).collect();
        let dz: Vec<f64> = (0..hidden)
            .map(|k| dh[k] * (step.h_prev[k] - step.n[k]) * step.z[k] * (1.0 - step.z[k]))
            .collect();
        let dn: Vec<f64> = (0..hidden)
            .map(|k| dh[k] * (1.0 - step.z[k]) * (1.0 - step.n[k] * step.n[k]))
            .collect();

        // candidate gate
        axpy(1.0, &dn, &mut grads[handles.bias[2]]);
        ger(&mut grads[handles.input[2]], input_dim, &dn, x);
        gemv_t(&params[handles.input[2]], input_dim, &dn, &mut d_inputs[t]);
        ger(&mut grads[handles.recurrent[2]], hidden, &dn, &step.rh);
        let mut d_rh = vec![0.0; hidden];
        gemv_t(&params[handles.recurrent[2]], hidden, &dn, &mut d_rh);
        let dr: Vec<f64> = (0..hidden)
            .map(|k| d_rh[k] * step.h_prev[k] * step.r[k] * (1.0 - step.r[k]))
            .collect();
        for k in 0..hidden {
            dh_prev[k] += d_rh[k] * step.r[k];
        }

        // update and reset gates
        for (g, da) in [(0, &dz), (1, &dr)] {
            axpy(1.0, da, &mut grads[handles.bias[g]]);
            ger(&mut grads[handles.input[g]], input_dim, da, x);
            gemv_t(&params[handles.input[g]], input_dim, da, &mut d_inputs[t]);
            ger(&mut grads[handles.recurrent[g]], hidden, da, &step.h_prev);
            gemv_t(&params[handles.recurrent[g]], hidden, da, &mut dh_prev);
        }
        carry = dh_prev;
    }
}

/// Backpropagates state and character-representation gradients into
/// `grads`. Frozen input vectors receive no gradient.
#[allow(clippy::too_many_arguments)]
pub(crate) fn backward(
    params: &Parameters,
    layout: &Layout,
    config: &ModelConfig,
    sentence: &EncodedSentence,
    cache: &Forward,
    d_states: Vec<Vec<f64>>,
    d_cle: &[Vec<f64>],
    grads: &mut Parameters,
) {
    let n = sentence.len();
    let mut d_out = d_states;
    for (l, (handles, layer)) in layout.layers.iter().zip(&cache.layers).enumerate().rev() {
        let inputs = &cache.sequences[l];
        match (handles, layer) {
            (
                LayerHandles::Window {
                    weight,
                    bias,
                    input_dim,
                },
                LayerCache::Window { windows, outputs },
            ) => {
                let k = config.window;
                let span = 2 * k + 1;
                let mut d_in = vec![vec![0.0; *input_dim]; n];
                for t in 0..n {
                    let da: Vec<f64> = d_out[t]
                        .iter()
                        .zip(&outputs[t])
                        .map(|(d, y)| d * (1.0 - y * y))
                        .collect();
                    axpy(1.0, &da, &mut grads[*bias]);
                    ger(&mut grads[*weight], span * input_dim, &da, &windows[t]);
                    let mut d_window = vec![0.0; span * input_dim];
                    gemv_t(&params[*weight], span * input_dim, &da, &mut d_window);
                    for o in 0..span {
                        if let Some(pos) = (t + o).checked_sub(k).filter(|&p| p < n) {
                            axpy(
                                1.0,
                                &d_window[o * input_dim..(o + 1) * input_dim],
                                &mut d_in[pos],
                            );
                        }
                    }
                }
                d_out = d_in;
            }
            (
                LayerHandles::Recurrent {
                    forward,
                    backward,
                    input_dim,
                },
                LayerCache::Recurrent {
                    forward: fwd,
                    backward: bwd,
                },
            ) => {
                let mut d_in = vec![vec![0.0; *input_dim]; n];
                gru_direction_backward(
                    params, grads, forward, fwd, inputs, &d_out, 0, &mut d_in, false,
                );
                gru_direction_backward(
                    params,
                    grads,
                    backward,
                    bwd,
                    inputs,
                    &d_out,
                    config.hidden_dim,
                    &mut d_in,
                    true,
                );
                d_out = d_in;
            }
            _ => unreachable!("layer cache matches layout"),
        }
    }

    let dw = config.word_dim;
    let dc = config.char_dim;
    for (t, token) in sentence.tokens.iter().enumerate() {
        let dx = &d_out[t];
        axpy(
            1.0,
            &dx[..dw],
            row_mut(&mut grads[layout.word_embedding], dw, token.word),
        );
        let mut dcle = dx[dw..dw + dc].to_vec();
        axpy(1.0, &d_cle[t], &mut dcle);
        if !token.chars.is_empty() {
            let w = 1.0 / token.chars.len() as f64;
            for &c in &token.chars {
                axpy(w, &dcle, row_mut(&mut grads[layout.char_embedding], dc, c));
            }
        }
        if !token.ngrams.is_empty() {
            let w = 1.0 / token.ngrams.len() as f64;
            for &g in &token.ngrams {
                axpy(w, &dcle, row_mut(&mut grads[layout.ngram_embedding], dc, g));
            }
        }
    }
}

/// Logits of a linear head.
fn head_logits(params: &Parameters, head: (usize, usize), input: &[f64]) -> Vec<f64> {
    let mut logits = params[head.1].to_vec();
    gemv(&params[head.0], input.len(), input, &mut logits);
    logits
}

/// Cross-entropy against `gold`; when `grads` is given, accumulates
/// `scale * dCE/dlogits` into the head and returns the input gradient.
fn head_loss(
    params: &Parameters,
    head: (usize, usize),
    input: &[f64],
    gold: usize,
    scale: f64,
    grads: Option<&mut Parameters>,
) -> (f64, Option<Vec<f64>>) {
    let logits = head_logits(params, head, input);
    let (mut probs, lse) = softmax(&logits);
    let ce = lse - logits[gold];
    let Some(grads) = grads else {
        return (ce, None);
    };
    probs[gold] -= 1.0;
    for p in &mut probs {
        *p *= scale;
    }
    axpy(1.0, &probs, &mut grads[head.1]);
    ger(&mut grads[head.0], input.len(), &probs, input);
    let mut d_input = vec![0.0; input.len()];
    gemv_t(&params[head.0], input.len(), &probs, &mut d_input);
    (ce, Some(d_input))
}

fn lemma_input(state: &[f64], cle: &[f64]) -> Vec<f64> {
    let mut input = Vec::with_capacity(state.len() + cle.len());
    input.extend_from_slice(state);
    input.extend_from_slice(cle);
    input
}

/// Summed (not averaged) loss terms of one sentence; gradients are scaled by
/// `scale` before accumulation.
#[allow(clippy::too_many_arguments)]
pub(crate) fn sentence_loss(
    params: &Parameters,
    layout: &Layout,
    config: &ModelConfig,
    sentence: &EncodedSentence,
    gold: &[GoldLabels],
    weight: f64,
    scale: f64,
    mut grads: Option<&mut Parameters>,
) -> (f64, f64, f64) {
    let cache = forward(params, layout, config, sentence);
    let n = sentence.len();
    let state_dim = layout.state_dim;
    let mut d_states = vec![vec![0.0; state_dim]; n];
    let mut d_cle = vec![vec![0.0; config.char_dim]; n];
    let (mut lemma, mut bundle, mut category) = (0.0, 0.0, 0.0);
    let category_count = layout.categories.len();

    for t in 0..n {
        let state = &cache.states()[t];
        let labels = &gold[t];
        if let Some(g) = labels.rule {
            let input = lemma_input(state, &cache.cle[t]);
            let (ce, d) = head_loss(params, layout.lemma, &input, g, scale, grads.as_deref_mut());
            lemma += ce;
            if let Some(d) = d {
                axpy(1.0, &d[..state_dim], &mut d_states[t]);
                axpy(1.0, &d[state_dim..], &mut d_cle[t]);
            }
        }
        if let Some(g) = labels.bundle {
            let (ce, d) = head_loss(params, layout.bundle, state, g, scale, grads.as_deref_mut());
            bundle += ce;
            if let Some(d) = d {
                axpy(1.0, &d, &mut d_states[t]);
            }
        }
        if category_count > 0 && labels.categories.len() == category_count {
            let share = scale * weight / category_count as f64;
            let mut sum = 0.0;
            for (head, &g) in layout.categories.iter().zip(&labels.categories) {
                let want_grad = weight != 0.0;
                let (ce, d) = head_loss(
                    params,
                    *head,
                    state,
                    g,
                    share,
                    if want_grad {
                        grads.as_deref_mut()
                    } else {
                        None
                    },
                );
                sum += ce;
                if let Some(d) = d {
                    axpy(1.0, &d, &mut d_states[t]);
                }
            }
            category += sum / category_count as f64;
        }
    }

    if let Some(grads) = grads {
        backward(
            params, layout, config, sentence, &cache, d_states, &d_cle, grads,
        );
    }
    (lemma, bundle, category)
}

/// Per-token probability distributions of the inference heads.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenDistribution {
    pub rules: Vec<f64>,
    pub bundles: Vec<f64>,
}

pub(crate) fn distributions(
    params: &Parameters,
    layout: &Layout,
    config: &ModelConfig,
    sentence: &EncodedSentence,
) -> Vec<TokenDistribution> {
    let cache = forward(params, layout, config, sentence);
    cache
        .states()
        .iter()
        .zip(&cache.cle)
        .map(|(state, cle)| TokenDistribution {
            rules: softmax(&head_logits(params, layout.lemma, &lemma_input(state, cle))).0,
            bundles: softmax(&head_logits(params, layout.bundle, state)).0,
        })
        .collect()
}

pub(crate) fn category_distributions(
    params: &Parameters,
    layout: &Layout,
    config: &ModelConfig,
    sentence: &EncodedSentence,
) -> Vec<Vec<Vec<f64>>> {
    let cache = forward(params, layout, config, sentence);
    cache
        .states()
        .iter()
        .map(|state| {
            layout
                .categories
                .iter()
                .map(|head| softmax(&head_logits(params, *head, state)).0)
                .collect()
        })
        .collect()
}
