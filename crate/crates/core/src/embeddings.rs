//! Frozen input vectors: pretrained word embeddings and precomputed
//! contextual embeddings, plus the layer averaging and subword pooling used to
//! produce the latter.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use crate::conllu::Sentence;
use crate::lemma_rules::lowercase;

/// Number of final transformer layers averaged by default.
pub const DEFAULT_LAYER_COUNT: usize = 4;

#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum EmbeddingError {
    #[error("vector for `{word}` has dimension {found}, expected {expected}")]
    Dimension {
        word: String,
        expected: usize,
        found: usize,
    },
    #[error("cannot average the last {k} of {available} layers")]
    LayerRange { k: usize, available: usize },
    #[error("layer vectors disagree in dimension")]
    RaggedLayers,
    #[error("alignment covers {covered} subwords but {available} were given")]
    Alignment { covered: usize, available: usize },
    #[error("alignment assigns zero subwords to word {0}")]
    EmptyWord(usize),
    #[error("sentence `{id}` has {found} contextual vectors for {expected} tokens")]
    TokenCount {
        id: String,
        expected: usize,
        found: usize,
    },
}

/// Pretrained word vectors. Lookups try the exact form, then its lowercase;
/// unknown words get the zero vector.
#[derive(Clone, Debug, PartialEq)]
pub struct WordVectorTable {
    dimension: usize,
    vectors: BTreeMap<String, Vec<f32>>,
    zero: Vec<f32>,
}

impl WordVectorTable {
    pub fn new(dimension: usize) -> Self {
        WordVectorTable {
            dimension,
            vectors: BTreeMap::new(),
            zero: vec![0.0; dimension],
        }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// Adds a vector. Returns `false` (and keeps the old vector) when the word
    /// is already present.
    pub fn insert(&mut self, word: &str, vector: Vec<f32>) -> Result<bool, EmbeddingError> {
        if vector.len() != self.dimension {
            return Err(EmbeddingError::Dimension {
                word: word.to_string(),
                expected: self.dimension,
                found: vector.len(),
            });
        }
        if self.vectors.contains_key(word) {
            return Ok(false);
        }
        self.vectors.insert(word.to_string(), vector);
        Ok(true)
    }

    pub fn get(&self, word: &str) -> Option<&[f32]> {
        self.vectors
            .get(word)
            .or_else(|| self.vectors.get(&lowercase(word)))
            .map(Vec::as_slice)
    }

    pub fn lookup(&self, word: &str) -> &[f32] {
        self.get(word).unwrap_or(&self.zero)
    }
}

/// Key under which a sentence's contextual vectors are stored: its `sent_id`
/// comment, or else its 1-based position in the corpus.
pub fn sentence_key(sentence: &Sentence, ordinal: usize) -> String {
    sentence
        .sent_id()
        .map(ToString::to_string)
        .unwrap_or_else(|| (ordinal + 1).to_string())
}

/// Per-sentence contextual vectors, row-major `tokens x dimension`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ContextualSidecar {
    dimension: usize,
    sentences: BTreeMap<String, Vec<f32>>,
    order: Vec<String>,
}

impl ContextualSidecar {
    pub fn new(dimension: usize) -> Self {
        ContextualSidecar {
            dimension,
            ..Default::default()
        }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn insert(&mut self, id: &str, rows: Vec<f32>) -> Result<(), EmbeddingError> {
        if self.dimension == 0 || !rows.len().is_multiple_of(self.dimension) {
            return Err(EmbeddingError::Dimension {
                word: id.to_string(),
                expected: self.dimension,
                found: rows.len(),
            });
        }
        if self.sentences.insert(id.to_string(), rows).is_none() {
            self.order.push(id.to_string());
        }
        Ok(())
    }

    /// Sentence ids in insertion order.
    pub fn ids(&self) -> &[String] {
        &self.order
    }

    pub fn rows(&self, id: &str) -> Option<&[f32]> {
        self.sentences.get(id).map(Vec::as_slice)
    }

    /// Vectors for a sentence, checked against its token count.
    pub fn for_sentence(
        &self,
        sentence: &Sentence,
        ordinal: usize,
    ) -> Result<Option<&[f32]>, EmbeddingError> {
        let id = sentence_key(sentence, ordinal);
        match self.rows(&id) {
            None => Ok(None),
            Some(rows) if rows.len() == sentence.len() * self.dimension => Ok(Some(rows)),
            Some(rows) => Err(EmbeddingError::TokenCount {
                id,
                expected: sentence.len(),
                found: rows.len() / self.dimension,
            }),
        }
    }
}

/// Mean of the final `k` layer vectors.
pub fn average_last_layers(layers: &[Vec<f32>], k: usize) -> Result<Vec<f32>, EmbeddingError> {
    if k == 0 || k > layers.len() {
        return Err(EmbeddingError::LayerRange {
            k,
            available: layers.len(),
        });
    }
    let dimension = layers[0].len();
    if layers.iter().any(|l| l.len() != dimension) {
        return Err(EmbeddingError::RaggedLayers);
    }
    let mut mean = vec![0.0f64; dimension];
    for layer in &layers[layers.len() - k..] {
        for (m, &x) in mean.iter_mut().zip(layer) {
            *m += f64::from(x);
        }
    }
    Ok(mean.into_iter().map(|m| (m / k as f64) as f32).collect())
}

/// Averages consecutive subword vectors into word vectors; `alignment[i]` is
/// the number of subwords of word `i`.
pub fn pool_subwords(
    subwords: &[Vec<f32>],
    alignment: &[usize],
) -> Result<Vec<Vec<f32>>, EmbeddingError> {
    let covered: usize = alignment.iter().sum();
    if covered != subwords.len() {
        return Err(EmbeddingError::Alignment {
            covered,
            available: subwords.len(),
        });
    }
    if let Some(word) = alignment.iter().position(|&n| n == 0) {
        return Err(EmbeddingError::EmptyWord(word));
    }
    let dimension = subwords.first().map_or(0, Vec::len);
    if subwords.iter().any(|s| s.len() != dimension) {
        return Err(EmbeddingError::RaggedLayers);
    }
    let mut start = 0;
    let mut words = Vec::with_capacity(alignment.len());
    for &count in alignment {
        let mut mean = vec![0.0f64; dimension];
        for subword in &subwords[start..start + count] {
            for (m, &x) in mean.iter_mut().zip(subword) {
                *m += f64::from(x);
            }
        }
        words.push(
            mean.into_iter()
                .map(|m| (m / count as f64) as f32)
                .collect(),
        );
        start += count;
    }
    Ok(words)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn word_table_basics() {
        let mut table = WordVectorTable::new(3);
        assert!(table.insert("cat", vec![1.0, 2.0, 3.0]).unwrap());
        assert!(table.insert("Dog", vec![0.5, 0.5, 0.5]).unwrap());
        assert_eq!(table.len(), 2);
        assert!(!table.insert("cat", vec![9.0, 9.0, 9.0]).unwrap());
        assert_eq!(table.lookup("cat"), [1.0, 2.0, 3.0]);
        assert_eq!(table.lookup("CAT"), [1.0, 2.0, 3.0]);
        assert_eq!(table.lookup("Dog"), [0.5, 0.5, 0.5]);
        assert_eq!(table.lookup("dog"), [0.0, 0.0, 0.0]);
        assert_eq!(table.lookup("zebra"), [0.0, 0.0, 0.0]);
        assert!(matches!(
            table.insert("x", vec![1.0]),
            Err(EmbeddingError::Dimension {
                expected: 3,
                found: 1,
                ..
            })
        ));
    }

    #[test]
    fn layer_averaging() {
        let a = vec![1.0, -2.0];
        assert_eq!(
            average_last_layers(core::slice::from_ref(&a), 1).unwrap(),
            a
        );
        assert_eq!(
            average_last_layers(&[vec![0.0; 4], vec![0.0; 4]], 2).unwrap(),
            vec![0.0; 4]
        );
        assert_eq!(
            average_last_layers(core::slice::from_ref(&a), 2),
            Err(EmbeddingError::LayerRange { k: 2, available: 1 })
        );
        assert_eq!(
            average_last_layers(&[vec![1.0], vec![1.0, 2.0]], 2),
            Err(EmbeddingError::RaggedLayers)
        );
    }

    #[test]
    fn subword_pooling() {
        let u = vec![1.0, 3.0];
        let v = vec![3.0, 5.0];
        assert_eq!(
            pool_subwords(&[u.clone(), v.clone()], &[2]).unwrap(),
            vec![vec![2.0, 4.0]]
        );
        let three = vec![u.clone(), v.clone(), vec![7.0, 7.0]];
        assert_eq!(pool_subwords(&three, &[1, 1, 1]).unwrap(), three);
        assert_eq!(
            pool_subwords(&three, &[1, 1]),
            Err(EmbeddingError::Alignment {
                covered: 2,
                available: 3
            })
        );
        assert_eq!(
            pool_subwords(&three, &[3, 0]),
            Err(EmbeddingError::EmptyWord(1))
        );
    }

    proptest! {
        #[test]
        fn averaging_matches_direct_mean(layers in proptest::collection::vec(proptest::collection::vec(-5.0f32..5.0, 5), 6)) {
            let got = average_last_layers(&layers, 4).unwrap();
            for d in 0..5 {
                let expected = (f64::from(layers[2][d]) + f64::from(layers[3][d]) + f64::from(layers[4][d]) + f64::from(layers[5][d])) / 4.0;
                prop_assert!((f64::from(got[d]) - expected).abs() < 1e-6);
            }
        }

        #[test]
        fn pooling_matches_group_means(counts in proptest::collection::vec(1usize..4, 1..6), seed in any::<u32>()) {
            let total: usize = counts.iter().sum();
            let subwords: Vec<Vec<f32>> = (0..total)
                .map(|i| (0..3).map(|d| ((seed as usize + i * 7 + d * 13) % 17) as f32 - 8.0).collect())
                .collect();
            let pooled = pool_subwords(&subwords, &counts).unwrap();
            prop_assert_eq!(pooled.len(), counts.len());
            // brute force: assign each subword its owning word by scanning
            let mut owner = Vec::new();
            for (w, &c) in counts.iter().enumerate() {
                owner.extend(core::iter::repeat_n(w, c));
            }
            for (w, word) in pooled.iter().enumerate() {
                for d in 0..3 {
                    let members: Vec<f64> = (0..total).filter(|&i| owner[i] == w).map(|i| f64::from(subwords[i][d])).collect();
                    let mean = members.iter().sum::<f64>() / members.len() as f64;
                    prop_assert!((f64::from(word[d]) - mean).abs() < 1e-6);
                }
            }
        }
    }
}
