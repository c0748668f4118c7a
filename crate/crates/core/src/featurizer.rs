//! Hashed word and character n-gram features.
//!
//! Every n-gram is hashed with 64-bit FNV-1a, reduced modulo the configured
//! dimension, counted, and the count vector is L2-normalized. Word n-grams
//! are space-joined tokens; character n-grams carry a `c#` prefix so the two
//! namespaces never share a hash input.

use std::collections::BTreeMap;
use std::ops::RangeInclusive;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hash::fnv1a64;

pub const DEFAULT_DIMENSION: u32 = 1 << 16;
const CHAR_PREFIX: &str = "c#";

#[derive(Debug, Clone, PartialEq, Error)]
#[error("invalid featurizer config: {0}")]
pub struct ConfigError(pub String);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeaturizerConfig {
    pub dimension: u32,
    pub word_ngram_range: [u32; 2],
    pub char_ngram_range: [u32; 2],
    pub lowercase: bool,
}

impl Default for FeaturizerConfig {
    fn default() -> Self {
        Self {
            dimension: DEFAULT_DIMENSION,
            word_ngram_range: [1, 2],
            char_ngram_range: [3, 5],
            lowercase: true,
        }
    }
}

impl FeaturizerConfig {
    pub fn with_dimension(dimension: u32) -> Self {
        Self {
            dimension,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.dimension < 2 {
            return Err(ConfigError(format!(
                "dimension must be at least 2, got {}",
                self.dimension
            )));
        }
        for (name, [lo, hi]) in [
            ("word", self.word_ngram_range),
            ("char", self.char_ngram_range),
        ] {
            if lo == 0 || lo > hi {
                return Err(ConfigError(format!(
                    "{name} n-gram range [{lo}, {hi}] must satisfy 1 <= lo <= hi"
                )));
            }
        }
        Ok(())
    }

    fn word_range(&self) -> RangeInclusive<usize> {
        self.word_ngram_range[0] as usize..=self.word_ngram_range[1] as usize
    }

    fn char_range(&self) -> RangeInclusive<usize> {
        self.char_ngram_range[0] as usize..=self.char_ngram_range[1] as usize
    }
}

/// Sparse, L2-normalized feature vector. Indices are strictly increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    dimension: u32,
    indices: Vec<u32>,
    values: Vec<f64>,
}

impl FeatureVector {
    pub fn zero(dimension: u32) -> Self {
        Self {
            dimension,
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Builds a vector from `(index, weight)` pairs, summing duplicates and
    /// dropping zero weights. Returns `None` if an index is out of range or a
    /// weight is not finite. No normalization is applied.
    pub fn from_pairs(dimension: u32, pairs: impl IntoIterator<Item = (u32, f64)>) -> Option<Self> {
        let mut acc: BTreeMap<u32, f64> = BTreeMap::new();
        for (i, w) in pairs {
            if i >= dimension || !w.is_finite() {
                return None;
            }
            *acc.entry(i).or_insert(0.0) += w;
        }
        let (indices, values) = acc.into_iter().filter(|(_, w)| *w != 0.0).unzip();
        Some(Self {
            dimension,
            indices,
            values,
        })
    }

    pub fn dimension(&self) -> u32 {
        self.dimension
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices
            .iter()
            .zip(&self.values)
            .map(|(&i, &v)| (i as usize, v))
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &FeatureVector) -> f64 {
        let (mut i, mut j, mut acc) = (0, 0, 0.0);
        while i < self.indices.len() && j < other.indices.len() {
            match self.indices[i].cmp(&other.indices[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    acc += self.values[i] * other.values[j];
                    i += 1;
                    j += 1;
                }
            }
        }
        acc
    }
}

/// All word n-grams (n ascending, then position) followed by all character
/// n-grams over the whitespace-normalized text. An empty range yields nothing
/// for that family.
pub fn extract_ngrams(
    text: &str,
    word_range: RangeInclusive<usize>,
    char_range: RangeInclusive<usize>,
) -> Vec<String> {
    let tokens: Vec<&str> = text.split_whitespace().collect();
    let mut out = Vec::new();
    for n in word_range.filter(|&n| n > 0) {
        out.extend(tokens.windows(n).map(|w| w.join(" ")));
    }
    let chars: Vec<char> = tokens.join(" ").chars().collect();
    for n in char_range.filter(|&n| n > 0) {
        out.extend(
            chars
                .windows(n)
                .map(|w| format!("{CHAR_PREFIX}{}", w.iter().collect::<String>())),
        );
    }
    out
}

pub fn bucket(ngram: &str, dimension: u32) -> u32 {
    (fnv1a64(ngram.as_bytes()) % u64::from(dimension)) as u32
}

/// Deterministic hashed featurization. Empty text yields the zero vector.
pub fn featurize(config: &FeaturizerConfig, text: &str) -> FeatureVector {
    let text = if config.lowercase {
        text.to_lowercase()
    } else {
        text.to_owned()
    };
    let ngrams = extract_ngrams(&text, config.word_range(), config.char_range());
    let mut counts: BTreeMap<u32, f64> = BTreeMap::new();
    for g in &ngrams {
        *counts.entry(bucket(g, config.dimension)).or_insert(0.0) += 1.0;
    }
    let norm = counts.values().map(|c| c * c).sum::<f64>().sqrt();
    if norm == 0.0 {
        return FeatureVector::zero(config.dimension);
    }
    let (indices, values) = counts.into_iter().map(|(i, c)| (i, c / norm)).unzip();
    FeatureVector {
        dimension: config.dimension,
        indices,
        values,
    }
}
