//! Turning raw reward vectors into distillation targets.

use std::collections::{BTreeMap, HashSet};

use thiserror::Error;

use crate::dataset::{Query, RewardDataset, RewardVector};

/// Tag assigned to rows that carry no tags of their own.
pub const UNTAGGED: &str = "__untagged__";

const DEFAULT_NGRAM: usize = 6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RewardError {
    #[error("temperature must be positive and finite, got {0}")]
    Temperature(f64),
    #[error("beta must lie in [0, 1], got {0}")]
    Beta(f64),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("length mismatch: {left} vs {right}")]
    Length { left: usize, right: usize },
    #[error("not a probability distribution: {0}")]
    InvalidDistribution(String),
}

/// A probability vector over the registry, in registry order.
#[derive(Debug, Clone, PartialEq)]
pub struct RoutingDistribution(Vec<f64>);

impl RoutingDistribution {
    /// Checks entries are in [0, 1] and sum to 1 within 1e-9.
    pub fn new(probs: Vec<f64>) -> Result<Self, RewardError> {
        if probs.is_empty() {
            return Err(RewardError::InvalidDistribution("empty".into()));
        }
        if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(RewardError::InvalidDistribution(format!(
                "entry {p} outside [0, 1]"
            )));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(RewardError::InvalidDistribution(format!("sums to {sum}")));
        }
        Ok(Self(probs))
    }

    pub fn uniform(len: usize) -> Self {
        Self(vec![1.0 / len as f64; len])
    }

    /// Softmax of `logits` with max-subtraction. Logits must be finite.
    pub fn softmax(logits: &[f64]) -> Self {
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        Self(exps.into_iter().map(|e| e / sum).collect())
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Ties resolve to the lowest index.
    pub fn argmax(&self) -> usize {
        crate::argmax(&self.0).expect("non-empty distribution")
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// Lowercase, split on Unicode whitespace, trim non-alphanumeric characters
/// from both ends of each token, drop tokens that end up empty.
pub fn decontamination_tokens(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|t| t.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase())
        .filter(|t| !t.is_empty())
        .collect()
}

fn ngrams(tokens: &[String], n: usize) -> impl Iterator<Item = String> + '_ {
    tokens.windows(n).map(|w| w.join(" "))
}

/// A dataset row dropped by [`decontaminate`] and the first shared n-gram
/// (in query token order) that caused it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Removal {
    pub id: String,
    pub ngram: String,
}

/// Drops every row whose query shares at least one token n-gram with any
/// benchmark query. An empty benchmark list returns the dataset unchanged.
///
/// # Panics
///
/// Panics if `n == 0`.
pub fn decontaminate<S: AsRef<str>>(
    dataset: &RewardDataset,
    benchmark_queries: &[S],
    n: usize,
) -> (RewardDataset, Vec<Removal>) {
    assert!(n >= 1, "n-gram length must be at least 1");
    let mut index: HashSet<String> = HashSet::new();
    for b in benchmark_queries {
        let tokens = decontamination_tokens(b.as_ref());
        index.extend(ngrams(&tokens, n));
    }
    let mut removed = Vec::new();
    let kept = dataset.filtered(|row| {
        let tokens = decontamination_tokens(&row.query.text);
        let hit = ngrams(&tokens, n).find(|g| index.contains(g));
        match hit {
            Some(ngram) => {
                removed.push(Removal {
                    id: row.query.id.clone(),
                    ngram,
                });
                false
            }
            None => true,
        }
    });
    (kept, removed)
}

/// [`decontaminate`] with the conventional 6-token window.
pub fn decontaminate_default<S: AsRef<str>>(
    dataset: &RewardDataset,
    benchmark_queries: &[S],
) -> (RewardDataset, Vec<Removal>) {
    decontaminate(dataset, benchmark_queries, DEFAULT_NGRAM)
}

/// `softmax(r / temperature)`.
pub fn normalize_rewards(
    rewards: &RewardVector,
    temperature: f64,
) -> Result<RoutingDistribution, RewardError> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(RewardError::Temperature(temperature));
    }
    let scaled: Vec<f64> = rewards.as_slice().iter().map(|r| r / temperature).collect();
    Ok(RoutingDistribution::softmax(&scaled))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TagStats {
    pub mean_rewards: RewardVector,
    pub count: usize,
}

/// Mean reward vector per tag, plus the global mean used for tags the table
/// has never seen.
#[derive(Debug, Clone, PartialEq)]
pub struct TagRewardTable {
    entries: BTreeMap<String, TagStats>,
    global_mean: RewardVector,
}

impl TagRewardTable {
    pub fn get(&self, tag: &str) -> Option<&TagStats> {
        self.entries.get(tag)
    }

    pub fn entries(&self) -> &BTreeMap<String, TagStats> {
        &self.entries
    }

    pub fn global_mean(&self) -> &RewardVector {
        &self.global_mean
    }

    /// The tag-level reward for `query`: the unweighted mean of its tags'
    /// mean vectors. Unknown tags contribute the global mean; an untagged
    /// query uses the reserved untagged entry.
    pub fn tag_reward(&self, query: &Query) -> RewardVector {
        let lookup = |tag: &str| {
            self.entries
                .get(tag)
                .map_or(&self.global_mean, |s| &s.mean_rewards)
        };
        if query.tags.is_empty() {
            return lookup(UNTAGGED).clone();
        }
        let k = self.global_mean.len();
        let mut acc = vec![0.0; k];
        for tag in &query.tags {
            for (a, v) in acc.iter_mut().zip(lookup(tag).as_slice()) {
                *a += v;
            }
        }
        let n = query.tags.len() as f64;
        RewardVector::new(acc.into_iter().map(|a| a / n).collect()).expect("mean of finite values")
    }
}

/// Groups rows by tag and averages their raw reward vectors. A row with
/// several tags contributes to each of them; untagged rows go to
/// [`UNTAGGED`].
pub fn aggregate_tag_rewards(dataset: &RewardDataset) -> Result<TagRewardTable, RewardError> {
    if dataset.is_empty() {
        return Err(RewardError::EmptyDataset);
    }
    let k = dataset.registry().len();
    let mut sums: BTreeMap<String, (Vec<f64>, usize)> = BTreeMap::new();
    let mut total = vec![0.0; k];
    for row in dataset.rows() {
        let r = row.rewards.as_slice();
        for (t, v) in total.iter_mut().zip(r) {
            *t += v;
        }
        let mut add = |tag: &str| {
            let (acc, count) = sums
                .entry(tag.to_owned())
                .or_insert_with(|| (vec![0.0; k], 0));
            for (a, v) in acc.iter_mut().zip(r) {
                *a += v;
            }
            *count += 1;
        };
        if row.query.tags.is_empty() {
            add(UNTAGGED);
        } else {
            for tag in &row.query.tags {
                add(tag);
            }
        }
    }
    let mean = |acc: Vec<f64>, count: usize| {
        RewardVector::new(acc.into_iter().map(|a| a / count as f64).collect())
            .expect("mean of finite values")
    };
    let entries = sums
        .into_iter()
        .map(|(tag, (acc, count))| {
            (
                tag,
                TagStats {
                    mean_rewards: mean(acc, count),
                    count,
                },
            )
        })
        .collect();
    Ok(TagRewardTable {
        entries,
        global_mean: mean(total, dataset.len()),
    })
}

/// `beta * r + (1 - beta) * r_t` where `r_t` is the query's tag-level reward.
pub fn enhance_labels(
    rewards: &RewardVector,
    query: &Query,
    table: &TagRewardTable,
    beta: f64,
) -> Result<RewardVector, RewardError> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(RewardError::Beta(beta));
    }
    let tag_reward = table.tag_reward(query);
    if tag_reward.len() != rewards.len() {
        return Err(RewardError::Length {
            left: rewards.len(),
            right: tag_reward.len(),
        });
    }
    let mixed = rewards
        .as_slice()
        .iter()
        .zip(tag_reward.as_slice())
        .map(|(r, t)| beta * r + (1.0 - beta) * t)
        .collect();
    Ok(RewardVector::new(mixed).expect("convex combination of finite values"))
}

/// Shannon entropy in nats, with `0 ln 0 = 0`.
pub fn reward_entropy(dist: &RoutingDistribution) -> f64 {
    let h: f64 = dist
        .probs()
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.ln())
        .sum();
    h.max(0.0)
}
