//! Ensemble baselines that routing is measured against: reward-model ranking
//! (score every candidate's output, keep the best) and oracle selection
//! (argmax of ground-truth preference). Also hosts the reward sources and the
//! planted-expertise synthetic benchmark generator.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::argmax;
use crate::dataset::{ModelRegistry, Query, RewardDataset, RewardRow, RewardVector};
use crate::hash::fnv1a64;

#[derive(Debug, Error)]
pub enum RankingError {
    #[error("no output for model \"{0}\"")]
    MissingOutput(String),
    #[error("more than one output for model \"{0}\"")]
    DuplicateOutput(String),
    #[error("output from unregistered model \"{0}\"")]
    UnknownModel(String),
    #[error("no oracle scores for query \"{0}\"")]
    MissingOracle(String),
    #[error("reward source has no entry for query \"{0}\"")]
    MissingReward(String),
    #[error("reward source covers {got} models, registry has {expected}")]
    Length { expected: usize, got: usize },
    #[error("invalid synthetic benchmark spec: {0}")]
    Spec(String),
}

/// One candidate's answer to a query. Response texts are stubs; only the
/// reward matters for ranking.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateOutput {
    pub model_id: String,
    pub response_text: String,
    pub score: Option<f64>,
}

/// `"<model_id>:<fnv1a64 of the query text, hex>"`.
pub fn stub_response(model_id: &str, query_text: &str) -> String {
    format!("{model_id}:{:016x}", fnv1a64(query_text.as_bytes()))
}

/// Stub outputs for every registered model, in registry order.
pub fn stub_outputs(registry: &ModelRegistry, query: &Query) -> Vec<CandidateOutput> {
    registry
        .ids()
        .map(|id| CandidateOutput {
            model_id: id.to_owned(),
            response_text: stub_response(id, &query.text),
            score: None,
        })
        .collect()
}

/// Where rewards come from.
#[derive(Debug, Clone)]
pub enum RewardSource {
    /// Fixed reward vectors keyed by query id.
    DatasetLookup(HashMap<String, RewardVector>),
    /// `margin` for the planted expert of each of the query's tags, 0
    /// otherwise. Tags without an expert contribute nothing.
    SyntheticPlanted {
        num_models: usize,
        expertise: BTreeMap<String, usize>,
        margin: f64,
    },
    /// Adds N(0, sigma²) to every reward of `inner`. The noise for a query is
    /// a pure function of `(seed, query id)`.
    NoisyWrapper {
        inner: Box<RewardSource>,
        sigma: f64,
        seed: u64,
    },
}

impl RewardSource {
    pub fn from_dataset(dataset: &RewardDataset) -> Self {
        RewardSource::DatasetLookup(
            dataset
                .rows()
                .iter()
                .map(|r| (r.query.id.clone(), r.rewards.clone()))
                .collect(),
        )
    }

    pub fn noisy(inner: RewardSource, sigma: f64, seed: u64) -> Self {
        RewardSource::NoisyWrapper {
            inner: Box::new(inner),
            sigma,
            seed,
        }
    }

    /// Reward of every registered model for `query`, registry order.
    pub fn rewards(&self, query: &Query) -> Result<RewardVector, RankingError> {
        match self {
            RewardSource::DatasetLookup(map) => map
                .get(&query.id)
                .cloned()
                .ok_or_else(|| RankingError::MissingReward(query.id.clone())),
            RewardSource::SyntheticPlanted {
                num_models,
                expertise,
                margin,
            } => {
                let mut r = vec![0.0; *num_models];
                for tag in &query.tags {
                    if let Some(&e) = expertise.get(tag) {
                        r[e] = *margin;
                    }
                }
                Ok(RewardVector::new(r).expect("finite margin"))
            }
            RewardSource::NoisyWrapper { inner, sigma, seed } => {
                let base = inner.rewards(query)?.into_inner();
                if *sigma == 0.0 {
                    return Ok(RewardVector::new(base).expect("finite"));
                }
                let normal = Normal::new(0.0, *sigma).expect("sigma is finite and non-negative");
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a64(query.id.as_bytes()));
                let noisy = base.iter().map(|r| r + normal.sample(&mut rng)).collect();
                Ok(RewardVector::new(noisy).expect("finite"))
            }
        }
    }
}

/// Reward-model ranking: score every output and keep the best.
///
/// `outputs` must hold exactly one output per registered model, in any
/// order. Returns the winning registry index (lowest on ties) and the reward
/// vector in registry order.
pub fn rmr_select(
    registry: &ModelRegistry,
    query: &Query,
    outputs: &[CandidateOutput],
    source: &RewardSource,
) -> Result<(usize, RewardVector), RankingError> {
    let mut seen = vec![false; registry.len()];
    for o in outputs {
        let idx = registry
            .index_of(&o.model_id)
            .ok_or_else(|| RankingError::UnknownModel(o.model_id.clone()))?;
        if std::mem::replace(&mut seen[idx], true) {
            return Err(RankingError::DuplicateOutput(o.model_id.clone()));
        }
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(RankingError::MissingOutput(
            registry.model(missing).model_id.clone(),
        ));
    }
    let rewards = source.rewards(query)?;
    if rewards.len() != registry.len() {
        return Err(RankingError::Length {
            expected: registry.len(),
            got: rewards.len(),
        });
    }
    let winner = argmax(rewards.as_slice()).expect("non-empty registry");
    Ok((winner, rewards))
}

/// Argmax of ground-truth preference, lowest index on ties.
pub fn oracle_select(oracle_scores: &RewardVector) -> usize {
    argmax(oracle_scores.as_slice()).expect("non-empty oracle scores")
}

/// Ground-truth preference vectors keyed by query id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OracleMap(HashMap<String, RewardVector>);

impl OracleMap {
    pub fn new(map: HashMap<String, RewardVector>) -> Self {
        Self(map)
    }

    /// Uses each row's rewards as its ground truth.
    pub fn from_dataset(dataset: &RewardDataset) -> Self {
        Self(
            dataset
                .rows()
                .iter()
                .map(|r| (r.query.id.clone(), r.rewards.clone()))
                .collect(),
        )
    }

    pub fn scores(&self, query_id: &str) -> Result<&RewardVector, RankingError> {
        self.0
            .get(query_id)
            .ok_or_else(|| RankingError::MissingOracle(query_id.to_owned()))
    }

    pub fn select(&self, query_id: &str) -> Result<usize, RankingError> {
        self.scores(query_id).map(oracle_select)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Cluster {
    pub tag: String,
    pub vocabulary: Vec<String>,
}

fn default_words_per_query() -> usize {
    8
}

/// Configuration of a planted-expertise benchmark. TOML form:
///
/// ```toml
/// num_models = 3
/// queries_per_cluster = 20
/// expertise_margin = 1.0
/// noise_sigma = 0.25
/// seed = 7
/// words_per_query = 8          # optional
///
/// [expertise]                  # optional; default: cluster i -> model i
/// math = 2
///
/// [[clusters]]
/// tag = "math"
/// vocabulary = ["integral", "matrix"]
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub num_models: usize,
    pub queries_per_cluster: usize,
    pub expertise_margin: f64,
    pub noise_sigma: f64,
    pub seed: u64,
    #[serde(default = "default_words_per_query")]
    pub words_per_query: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expertise: Option<BTreeMap<String, usize>>,
    pub clusters: Vec<Cluster>,
}

impl SyntheticSpec {
    pub fn from_toml_str(text: &str) -> Result<Self, RankingError> {
        toml::from_str(text).map_err(|e| RankingError::Spec(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, RankingError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| RankingError::Spec(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    /// Expert model index for every cluster tag.
    pub fn expert_map(&self) -> Result<BTreeMap<String, usize>, RankingError> {
        let spec_err = |m: String| Err(RankingError::Spec(m));
        if self.num_models < 2 {
            return spec_err(format!("need at least 2 models, got {}", self.num_models));
        }
        if self.clusters.is_empty() {
            return spec_err("no clusters".into());
        }
        if !(self.expertise_margin > 0.0 && self.expertise_margin.is_finite()) {
            return spec_err(format!(
                "expertise_margin must be positive, got {}",
                self.expertise_margin
            ));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return spec_err(format!("noise_sigma must be non-negative, got {}", self.noise_sigma));
        }
        if self.words_per_query == 0 {
            return spec_err("words_per_query must be positive".into());
        }
        let mut map = BTreeMap::new();
        for (i, c) in self.clusters.iter().enumerate() {
            if c.vocabulary.iter().all(|w| w.trim().is_empty()) {
                return spec_err(format!("cluster \"{}\" has an empty vocabulary", c.tag));
            }
            let expert = match &self.expertise {
                Some(explicit) => *explicit.get(&c.tag).ok_or_else(|| {
                    RankingError::Spec(format!("no expert given for cluster \"{}\"", c.tag))
                })?,
                None => i,
            };
            if expert >= self.num_models {
                return spec_err(format!(
                    "expert {expert} for cluster \"{}\" is out of range",
                    c.tag
                ));
            }
            if map.insert(c.tag.clone(), expert).is_some() {
                return spec_err(format!("duplicate cluster tag \"{}\"", c.tag));
            }
        }
        if self.expertise.is_none() && self.clusters.len() != self.num_models {
            return spec_err(format!(
                "{} clusters for {} models; give an explicit expertise map",
                self.clusters.len(),
                self.num_models
            ));
        }
        Ok(map)
    }

    pub fn registry(&self) -> ModelRegistry {
        ModelRegistry::from_ids((0..self.num_models).map(|i| format!("m{i}")))
            .expect("generated ids are unique")
    }
}

/// A generated benchmark: observed (noisy) rewards plus the ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticBenchmark {
    pub dataset: RewardDataset,
    /// Noise-free rewards for the same rows, in the dataset format.
    pub truth: RewardDataset,
    pub oracle: OracleMap,
    pub experts: BTreeMap<String, usize>,
}

/// Samples `queries_per_cluster` queries per cluster from its vocabulary.
/// True reward is `margin` for the cluster's expert and 0 for everyone else;
/// observed rewards add independent N(0, sigma²) noise. Fully determined by
/// `spec.seed`.
pub fn make_synthetic_benchmark(spec: &SyntheticSpec) -> Result<SyntheticBenchmark, RankingError> {
    let experts = spec.expert_map()?;
    let registry = spec.registry();
    let normal = Normal::new(0.0, spec.noise_sigma).expect("validated sigma");
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut observed = Vec::new();
    let mut truth = Vec::new();
    for cluster in &spec.clusters {
        let vocab: Vec<&str> = cluster
            .vocabulary
            .iter()
            .map(|w| w.trim())
            .filter(|w| !w.is_empty())
            .collect();
        let expert = experts[&cluster.tag];
        for j in 0..spec.queries_per_cluster {
            let words: Vec<&str> = (0..spec.words_per_query)
                .map(|_| vocab[rng.random_range(0..vocab.len())])
                .collect();
            let query = Query::new(format!("{}-{j:05}", cluster.tag), words.join(" "))
                .with_tags([cluster.tag.clone()])
                .with_subset(cluster.tag.clone());
            let mut clean = vec![0.0; spec.num_models];
            clean[expert] = spec.expertise_margin;
            let noisy: Vec<f64> = clean.iter().map(|c| c + normal.sample(&mut rng)).collect();
            truth.push(RewardRow {
                query: query.clone(),
                rewards: RewardVector::new(clean).expect("finite"),
            });
            observed.push(RewardRow {
                query,
                rewards: RewardVector::new(noisy).expect("finite"),
            });
        }
    }
    let dataset = RewardDataset::new(registry.clone(), observed)
        .map_err(|e| RankingError::Spec(e.to_string()))?;
    let truth = RewardDataset::new(registry, truth).map_err(|e| RankingError::Spec(e.to_string()))?;
    Ok(SyntheticBenchmark {
        oracle: OracleMap::from_dataset(&truth),
        dataset,
        truth,
        experts,
    })
}
