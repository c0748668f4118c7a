//! The routing function: multinomial logistic regression over hashed
//! features, trained by distilling softmax-normalized rewards with KL
//! divergence.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{ModelRegistry, RewardDataset};
use crate::featurizer::{featurize, ConfigError, FeatureVector, FeaturizerConfig};
use crate::rewards::{
    enhance_labels, normalize_rewards, RewardError, RoutingDistribution, TagRewardTable,
};

/// Probabilities are clamped to this floor before any logarithm, in both the
/// loss and its gradient.
pub const PROB_FLOOR: f64 = 1e-12;

const INIT_SCALE: f64 = 0.01;

#[derive(Debug, Error)]
pub enum RouterError {
    #[error("routing needs at least 2 candidate models, registry has {0}")]
    TooFewModels(usize),
    #[error(transparent)]
    Featurizer(#[from] ConfigError),
    #[error("feature dimension {got} does not match model dimension {expected}")]
    Dimension { expected: u32, got: u32 },
    #[error("length mismatch: prediction has {pred} entries, target has {target}")]
    Length { pred: usize, target: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("dataset registry does not match the model registry")]
    RegistryMismatch,
    #[error("invalid training config: {0}")]
    Config(String),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error("training diverged at epoch {epoch} (last finite loss {last_finite_loss:?})")]
    Divergent {
        epoch: usize,
        last_finite_loss: Option<f64>,
    },
}

/// Which way the distillation KL is taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KlDirection {
    /// `KL(target ‖ prediction)`.
    #[default]
    TargetToPrediction,
    /// `KL(prediction ‖ target)`, kept for ablation.
    PredictionToTarget,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub beta: f64,
    pub temperature: f64,
    pub l2_penalty: f64,
    pub seed: u64,
    pub shuffle: bool,
    pub kl_direction: KlDirection,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            epochs: 20,
            batch_size: 64,
            beta: 0.3,
            temperature: 1.0,
            l2_penalty: 1e-6,
            seed: 0,
            shuffle: true,
            kl_direction: KlDirection::TargetToPrediction,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), RouterError> {
        let bad = |msg: String| Err(RouterError::Config(msg));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.epochs == 0 {
            return bad("epochs must be positive".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return bad(format!("beta must lie in [0, 1], got {}", self.beta));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad(format!("temperature must be positive, got {}", self.temperature));
        }
        if !(self.l2_penalty >= 0.0 && self.l2_penalty.is_finite()) {
            return bad(format!("l2_penalty must be non-negative, got {}", self.l2_penalty));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainReport {
    /// Mean KL over the whole training set after each epoch.
    pub epoch_losses: Vec<f64>,
    pub final_loss: f64,
    pub wall_seconds: f64,
    pub rows: usize,
}

/// A routing decision.
#[derive(Debug, Clone, PartialEq)]
pub struct Route {
    pub model_index: usize,
    pub model_id: String,
    pub distribution: RoutingDistribution,
}

/// Dense gradient of the training objective.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Linear router: `softmax(W f + b)`, `W` stored row-major as K×D.
#[derive(Debug, Clone, PartialEq)]
pub struct RouterModel {
    registry: ModelRegistry,
    featurizer: FeaturizerConfig,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

/// `KL(target ‖ pred)`; zero target entries contribute nothing and prediction
/// entries are floored at [`PROB_FLOOR`].
pub fn kl_loss(pred: &RoutingDistribution, target: &RoutingDistribution) -> Result<f64, RouterError> {
    check_len(pred, target)?;
    Ok(kl_raw(target.probs(), pred.probs()))
}

fn check_len(pred: &RoutingDistribution, target: &RoutingDistribution) -> Result<(), RouterError> {
    if pred.len() != target.len() {
        return Err(RouterError::Length {
            pred: pred.len(),
            target: target.len(),
        });
    }
    Ok(())
}

/// `Σ p ln(p / max(q, floor))` over entries with `p > 0`.
fn kl_raw(p: &[f64], q: &[f64]) -> f64 {
    let kl: f64 = p
        .iter()
        .zip(q)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &qi)| pi * (pi.ln() - qi.max(PROB_FLOOR).ln()))
        .sum();
    kl.max(0.0)
}

fn direction_loss(direction: KlDirection, pred: &[f64], target: &[f64]) -> f64 {
    match direction {
        KlDirection::TargetToPrediction => kl_raw(target, pred),
        KlDirection::PredictionToTarget => kl_raw(pred, target),
    }
}

/// Gradient of the per-example loss with respect to the logits, where
/// `pred = softmax(logits)`. Consistent with the floor used in the loss.
fn logit_gradient(direction: KlDirection, pred: &[f64], target: &[f64]) -> Vec<f64> {
    match direction {
        KlDirection::TargetToPrediction => {
            let live = |i: usize| pred[i] > PROB_FLOOR;
            let mass: f64 = (0..pred.len()).filter(|&i| live(i)).map(|i| target[i]).sum();
            (0..pred.len())
                .map(|j| pred[j] * mass - if live(j) { target[j] } else { 0.0 })
                .collect()
        }
        KlDirection::PredictionToTarget => {
            // dL/dp_i, then through the softmax Jacobian
            let dp: Vec<f64> = pred
                .iter()
                .zip(target)
                .map(|(&p, &t)| {
                    if p > 0.0 {
                        let inner = if p > PROB_FLOOR { 1.0 } else { 0.0 };
                        p.max(PROB_FLOOR).ln() - t.max(PROB_FLOOR).ln() + inner
                    } else {
                        0.0
                    }
                })
                .collect();
            let avg: f64 = pred.iter().zip(&dp).map(|(p, g)| p * g).sum();
            pred.iter().zip(&dp).map(|(p, g)| p * (g - avg)).collect()
        }
    }
}

/// Weights uniform in [−0.01, 0.01] from a ChaCha8 stream seeded by `seed`;
/// bias zero.
pub fn init_router(
    registry: &ModelRegistry,
    featurizer: &FeaturizerConfig,
    seed: u64,
) -> Result<RouterModel, RouterError> {
    let mut model = RouterModel::zeros(registry, featurizer)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for w in &mut model.weights {
        *w = rng.random_range(-INIT_SCALE..=INIT_SCALE);
    }
    Ok(model)
}

impl RouterModel {
    /// All-zero parameters.
    pub fn zeros(registry: &ModelRegistry, featurizer: &FeaturizerConfig) -> Result<Self, RouterError> {
        if registry.len() < 2 {
            return Err(RouterError::TooFewModels(registry.len()));
        }
        featurizer.validate()?;
        let k = registry.len();
        let d = featurizer.dimension as usize;
        Ok(Self {
            registry: registry.clone(),
            featurizer: featurizer.clone(),
            weights: vec![0.0; k * d],
            bias: vec![0.0; k],
        })
    }

    /// Assembles a model from raw parameters, checking shapes and finiteness.
    pub fn from_parts(
        registry: ModelRegistry,
        featurizer: FeaturizerConfig,
        weights: Vec<f64>,
        bias: Vec<f64>,
    ) -> Result<Self, RouterError> {
        let mut model = Self::zeros(&registry, &featurizer)?;
        if weights.len() != model.weights.len() || bias.len() != model.bias.len() {
            return Err(RouterError::Config(format!(
                "parameter shapes {}+{} do not match {}x{}",
                weights.len(),
                bias.len(),
                model.num_models(),
                model.dimension()
            )));
        }
        if weights.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(RouterError::Config("non-finite parameter".into()));
        }
        model.weights = weights;
        model.bias = bias;
        Ok(model)
    }

    pub fn registry(&self) -> &ModelRegistry {
        &self.registry
    }

    pub fn featurizer(&self) -> &FeaturizerConfig {
        &self.featurizer
    }

    pub fn num_models(&self) -> usize {
        self.bias.len()
    }

    pub fn dimension(&self) -> usize {
        self.featurizer.dimension as usize
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    pub fn featurize(&self, text: &str) -> FeatureVector {
        featurize(&self.featurizer, text)
    }

    fn check_dimension(&self, f: &FeatureVector) -> Result<(), RouterError> {
        if f.dimension() != self.featurizer.dimension {
            return Err(RouterError::Dimension {
                expected: self.featurizer.dimension,
                got: f.dimension(),
            });
        }
        Ok(())
    }

    fn logits_unchecked(&self, f: &FeatureVector) -> Vec<f64> {
        let d = self.dimension();
        self.bias
            .iter()
            .enumerate()
            .map(|(k, b)| {
                let row = &self.weights[k * d..(k + 1) * d];
                b + f.iter().map(|(i, v)| row[i] * v).sum::<f64>()
            })
            .collect()
    }

    pub fn logits(&self, f: &FeatureVector) -> Result<Vec<f64>, RouterError> {
        self.check_dimension(f)?;
        Ok(self.logits_unchecked(f))
    }

    /// `softmax(W f + b)`.
    pub fn forward(&self, f: &FeatureVector) -> Result<RoutingDistribution, RouterError> {
        Ok(RoutingDistribution::softmax(&self.logits(f)?))
    }

    /// Featurizes `text` and picks the most probable model, lowest registry
    /// index on ties.
    pub fn route(&self, text: &str) -> Route {
        let f = self.featurize(text);
        let distribution = RoutingDistribution::softmax(&self.logits_unchecked(&f));
        let model_index = distribution.argmax();
        Route {
            model_index,
            model_id: self.registry.model(model_index).model_id.clone(),
            distribution,
        }
    }

    /// Mean per-example KL over `batch` plus `l2 / 2 · ‖W‖²`.
    pub fn objective(
        &self,
        batch: &[(FeatureVector, RoutingDistribution)],
        l2: f64,
        direction: KlDirection,
    ) -> Result<f64, RouterError> {
        let mut total = 0.0;
        for (f, target) in batch {
            let pred = self.forward(f)?;
            check_len(&pred, target)?;
            total += direction_loss(direction, pred.probs(), target.probs());
        }
        let penalty = 0.5 * l2 * self.weights.iter().map(|w| w * w).sum::<f64>();
        Ok(total / batch.len() as f64 + penalty)
    }

    /// Analytic gradient of [`RouterModel::objective`].
    pub fn objective_gradient(
        &self,
        batch: &[(FeatureVector, RoutingDistribution)],
        l2: f64,
        direction: KlDirection,
    ) -> Result<Gradient, RouterError> {
        let d = self.dimension();
        let scale = 1.0 / batch.len() as f64;
        let mut grad = Gradient {
            weights: self.weights.iter().map(|w| l2 * w).collect(),
            bias: vec![0.0; self.num_models()],
        };
        for (f, target) in batch {
            let pred = self.forward(f)?;
            check_len(&pred, target)?;
            let g = logit_gradient(direction, pred.probs(), target.probs());
            for (k, gk) in g.iter().enumerate() {
                grad.bias[k] += scale * gk;
                for (i, v) in f.iter() {
                    grad.weights[k * d + i] += scale * gk * v;
                }
            }
        }
        Ok(grad)
    }
}

/// Distillation target for every row: `softmax(enhance(r) / T)`.
pub fn distillation_targets(
    dataset: &RewardDataset,
    table: &TagRewardTable,
    beta: f64,
    temperature: f64,
) -> Result<Vec<RoutingDistribution>, RewardError> {
    dataset
        .rows()
        .iter()
        .map(|row| {
            let enhanced = enhance_labels(&row.rewards, &row.query, table, beta)?;
            normalize_rewards(&enhanced, temperature)
        })
        .collect()
}

/// Mini-batch gradient descent on the mean KL between the router and the
/// enhanced, normalized rewards, with an L2 penalty on the weights.
/// Single-threaded and fully determined by `config.seed`.
pub fn train(
    model: RouterModel,
    dataset: &RewardDataset,
    table: &TagRewardTable,
    config: &TrainConfig,
) -> Result<(RouterModel, TrainReport), RouterError> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(RouterError::EmptyDataset);
    }
    if !dataset.registry().ids().eq(model.registry.ids()) {
        return Err(RouterError::RegistryMismatch);
    }
    let started = Instant::now();
    let mut model = model;
    let features: Vec<FeatureVector> = dataset
        .rows()
        .iter()
        .map(|r| model.featurize(&r.query.text))
        .collect();
    let targets = distillation_targets(dataset, table, config.beta, config.temperature)?;

    let k = model.num_models();
    let d = model.dimension();
    let lr = config.learning_rate;
    let decay = 1.0 - lr * config.l2_penalty;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..features.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        if config.shuffle {
            order.shuffle(&mut rng);
        }
        for chunk in order.chunks(config.batch_size) {
            let scale = 1.0 / chunk.len() as f64;
            let mut bias_grad = vec![0.0; k];
            let mut weight_grad: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
            for &row in chunk {
                let f = &features[row];
                let pred = RoutingDistribution::softmax(&model.logits_unchecked(f));
                let g = logit_gradient(config.kl_direction, pred.probs(), targets[row].probs());
                for (b, gk) in bias_grad.iter_mut().zip(&g) {
                    *b += gk;
                }
                for (i, v) in f.iter() {
                    let acc = weight_grad.entry(i).or_insert_with(|| vec![0.0; k]);
                    for (a, gk) in acc.iter_mut().zip(&g) {
                        *a += gk * v;
                    }
                }
            }
            if config.l2_penalty > 0.0 {
                for w in &mut model.weights {
                    *w *= decay;
                }
            }
            for (i, acc) in weight_grad {
                for (kk, a) in acc.iter().enumerate() {
                    model.weights[kk * d + i] -= lr * scale * a;
                }
            }
            for (b, g) in model.bias.iter_mut().zip(&bias_grad) {
                *b -= lr * scale * g;
            }
        }

        let loss = features
            .iter()
            .zip(&targets)
            .map(|(f, t)| {
                let pred = RoutingDistribution::softmax(&model.logits_unchecked(f));
                direction_loss(config.kl_direction, pred.probs(), t.probs())
            })
            .sum::<f64>()
            / features.len() as f64;
        if !loss.is_finite() || model.weights.iter().any(|w| !w.is_finite()) {
            return Err(RouterError::Divergent {
                epoch: epoch + 1,
                last_finite_loss: epoch_losses.last().copied(),
            });
        }
        epoch_losses.push(loss);
    }

    let final_loss = *epoch_losses.last().expect("at least one epoch");
    let report = TrainReport {
        epoch_losses,
        final_loss,
        wall_seconds: started.elapsed().as_secs_f64(),
        rows: features.len(),
    };
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Query, RewardRow, RewardVector};
    use crate::rewards::aggregate_tag_rewards;
    use std::f64::consts::LN_2;

    fn dist(p: &[f64]) -> RoutingDistribution {
        RoutingDistribution::new(p.to_vec()).unwrap()
    }

    fn registry(k: usize) -> ModelRegistry {
        ModelRegistry::from_ids((0..k).map(|i| format!("m{i}"))).unwrap()
    }

    fn small_config() -> FeaturizerConfig {
        FeaturizerConfig::with_dimension(1024)
    }

    fn one_row(rewards: &[f64]) -> RewardDataset {
        let k = rewards.len();
        let row = RewardRow {
            query: Query::new("only", "prove the integral identity"),
            rewards: RewardVector::new(rewards.to_vec()).unwrap(),
        };
        RewardDataset::new(registry(k), vec![row]).unwrap()
    }

    #[test]
    fn kl_examples() {
        let p = dist(&[0.2, 0.3, 0.5]);
        assert_eq!(kl_loss(&p, &p).unwrap(), 0.0);
        let kl = kl_loss(&dist(&[0.5, 0.5]), &dist(&[1.0, 0.0])).unwrap();
        assert!((kl - LN_2).abs() < 1e-12);
        let kl = kl_loss(&dist(&[0.9, 0.1]), &dist(&[0.5, 0.5])).unwrap();
        let hand = 0.5 * (0.5f64 / 0.9).ln() + 0.5 * (0.5f64 / 0.1).ln();
        assert!((kl - hand).abs() < 1e-12);
        assert!((kl - 0.5108).abs() < 1e-4);
        assert!(matches!(
            kl_loss(&dist(&[0.5, 0.5]), &dist(&[0.2, 0.3, 0.5])),
            Err(RouterError::Length { .. })
        ));
    }

    #[test]
    fn kl_floor_keeps_loss_finite() {
        let kl = kl_loss(&dist(&[1.0, 0.0]), &dist(&[0.0, 1.0])).unwrap();
        assert!((kl - (-(PROB_FLOOR.ln()))).abs() < 1e-9);
    }

    #[test]
    fn init_is_seeded() {
        let reg = registry(3);
        let c = small_config();
        let a = init_router(&reg, &c, 7).unwrap();
        let b = init_router(&reg, &c, 7).unwrap();
        let other = init_router(&reg, &c, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.weights(), other.weights());
        assert!(a.weights().iter().all(|w| w.abs() <= INIT_SCALE));
        assert!(a.bias().iter().all(|&b| b == 0.0));
        assert!(matches!(
            init_router(&registry(1), &c, 0),
            Err(RouterError::TooFewModels(1))
        ));
    }

    #[test]
    fn forward_examples() {
        let c = small_config();
        let mut m = RouterModel::zeros(&registry(4), &c).unwrap();
        let f = featurize(&c, "anything at all");
        for p in m.forward(&f).unwrap().probs() {
            assert!((p - 0.25).abs() < 1e-15);
        }
        for k in 2..=6 {
            let mut m = RouterModel::zeros(&registry(k), &c).unwrap();
            m.bias_mut()[0] = 10.0;
            let p0 = m.forward(&f).unwrap().probs()[0];
            let hand = 10f64.exp() / (10f64.exp() + (k - 1) as f64);
            assert!((p0 - hand).abs() < 1e-12);
            assert!(p0 > 0.99);
        }
        m.bias_mut()[1] = 1.0;
        let wrong = FeatureVector::zero(12);
        assert!(matches!(m.forward(&wrong), Err(RouterError::Dimension { .. })));
    }

    #[test]
    fn zero_router_picks_first_model() {
        let m = RouterModel::zeros(&registry(3), &small_config()).unwrap();
        for q in ["a", "solve x^2=4", "write a poem"] {
            let r = m.route(q);
            assert_eq!(r.model_index, 0);
            assert_eq!(r.model_id, "m0");
        }
    }

    #[test]
    fn memorizes_single_row() {
        let ds = one_row(&[0.0, 0.5, 3.0]);
        let table = aggregate_tag_rewards(&ds).unwrap();
        let model = init_router(ds.registry(), &small_config(), 1).unwrap();
        let config = TrainConfig {
            epochs: 200,
            learning_rate: 1.0,
            ..TrainConfig::default()
        };
        let (model, report) = train(model, &ds, &table, &config).unwrap();
        assert!(report.final_loss < 1e-3, "{}", report.final_loss);
        assert_eq!(report.epoch_losses.len(), 200);

        let route = model.route("prove the integral identity");
        assert_eq!(route.model_index, 2);
        let target = normalize_rewards(&ds.rows()[0].rewards, 1.0).unwrap();
        assert!(kl_loss(&route.distribution, &target).unwrap() < 1e-3);
        assert_eq!(model.route("prove the integral identity"), route);
    }

    #[test]
    fn training_is_deterministic() {
        let ds = one_row(&[1.0, 0.0]);
        let table = aggregate_tag_rewards(&ds).unwrap();
        let config = TrainConfig {
            epochs: 5,
            ..TrainConfig::default()
        };
        let run = || {
            let m = init_router(ds.registry(), &small_config(), 3).unwrap();
            train(m, &ds, &table, &config).unwrap().0
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn train_rejects_bad_inputs() {
        let ds = one_row(&[1.0, 0.0]);
        let table = aggregate_tag_rewards(&ds).unwrap();
        let m = init_router(ds.registry(), &small_config(), 0).unwrap();
        let bad = TrainConfig {
            beta: 1.5,
            ..TrainConfig::default()
        };
        assert!(matches!(
            train(m.clone(), &ds, &table, &bad),
            Err(RouterError::Config(_))
        ));
        let empty = ds.filtered(|_| false);
        assert!(matches!(
            train(m.clone(), &empty, &table, &TrainConfig::default()),
            Err(RouterError::EmptyDataset)
        ));
        let other = init_router(&registry(3), &small_config(), 0).unwrap();
        assert!(matches!(
            train(other, &ds, &table, &TrainConfig::default()),
            Err(RouterError::RegistryMismatch)
        ));
    }

    #[test]
    fn huge_learning_rate_diverges() {
        let ds = one_row(&[0.0, 1.0]);
        let table = aggregate_tag_rewards(&ds).unwrap();
        let m = init_router(ds.registry(), &small_config(), 0).unwrap();
        let config = TrainConfig {
            learning_rate: 1e308,
            epochs: 3,
            ..TrainConfig::default()
        };
        assert!(matches!(
            train(m, &ds, &table, &config),
            Err(RouterError::Divergent { .. })
        ));
    }

    #[test]
    fn reverse_kl_also_memorizes() {
        let ds = one_row(&[0.0, 2.0]);
        let table = aggregate_tag_rewards(&ds).unwrap();
        let m = init_router(ds.registry(), &small_config(), 0).unwrap();
        let config = TrainConfig {
            learning_rate: 1.0,
            epochs: 200,
            kl_direction: KlDirection::PredictionToTarget,
            ..TrainConfig::default()
        };
        let (m, report) = train(m, &ds, &table, &config).unwrap();
        assert!(report.final_loss < 1e-3);
        assert_eq!(m.route("prove the integral identity").model_index, 1);
    }
}
