use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ModelError, Predictor};
use crate::data::{FeatureIdx, Item};

/// Sparse logistic regression: `sigmoid(bias + sum of active weights)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    #[serde(default = "default_name", skip_serializing)]
    name: String,
}

fn default_name() -> String {
    "logistic".into()
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl LogisticModel {
    pub fn new(weights: Vec<f64>, bias: f64) -> Self {
        Self {
            weights,
            bias,
            name: default_name(),
        }
    }

    pub fn logit(&self, active: &[FeatureIdx]) -> f64 {
        self.bias
            + active
                .iter()
                .map(|&f| self.weights.get(f as usize).copied().unwrap_or(0.0))
                .sum::<f64>()
    }

    pub fn predict_proba(&self, active: &[FeatureIdx]) -> f64 {
        sigmoid(self.logit(active))
    }
}

impl Predictor for LogisticModel {
    fn name(&self) -> &str {
        &self.name
    }

    fn score_batch(&self, bags: &[&[FeatureIdx]]) -> Result<Vec<f64>, ModelError> {
        Ok(bags.iter().map(|b| self.predict_proba(b)).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub l2: f64,
    pub seed: u64,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            epochs: 30,
            l2: 1e-4,
            seed: 0,
        }
    }
}

/// Plain SGD on the log loss with L2 shrinkage.
///
/// Items are ordered by id before each seeded shuffle, so the fit depends only
/// on the item set and the config. The weight vector is stored as
/// `scale * raw` so shrinkage costs O(1) per step.
pub fn train_logistic<'a>(
    train: impl IntoIterator<Item = &'a Item>,
    n_features: usize,
    config: &LogisticConfig,
) -> Result<LogisticModel, ModelError> {
    if !(config.learning_rate > 0.0 && config.learning_rate.is_finite()) {
        return Err(ModelError::InvalidParameter(format!(
            "learning rate must be positive, got {}",
            config.learning_rate
        )));
    }
    if !(config.l2 >= 0.0 && config.learning_rate * config.l2 < 1.0) {
        return Err(ModelError::InvalidParameter(format!(
            "l2 must satisfy 0 <= l2 < 1/learning_rate, got {}",
            config.l2
        )));
    }
    let mut items: Vec<&Item> = train.into_iter().collect();
    if items.is_empty() {
        return Err(ModelError::EmptyTrainingSet);
    }
    items.sort_by_key(|i| i.id);

    let lr = config.learning_rate;
    let mut raw = vec![0.0f64; n_features];
    let mut scale = 1.0f64;
    let mut bias = 0.0f64;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut last_loss = None;

    for epoch in 0..config.epochs {
        items.shuffle(&mut rng);
        let mut loss = 0.0;
        for item in &items {
            let z = bias + scale * item.active.iter().map(|&f| raw[f as usize]).sum::<f64>();
            let p = sigmoid(z);
            let y = if item.label { 1.0 } else { 0.0 };
            // log(1 + e^-z) for positives, log(1 + e^z) for negatives
            let margin = if item.label { z } else { -z };
            loss += (-margin).max(0.0) + (-margin.abs()).exp().ln_1p();
            let grad = p - y;

            scale *= 1.0 - lr * config.l2;
            bias -= lr * grad;
            for &f in &item.active {
                raw[f as usize] -= lr * grad / scale;
            }
            if scale < 1e-9 {
                raw.iter_mut().for_each(|w| *w *= scale);
                scale = 1.0;
            }
        }
        let penalty = 0.5 * config.l2 * scale * scale * raw.iter().map(|w| w * w).sum::<f64>();
        let loss = loss / items.len() as f64 + penalty;
        if !loss.is_finite() || !bias.is_finite() {
            return Err(ModelError::NonFiniteLoss { epoch, last_loss });
        }
        last_loss = Some(loss);
    }

    let weights: Vec<f64> = raw.iter().map(|w| w * scale).collect();
    if weights.iter().any(|w| !w.is_finite()) {
        return Err(ModelError::NonFiniteLoss {
            epoch: config.epochs,
            last_loss,
        });
    }
    Ok(LogisticModel::new(weights, bias))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn item(id: u64, active: &[u32], label: bool) -> Item {
        Item {
            id,
            active: active.to_vec(),
            label,
        }
    }

    #[test]
    fn zero_model_scores_half() {
        let m = LogisticModel::new(vec![0.0; 3], 0.0);
        for bag in [&[][..], &[0], &[0, 1, 2]] {
            assert_eq!(m.predict_proba(bag), 0.5);
        }
    }

    #[test]
    fn single_weight() {
        // sigmoid(1) = 1 / (1 + e^-1) = 0.7310585786300049
        let m = LogisticModel::new(vec![2.0, 0.0], -1.0);
        assert!((m.predict_proba(&[0]) - 0.731_058_578_630_004_9).abs() < 1e-15);
        let empty = m.predict_proba(&[]);
        assert!((0.0..=1.0).contains(&empty));
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid(-1000.0), 0.0);
        assert_eq!(sigmoid(1000.0), 1.0);
    }

    #[test]
    fn separable_feature() {
        let items: Vec<Item> = (0..40)
            .map(|i| {
                if i % 2 == 0 {
                    item(i, &[0], true)
                } else {
                    item(i, &[], false)
                }
            })
            .collect();
        let m = train_logistic(&items, 1, &LogisticConfig::default()).unwrap();
        assert!(m.predict_proba(&[0]) > m.predict_proba(&[]));
    }

    #[test]
    fn deterministic_and_order_independent() {
        let items: Vec<Item> = (0..50)
            .map(|i| item(i, &[(i % 3) as u32, 3], i % 4 == 0))
            .collect();
        let cfg = LogisticConfig {
            seed: 11,
            ..Default::default()
        };
        let a = train_logistic(&items, 4, &cfg).unwrap();
        let mut reversed = items.clone();
        reversed.reverse();
        let b = train_logistic(&reversed, 4, &cfg).unwrap();
        assert_eq!(a.weights, b.weights);
        assert_eq!(a.bias.to_bits(), b.bias.to_bits());
    }

    #[test]
    fn divergence_is_reported() {
        let items = vec![item(0, &[0], true), item(1, &[0], false)];
        let cfg = LogisticConfig {
            learning_rate: 1e308,
            epochs: 5,
            l2: 0.0,
            seed: 0,
        };
        assert!(matches!(
            train_logistic(&items, 1, &cfg),
            Err(ModelError::NonFiniteLoss { .. })
        ));
    }

    #[test]
    fn empty_training_set() {
        assert!(matches!(
            train_logistic(&[], 1, &LogisticConfig::default()),
            Err(ModelError::EmptyTrainingSet)
        ));
    }
}
