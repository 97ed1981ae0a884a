use serde::{Deserialize, Serialize};

use super::logistic::sigmoid;
use super::{ModelError, Predictor};
use crate::data::{FeatureIdx, Item};

/// Bernoulli naive Bayes over presence/absence of every feature.
///
/// Stores the smoothed class priors and per-class feature probabilities; the
/// posterior log-odds is precomputed as a constant plus one increment per
/// active feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NaiveBayesParams", into = "NaiveBayesParams")]
pub struct NaiveBayesModel {
    params: NaiveBayesParams,
    offset: f64,
    increments: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NaiveBayesParams {
    /// `[negative, positive]`
    pub prior: [f64; 2],
    /// `p(feature present | class)` as `[negative, positive]` per feature.
    pub feature_prob: Vec<[f64; 2]>,
}

impl TryFrom<NaiveBayesParams> for NaiveBayesModel {
    type Error = ModelError;

    fn try_from(params: NaiveBayesParams) -> Result<Self, Self::Error> {
        let open = |p: f64| p > 0.0 && p < 1.0;
        if !params.prior.iter().all(|&p| open(p))
            || !params.feature_prob.iter().flatten().all(|&p| open(p))
        {
            return Err(ModelError::Artifact(
                "naive Bayes probabilities must lie strictly inside (0, 1)".into(),
            ));
        }
        let mut offset = params.prior[1].ln() - params.prior[0].ln();
        let mut increments = Vec::with_capacity(params.feature_prob.len());
        for &[neg, pos] in &params.feature_prob {
            offset += (1.0 - pos).ln() - (1.0 - neg).ln();
            increments.push((pos.ln() - (1.0 - pos).ln()) - (neg.ln() - (1.0 - neg).ln()));
        }
        Ok(Self {
            params,
            offset,
            increments,
        })
    }
}

impl From<NaiveBayesModel> for NaiveBayesParams {
    fn from(m: NaiveBayesModel) -> Self {
        m.params
    }
}

impl NaiveBayesModel {
    pub fn params(&self) -> &NaiveBayesParams {
        &self.params
    }

    pub fn log_odds(&self, active: &[FeatureIdx]) -> f64 {
        self.offset
            + active
                .iter()
                .map(|&f| self.increments.get(f as usize).copied().unwrap_or(0.0))
                .sum::<f64>()
    }

    pub fn predict_proba(&self, active: &[FeatureIdx]) -> f64 {
        sigmoid(self.log_odds(active))
    }
}

impl Predictor for NaiveBayesModel {
    fn name(&self) -> &str {
        "bernoulli-naive-bayes"
    }

    fn score_batch(&self, bags: &[&[FeatureIdx]]) -> Result<Vec<f64>, ModelError> {
        Ok(bags.iter().map(|b| self.predict_proba(b)).collect())
    }
}

/// Closed-form fit with additive (Laplace) smoothing on feature counts:
/// `p(f | c) = (count(f, c) + smoothing) / (count(c) + 2 * smoothing)`.
pub fn train_naive_bayes<'a>(
    train: impl IntoIterator<Item = &'a Item>,
    n_features: usize,
    smoothing: f64,
) -> Result<NaiveBayesModel, ModelError> {
    if !(smoothing > 0.0 && smoothing.is_finite()) {
        return Err(ModelError::InvalidParameter(format!(
            "smoothing must be positive, got {smoothing}"
        )));
    }
    let mut class_count = [0usize; 2];
    let mut feature_count = vec![[0usize; 2]; n_features];
    for item in train {
        let c = item.label as usize;
        class_count[c] += 1;
        for &f in &item.active {
            if let Some(slot) = feature_count.get_mut(f as usize) {
                slot[c] += 1;
            } else {
                return Err(ModelError::FeatureOutOfRange {
                    index: f,
                    features: n_features,
                });
            }
        }
    }
    let total = class_count[0] + class_count[1];
    if total == 0 {
        return Err(ModelError::EmptyTrainingSet);
    }
    if class_count[0] == 0 {
        return Err(ModelError::EmptyClass("negative"));
    }
    if class_count[1] == 0 {
        return Err(ModelError::EmptyClass("positive"));
    }
    let prior = [
        class_count[0] as f64 / total as f64,
        class_count[1] as f64 / total as f64,
    ];
    let feature_prob = feature_count
        .iter()
        .map(|counts| {
            [0, 1].map(|c| {
                (counts[c] as f64 + smoothing) / (class_count[c] as f64 + 2.0 * smoothing)
            })
        })
        .collect();
    NaiveBayesModel::try_from(NaiveBayesParams {
        prior,
        feature_prob,
    })
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
    fn positive_only_feature_raises_score() {
        let items = vec![
            item(0, &[0], true),
            item(1, &[], true),
            item(2, &[1], false),
            item(3, &[], false),
        ];
        let m = train_naive_bayes(&items, 2, 1.0).unwrap();
        assert!(m.predict_proba(&[0]) > m.predict_proba(&[]));
    }

    #[test]
    fn empty_class_is_an_error() {
        let items = vec![item(0, &[0], true), item(1, &[], true)];
        assert!(matches!(
            train_naive_bayes(&items, 1, 1.0),
            Err(ModelError::EmptyClass("negative"))
        ));
    }

    #[test]
    fn matches_hand_posterior() {
        // 4 items over 2 features, smoothing 1:
        //   pos: {0}, {0,1}     neg: {1}, {}
        // p(f0|pos) = 3/4, p(f1|pos) = 2/4, p(f0|neg) = 1/4, p(f1|neg) = 2/4, priors 1/2
        // score({0}) = (1/2 * 3/4 * 2/4) / (1/2 * 3/4 * 2/4 + 1/2 * 1/4 * 2/4) = 3/4
        // score({1}) = (1/4 * 2/4) / (1/4 * 2/4 + 3/4 * 2/4) = 1/4
        // score({0,1}) = 3/4, score({}) = 1/4
        let items = vec![
            item(0, &[0], true),
            item(1, &[0, 1], true),
            item(2, &[1], false),
            item(3, &[], false),
        ];
        let m = train_naive_bayes(&items, 2, 1.0).unwrap();
        for (bag, want) in [
            (&[0u32][..], 0.75),
            (&[1], 0.25),
            (&[0, 1], 0.75),
            (&[], 0.25),
        ] {
            assert!((m.predict_proba(bag) - want).abs() < 1e-12, "{bag:?}");
        }
    }

    #[test]
    fn serde_round_trip_rebuilds_cache() {
        let items = vec![item(0, &[0], true), item(1, &[1], false)];
        let m = train_naive_bayes(&items, 2, 0.5).unwrap();
        let json = serde_json::to_string(&m).unwrap();
        let back: NaiveBayesModel = serde_json::from_str(&json).unwrap();
        assert_eq!(back, m);
    }
}
