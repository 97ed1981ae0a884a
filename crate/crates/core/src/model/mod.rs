//! The black-box prediction contract.
//!
//! A [`Predictor`] maps a bag of active features to a score in `[0, 1]`. A
//! [`ScoredModel`] pairs a predictor with a threshold `t`; an item is labelled
//! positive iff its score is strictly greater than `t`.

mod artifact;
mod bridge;
mod logistic;
mod naive_bayes;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{FeatureIdx, Item, ItemId, SparseDataset};

pub use artifact::{ModelArtifact, ModelSpec};
pub use bridge::{BridgeConfig, HttpBridge, ScoreRequest, ScoreResponse, SubprocessBridge};
pub use logistic::{train_logistic, LogisticConfig, LogisticModel};
pub use naive_bayes::{train_naive_bayes, NaiveBayesModel};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("feature index {index} out of range for a model over {features} features")]
    FeatureOutOfRange { index: FeatureIdx, features: usize },
    #[error("model returned score {0} outside [0, 1]")]
    ScoreOutOfRange(f64),
    #[error("model returned {got} scores for {expected} inputs")]
    BatchSize { expected: usize, got: usize },
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("training set has no {0} items")]
    EmptyClass(&'static str),
    #[error("invalid hyperparameter: {0}")]
    InvalidParameter(String),
    #[error("loss became non-finite at epoch {epoch} (last finite loss {last_loss:?})")]
    NonFiniteLoss { epoch: usize, last_loss: Option<f64> },
    #[error("bridge: {0}")]
    Bridge(String),
    #[error("bridge request failed after {attempts} attempts: {last}")]
    BridgeExhausted { attempts: usize, last: String },
    #[error("model artifact: {0}")]
    Artifact(String),
}

/// Anything that can score bags of features. Implementations must be
/// deterministic: the same bag always yields the same score.
pub trait Predictor: Send + Sync {
    fn name(&self) -> &str;

    fn score_batch(&self, bags: &[&[FeatureIdx]]) -> Result<Vec<f64>, ModelError>;
}

/// Adapts a closure into a [`Predictor`].
pub struct FnPredictor<F> {
    name: String,
    f: F,
}

impl<F> FnPredictor<F>
where
    F: Fn(&[FeatureIdx]) -> f64 + Send + Sync,
{
    pub fn new(name: impl Into<String>, f: F) -> Self {
        Self {
            name: name.into(),
            f,
        }
    }
}

impl<F> Predictor for FnPredictor<F>
where
    F: Fn(&[FeatureIdx]) -> f64 + Send + Sync,
{
    fn name(&self) -> &str {
        &self.name
    }

    fn score_batch(&self, bags: &[&[FeatureIdx]]) -> Result<Vec<f64>, ModelError> {
        Ok(bags.iter().map(|b| (self.f)(b)).collect())
    }
}

/// A predictor, the size of its feature space and a classification threshold.
#[derive(Clone)]
pub struct ScoredModel {
    predictor: Arc<dyn Predictor>,
    n_features: usize,
    threshold: f64,
}

impl fmt::Debug for ScoredModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScoredModel")
            .field("name", &self.predictor.name())
            .field("n_features", &self.n_features)
            .field("threshold", &self.threshold)
            .finish()
    }
}

impl ScoredModel {
    pub fn new(predictor: Arc<dyn Predictor>, n_features: usize, threshold: f64) -> Self {
        Self {
            predictor,
            n_features,
            threshold,
        }
    }

    pub fn name(&self) -> &str {
        self.predictor.name()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn with_threshold(mut self, threshold: f64) -> Self {
        self.threshold = threshold;
        self
    }

    /// `score > t`, with ties going to the negative class.
    pub fn is_positive(&self, score: f64) -> bool {
        score > self.threshold
    }

    pub fn score_batch(&self, bags: &[&[FeatureIdx]]) -> Result<Vec<f64>, ModelError> {
        for bag in bags {
            if let Some(&bad) = bag.iter().find(|&&f| f as usize >= self.n_features) {
                return Err(ModelError::FeatureOutOfRange {
                    index: bad,
                    features: self.n_features,
                });
            }
        }
        let scores = self.predictor.score_batch(bags)?;
        if scores.len() != bags.len() {
            return Err(ModelError::BatchSize {
                expected: bags.len(),
                got: scores.len(),
            });
        }
        if let Some(&bad) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
            return Err(ModelError::ScoreOutOfRange(bad));
        }
        Ok(scores)
    }

    pub fn score(&self, active: &[FeatureIdx]) -> Result<f64, ModelError> {
        Ok(self.score_batch(&[active])?[0])
    }

    pub fn label(&self, active: &[FeatureIdx]) -> Result<bool, ModelError> {
        Ok(self.is_positive(self.score(active)?))
    }

    /// Scores `items` in chunks of `chunk` bags per predictor call.
    pub fn score_items<'a>(
        &self,
        items: impl IntoIterator<Item = &'a Item>,
        chunk: usize,
    ) -> Result<Vec<f64>, ModelError> {
        let bags: Vec<&[FeatureIdx]> = items.into_iter().map(|i| i.active.as_slice()).collect();
        let mut out = Vec::with_capacity(bags.len());
        for part in bags.chunks(chunk.max(1)) {
            out.extend(self.score_batch(part)?);
        }
        Ok(out)
    }

    /// Picks the threshold maximising correct predictions on `train` (see
    /// [`calibrate_threshold`]) and stores it.
    pub fn calibrate<'a>(
        &mut self,
        train: impl IntoIterator<Item = &'a Item>,
    ) -> Result<f64, ModelError> {
        let train: Vec<&Item> = train.into_iter().collect();
        if train.is_empty() {
            return Err(ModelError::EmptyTrainingSet);
        }
        let scores = self.score_items(train.iter().copied(), 512)?;
        let labelled: Vec<(f64, bool)> = scores
            .into_iter()
            .zip(&train)
            .map(|(s, i)| (s, i.label))
            .collect();
        self.threshold = calibrate_threshold(&labelled);
        Ok(self.threshold)
    }

    /// Scores every item of `dataset` and labels it against the threshold.
    pub fn predict(&self, dataset: &SparseDataset) -> Result<Vec<PredictionRecord>, ModelError> {
        let scores = self.score_items(dataset.items(), 512)?;
        Ok(dataset
            .items()
            .iter()
            .zip(scores)
            .map(|(item, score)| PredictionRecord::new(item.id, score, self.threshold, item.label))
            .collect())
    }
}

/// Candidate thresholds are `0`, `1` and the midpoints between consecutive
/// distinct scores. The candidate with the most correct predictions wins; ties
/// go to the candidate closest to 0.5, then to the smaller one.
pub fn calibrate_threshold(scored: &[(f64, bool)]) -> f64 {
    let mut pos: Vec<f64> = scored.iter().filter(|s| s.1).map(|s| s.0).collect();
    let mut neg: Vec<f64> = scored.iter().filter(|s| !s.1).map(|s| s.0).collect();
    pos.sort_by(f64::total_cmp);
    neg.sort_by(f64::total_cmp);
    let mut distinct: Vec<f64> = scored.iter().map(|s| s.0).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();

    let candidates = [0.0, 1.0]
        .into_iter()
        .chain(distinct.windows(2).map(|w| w[0] + (w[1] - w[0]) / 2.0));

    let correct_at = |t: f64| {
        let pos_above = pos.len() - pos.partition_point(|&s| s <= t);
        let neg_at_or_below = neg.partition_point(|&s| s <= t);
        pos_above + neg_at_or_below
    };

    let mut best = (0.5f64, 0usize);
    let mut first = true;
    for t in candidates {
        let correct = correct_at(t);
        let better = first
            || correct > best.1
            || (correct == best.1
                && ((t - 0.5).abs() < (best.0 - 0.5).abs()
                    || ((t - 0.5).abs() == (best.0 - 0.5).abs() && t < best.0)));
        if better {
            best = (t, correct);
            first = false;
        }
    }
    best.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Tp,
    Fp,
    Tn,
    Fn,
}

impl Outcome {
    pub const ALL: [Outcome; 4] = [Outcome::Tp, Outcome::Fp, Outcome::Tn, Outcome::Fn];

    pub fn from_labels(predicted: bool, truth: bool) -> Self {
        match (predicted, truth) {
            (true, true) => Outcome::Tp,
            (true, false) => Outcome::Fp,
            (false, false) => Outcome::Tn,
            (false, true) => Outcome::Fn,
        }
    }

    pub fn predicted(self) -> bool {
        matches!(self, Outcome::Tp | Outcome::Fp)
    }

    pub fn truth(self) -> bool {
        matches!(self, Outcome::Tp | Outcome::Fn)
    }

    pub fn correct(self) -> bool {
        matches!(self, Outcome::Tp | Outcome::Tn)
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub item: ItemId,
    pub score: f64,
    pub predicted: bool,
    pub truth: bool,
}

impl PredictionRecord {
    pub fn new(item: ItemId, score: f64, threshold: f64, truth: bool) -> Self {
        Self {
            item,
            score,
            predicted: score > threshold,
            truth,
        }
    }

    pub fn correct(&self) -> bool {
        self.predicted == self.truth
    }

    pub fn outcome(&self) -> Outcome {
        Outcome::from_labels(self.predicted, self.truth)
    }
}
