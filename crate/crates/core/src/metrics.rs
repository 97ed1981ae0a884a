//! Summary statistics of a calibrated model on one data split.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregate::OutcomeCounts;
use crate::data::Split;
use crate::model::PredictionRecord;

pub const DEFAULT_BINS: usize = 50;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("AUC is undefined: the split has {positives} positive and {negatives} negative items")]
    UndefinedAuc { positives: usize, negatives: usize },
    #[error("a histogram needs at least one bin")]
    NoBins,
}

/// Ground truth (rows) by predicted label (columns), with margins.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub predicted_positive: usize,
    pub predicted_negative: usize,
    pub actual_positive: usize,
    pub actual_negative: usize,
    pub total: usize,
}

impl From<OutcomeCounts> for ConfusionMatrix {
    fn from(c: OutcomeCounts) -> Self {
        Self {
            tp: c.tp,
            fp: c.fp,
            tn: c.tn,
            fn_: c.fn_,
            predicted_positive: c.tp + c.fp,
            predicted_negative: c.tn + c.fn_,
            actual_positive: c.tp + c.fn_,
            actual_negative: c.tn + c.fp,
            total: c.total(),
        }
    }
}

impl ConfusionMatrix {
    pub fn accuracy(&self) -> Option<f64> {
        (self.total > 0).then(|| (self.tp + self.tn) as f64 / self.total as f64)
    }

    /// `(FP / (FP + TN), TP / (TP + FN))`, with 0 for an empty denominator.
    pub fn rates(&self) -> (f64, f64) {
        let ratio = |a: usize, b: usize| if a + b == 0 { 0.0 } else { a as f64 / (a + b) as f64 };
        (ratio(self.fp, self.tn), ratio(self.tp, self.fn_))
    }
}

pub fn confusion(predictions: &[PredictionRecord]) -> ConfusionMatrix {
    predictions
        .iter()
        .map(PredictionRecord::outcome)
        .collect::<OutcomeCounts>()
        .into()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    /// Items scoring at or above this value are counted positive; `None` for
    /// the origin.
    pub threshold: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub auc: f64,
    /// `(fpr, tpr)` of the predictions' own labels.
    pub operating_point: (f64, f64),
}

/// ROC curve from a descending sweep over distinct scores. Tied scores enter
/// together, giving diagonal segments; the area is the trapezoidal rule.
pub fn roc_auc(predictions: &[PredictionRecord]) -> Result<RocCurve, MetricsError> {
    let positives = predictions.iter().filter(|p| p.truth).count();
    let negatives = predictions.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(MetricsError::UndefinedAuc {
            positives,
            negatives,
        });
    }
    let mut sorted: Vec<&PredictionRecord> = predictions.iter().collect();
    sorted.sort_by(|a, b| b.score.total_cmp(&a.score));

    let mut points = vec![RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        threshold: None,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut auc = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let score = sorted[i].score;
        while i < sorted.len() && sorted[i].score == score {
            if sorted[i].truth {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let prev = *points.last().expect("origin present");
        let point = RocPoint {
            fpr: fp as f64 / negatives as f64,
            tpr: tp as f64 / positives as f64,
            threshold: Some(score),
        };
        auc += (point.fpr - prev.fpr) * (point.tpr + prev.tpr) / 2.0;
        points.push(point);
    }
    Ok(RocCurve {
        points,
        auc,
        operating_point: confusion(predictions).rates(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreHistogram {
    /// `bins + 1` edges over `[0, 1]`.
    pub edges: Vec<f64>,
    pub counts: Vec<OutcomeCounts>,
    pub threshold: f64,
}

/// Bin `i` covers `[i/B, (i+1)/B)`; the last bin also takes a score of 1.
pub fn histogram(
    predictions: &[PredictionRecord],
    bins: usize,
    threshold: f64,
) -> Result<ScoreHistogram, MetricsError> {
    if bins == 0 {
        return Err(MetricsError::NoBins);
    }
    let mut counts = vec![OutcomeCounts::default(); bins];
    for p in predictions {
        let bin = ((p.score * bins as f64).floor() as usize).min(bins - 1);
        counts[bin].add(p.outcome());
    }
    Ok(ScoreHistogram {
        edges: (0..=bins).map(|i| i as f64 / bins as f64).collect(),
        counts,
        threshold,
    })
}

/// Everything the summary panel shows for one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub split: Split,
    pub confusion: ConfusionMatrix,
    pub accuracy: Option<f64>,
    pub roc: Option<RocCurve>,
    pub histogram: ScoreHistogram,
}

pub fn summarize_split(
    split: Split,
    predictions: &[PredictionRecord],
    bins: usize,
    threshold: f64,
) -> Result<SplitSummary, MetricsError> {
    let confusion = confusion(predictions);
    Ok(SplitSummary {
        split,
        accuracy: confusion.accuracy(),
        confusion,
        roc: roc_auc(predictions).ok(),
        histogram: histogram(predictions, bins, threshold)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainTest<T> {
    pub train: T,
    pub test: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocSummary {
    /// Curve on the test split.
    pub points: Vec<RocPoint>,
    pub train_points: Vec<RocPoint>,
    pub operating_point: Option<(f64, f64)>,
    pub auc_train: Option<f64>,
    pub auc_test: Option<f64>,
    pub threshold: f64,
}

/// Summary payload: train first, then test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub threshold: f64,
    pub confusion: TrainTest<ConfusionMatrix>,
    pub roc: RocSummary,
    pub histogram: TrainTest<ScoreHistogram>,
    pub accuracy: TrainTest<Option<f64>>,
}

impl Summary {
    pub fn new(train: SplitSummary, test: SplitSummary, threshold: f64) -> Self {
        let points = |s: &SplitSummary| s.roc.as_ref().map(|r| r.points.clone()).unwrap_or_default();
        Summary {
            threshold,
            roc: RocSummary {
                points: points(&test),
                train_points: points(&train),
                operating_point: test.roc.as_ref().map(|r| r.operating_point),
                auc_train: train.roc.as_ref().map(|r| r.auc),
                auc_test: test.roc.as_ref().map(|r| r.auc),
                threshold,
            },
            confusion: TrainTest {
                train: train.confusion,
                test: test.confusion,
            },
            accuracy: TrainTest {
                train: train.accuracy,
                test: test.accuracy,
            },
            histogram: TrainTest {
                train: train.histogram,
                test: test.histogram,
            },
        }
    }

    /// Splits `predictions` by the matching tags and summarises both halves.
    pub fn from_predictions(
        predictions: &[PredictionRecord],
        splits: &[Split],
        bins: usize,
        threshold: f64,
    ) -> Result<Self, MetricsError> {
        let pick = |want: Split| -> Vec<PredictionRecord> {
            predictions
                .iter()
                .zip(splits)
                .filter(|(_, s)| **s == want)
                .map(|(p, _)| *p)
                .collect()
        };
        let train = summarize_split(Split::Train, &pick(Split::Train), bins, threshold)?;
        let test = summarize_split(Split::Test, &pick(Split::Test), bins, threshold)?;
        Ok(Self::new(train, test, threshold))
    }
}
