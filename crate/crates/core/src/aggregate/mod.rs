//! Explanation groups: all items that share one explanation set, with their
//! outcome counts and the odds ratio of ground-truth positives against the
//! rest of the current item set.

mod odds;
mod session;

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Feature, FeatureIdx, ItemId, Split, SparseDataset};
use crate::explain::Explanation;
use crate::model::{Outcome, PredictionRecord};

pub use odds::{uncertainty, OddsRatio, Z_95};
pub use session::{
    apply_filter, sort_groups, Comparison, Filter, FilterError, GroupMetric, SessionState,
    SortDirection, SortKey, StackEntry,
};

#[derive(Debug, Error)]
pub enum AggregateError {
    #[error("item {0} has no explanation")]
    MissingExplanation(ItemId),
    #[error("item {0} has no prediction")]
    MissingPrediction(ItemId),
    #[error("{kind} refers to unknown item {item}")]
    UnknownItem { kind: &'static str, item: ItemId },
    #[error("item {item} listed twice in {kind}")]
    Duplicate { kind: &'static str, item: ItemId },
    #[error("explanation of item {0} removes features the item does not have")]
    NotASubset(ItemId),
}

/// Per-outcome counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl OutcomeCounts {
    pub fn add(&mut self, outcome: Outcome) {
        match outcome {
            Outcome::Tp => self.tp += 1,
            Outcome::Fp => self.fp += 1,
            Outcome::Tn => self.tn += 1,
            Outcome::Fn => self.fn_ += 1,
        }
    }

    pub fn get(&self, outcome: Outcome) -> usize {
        match outcome {
            Outcome::Tp => self.tp,
            Outcome::Fp => self.fp,
            Outcome::Tn => self.tn,
            Outcome::Fn => self.fn_,
        }
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn truth_positive(&self) -> usize {
        self.tp + self.fn_
    }

    pub fn truth_negative(&self) -> usize {
        self.tn + self.fp
    }

    pub fn predicted_positive(&self) -> usize {
        self.tp + self.fp
    }

    pub fn incorrect(&self) -> usize {
        self.fp + self.fn_
    }
}

impl FromIterator<Outcome> for OutcomeCounts {
    fn from_iter<I: IntoIterator<Item = Outcome>>(iter: I) -> Self {
        let mut c = Self::default();
        iter.into_iter().for_each(|o| c.add(o));
        c
    }
}

/// One item as seen by the analytics: its bag, prediction and explanation key.
#[derive(Debug, Clone)]
pub struct AnalyzedItem {
    pub id: ItemId,
    pub active: Vec<FeatureIdx>,
    pub split: Split,
    pub prediction: PredictionRecord,
    pub flipped: bool,
    key: u32,
}

impl AnalyzedItem {
    pub fn outcome(&self) -> Outcome {
        self.prediction.outcome()
    }
}

/// Dataset, predictions and explanations joined item by item. Item sets
/// handled by the analytics are ascending lists of positions into
/// [`Analysis::items`].
#[derive(Debug, Clone)]
pub struct Analysis {
    features: Vec<Feature>,
    threshold: f64,
    items: Vec<AnalyzedItem>,
    keys: Vec<Vec<FeatureIdx>>,
    key_index: HashMap<Vec<FeatureIdx>, u32>,
}

impl Analysis {
    pub fn new(
        dataset: &SparseDataset,
        threshold: f64,
        predictions: &[PredictionRecord],
        explanations: &[Explanation],
    ) -> Result<Self, AggregateError> {
        let position: HashMap<ItemId, usize> = dataset
            .items()
            .iter()
            .enumerate()
            .map(|(i, item)| (item.id, i))
            .collect();

        let mut preds: Vec<Option<PredictionRecord>> = vec![None; dataset.len()];
        for p in predictions {
            let &i = position.get(&p.item).ok_or(AggregateError::UnknownItem {
                kind: "prediction",
                item: p.item,
            })?;
            if preds[i].replace(*p).is_some() {
                return Err(AggregateError::Duplicate {
                    kind: "predictions",
                    item: p.item,
                });
            }
        }
        let mut expls: Vec<Option<&Explanation>> = vec![None; dataset.len()];
        for e in explanations {
            let &i = position.get(&e.item).ok_or(AggregateError::UnknownItem {
                kind: "explanation",
                item: e.item,
            })?;
            if expls[i].replace(e).is_some() {
                return Err(AggregateError::Duplicate {
                    kind: "explanations",
                    item: e.item,
                });
            }
        }

        let mut keys = Vec::new();
        let mut key_index = HashMap::new();
        let mut items = Vec::with_capacity(dataset.len());
        for (i, item) in dataset.items().iter().enumerate() {
            let prediction = preds[i].ok_or(AggregateError::MissingPrediction(item.id))?;
            let expl = expls[i].ok_or(AggregateError::MissingExplanation(item.id))?;
            let mut key_set = expl.removed.clone();
            key_set.sort_unstable();
            key_set.dedup();
            if key_set.iter().any(|f| item.active.binary_search(f).is_err()) {
                return Err(AggregateError::NotASubset(item.id));
            }
            let key = *key_index.entry(key_set.clone()).or_insert_with(|| {
                keys.push(key_set);
                (keys.len() - 1) as u32
            });
            items.push(AnalyzedItem {
                id: item.id,
                active: item.active.clone(),
                split: dataset.splits()[i],
                prediction,
                flipped: expl.flipped,
                key,
            });
        }
        Ok(Self {
            features: dataset.features().to_vec(),
            threshold,
            items,
            keys,
            key_index,
        })
    }

    /// Builds predictions from the original scores recorded in the
    /// explanations, labelled against `threshold`.
    pub fn from_explanations(
        dataset: &SparseDataset,
        threshold: f64,
        explanations: &[Explanation],
    ) -> Result<Self, AggregateError> {
        let truth: HashMap<ItemId, bool> =
            dataset.items().iter().map(|i| (i.id, i.label)).collect();
        let predictions = explanations
            .iter()
            .map(|e| {
                truth
                    .get(&e.item)
                    .map(|&t| PredictionRecord::new(e.item, e.score, threshold, t))
                    .ok_or(AggregateError::UnknownItem {
                        kind: "explanation",
                        item: e.item,
                    })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(dataset, threshold, &predictions, explanations)
    }

    pub fn features(&self) -> &[Feature] {
        &self.features
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn items(&self) -> &[AnalyzedItem] {
        &self.items
    }

    pub fn all_positions(&self) -> Vec<u32> {
        (0..self.items.len() as u32).collect()
    }

    pub fn predictions(&self) -> impl Iterator<Item = &PredictionRecord> {
        self.items.iter().map(|i| &i.prediction)
    }

    pub fn key_of(&self, position: u32) -> &[FeatureIdx] {
        &self.keys[self.items[position as usize].key as usize]
    }

    pub fn feature_name(&self, f: FeatureIdx) -> &str {
        self.features
            .get(f as usize)
            .map_or("?", |feat| feat.name.as_str())
    }

    pub fn feature_by_name(&self, name: &str) -> Option<FeatureIdx> {
        let name = name.trim();
        self.features.iter().find(|f| f.name == name).map(|f| f.index)
    }

    pub fn names(&self, key: &[FeatureIdx]) -> Vec<String> {
        key.iter().map(|&f| self.feature_name(f).to_string()).collect()
    }

    pub(crate) fn key_id(&self, key: &[FeatureIdx]) -> Option<u32> {
        self.key_index.get(key).copied()
    }

    pub(crate) fn key_id_of(&self, position: u32) -> u32 {
        self.items[position as usize].key
    }

    /// Positions within `items` whose explanation set equals `key`.
    pub fn members(&self, items: &[u32], key: &[FeatureIdx]) -> Vec<u32> {
        match self.key_id(key) {
            Some(k) => items
                .iter()
                .copied()
                .filter(|&p| self.items[p as usize].key == k)
                .collect(),
            None => Vec::new(),
        }
    }

    /// How many items of `items` have each feature in their explanation,
    /// most frequent first, ties by feature index.
    pub fn explanation_feature_frequency(&self, items: &[u32]) -> Vec<(FeatureIdx, usize)> {
        let mut freq: BTreeMap<FeatureIdx, usize> = BTreeMap::new();
        for &p in items {
            for &f in self.key_of(p) {
                *freq.entry(f).or_default() += 1;
            }
        }
        let mut out: Vec<_> = freq.into_iter().collect();
        out.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExplanationGroup {
    pub key: Vec<FeatureIdx>,
    pub names: Vec<String>,
    /// Positions into [`Analysis::items`], ascending.
    pub members: Vec<u32>,
    pub counts: OutcomeCounts,
    pub odds: OddsRatio,
}

impl ExplanationGroup {
    pub fn size(&self) -> usize {
        self.counts.total()
    }

    pub fn positive_truth(&self) -> usize {
        self.counts.truth_positive()
    }

    pub fn uncertainty(&self) -> Option<f64> {
        self.odds.uncertainty()
    }

    pub fn item_ids(&self, analysis: &Analysis) -> Vec<ItemId> {
        self.members
            .iter()
            .map(|&p| analysis.items()[p as usize].id)
            .collect()
    }

    pub fn report(&self) -> GroupReport {
        GroupReport {
            key: self.key.clone(),
            names: self.names.clone(),
            size: self.size(),
            positive_truth: self.positive_truth(),
            counts: self.counts,
            or: self.odds.value,
            ci: self.odds.ci.map(|(lo, hi)| [lo, hi]),
            uncertain: self.odds.uncertain,
            corrected: self.odds.corrected,
            uncertainty: self.uncertainty(),
        }
    }
}

/// Wire form of a group. `or`, `ci` and `uncertainty` are `null` when the
/// odds ratio is undefined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupReport {
    pub key: Vec<FeatureIdx>,
    pub names: Vec<String>,
    pub size: usize,
    pub positive_truth: usize,
    pub counts: OutcomeCounts,
    pub or: Option<f64>,
    pub ci: Option<[f64; 2]>,
    pub uncertain: bool,
    pub corrected: bool,
    pub uncertainty: Option<f64>,
}

/// One group per distinct explanation set among `items`, ordered by key.
/// Groups whose members have different predicted labels stay merged.
pub fn group_explanations(analysis: &Analysis, items: &[u32]) -> Vec<ExplanationGroup> {
    let mut by_key: BTreeMap<&[FeatureIdx], Vec<u32>> = BTreeMap::new();
    let mut totals = OutcomeCounts::default();
    for &p in items {
        by_key.entry(analysis.key_of(p)).or_default().push(p);
        totals.add(analysis.items[p as usize].outcome());
    }
    by_key
        .into_iter()
        .map(|(key, mut members)| {
            members.sort_unstable();
            let counts: OutcomeCounts = members
                .iter()
                .map(|&p| analysis.items[p as usize].outcome())
                .collect();
            let odds = OddsRatio::from_counts(
                counts.truth_positive(),
                counts.truth_negative(),
                totals.truth_positive() - counts.truth_positive(),
                totals.truth_negative() - counts.truth_negative(),
            );
            ExplanationGroup {
                key: key.to_vec(),
                names: analysis.names(key),
                members,
                counts,
                odds,
            }
        })
        .collect()
}
