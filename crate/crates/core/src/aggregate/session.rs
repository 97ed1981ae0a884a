//! Filter stack and group ordering for one analysis session.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{group_explanations, Analysis, ExplanationGroup};
use crate::data::FeatureIdx;

#[derive(Debug, Error, PartialEq)]
pub enum FilterError {
    #[error("unknown feature {0:?}")]
    UnknownFeature(String),
    #[error("unknown explanation group {0:?}")]
    UnknownGroup(Vec<FeatureIdx>),
    #[error("malformed filter: {0}")]
    Malformed(String),
    #[error("stack depth {depth} out of range (stack has {len} entries)")]
    BadDepth { depth: usize, len: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupMetric {
    Total,
    PositiveTruth,
    PredictedPositive,
    IncorrectCount,
    OddsRatio,
    Uncertainty,
    Lexicographic,
}

impl GroupMetric {
    /// Numeric value of the metric; `None` for an undefined odds ratio and for
    /// the lexicographic metric.
    pub fn value(self, group: &ExplanationGroup) -> Option<f64> {
        match self {
            GroupMetric::Total => Some(group.size() as f64),
            GroupMetric::PositiveTruth => Some(group.positive_truth() as f64),
            GroupMetric::PredictedPositive => Some(group.counts.predicted_positive() as f64),
            GroupMetric::IncorrectCount => Some(group.counts.incorrect() as f64),
            GroupMetric::OddsRatio => group.odds.value,
            GroupMetric::Uncertainty => group.uncertainty(),
            GroupMetric::Lexicographic => None,
        }
    }
}

impl FromStr for GroupMetric {
    type Err = FilterError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        serde_json::from_value(serde_json::Value::String(s.trim().to_string()))
            .map_err(|_| FilterError::Malformed(format!("unknown metric {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SortDirection {
    Asc,
    #[default]
    Desc,
}

impl FromStr for SortDirection {
    type Err = FilterError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "asc" => Ok(SortDirection::Asc),
            "desc" => Ok(SortDirection::Desc),
            other => Err(FilterError::Malformed(format!("unknown direction {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SortKey {
    pub metric: GroupMetric,
    #[serde(default)]
    pub direction: SortDirection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Comparison {
    #[serde(rename = ">", alias = "gt")]
    Gt,
    #[serde(rename = ">=", alias = "ge")]
    Ge,
    #[serde(rename = "<", alias = "lt")]
    Lt,
    #[serde(rename = "<=", alias = "le")]
    Le,
    #[serde(rename = "==", alias = "eq")]
    Eq,
}

impl Comparison {
    pub fn holds(self, lhs: f64, rhs: f64) -> bool {
        match self {
            Comparison::Gt => lhs > rhs,
            Comparison::Ge => lhs >= rhs,
            Comparison::Lt => lhs < rhs,
            Comparison::Le => lhs <= rhs,
            Comparison::Eq => lhs == rhs,
        }
    }
}

/// One refinement of the working item set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Filter {
    /// Items whose prediction score lies in `[lo, hi]`.
    ScoreRange { lo: f64, hi: f64 },
    /// Items of the listed explanation groups.
    Selection { keys: Vec<Vec<FeatureIdx>> },
    /// Items whose explanation contains every comma-separated feature name.
    Search { query: String },
    /// Items of groups whose metric satisfies `metric op value`, with groups
    /// and their statistics computed on the parent item set.
    Condition {
        metric: GroupMetric,
        op: Comparison,
        value: f64,
    },
}

impl fmt::Display for Filter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Filter::ScoreRange { lo, hi } => write!(f, "score in [{lo}, {hi}]"),
            Filter::Selection { keys } => write!(f, "{} selected groups", keys.len()),
            Filter::Search { query } => write!(f, "search {query:?}"),
            Filter::Condition { metric, op, value } => {
                let op = serde_json::to_value(op).unwrap_or_default();
                let metric = serde_json::to_value(metric).unwrap_or_default();
                write!(f, "{} {} {value}", metric.as_str().unwrap_or("?"), op.as_str().unwrap_or("?"))
            }
        }
    }
}

/// Applies `filter` to the positions in `parent`; the result is a subset of
/// `parent` in the same order.
pub fn apply_filter(
    analysis: &Analysis,
    parent: &[u32],
    filter: &Filter,
) -> Result<Vec<u32>, FilterError> {
    let items = analysis.items();
    match filter {
        Filter::ScoreRange { lo, hi } => {
            if !(lo <= hi) {
                return Err(FilterError::Malformed(format!("empty score range [{lo}, {hi}]")));
            }
            Ok(parent
                .iter()
                .copied()
                .filter(|&p| {
                    let s = items[p as usize].prediction.score;
                    *lo <= s && s <= *hi
                })
                .collect())
        }
        Filter::Selection { keys } => {
            let wanted = keys
                .iter()
                .map(|k| {
                    let mut k = k.clone();
                    k.sort_unstable();
                    analysis.key_id(&k).ok_or(FilterError::UnknownGroup(k))
                })
                .collect::<Result<HashSet<u32>, _>>()?;
            Ok(parent
                .iter()
                .copied()
                .filter(|&p| wanted.contains(&analysis.key_id_of(p)))
                .collect())
        }
        Filter::Search { query } => {
            let terms = query
                .split(',')
                .map(str::trim)
                .filter(|t| !t.is_empty())
                .map(|t| {
                    analysis
                        .feature_by_name(t)
                        .ok_or_else(|| FilterError::UnknownFeature(t.to_string()))
                })
                .collect::<Result<Vec<FeatureIdx>, _>>()?;
            Ok(parent
                .iter()
                .copied()
                .filter(|&p| {
                    let key = analysis.key_of(p);
                    terms.iter().all(|t| key.binary_search(t).is_ok())
                })
                .collect())
        }
        Filter::Condition { metric, op, value } => {
            if *metric == GroupMetric::Lexicographic {
                return Err(FilterError::Malformed(
                    "the lexicographic metric cannot be used in a condition".into(),
                ));
            }
            if value.is_nan() {
                return Err(FilterError::Malformed("condition value is NaN".into()));
            }
            let mut keep: Vec<u32> = group_explanations(analysis, parent)
                .into_iter()
                .filter(|g| metric.value(g).is_some_and(|v| op.holds(v, *value)))
                .flat_map(|g| g.members)
                .collect();
            keep.sort_unstable();
            // restore parent order
            let keep: HashSet<u32> = keep.into_iter().collect();
            Ok(parent.iter().copied().filter(|p| keep.contains(p)).collect())
        }
    }
}

fn compare_by(metric: GroupMetric, dir: SortDirection, a: &ExplanationGroup, b: &ExplanationGroup) -> Ordering {
    let directed = |o: Ordering| match dir {
        SortDirection::Asc => o,
        SortDirection::Desc => o.reverse(),
    };
    if metric == GroupMetric::Lexicographic {
        return directed(a.names.cmp(&b.names));
    }
    // undefined values sort after every defined value in either direction
    match (metric.value(a), metric.value(b)) {
        (Some(x), Some(y)) => directed(x.total_cmp(&y)),
        (Some(_), None) => Ordering::Less,
        (None, Some(_)) => Ordering::Greater,
        (None, None) => Ordering::Equal,
    }
}

/// Multi-key ordering; remaining ties are broken by the group key, ascending.
pub fn sort_groups(groups: &mut [ExplanationGroup], spec: &[SortKey]) {
    groups.sort_by(|a, b| {
        spec.iter()
            .map(|k| compare_by(k.metric, k.direction, a, b))
            .find(|o| o.is_ne())
            .unwrap_or_else(|| a.key.cmp(&b.key))
    });
}

#[derive(Debug, Clone, PartialEq)]
pub struct StackEntry {
    /// `None` for the root entry, which holds every item.
    pub filter: Option<Filter>,
    pub items: Arc<Vec<u32>>,
}

/// Filter stack plus sort order. Entry 0 always holds the full dataset and
/// every later entry is a subset of the one before it.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionState {
    stack: Vec<StackEntry>,
    sort: Vec<SortKey>,
}

impl SessionState {
    pub fn new(analysis: &Analysis) -> Self {
        Self {
            stack: vec![StackEntry {
                filter: None,
                items: Arc::new(analysis.all_positions()),
            }],
            sort: vec![SortKey {
                metric: GroupMetric::Total,
                direction: SortDirection::Desc,
            }],
        }
    }

    pub fn entries(&self) -> &[StackEntry] {
        &self.stack
    }

    /// Index of the top entry.
    pub fn depth(&self) -> usize {
        self.stack.len() - 1
    }

    pub fn current(&self) -> &StackEntry {
        self.stack.last().expect("root entry is never removed")
    }

    pub fn sort(&self) -> &[SortKey] {
        &self.sort
    }

    pub fn set_sort(&mut self, sort: Vec<SortKey>) {
        self.sort = sort;
    }

    /// Filters the top entry and pushes the result. Empty results are allowed.
    pub fn push(&mut self, analysis: &Analysis, filter: Filter) -> Result<&StackEntry, FilterError> {
        let items = apply_filter(analysis, &self.current().items, &filter)?;
        self.stack.push(StackEntry {
            filter: Some(filter),
            items: Arc::new(items),
        });
        Ok(self.current())
    }

    /// Drops every entry above `depth`.
    pub fn pop_to(&mut self, depth: usize) -> Result<(), FilterError> {
        if depth >= self.stack.len() {
            return Err(FilterError::BadDepth {
                depth,
                len: self.stack.len(),
            });
        }
        self.stack.truncate(depth + 1);
        Ok(())
    }

    /// Groups of the top entry in the session's sort order.
    pub fn groups(&self, analysis: &Analysis) -> Vec<ExplanationGroup> {
        let mut groups = group_explanations(analysis, &self.current().items);
        sort_groups(&mut groups, &self.sort);
        groups
    }
}
