//! Item-level matrices for one explanation group.
//!
//! Rows aggregate items with an identical bag and outcome; columns are the
//! features present in at least one item. Column importance is the Gini
//! impurity decrease of a one-level presence split against the four outcome
//! categories, computed within the group only.

use std::collections::{BTreeMap, BTreeSet};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregate::{Analysis, ExplanationGroup};
use crate::data::{Feature, FeatureIdx, ItemId};
use crate::model::Outcome;

#[derive(Debug, Error, PartialEq)]
pub enum InspectError {
    #[error("cannot build a matrix for an empty group")]
    EmptyGroup,
    #[error("unknown ordering {0:?}")]
    UnknownOrder(String),
}

/// Input to [`build_matrix`].
#[derive(Debug, Clone, Copy)]
pub struct MatrixItem<'a> {
    pub id: ItemId,
    pub active: &'a [FeatureIdx],
    pub outcome: Outcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixColumn {
    pub feature: FeatureIdx,
    pub name: String,
    /// Number of items in the group containing the feature.
    pub frequency: usize,
    pub importance: f64,
    pub hidden: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixRow {
    pub features: Vec<FeatureIdx>,
    pub outcome: Outcome,
    pub count: usize,
    /// Ascending.
    pub ids: Vec<ItemId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemMatrix {
    pub columns: Vec<MatrixColumn>,
    pub rows: Vec<MatrixRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RowOrder {
    /// Lexicographic on the presence pattern read in column order, present first.
    #[default]
    FeatureOrder,
    /// Largest rows first.
    Count,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ColumnOrder {
    #[default]
    Importance,
    Frequency,
    Lexicographic,
}

impl FromStr for RowOrder {
    type Err = InspectError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "feature-order" | "feature_order" => Ok(RowOrder::FeatureOrder),
            "count" => Ok(RowOrder::Count),
            other => Err(InspectError::UnknownOrder(other.to_string())),
        }
    }
}

impl FromStr for ColumnOrder {
    type Err = InspectError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "importance" => Ok(ColumnOrder::Importance),
            "frequency" => Ok(ColumnOrder::Frequency),
            "lexicographic" => Ok(ColumnOrder::Lexicographic),
            other => Err(InspectError::UnknownOrder(other.to_string())),
        }
    }
}

/// Gini impurity `1 - sum(p_c^2)` of a class histogram.
fn gini(counts: &[usize; 4]) -> f64 {
    let n: usize = counts.iter().sum();
    if n == 0 {
        return 0.0;
    }
    1.0 - counts
        .iter()
        .map(|&c| {
            let p = c as f64 / n as f64;
            p * p
        })
        .sum::<f64>()
}

/// Impurity decrease of splitting the rows on presence of each column's
/// feature, in column order.
pub fn gini_importance(matrix: &ItemMatrix) -> Vec<f64> {
    let mut all = [0usize; 4];
    for row in &matrix.rows {
        all[row.outcome.index()] += row.count;
    }
    let n: usize = all.iter().sum();
    let base = gini(&all);
    matrix
        .columns
        .iter()
        .map(|col| {
            let mut with = [0usize; 4];
            for row in &matrix.rows {
                if row.features.binary_search(&col.feature).is_ok() {
                    with[row.outcome.index()] += row.count;
                }
            }
            let without: [usize; 4] = std::array::from_fn(|c| all[c] - with[c]);
            let n_with: usize = with.iter().sum();
            let weighted = (n_with as f64 * gini(&with) + (n - n_with) as f64 * gini(&without))
                / n as f64;
            // clamp rounding noise on constant columns
            (base - weighted).max(0.0)
        })
        .collect()
}

/// Aggregates `items` into unique (bag, outcome) rows. Columns start in
/// feature-index order with importances filled in; rows start in
/// feature-order.
pub fn build_matrix(items: &[MatrixItem<'_>], features: &[Feature]) -> Result<ItemMatrix, InspectError> {
    if items.is_empty() {
        return Err(InspectError::EmptyGroup);
    }
    let mut rows: BTreeMap<(&[FeatureIdx], Outcome), Vec<ItemId>> = BTreeMap::new();
    let mut frequency: BTreeMap<FeatureIdx, usize> = BTreeMap::new();
    for item in items {
        rows.entry((item.active, item.outcome)).or_default().push(item.id);
        for &f in item.active {
            *frequency.entry(f).or_default() += 1;
        }
    }
    let columns = frequency
        .into_iter()
        .map(|(feature, frequency)| MatrixColumn {
            feature,
            name: features
                .get(feature as usize)
                .map_or_else(|| feature.to_string(), |f| f.name.clone()),
            frequency,
            importance: 0.0,
            hidden: false,
        })
        .collect();
    let rows = rows
        .into_iter()
        .map(|((features, outcome), mut ids)| {
            ids.sort_unstable();
            MatrixRow {
                features: features.to_vec(),
                outcome,
                count: ids.len(),
                ids,
            }
        })
        .collect();
    let mut matrix = ItemMatrix { columns, rows };
    let importance = gini_importance(&matrix);
    for (col, imp) in matrix.columns.iter_mut().zip(importance) {
        col.importance = imp;
    }
    Ok(order_matrix(matrix, RowOrder::FeatureOrder, None))
}

/// Matrix of the members of `group`.
pub fn group_matrix(analysis: &Analysis, group: &ExplanationGroup) -> Result<ItemMatrix, InspectError> {
    let items: Vec<MatrixItem<'_>> = group
        .members
        .iter()
        .map(|&p| {
            let item = &analysis.items()[p as usize];
            MatrixItem {
                id: item.id,
                active: &item.active,
                outcome: item.outcome(),
            }
        })
        .collect();
    build_matrix(&items, analysis.features())
}

/// Reorders columns (when `columns` is given) and then rows. Row
/// feature-order reads presence over the visible columns in their current
/// order; remaining ties go to the row with the smallest item id.
pub fn order_matrix(mut matrix: ItemMatrix, rows: RowOrder, columns: Option<ColumnOrder>) -> ItemMatrix {
    if let Some(order) = columns {
        matrix.columns.sort_by(|a, b| {
            let primary = match order {
                ColumnOrder::Importance => b.importance.total_cmp(&a.importance),
                ColumnOrder::Frequency => b.frequency.cmp(&a.frequency),
                ColumnOrder::Lexicographic => a.name.cmp(&b.name),
            };
            primary.then(a.feature.cmp(&b.feature))
        });
    }
    let visible: Vec<FeatureIdx> = matrix
        .columns
        .iter()
        .filter(|c| !c.hidden)
        .map(|c| c.feature)
        .collect();
    let first_id = |r: &MatrixRow| r.ids.first().copied().unwrap_or(ItemId::MAX);
    match rows {
        RowOrder::FeatureOrder => {
            let pattern = |r: &MatrixRow| -> Vec<bool> {
                // `false` sorts first, so encode presence as `false`
                visible.iter().map(|f| r.features.binary_search(f).is_err()).collect()
            };
            matrix.rows.sort_by(|a, b| {
                pattern(a)
                    .cmp(&pattern(b))
                    .then_with(|| first_id(a).cmp(&first_id(b)))
            });
        }
        RowOrder::Count => matrix.rows.sort_by(|a, b| {
            b.count
                .cmp(&a.count)
                .then_with(|| first_id(a).cmp(&first_id(b)))
        }),
    }
    matrix
}

/// Marks columns with importance `<= threshold` hidden. Rows are untouched.
pub fn hide_nondiscriminative(mut matrix: ItemMatrix, threshold: f64) -> ItemMatrix {
    for col in &mut matrix.columns {
        col.hidden = col.importance <= threshold;
    }
    matrix
}

impl ItemMatrix {
    pub fn show_all(mut self) -> Self {
        self.columns.iter_mut().for_each(|c| c.hidden = false);
        self
    }

    pub fn hidden(&self) -> Vec<FeatureIdx> {
        self.columns.iter().filter(|c| c.hidden).map(|c| c.feature).collect()
    }

    pub fn total_count(&self) -> usize {
        self.rows.iter().map(|r| r.count).sum()
    }

    /// One row per item, in the current row order.
    pub fn expand(mut self) -> Self {
        self.rows = self
            .rows
            .into_iter()
            .flat_map(|row| {
                row.ids.into_iter().map(move |id| MatrixRow {
                    features: row.features.clone(),
                    outcome: row.outcome,
                    count: 1,
                    ids: vec![id],
                })
            })
            .collect();
        self
    }

    /// `(id, bag, outcome)` of every item, ascending by id.
    pub fn items(&self) -> Vec<(ItemId, Vec<FeatureIdx>, Outcome)> {
        let mut out: Vec<_> = self
            .rows
            .iter()
            .flat_map(|r| r.ids.iter().map(|&id| (id, r.features.clone(), r.outcome)))
            .collect();
        out.sort_by(|a, b| a.0.cmp(&b.0));
        out
    }

    pub fn feature_set(&self) -> BTreeSet<FeatureIdx> {
        self.columns.iter().map(|c| c.feature).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn features(n: usize) -> Vec<Feature> {
        (0..n)
            .map(|i| Feature {
                index: i as u32,
                name: format!("f{i}"),
            })
            .collect()
    }

    fn mi(id: u64, active: &'static [u32], outcome: Outcome) -> MatrixItem<'static> {
        MatrixItem { id, active, outcome }
    }

    fn importance_of(m: &ItemMatrix, f: u32) -> f64 {
        m.columns.iter().find(|c| c.feature == f).unwrap().importance
    }

    #[test]
    fn identical_rows_aggregate() {
        let items = [
            mi(0, &[1, 2], Outcome::Tp),
            mi(1, &[1, 2], Outcome::Tp),
            mi(2, &[1, 2], Outcome::Tp),
        ];
        let m = build_matrix(&items, &features(3)).unwrap();
        assert_eq!(m.rows.len(), 1);
        assert_eq!(m.rows[0].count, 3);
        assert_eq!(m.rows[0].ids, vec![0, 1, 2]);
    }

    #[test]
    fn same_bag_different_outcome_splits_rows() {
        let items = [mi(0, &[1], Outcome::Tp), mi(1, &[1], Outcome::Fn)];
        let m = build_matrix(&items, &features(3)).unwrap();
        assert_eq!(m.rows.len(), 2);
    }

    #[test]
    fn single_item_matrix() {
        let m = build_matrix(&[mi(5, &[0, 2], Outcome::Tn)], &features(3)).unwrap();
        assert_eq!(m.rows.len(), 1);
        assert_eq!(m.feature_set().into_iter().collect::<Vec<_>>(), vec![0, 2]);
        assert_eq!(
            order_matrix(m.clone(), RowOrder::Count, Some(ColumnOrder::Frequency)).rows,
            m.rows
        );
        assert_eq!(build_matrix(&[], &features(1)), Err(InspectError::EmptyGroup));
    }

    #[test]
    fn constant_column_has_zero_importance() {
        let items = [mi(0, &[0, 1], Outcome::Tp), mi(1, &[0], Outcome::Tn)];
        let m = build_matrix(&items, &features(2)).unwrap();
        assert_eq!(importance_of(&m, 0), 0.0);
    }

    #[test]
    fn separating_column_half_half() {
        // G(root) = 1 - (0.5^2 + 0.5^2) = 0.5; both children are pure
        let items = [
            mi(0, &[0, 1], Outcome::Tp),
            mi(1, &[0, 1], Outcome::Tp),
            mi(2, &[0], Outcome::Tn),
            mi(3, &[0], Outcome::Tn),
        ];
        let m = build_matrix(&items, &features(2)).unwrap();
        assert!((importance_of(&m, 1) - 0.5).abs() < 1e-15);
        let hidden = hide_nondiscriminative(m.clone(), 0.0);
        assert_eq!(hidden.hidden(), vec![0]);
        let all_hidden = hide_nondiscriminative(m.clone(), f64::INFINITY);
        assert_eq!(all_hidden.hidden().len(), 2);
        assert_eq!(all_hidden.rows, m.rows);
        assert!(all_hidden.show_all().hidden().is_empty());
    }

    #[test]
    fn separating_beats_noise_on_eight_items() {
        // f1 present exactly on the 4 TP items; f2 on 2 TP and 2 TN items.
        // root: 4 TP / 4 TN -> 0.5
        // f1: children pure -> 0.5
        // f2: each child 2 TP / 2 TN -> 0.5 - 0.5 = 0
        let items = [
            mi(0, &[1, 2], Outcome::Tp),
            mi(1, &[1, 2], Outcome::Tp),
            mi(2, &[1], Outcome::Tp),
            mi(3, &[1], Outcome::Tp),
            mi(4, &[2], Outcome::Tn),
            mi(5, &[2], Outcome::Tn),
            mi(6, &[0], Outcome::Tn),
            mi(7, &[0], Outcome::Tn),
        ];
        let m = build_matrix(&items, &features(3)).unwrap();
        assert!((importance_of(&m, 1) - 0.5).abs() < 1e-15);
        assert!(importance_of(&m, 2).abs() < 1e-15);
        // f0 on 2 TN: with = pure (G 0), without = 4 TP / 2 TN (G 4/9) -> 0.5 - 6/8 * 4/9 = 1/6
        assert!((importance_of(&m, 0) - 1.0 / 6.0).abs() < 1e-15);

        let ordered = order_matrix(m, RowOrder::FeatureOrder, Some(ColumnOrder::Importance));
        let cols: Vec<u32> = ordered.columns.iter().map(|c| c.feature).collect();
        assert_eq!(cols, vec![1, 0, 2]);
        // rows with f1 come first
        assert!(ordered.rows[0].features.contains(&1));
        assert!(ordered.rows[1].features.contains(&1));
        assert!(!ordered.rows[2].features.contains(&1));
    }

    #[test]
    fn last_column_decides() {
        let items = [mi(0, &[0], Outcome::Tp), mi(1, &[0, 1], Outcome::Tp)];
        let m = build_matrix(&items, &features(2)).unwrap();
        let m = order_matrix(m, RowOrder::FeatureOrder, Some(ColumnOrder::Lexicographic));
        assert_eq!(m.rows[0].ids, vec![1]);
        assert_eq!(m.rows[1].ids, vec![0]);
    }

    #[test]
    fn expand_is_lossless() {
        let items = [
            mi(0, &[1], Outcome::Tp),
            mi(3, &[1], Outcome::Tp),
            mi(2, &[1], Outcome::Fp),
        ];
        let m = build_matrix(&items, &features(2)).unwrap();
        let before = m.items();
        let expanded = m.expand();
        assert_eq!(expanded.rows.len(), 3);
        assert!(expanded.rows.iter().all(|r| r.count == 1));
        assert_eq!(expanded.items(), before);
    }
}
