use super::ExplainError;
use crate::data::{FeatureIdx, Item};
use crate::model::ScoredModel;

pub const ORACLE_MAX_ACTIVE: usize = 20;

/// Exhaustive search for a smallest label-flipping removal set, scanning
/// subsets by increasing size and, within a size, in lexicographic order of
/// positions. Queries the model directly with no caching.
pub fn brute_force_min_explanation(
    model: &ScoredModel,
    item: &Item,
) -> Result<Option<Vec<FeatureIdx>>, ExplainError> {
    let n = item.active.len();
    if n > ORACLE_MAX_ACTIVE {
        return Err(ExplainError::TooLarge {
            item: item.id,
            active: n,
            cap: ORACLE_MAX_ACTIVE,
        });
    }
    let original = model.label(&item.active)?;
    for size in 1..=n {
        let mut combo: Vec<usize> = (0..size).collect();
        loop {
            let kept: Vec<FeatureIdx> = item
                .active
                .iter()
                .enumerate()
                .filter(|(i, _)| !combo.contains(i))
                .map(|(_, &f)| f)
                .collect();
            if model.label(&kept)? != original {
                return Ok(Some(combo.iter().map(|&i| item.active[i]).collect()));
            }
            if !next_combination(&mut combo, n) {
                break;
            }
        }
    }
    Ok(None)
}

// Advances `combo` (strictly increasing positions < n) to the next k-subset.
fn next_combination(combo: &mut [usize], n: usize) -> bool {
    let k = combo.len();
    for i in (0..k).rev() {
        if combo[i] < n - k + i {
            combo[i] += 1;
            for j in i + 1..k {
                combo[j] = combo[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::model::FnPredictor;

    #[test]
    fn enumerates_all_combinations() {
        let mut combo = vec![0, 1];
        let mut seen = vec![combo.clone()];
        while next_combination(&mut combo, 4) {
            seen.push(combo.clone());
        }
        assert_eq!(seen.len(), 6);
        assert_eq!(seen.last().unwrap(), &vec![2, 3]);
    }

    #[test]
    fn constant_model_has_no_explanation() {
        let m = ScoredModel::new(Arc::new(FnPredictor::new("c", |_| 0.9)), 4, 0.5);
        let item = Item {
            id: 0,
            active: vec![0, 1, 3],
            label: true,
        };
        assert_eq!(brute_force_min_explanation(&m, &item).unwrap(), None);
    }

    #[test]
    fn refuses_large_items() {
        let m = ScoredModel::new(Arc::new(FnPredictor::new("c", |_| 0.9)), 30, 0.5);
        let item = Item {
            id: 3,
            active: (0..21).collect(),
            label: true,
        };
        assert!(matches!(
            brute_force_min_explanation(&m, &item),
            Err(ExplainError::TooLarge { active: 21, .. })
        ));
    }
}
