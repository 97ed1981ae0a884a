//! Instance-level explanations by greedy feature removal.
//!
//! For an item `v` with predicted label `L(v)`, an explanation is a set `e` of
//! active features such that `L(v - e) != L(v)`. The search removes one
//! feature at a time, always the one that moves the score furthest towards the
//! threshold, until the label flips. On a plateau (no single removal moves the
//! score by more than `plateau_eps`) a seeded random feature is removed
//! instead. A flip is followed by a clean-up that puts back every removed
//! feature the flip does not need, repeated until no feature can be put back,
//! so the result is irredundant. Items whose label never flips are explained
//! by their full active set.

mod cache;
mod io;
mod oracle;

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{FeatureIdx, Item, ItemId};
use crate::model::{ModelError, ScoredModel};

pub use cache::ScoreCache;
use cache::Evaluator;
pub use io::{read_explanations, write_explanations, RunManifest};
pub use oracle::{brute_force_min_explanation, ORACLE_MAX_ACTIVE};

#[derive(Debug, Error)]
pub enum ExplainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("item {item} has {active} active features; the exhaustive oracle is capped at {cap}")]
    TooLarge { item: ItemId, active: usize, cap: usize },
    #[error("cannot build worker pool: {0}")]
    Pool(String),
    #[error("explanation file: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub item: ItemId,
    /// The explanation set, ascending.
    pub removed: Vec<FeatureIdx>,
    /// `false` only for the full-item fallback.
    pub flipped: bool,
    /// Score of the unmodified item.
    pub score: f64,
    /// Number of bags the search evaluated for this item.
    pub queries: u64,
}

#[derive(Debug, Clone)]
pub struct ExplainConfig {
    pub seed: u64,
    pub plateau_eps: f64,
    pub parallelism: usize,
    pub use_cache: bool,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            plateau_eps: 1e-12,
            parallelism: 1,
            use_cache: true,
        }
    }
}

/// Derives the per-item seed so results do not depend on scheduling.
pub fn item_seed(run_seed: u64, item: ItemId) -> u64 {
    // splitmix64 finaliser over the combined input
    let mut z = run_seed ^ item.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn without(bag: &[FeatureIdx], drop: &[FeatureIdx]) -> Vec<FeatureIdx> {
    bag.iter().copied().filter(|f| !drop.contains(f)).collect()
}

pub fn explain_item(
    model: &ScoredModel,
    item: &Item,
    cache: Option<&ScoreCache>,
    seed: u64,
    plateau_eps: f64,
) -> Result<Explanation, ModelError> {
    let calls = AtomicU64::new(0);
    let mut eval = Evaluator::new(model, cache, &calls);
    explain_with(&mut eval, item, seed, plateau_eps)
}

fn explain_with(
    eval: &mut Evaluator<'_>,
    item: &Item,
    seed: u64,
    plateau_eps: f64,
) -> Result<Explanation, ModelError> {
    let full = &item.active;
    let original = eval.score(full)?;
    let original_label = eval.model().is_positive(original);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut present = full.clone();
    let mut removal_order: Vec<FeatureIdx> = Vec::new();
    let mut current = original;
    let mut flipped = false;

    while !present.is_empty() {
        let candidates: Vec<Vec<FeatureIdx>> = (0..present.len())
            .map(|i| {
                let mut bag = present.clone();
                bag.remove(i);
                bag
            })
            .collect();
        let refs: Vec<&[FeatureIdx]> = candidates.iter().map(Vec::as_slice).collect();
        let scores = eval.scores(&refs)?;

        let plateau = scores.iter().all(|s| (s - current).abs() <= plateau_eps);
        let pick = if plateau {
            rng.gen_range(0..present.len())
        } else {
            // progress towards the threshold; `present` is ascending, so the
            // first maximum is the lowest feature index
            let progress = |s: f64| if original_label { current - s } else { s - current };
            let mut best = 0;
            for i in 1..scores.len() {
                if progress(scores[i]) > progress(scores[best]) {
                    best = i;
                }
            }
            best
        };

        removal_order.push(present.remove(pick));
        current = scores[pick];
        if eval.model().is_positive(current) != original_label {
            flipped = true;
            break;
        }
    }

    if !flipped {
        return Ok(Explanation {
            item: item.id,
            removed: full.clone(),
            flipped: false,
            score: original,
            queries: eval.evaluations,
        });
    }

    // Clean-up: put features back, most recently removed first, keeping them
    // out only when the flip depends on it. Repeat until a full pass changes
    // nothing; that last pass certifies irredundancy.
    loop {
        let mut changed = false;
        for f in removal_order.clone().into_iter().rev() {
            if removal_order.len() == 1 {
                break;
            }
            let trial: Vec<FeatureIdx> = removal_order.iter().copied().filter(|&g| g != f).collect();
            let score = eval.score(&without(full, &trial))?;
            if eval.model().is_positive(score) != original_label {
                removal_order = trial;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }

    let mut removed = removal_order;
    removed.sort_unstable();
    Ok(Explanation {
        item: item.id,
        removed,
        flipped: true,
        score: original,
        queries: eval.evaluations,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemFailure {
    pub item: ItemId,
    pub error: String,
}

/// Outcome of explaining a whole dataset.
#[derive(Debug, Clone)]
pub struct ExplainRun {
    /// In input order; items that failed are absent and listed in `failures`.
    pub explanations: Vec<Explanation>,
    pub failures: Vec<ItemFailure>,
    /// Sum of per-item `queries`.
    pub evaluations: u64,
    /// Bags that reached the model (cache misses).
    pub model_calls: u64,
    pub cache_entries: usize,
    pub wall_time_secs: f64,
}

pub fn explain_all<'a>(
    model: &ScoredModel,
    items: impl IntoIterator<Item = &'a Item>,
    config: &ExplainConfig,
) -> Result<ExplainRun, ExplainError> {
    let items: Vec<&Item> = items.into_iter().collect();
    let start = Instant::now();
    let cache = config.use_cache.then(ScoreCache::new);
    let calls = AtomicU64::new(0);

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.parallelism.max(1))
        .build()
        .map_err(|e| ExplainError::Pool(e.to_string()))?;

    let results: Vec<Result<Explanation, ItemFailure>> = pool.install(|| {
        items
            .par_iter()
            .map(|item| {
                let mut eval = Evaluator::new(model, cache.as_ref(), &calls);
                explain_with(
                    &mut eval,
                    item,
                    item_seed(config.seed, item.id),
                    config.plateau_eps,
                )
                .map_err(|e| ItemFailure {
                    item: item.id,
                    error: e.to_string(),
                })
            })
            .collect()
    });

    let mut explanations = Vec::with_capacity(results.len());
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(e) => explanations.push(e),
            Err(f) => failures.push(f),
        }
    }
    Ok(ExplainRun {
        evaluations: explanations.iter().map(|e| e.queries).sum(),
        model_calls: calls.load(Ordering::Relaxed),
        cache_entries: cache.as_ref().map_or(0, ScoreCache::len),
        explanations,
        failures,
        wall_time_secs: start.elapsed().as_secs_f64(),
    })
}
