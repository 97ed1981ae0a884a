use std::sync::atomic::{AtomicU64, Ordering};

use dashmap::DashMap;

use crate::data::FeatureIdx;
use crate::model::{ModelError, ScoredModel};

/// Scores keyed by the canonical (sorted) active set, shared by every item of
/// a run. Concurrent inserts of the same key store the same value because
/// models are deterministic, so last-write-wins is harmless.
#[derive(Debug, Default)]
pub struct ScoreCache {
    scores: DashMap<Box<[FeatureIdx]>, f64>,
}

impl ScoreCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, bag: &[FeatureIdx]) -> Option<f64> {
        self.scores.get(bag).map(|s| *s)
    }

    pub fn insert(&self, bag: &[FeatureIdx], score: f64) {
        self.scores.insert(bag.into(), score);
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

/// Routes score lookups for one item through the optional shared cache.
///
/// `evaluations` counts every bag the search asked about and is therefore
/// independent of cache state and scheduling; `model_calls` counts the bags
/// that actually reached the model.
pub(crate) struct Evaluator<'a> {
    model: &'a ScoredModel,
    cache: Option<&'a ScoreCache>,
    model_calls: &'a AtomicU64,
    pub evaluations: u64,
}

impl<'a> Evaluator<'a> {
    pub fn new(
        model: &'a ScoredModel,
        cache: Option<&'a ScoreCache>,
        model_calls: &'a AtomicU64,
    ) -> Self {
        Self {
            model,
            cache,
            model_calls,
            evaluations: 0,
        }
    }

    pub fn model(&self) -> &ScoredModel {
        self.model
    }

    pub fn score(&mut self, bag: &[FeatureIdx]) -> Result<f64, ModelError> {
        Ok(self.scores(&[bag])?[0])
    }

    pub fn scores(&mut self, bags: &[&[FeatureIdx]]) -> Result<Vec<f64>, ModelError> {
        self.evaluations += bags.len() as u64;
        let mut out = vec![f64::NAN; bags.len()];
        let mut missing = Vec::new();
        for (i, bag) in bags.iter().enumerate() {
            match self.cache.and_then(|c| c.get(bag)) {
                Some(s) => out[i] = s,
                None => missing.push(i),
            }
        }
        if !missing.is_empty() {
            let query: Vec<&[FeatureIdx]> = missing.iter().map(|&i| bags[i]).collect();
            let scores = self.model.score_batch(&query)?;
            self.model_calls
                .fetch_add(query.len() as u64, Ordering::Relaxed);
            for (&i, s) in missing.iter().zip(scores) {
                out[i] = s;
                if let Some(cache) = self.cache {
                    cache.insert(bags[i], s);
                }
            }
        }
        Ok(out)
    }
}
