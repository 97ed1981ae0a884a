//! Seeded synthetic sparse datasets with a planted logistic ground truth.
//!
//! Background features follow a Zipf-like frequency profile and a random subset
//! of them carry nonzero weights. Extra named features can be planted with an
//! explicit frequency and weight. Labels are assigned by ranking the latent
//! `sum(weights) + logistic noise` so the positive rate is hit exactly.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{FeatureIdx, Item, ItemId, SparseDataset};

#[derive(Debug, Clone)]
pub struct PlantedFeature {
    pub name: String,
    pub frequency: f64,
    pub weight: f64,
}

#[derive(Debug, Clone)]
pub struct SyntheticConfig {
    pub n_items: usize,
    /// Number of background features (planted features come on top).
    pub n_features: usize,
    /// Expected number of active background features per item.
    pub mean_active: f64,
    pub positive_rate: f64,
    /// How many background features get a nonzero weight.
    pub n_signal: usize,
    /// Magnitude range of background weights.
    pub weight_range: (f64, f64),
    pub planted: Vec<PlantedFeature>,
    /// `(planted index, fraction)`: this fraction of items contains only that
    /// planted feature and gets labels drawn at `positive_rate` regardless of
    /// any weight.
    pub sole_feature_items: Option<(usize, f64)>,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_items: 5000,
            n_features: 400,
            mean_active: 10.0,
            positive_rate: 0.28,
            n_signal: 60,
            weight_range: (0.5, 2.5),
            planted: Vec::new(),
            sole_feature_items: None,
            seed: 0,
        }
    }
}

/// Generated data together with the weights that produced the labels.
#[derive(Debug, Clone)]
pub struct Synthetic {
    pub dataset: SparseDataset,
    pub weights: Vec<f64>,
}

impl SyntheticConfig {
    pub fn generate(&self) -> Synthetic {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let n_bg = self.n_features;
        let n_total = n_bg + self.planted.len();

        // Zipf-like frequencies normalised to the requested mean bag size.
        let raw: Vec<f64> = (0..n_bg).map(|f| 1.0 / (f as f64 + 10.0).powf(0.8)).collect();
        let scale = if n_bg > 0 {
            self.mean_active / raw.iter().sum::<f64>()
        } else {
            0.0
        };
        let mut frequency: Vec<f64> = raw.iter().map(|r| (r * scale).min(0.5)).collect();
        frequency.extend(self.planted.iter().map(|p| p.frequency));

        let mut weights = vec![0.0; n_total];
        let mut signal: Vec<usize> = (0..n_bg).collect();
        signal.shuffle(&mut rng);
        for &f in signal.iter().take(self.n_signal) {
            let (lo, hi) = self.weight_range;
            let magnitude = rng.gen_range(lo..=hi);
            weights[f] = if rng.gen_bool(0.5) { magnitude } else { -magnitude };
        }
        for (k, p) in self.planted.iter().enumerate() {
            weights[n_bg + k] = p.weight;
        }

        let n_sole = self
            .sole_feature_items
            .map(|(_, frac)| (frac * self.n_items as f64).round() as usize)
            .unwrap_or(0)
            .min(self.n_items);
        let n_regular = self.n_items - n_sole;

        let mut bags: Vec<Vec<FeatureIdx>> = Vec::with_capacity(self.n_items);
        let mut latent = Vec::with_capacity(n_regular);
        for _ in 0..n_regular {
            let active: Vec<FeatureIdx> = (0..n_total)
                .filter(|&f| rng.gen_bool(frequency[f].clamp(0.0, 1.0)))
                .map(|f| f as FeatureIdx)
                .collect();
            let u: f64 = rng.gen_range(1e-12..1.0 - 1e-12);
            let noise = (u / (1.0 - u)).ln();
            latent.push(active.iter().map(|&f| weights[f as usize]).sum::<f64>() + noise);
            bags.push(active);
        }

        let mut labels = vec![false; self.n_items];
        let mut order: Vec<usize> = (0..n_regular).collect();
        order.sort_by(|&a, &b| latent[b].total_cmp(&latent[a]).then(a.cmp(&b)));
        let n_pos = (self.positive_rate * n_regular as f64).round() as usize;
        for &i in &order[..n_pos.min(n_regular)] {
            labels[i] = true;
        }

        if let Some((planted_idx, _)) = self.sole_feature_items {
            let f = (n_bg + planted_idx) as FeatureIdx;
            let mut sole_labels: Vec<bool> = (0..n_sole)
                .map(|k| k < (self.positive_rate * n_sole as f64).round() as usize)
                .collect();
            sole_labels.shuffle(&mut rng);
            for (k, label) in sole_labels.into_iter().enumerate() {
                bags.push(vec![f]);
                labels[n_regular + k] = label;
            }
        }

        // interleave the sole-feature items so ids carry no structure
        let mut positions: Vec<usize> = (0..self.n_items).collect();
        positions.shuffle(&mut rng);
        let items = positions
            .iter()
            .enumerate()
            .map(|(id, &src)| Item {
                id: id as ItemId,
                active: bags[src].clone(),
                label: labels[src],
            })
            .collect();

        let mut names: Vec<String> = (0..n_bg).map(|f| format!("f{f}")).collect();
        names.extend(self.planted.iter().map(|p| p.name.clone()));
        let dataset = SparseDataset::new(names, items).expect("generator emits valid items");
        Synthetic { dataset, weights }
    }
}
