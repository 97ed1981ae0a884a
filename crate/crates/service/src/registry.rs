use std::collections::BTreeMap;
use std::sync::Arc;

use axum::http::StatusCode;
use flipdiag::aggregate::Analysis;
use flipdiag::data::{load_dataset, SparseDataset};
use flipdiag::explain::{read_explanations, Explanation, RunManifest};
use flipdiag::metrics::{Summary, DEFAULT_BINS};
use flipdiag::model::{ModelArtifact, ModelSpec};
use serde::Serialize;

use crate::config::{DatasetEntry, ModelEntry, RunEntry, ServiceConfig};
use crate::error::ApiError;

pub struct DatasetRecord {
    pub entry: DatasetEntry,
    pub dataset: Arc<SparseDataset>,
    pub hash: String,
}

pub struct ModelRecord {
    pub entry: ModelEntry,
    pub artifact: ModelArtifact,
    pub hash: String,
}

pub struct RunRecord {
    pub entry: RunEntry,
    pub manifest: RunManifest,
    pub explanations: Arc<Vec<Explanation>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DatasetInfo {
    pub id: String,
    pub items: usize,
    pub features: usize,
    pub positive_rate: Option<f64>,
    pub hash: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct ModelInfo {
    pub id: String,
    pub name: String,
    pub kind: &'static str,
    pub n_features: usize,
    pub threshold: f64,
    pub hash: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunInfo {
    pub id: String,
    pub model_name: String,
    pub model_hash: String,
    pub dataset_hash: String,
    pub threshold: f64,
    pub seed: u64,
    pub items: usize,
    pub flipped: usize,
    /// Ids of the registered datasets and models whose hashes match.
    pub datasets: Vec<String>,
    pub models: Vec<String>,
}

/// Everything a session reads: the joined analysis and the global summary.
pub struct Prepared {
    pub analysis: Analysis,
    pub summary: Summary,
}

/// Loaded, read-only registry of datasets, models and runs.
pub struct Registry {
    datasets: BTreeMap<String, DatasetRecord>,
    models: BTreeMap<String, ModelRecord>,
    runs: BTreeMap<String, RunRecord>,
    bins: usize,
}

fn duplicate(kind: &str, id: &str) -> ApiError {
    ApiError::config(format!("duplicate {kind} id {id:?}"))
}

impl Registry {
    pub fn load(config: &ServiceConfig) -> Result<Self, ApiError> {
        let mut datasets = BTreeMap::new();
        for entry in &config.datasets {
            let dataset = load_dataset(&entry.path, entry.format()?)
                .map_err(|e| ApiError::config(format!("dataset {}: {e}", entry.id)))?;
            let record = DatasetRecord {
                hash: dataset.content_hash(),
                dataset: Arc::new(dataset),
                entry: entry.clone(),
            };
            if datasets.insert(entry.id.clone(), record).is_some() {
                return Err(duplicate("dataset", &entry.id));
            }
        }
        let mut models = BTreeMap::new();
        for entry in &config.models {
            let artifact = ModelArtifact::load(&entry.path)
                .map_err(|e| ApiError::config(format!("model {}: {e}", entry.id)))?;
            let record = ModelRecord {
                hash: artifact.content_hash(),
                artifact,
                entry: entry.clone(),
            };
            if models.insert(entry.id.clone(), record).is_some() {
                return Err(duplicate("model", &entry.id));
            }
        }
        let mut runs = BTreeMap::new();
        for entry in &config.runs {
            let manifest = RunManifest::load(&entry.manifest)
                .map_err(|e| ApiError::config(format!("run {}: {e}", entry.id)))?;
            let explanations = read_explanations(&entry.explanations)
                .map_err(|e| ApiError::config(format!("run {}: {e}", entry.id)))?;
            let record = RunRecord {
                entry: entry.clone(),
                manifest,
                explanations: Arc::new(explanations),
            };
            if runs.insert(entry.id.clone(), record).is_some() {
                return Err(duplicate("run", &entry.id));
            }
        }
        Ok(Self {
            datasets,
            models,
            runs,
            bins: config.histogram_bins.unwrap_or(DEFAULT_BINS),
        })
    }

    pub fn datasets(&self) -> Vec<DatasetInfo> {
        self.datasets
            .values()
            .map(|d| DatasetInfo {
                id: d.entry.id.clone(),
                items: d.dataset.len(),
                features: d.dataset.n_features(),
                positive_rate: d.dataset.positive_rate(None),
                hash: d.hash.clone(),
            })
            .collect()
    }

    pub fn models(&self) -> Vec<ModelInfo> {
        self.models
            .values()
            .map(|m| ModelInfo {
                id: m.entry.id.clone(),
                name: m.artifact.name.clone(),
                kind: match m.artifact.spec {
                    ModelSpec::Logistic(_) => "logistic",
                    ModelSpec::NaiveBayes(_) => "naive_bayes",
                    ModelSpec::Bridge { .. } => "bridge",
                },
                n_features: m.artifact.n_features,
                threshold: m.artifact.threshold,
                hash: m.hash.clone(),
            })
            .collect()
    }

    pub fn runs(&self) -> Vec<RunInfo> {
        self.runs
            .values()
            .map(|r| RunInfo {
                id: r.entry.id.clone(),
                model_name: r.manifest.model_name.clone(),
                model_hash: r.manifest.model_hash.clone(),
                dataset_hash: r.manifest.dataset_hash.clone(),
                threshold: r.manifest.threshold,
                seed: r.manifest.seed,
                items: r.manifest.items,
                flipped: r.manifest.flipped,
                datasets: self
                    .datasets
                    .values()
                    .filter(|d| d.hash == r.manifest.dataset_hash)
                    .map(|d| d.entry.id.clone())
                    .collect(),
                models: self
                    .models
                    .values()
                    .filter(|m| m.hash == r.manifest.model_hash)
                    .map(|m| m.entry.id.clone())
                    .collect(),
            })
            .collect()
    }

    /// Checks that the run was produced from exactly this dataset and model,
    /// then joins the three.
    pub fn prepare(&self, dataset: &str, model: &str, run: &str) -> Result<Prepared, ApiError> {
        let d = self
            .datasets
            .get(dataset)
            .ok_or_else(|| ApiError::not_found("dataset", dataset))?;
        let m = self
            .models
            .get(model)
            .ok_or_else(|| ApiError::not_found("model", model))?;
        let r = self.runs.get(run).ok_or_else(|| ApiError::not_found("run", run))?;

        let mismatch = |what: &str| {
            ApiError::new(
                StatusCode::CONFLICT,
                "hash_mismatch",
                format!("run {run:?} was not computed on {what}"),
            )
        };
        if r.manifest.dataset_hash != d.hash {
            return Err(mismatch(&format!("dataset {dataset:?}")));
        }
        if r.manifest.model_hash != m.hash {
            return Err(mismatch(&format!("model {model:?}")));
        }

        let fraction = m.artifact.train_fraction.or(d.entry.split);
        let seed = m.artifact.split_seed.or(d.entry.seed).unwrap_or(0);
        let split = match fraction {
            Some(f) => (*d.dataset)
                .clone()
                .split(f, seed)
                .map_err(|e| ApiError::config(format!("dataset {dataset}: {e}")))?,
            None => (*d.dataset).clone(),
        };
        let threshold = m.artifact.threshold;
        let analysis = Analysis::from_explanations(&split, threshold, &r.explanations).map_err(|e| {
            ApiError::new(StatusCode::CONFLICT, "inconsistent_run", format!("run {run:?}: {e}"))
        })?;
        let predictions: Vec<_> = analysis.predictions().copied().collect();
        let splits: Vec<_> = analysis.items().iter().map(|i| i.split).collect();
        let summary = Summary::from_predictions(&predictions, &splits, self.bins, threshold)
            .map_err(|e| ApiError::config(e.to_string()))?;
        Ok(Prepared { analysis, summary })
    }
}
