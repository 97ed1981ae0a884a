use std::path::{Path, PathBuf};

use flipdiag::data::Format;
use serde::Deserialize;

use crate::error::ApiError;

/// Registry file listing everything the service can open a session on.
///
/// ```toml
/// [[datasets]]
/// id = "cohort"
/// path = "cohort.txt"
///
/// [[models]]
/// id = "lr"
/// path = "lr.json"
///
/// [[runs]]
/// id = "lr-seed0"
/// explanations = "lr.jsonl"
/// manifest = "lr.manifest.json"
/// ```
///
/// Relative paths resolve against the directory of the file. Other top-level
/// tables are ignored, so the file can double as the command-line defaults
/// file.
#[derive(Debug, Clone, Default, Deserialize)]
pub struct ServiceConfig {
    #[serde(default)]
    pub datasets: Vec<DatasetEntry>,
    #[serde(default)]
    pub models: Vec<ModelEntry>,
    #[serde(default)]
    pub runs: Vec<RunEntry>,
    #[serde(default)]
    pub histogram_bins: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetEntry {
    pub id: String,
    pub path: PathBuf,
    #[serde(default = "default_format")]
    pub format: String,
    /// Train fraction, used when the model artifact does not record one.
    #[serde(default)]
    pub split: Option<f64>,
    #[serde(default)]
    pub seed: Option<u64>,
}

fn default_format() -> String {
    "sparse".into()
}

impl DatasetEntry {
    pub fn format(&self) -> Result<Format, ApiError> {
        self.format
            .parse()
            .map_err(|e| ApiError::config(format!("dataset {}: {e}", self.id)))
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelEntry {
    pub id: String,
    pub path: PathBuf,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunEntry {
    pub id: String,
    pub explanations: PathBuf,
    pub manifest: PathBuf,
}

impl ServiceConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ApiError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| ApiError::config(format!("{}: {e}", path.display())))?;
        let mut config: ServiceConfig =
            toml::from_str(&text).map_err(|e| ApiError::config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve(base);
        Ok(config)
    }

    /// Makes every relative path relative to `base`.
    pub fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        self.datasets.iter_mut().for_each(|d| fix(&mut d.path));
        self.models.iter_mut().for_each(|m| fix(&mut m.path));
        for r in &mut self.runs {
            fix(&mut r.explanations);
            fix(&mut r.manifest);
        }
    }
}
