use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    BridgeConfig, HttpBridge, LogisticModel, ModelError, NaiveBayesModel, Predictor, ScoredModel,
    SubprocessBridge,
};

/// What sits behind a model artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    Logistic(LogisticModel),
    NaiveBayes(NaiveBayesModel),
    /// An external model reached through the scoring bridge.
    Bridge {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        command: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        url: Option<String>,
    },
}

/// A calibrated model as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub name: String,
    pub n_features: usize,
    pub threshold: f64,
    /// Content hash of the dataset the model was fit and calibrated on.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_fraction: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split_seed: Option<u64>,
    #[serde(flatten)]
    pub spec: ModelSpec,
}

impl ModelArtifact {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| ModelError::Artifact(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| ModelError::Artifact(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        let path = path.as_ref();
        let mut text = serde_json::to_string_pretty(self).expect("artifact serializes");
        text.push('\n');
        std::fs::write(path, text)
            .map_err(|e| ModelError::Artifact(format!("{}: {e}", path.display())))
    }

    /// SHA-256 over the compact JSON form, so formatting of the file on disk
    /// does not matter.
    pub fn content_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("artifact serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn to_scored_model(&self, bridge: &BridgeConfig) -> Result<ScoredModel, ModelError> {
        let predictor: Arc<dyn Predictor> = match &self.spec {
            ModelSpec::Logistic(m) => Arc::new(m.clone()),
            ModelSpec::NaiveBayes(m) => Arc::new(m.clone()),
            ModelSpec::Bridge {
                command: Some(cmd), ..
            } => Arc::new(SubprocessBridge::connect(cmd.clone(), bridge.clone())?),
            ModelSpec::Bridge { url: Some(url), .. } => Arc::new(HttpBridge::new(url, bridge)),
            ModelSpec::Bridge { .. } => {
                return Err(ModelError::Artifact(
                    "bridge artifact needs a command or a url".into(),
                ))
            }
        };
        Ok(ScoredModel::new(predictor, self.n_features, self.threshold))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_shape_and_round_trip() {
        let art = ModelArtifact {
            name: "lr".into(),
            n_features: 2,
            threshold: 0.531,
            dataset_hash: Some("abc".into()),
            train_fraction: Some(0.2),
            split_seed: Some(1),
            spec: ModelSpec::Logistic(LogisticModel::new(vec![2.0, -1.0], -0.5)),
        };
        let json: serde_json::Value = serde_json::to_value(&art).unwrap();
        assert_eq!(json["kind"], "logistic");
        assert_eq!(json["weights"][0], 2.0);
        let back: ModelArtifact = serde_json::from_value(json).unwrap();
        assert_eq!(back, art);
        assert_eq!(back.content_hash(), art.content_hash());
        let model = back.to_scored_model(&BridgeConfig::default()).unwrap();
        assert_eq!(model.threshold(), 0.531);
        assert!((model.score(&[0]).unwrap() - 0.817_574_476_193_643_7).abs() < 1e-15);
    }

    #[test]
    fn bridge_without_target_is_rejected() {
        let art = ModelArtifact {
            name: "ext".into(),
            n_features: 1,
            threshold: 0.5,
            dataset_hash: None,
            train_fraction: None,
            split_seed: None,
            spec: ModelSpec::Bridge {
                command: None,
                url: None,
            },
        };
        assert!(art.to_scored_model(&BridgeConfig::default()).is_err());
    }
}
