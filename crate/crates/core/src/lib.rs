//! Removal-based explanations for binary classifiers over sparse binary
//! data, and the aggregate diagnostics built on top of them.
//!
//! The usual flow: load a [`SparseDataset`], wrap a [`Predictor`] into a
//! calibrated [`ScoredModel`], run [`explain_all`], then feed the result into
//! an [`Analysis`] to group, filter and inspect explanations.

pub mod aggregate;
pub mod data;
pub mod explain;
pub mod inspect;
pub mod metrics;
pub mod model;
pub mod synth;

pub use aggregate::{group_explanations, Analysis, ExplanationGroup, OddsRatio, SessionState};
pub use data::{load_dataset, FeatureIdx, Format, ItemId, SparseDataset, Split};
pub use explain::{explain_all, explain_item, ExplainConfig, Explanation};
pub use model::{Predictor, ScoredModel};
