//! Sparse binary datasets.
//!
//! Items are bags of features: the set of feature indices whose value is 1,
//! together with a binary ground-truth label. The canonical interchange format
//! is a single UTF-8 text file:
//!
//! ```text
//! #features 4
//! #f 0 Aspirin
//! #f 1 Ibuprofen
//! #f 2 Sodium Chloride
//! #f 3 Heparin
//! 1 0:1 3:1
//! 0 2:1
//! 0
//! ```
//!
//! A dense CSV importer is provided for convenience. Its header is
//! `[id,]label,<feature name>,...` and every feature cell must be `0` or `1`.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub type FeatureIdx = u32;
pub type ItemId = u64;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: feature index {index} out of range (dataset has {features} features)")]
    FeatureOutOfRange {
        line: usize,
        index: u64,
        features: usize,
    },
    #[error("line {line}: duplicate item id {id}")]
    DuplicateItem { line: usize, id: ItemId },
    #[error("duplicate feature name {0:?}")]
    DuplicateFeatureName(String),
    #[error("train fraction must lie strictly between 0 and 1, got {0}")]
    FractionOutOfRange(f64),
}

/// Input file layouts understood by [`load_dataset`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Sparse,
    Csv,
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sparse" | "sparse-text" => Ok(Format::Sparse),
            "csv" | "dense-csv" => Ok(Format::Csv),
            other => Err(format!("unknown data format {other:?} (expected sparse or csv)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Feature {
    pub index: FeatureIdx,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Item {
    pub id: ItemId,
    /// Active feature indices, ascending and free of duplicates.
    pub active: Vec<FeatureIdx>,
    pub label: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// An immutable sparse dataset. Items carry a train/test tag; freshly loaded
/// datasets tag every item `Train` until [`SparseDataset::split`] is applied.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseDataset {
    features: Vec<Feature>,
    items: Vec<Item>,
    splits: Vec<Split>,
}

impl SparseDataset {
    /// Builds a dataset, canonicalising every active set and checking all
    /// invariants.
    pub fn new(features: Vec<String>, items: Vec<Item>) -> Result<Self, DataError> {
        let mut seen_names = HashSet::new();
        let features: Vec<Feature> = features
            .into_iter()
            .enumerate()
            .map(|(i, name)| {
                let name = name.trim().to_string();
                if !seen_names.insert(name.clone()) {
                    return Err(DataError::DuplicateFeatureName(name));
                }
                Ok(Feature {
                    index: i as FeatureIdx,
                    name,
                })
            })
            .collect::<Result<_, _>>()?;

        let mut seen_ids = HashSet::new();
        let mut canonical = Vec::with_capacity(items.len());
        for (pos, mut item) in items.into_iter().enumerate() {
            if !seen_ids.insert(item.id) {
                return Err(DataError::DuplicateItem {
                    line: pos + 1,
                    id: item.id,
                });
            }
            item.active.sort_unstable();
            if item.active.windows(2).any(|w| w[0] == w[1]) {
                return Err(DataError::Malformed {
                    line: pos + 1,
                    message: format!("item {} lists a feature twice", item.id),
                });
            }
            if let Some(&last) = item.active.last() {
                if last as usize >= features.len() {
                    return Err(DataError::FeatureOutOfRange {
                        line: pos + 1,
                        index: last as u64,
                        features: features.len(),
                    });
                }
            }
            canonical.push(item);
        }
        let splits = vec![Split::Train; canonical.len()];
        Ok(Self {
            features,
            items: canonical,
            splits,
        })
    }

    pub fn features(&self) -> &[Feature] {
        &self.features
    }

    pub fn n_features(&self) -> usize {
        self.features.len()
    }

    pub fn items(&self) -> &[Item] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn splits(&self) -> &[Split] {
        &self.splits
    }

    pub fn feature_name(&self, index: FeatureIdx) -> Option<&str> {
        self.features.get(index as usize).map(|f| f.name.as_str())
    }

    pub fn feature_by_name(&self, name: &str) -> Option<FeatureIdx> {
        let name = name.trim();
        self.features
            .iter()
            .find(|f| f.name == name)
            .map(|f| f.index)
    }

    pub fn items_in(&self, split: Split) -> impl Iterator<Item = &Item> {
        self.items
            .iter()
            .zip(&self.splits)
            .filter(move |(_, s)| **s == split)
            .map(|(item, _)| item)
    }

    /// Fraction of positive ground-truth labels within `split`, or `None`
    /// when the split is empty.
    pub fn positive_rate(&self, split: Option<Split>) -> Option<f64> {
        let (pos, total) = self
            .items
            .iter()
            .zip(&self.splits)
            .filter(|(_, s)| split.is_none_or(|want| **s == want))
            .fold((0usize, 0usize), |(p, n), (item, _)| {
                (p + item.label as usize, n + 1)
            });
        (total > 0).then(|| pos as f64 / total as f64)
    }

    /// Random, unstratified train/test partition. The number of training items
    /// is `round(train_fraction * n)`; the assignment depends only on
    /// `(self, train_fraction, seed)`.
    pub fn split(mut self, train_fraction: f64, seed: u64) -> Result<Self, DataError> {
        if !(train_fraction > 0.0 && train_fraction < 1.0) {
            return Err(DataError::FractionOutOfRange(train_fraction));
        }
        let n = self.items.len();
        let n_train = (train_fraction * n as f64).round() as usize;
        // shuffle positions ordered by id so the result is independent of file order
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by_key(|&i| self.items[i].id);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        order.shuffle(&mut rng);
        self.splits = vec![Split::Test; n];
        for &i in &order[..n_train] {
            self.splits[i] = Split::Train;
        }
        Ok(self)
    }

    /// Canonical sparse-text serialization.
    pub fn to_sparse_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "#features {}", self.features.len());
        for f in &self.features {
            let _ = writeln!(out, "#f {} {}", f.index, f.name);
        }
        for item in &self.items {
            out.push(if item.label { '1' } else { '0' });
            for idx in &item.active {
                let _ = write!(out, " {idx}:1");
            }
            out.push('\n');
        }
        out
    }

    /// SHA-256 of the canonical serialization, hex encoded. Split tags are not
    /// part of the hash.
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_sparse_text().as_bytes()))
    }
}

pub fn load_dataset(path: impl AsRef<Path>, format: Format) -> Result<SparseDataset, DataError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    match format {
        Format::Sparse => parse_sparse(&text),
        Format::Csv => parse_csv(&text),
    }
}

pub fn parse_sparse(text: &str) -> Result<SparseDataset, DataError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));

    let (line_no, header) = lines.next().ok_or(DataError::Malformed {
        line: 1,
        message: "empty file".into(),
    })?;
    let n_features: usize = header
        .strip_prefix("#features")
        .and_then(|rest| rest.trim().parse().ok())
        .ok_or_else(|| DataError::Malformed {
            line: line_no,
            message: format!("expected `#features <count>`, found {header:?}"),
        })?;

    let mut names: Vec<Option<String>> = vec![None; n_features];
    for _ in 0..n_features {
        let (line_no, line) = lines.next().ok_or(DataError::Malformed {
            line: line_no + n_features,
            message: "file ends inside the feature header".into(),
        })?;
        let malformed = |message: String| DataError::Malformed {
            line: line_no,
            message,
        };
        let rest = line
            .strip_prefix("#f ")
            .ok_or_else(|| malformed(format!("expected `#f <index> <name>`, found {line:?}")))?;
        let (idx, name) = rest
            .trim_start()
            .split_once(' ')
            .ok_or_else(|| malformed("feature line is missing a name".into()))?;
        let idx: usize = idx
            .parse()
            .map_err(|_| malformed(format!("bad feature index {idx:?}")))?;
        if idx >= n_features {
            return Err(DataError::FeatureOutOfRange {
                line: line_no,
                index: idx as u64,
                features: n_features,
            });
        }
        if names[idx].is_some() {
            return Err(malformed(format!("feature index {idx} declared twice")));
        }
        let name = name.trim();
        if name.is_empty() {
            return Err(malformed("feature line is missing a name".into()));
        }
        names[idx] = Some(name.to_string());
    }
    // n_features lines each filled a distinct slot in 0..n_features, so all are set
    let names: Vec<String> = names.into_iter().map(Option::unwrap_or_default).collect();

    let mut items = Vec::new();
    let mut item_lines = Vec::new();
    for (line_no, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |message: String| DataError::Malformed {
            line: line_no,
            message,
        };
        let mut tokens = line.split_ascii_whitespace();
        let label = match tokens.next() {
            Some("1") => true,
            Some("0") => false,
            Some(other) => return Err(malformed(format!("label must be 0 or 1, found {other:?}"))),
            None => unreachable!("blank lines are skipped"),
        };
        let mut active = Vec::new();
        for tok in tokens {
            let (idx, value) = tok
                .split_once(':')
                .ok_or_else(|| malformed(format!("expected `<index>:1`, found {tok:?}")))?;
            if value != "1" {
                return Err(malformed(format!("feature value must be 1, found {tok:?}")));
            }
            let idx: u64 = idx
                .parse()
                .map_err(|_| malformed(format!("bad feature index in {tok:?}")))?;
            if idx as usize >= n_features {
                return Err(DataError::FeatureOutOfRange {
                    line: line_no,
                    index: idx,
                    features: n_features,
                });
            }
            active.push(idx as FeatureIdx);
        }
        active.sort_unstable();
        if active.windows(2).any(|w| w[0] == w[1]) {
            return Err(malformed("a feature is listed twice".into()));
        }
        item_lines.push(line_no);
        items.push(Item {
            id: items.len() as ItemId,
            active,
            label,
        });
    }
    SparseDataset::new(names, items).map_err(|e| relocate(e, &item_lines))
}

pub fn parse_csv(text: &str) -> Result<SparseDataset, DataError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or(DataError::Malformed {
        line: 1,
        message: "empty file".into(),
    })?;
    let columns: Vec<&str> = header.split(',').map(str::trim).collect();
    let has_id = columns.first() == Some(&"id");
    let label_col = has_id as usize;
    if columns.get(label_col) != Some(&"label") {
        return Err(DataError::Malformed {
            line: 1,
            message: "csv header must start with `label` or `id,label`".into(),
        });
    }
    let names: Vec<String> = columns[label_col + 1..]
        .iter()
        .map(|s| s.to_string())
        .collect();

    let mut items = Vec::new();
    let mut item_lines = Vec::new();
    for (line_no, line) in lines {
        let malformed = |message: String| DataError::Malformed {
            line: line_no,
            message,
        };
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if cells.len() != columns.len() {
            return Err(malformed(format!(
                "expected {} cells, found {}",
                columns.len(),
                cells.len()
            )));
        }
        let id = if has_id {
            cells[0]
                .parse()
                .map_err(|_| malformed(format!("bad item id {:?}", cells[0])))?
        } else {
            items.len() as ItemId
        };
        let binary = |cell: &str| match cell {
            "0" => Ok(false),
            "1" => Ok(true),
            other => Err(malformed(format!("cell must be 0 or 1, found {other:?}"))),
        };
        let label = binary(cells[label_col])?;
        let mut active = Vec::new();
        for (j, cell) in cells[label_col + 1..].iter().enumerate() {
            if binary(cell)? {
                active.push(j as FeatureIdx);
            }
        }
        item_lines.push(line_no);
        items.push(Item { id, active, label });
    }
    SparseDataset::new(names, items).map_err(|e| relocate(e, &item_lines))
}

// `SparseDataset::new` reports item positions; translate them to file lines.
fn relocate(err: DataError, item_lines: &[usize]) -> DataError {
    let fix = |pos: usize| item_lines.get(pos - 1).copied().unwrap_or(pos);
    match err {
        DataError::DuplicateItem { line, id } => DataError::DuplicateItem { line: fix(line), id },
        DataError::Malformed { line, message } => DataError::Malformed {
            line: fix(line),
            message,
        },
        DataError::FeatureOutOfRange {
            line,
            index,
            features,
        } => DataError::FeatureOutOfRange {
            line: fix(line),
            index,
            features,
        },
        other => other,
    }
}
