//! Explanation files: one JSON object per line plus a run manifest.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ExplainError, Explanation, ItemFailure};

/// Describes how an explanation file was produced. Hashes tie the file to the
/// exact dataset and model it explains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub model_name: String,
    pub model_hash: String,
    pub threshold: f64,
    pub seed: u64,
    pub dataset_hash: String,
    pub items: usize,
    pub explained: usize,
    pub flipped: usize,
    pub failures: Vec<ItemFailure>,
    pub evaluations: u64,
    pub model_calls: u64,
    pub cache: bool,
    pub parallelism: usize,
    pub wall_time_secs: f64,
}

impl RunManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ExplainError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| ExplainError::Io(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| ExplainError::Io(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ExplainError> {
        let path = path.as_ref();
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        std::fs::write(path, text).map_err(|e| ExplainError::Io(format!("{}: {e}", path.display())))
    }
}

pub fn write_explanations<W: Write>(mut out: W, explanations: &[Explanation]) -> std::io::Result<()> {
    for e in explanations {
        serde_json::to_writer(&mut out, e)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn read_explanations(path: impl AsRef<Path>) -> Result<Vec<Explanation>, ExplainError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)
        .map_err(|e| ExplainError::Io(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| ExplainError::Io(format!("{}: {e}", path.display())))?;
        if line.trim().is_empty() {
            continue;
        }
        let e: Explanation = serde_json::from_str(&line)
            .map_err(|e| ExplainError::Io(format!("{}:{}: {e}", path.display(), n + 1)))?;
        out.push(e);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_format() {
        let e = Explanation {
            item: 4,
            removed: vec![1, 7],
            flipped: true,
            score: 0.75,
            queries: 12,
        };
        let mut buf = Vec::new();
        write_explanations(&mut buf, &[e]).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "{\"item\":4,\"removed\":[1,7],\"flipped\":true,\"score\":0.75,\"queries\":12}\n"
        );
    }
}
