//! Dataset files: line-delimited JSON records plus a sidecar header with the
//! generating config and a content hash.

use super::gen::{AffinityTable, Dataset};
use super::{PairSample, WorldConfig};
use crate::error::{Error, Result};
use crate::util::fnv1a64;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const TRAIN_FILE: &str = "train.jsonl";
pub const TEST_FILE: &str = "test.jsonl";
pub const HEADER_FILE: &str = "header.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub config: WorldConfig,
    pub affinity: AffinityTable,
    pub train_pairs: usize,
    pub test_pairs: usize,
    /// FNV-1a 64 over the train file bytes followed by the test file bytes.
    pub content_hash: String,
}

fn encode_split(pairs: &[PairSample]) -> Result<String> {
    let mut out = String::new();
    for p in pairs {
        out.push_str(&serde_json::to_string(p).map_err(|e| Error::Format {
            path: "<pair record>".into(),
            reason: e.to_string(),
        })?);
        out.push('\n');
    }
    Ok(out)
}

fn decode_split(text: &str, path: &Path) -> Result<Vec<PairSample>> {
    text.lines()
        .enumerate()
        .filter(|(_, line)| !line.trim().is_empty())
        .map(|(i, line)| {
            serde_json::from_str(line).map_err(|e| Error::Format {
                path: path.display().to_string(),
                reason: format!("line {}: {e}", i + 1),
            })
        })
        .collect()
}

fn hash_of(train_text: &str, test_text: &str) -> String {
    let mut bytes = Vec::with_capacity(train_text.len() + test_text.len());
    bytes.extend_from_slice(train_text.as_bytes());
    bytes.extend_from_slice(test_text.as_bytes());
    format!("fnv1a64:{:016x}", fnv1a64(&bytes))
}

/// Writes `train.jsonl`, `test.jsonl` and `header.json` into `dir`.
pub fn write_dataset(dir: &Path, dataset: &Dataset) -> Result<DatasetHeader> {
    std::fs::create_dir_all(dir)?;
    let train_text = encode_split(&dataset.train)?;
    let test_text = encode_split(&dataset.test)?;
    let header = DatasetHeader {
        config: dataset.config.clone(),
        affinity: dataset.affinity.clone(),
        train_pairs: dataset.train.len(),
        test_pairs: dataset.test.len(),
        content_hash: hash_of(&train_text, &test_text),
    };
    std::fs::write(dir.join(TRAIN_FILE), train_text)?;
    std::fs::write(dir.join(TEST_FILE), test_text)?;
    let header_text = serde_json::to_string_pretty(&header).map_err(|e| Error::Format {
        path: HEADER_FILE.into(),
        reason: e.to_string(),
    })?;
    std::fs::write(dir.join(HEADER_FILE), header_text + "\n")?;
    Ok(header)
}

/// Reads a dataset directory back, verifying the content hash.
pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let header_path = dir.join(HEADER_FILE);
    let header: DatasetHeader =
        serde_json::from_str(&std::fs::read_to_string(&header_path)?).map_err(|e| Error::Format {
            path: header_path.display().to_string(),
            reason: e.to_string(),
        })?;
    let train_path = dir.join(TRAIN_FILE);
    let test_path = dir.join(TEST_FILE);
    let train_text = std::fs::read_to_string(&train_path)?;
    let test_text = std::fs::read_to_string(&test_path)?;
    let actual = hash_of(&train_text, &test_text);
    if actual != header.content_hash {
        return Err(Error::Format {
            path: dir.display().to_string(),
            reason: format!(
                "content hash mismatch: header says {}, files hash to {actual}",
                header.content_hash
            ),
        });
    }
    let train = decode_split(&train_text, &train_path)?;
    let test = decode_split(&test_text, &test_path)?;
    if train.len() != header.train_pairs || test.len() != header.test_pairs {
        return Err(Error::Format {
            path: dir.display().to_string(),
            reason: format!(
                "pair counts ({}, {}) disagree with header ({}, {})",
                train.len(),
                test.len(),
                header.train_pairs,
                header.test_pairs
            ),
        });
    }
    Ok(Dataset {
        config: header.config,
        affinity: header.affinity,
        train,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::generate_dataset;
    use tempfile::tempdir;

    #[test]
    fn write_read_round_trips() {
        let cfg = WorldConfig {
            scenes: 30,
            ..WorldConfig::default()
        };
        let data = generate_dataset(&cfg).unwrap();
        let dir = tempdir().unwrap();
        write_dataset(dir.path(), &data).unwrap();
        let back = read_dataset(dir.path()).unwrap();
        assert_eq!(back, data);
    }

    #[test]
    fn regeneration_gives_byte_identical_files() {
        let cfg = WorldConfig {
            scenes: 20,
            ..WorldConfig::default()
        };
        let da = tempdir().unwrap();
        let db = tempdir().unwrap();
        write_dataset(da.path(), &generate_dataset(&cfg).unwrap()).unwrap();
        write_dataset(db.path(), &generate_dataset(&cfg).unwrap()).unwrap();
        for f in [TRAIN_FILE, TEST_FILE, HEADER_FILE] {
            assert_eq!(
                std::fs::read(da.path().join(f)).unwrap(),
                std::fs::read(db.path().join(f)).unwrap(),
                "{f} differs"
            );
        }
    }

    #[test]
    fn tampering_is_detected() {
        let cfg = WorldConfig {
            scenes: 10,
            ..WorldConfig::default()
        };
        let dir = tempdir().unwrap();
        write_dataset(dir.path(), &generate_dataset(&cfg).unwrap()).unwrap();
        let path = dir.path().join(TRAIN_FILE);
        let mut text = std::fs::read_to_string(&path).unwrap();
        text = text.replacen("\"true_object\":", "\"true_object\": ", 1);
        std::fs::write(&path, text).unwrap();
        assert!(matches!(read_dataset(dir.path()), Err(Error::Format { .. })));
    }
}
