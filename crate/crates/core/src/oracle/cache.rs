use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::OracleResponse;
use crate::data::{read_jsonl, write_jsonl, LogitVector};
use crate::error::Result;

/// One line of the cache file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheRow {
    pub id: String,
    pub logits: LogitVector,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observed: Option<Vec<bool>>,
}

/// Example id → oracle answer, optionally backed by a JSONL file.
#[derive(Debug, Default)]
pub struct OracleCache {
    entries: Mutex<BTreeMap<String, OracleResponse>>,
    path: Option<PathBuf>,
}

impl OracleCache {
    /// Loads `path` if it exists; later [`save`](Self::save) calls write back to it.
    pub fn open(path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        let entries = if path.exists() {
            read_jsonl::<CacheRow>(&path)?
                .into_iter()
                .map(|r| {
                    (
                        r.id,
                        OracleResponse {
                            logits: r.logits,
                            observed: r.observed,
                        },
                    )
                })
                .collect()
        } else {
            BTreeMap::new()
        };
        Ok(Self {
            entries: Mutex::new(entries),
            path: Some(path),
        })
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, BTreeMap<String, OracleResponse>> {
        self.entries.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn get(&self, id: &str) -> Option<OracleResponse> {
        self.lock().get(id).cloned()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.lock().contains_key(id)
    }

    /// First writer wins. Returns the stored value and whether this call inserted it.
    pub fn insert_if_absent(&self, id: &str, response: OracleResponse) -> (OracleResponse, bool) {
        let mut map = self.lock();
        match map.get(id) {
            Some(existing) => (existing.clone(), false),
            None => {
                map.insert(id.to_string(), response.clone());
                (response, true)
            }
        }
    }

    pub fn len(&self) -> usize {
        self.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.lock().is_empty()
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn rows(&self) -> Vec<CacheRow> {
        self.lock()
            .iter()
            .map(|(id, r)| CacheRow {
                id: id.clone(),
                logits: r.logits.clone(),
                observed: r.observed.clone(),
            })
            .collect()
    }

    /// Writes to the backing file, if any.
    pub fn save(&self) -> Result<()> {
        match &self.path {
            Some(p) => self.save_to(p),
            None => Ok(()),
        }
    }

    pub fn save_to(&self, path: &Path) -> Result<()> {
        write_jsonl(path, self.rows().iter())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        let cache = OracleCache::open(&path).unwrap();
        cache.insert_if_absent("b", LogitVector(vec![0.1, -3.25e-7]).into());
        cache.insert_if_absent(
            "a",
            OracleResponse {
                logits: LogitVector(vec![1.0 / 3.0, 2.0]),
                observed: Some(vec![true, false]),
            },
        );
        cache.save().unwrap();
        let reloaded = OracleCache::open(&path).unwrap();
        assert_eq!(reloaded.rows(), cache.rows());
        let first = std::fs::read_to_string(&path).unwrap();
        assert!(first.starts_with(r#"{"id":"a","logits":[0.3333333333333333,2.0],"observed":[true,false]}"#));
    }

    #[test]
    fn first_writer_wins() {
        let cache = OracleCache::default();
        let (_, first) = cache.insert_if_absent("x", LogitVector(vec![1.0]).into());
        let (kept, second) = cache.insert_if_absent("x", LogitVector(vec![2.0]).into());
        assert!(first && !second);
        assert_eq!(kept.logits.0, vec![1.0]);
    }
}
