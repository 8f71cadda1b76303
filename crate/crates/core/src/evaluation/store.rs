use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::EvaluationRecord;
use crate::llm_harness::StoreError;

/// The current rating for one (record, rater) pair plus every version ever
/// written, oldest first (the last entry equals `latest`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoredEvaluation {
    pub latest: EvaluationRecord,
    pub history: Vec<EvaluationRecord>,
}

/// Ratings as `<dir>/<record_id>__<rater_id>.json`, append-only per pair.
#[derive(Debug, Clone)]
pub struct EvaluationStore {
    dir: PathBuf,
    write_lock: Arc<Mutex<()>>,
}

impl EvaluationStore {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|source| StoreError::Io {
            path: dir.clone(),
            source,
        })?;
        Ok(EvaluationStore {
            dir,
            write_lock: Arc::new(Mutex::new(())),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path_for(&self, record_id: &str, rater_id: &str) -> PathBuf {
        self.dir.join(format!("{record_id}__{rater_id}.json"))
    }

    pub fn get(&self, record_id: &str, rater_id: &str) -> Result<Option<StoredEvaluation>, StoreError> {
        read_json(&self.path_for(record_id, rater_id))
    }

    pub(super) fn put(&self, rating: EvaluationRecord) -> Result<StoredEvaluation, StoreError> {
        let path = self.path_for(&rating.record_id, &rating.rater_id);
        let _guard = self.write_lock.lock().expect("store lock poisoned");
        let mut history = read_json::<StoredEvaluation>(&path)?.map(|s| s.history).unwrap_or_default();
        history.push(rating.clone());
        let stored = StoredEvaluation {
            latest: rating,
            history,
        };
        let body = serde_json::to_vec_pretty(&stored).map_err(|source| StoreError::Json {
            path: path.clone(),
            source,
        })?;
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, body).map_err(|source| StoreError::Io {
            path: tmp.clone(),
            source,
        })?;
        fs::rename(&tmp, &path).map_err(|source| StoreError::Io {
            path: path.clone(),
            source,
        })?;
        Ok(stored)
    }

    /// Stored ratings of one generation record, one per rater, sorted by rater.
    pub fn for_record(&self, record_id: &str) -> Result<Vec<StoredEvaluation>, StoreError> {
        let mut out: Vec<StoredEvaluation> = self
            .stored()?
            .into_iter()
            .filter(|s| s.latest.record_id == record_id)
            .collect();
        out.sort_by(|a, b| a.latest.rater_id.cmp(&b.latest.rater_id));
        Ok(out)
    }

    /// Current rating of every (record, rater) pair, sorted by record then rater.
    pub fn latest(&self) -> Result<Vec<EvaluationRecord>, StoreError> {
        let mut out: Vec<EvaluationRecord> = self.stored()?.into_iter().map(|s| s.latest).collect();
        out.sort_by(|a, b| (&a.record_id, &a.rater_id).cmp(&(&b.record_id, &b.rater_id)));
        Ok(out)
    }

    fn stored(&self) -> Result<Vec<StoredEvaluation>, StoreError> {
        let mut out = Vec::new();
        let entries = fs::read_dir(&self.dir).map_err(|source| StoreError::Io {
            path: self.dir.clone(),
            source,
        })?;
        for entry in entries {
            let path = entry
                .map_err(|source| StoreError::Io {
                    path: self.dir.clone(),
                    source,
                })?
                .path();
            if path.extension().is_some_and(|e| e == "json") {
                if let Some(stored) = read_json::<StoredEvaluation>(&path)? {
                    out.push(stored);
                }
            }
        }
        Ok(out)
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Option<T>, StoreError> {
    match fs::read(path) {
        Ok(bytes) => serde_json::from_slice(&bytes).map(Some).map_err(|source| StoreError::Json {
            path: path.to_owned(),
            source,
        }),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(source) => Err(StoreError::Io {
            path: path.to_owned(),
            source,
        }),
    }
}
