use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use super::GenerationRecord;

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt record {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_owned(),
        source,
    }
}

/// Generation records as `<dir>/<record_id>.json`.
///
/// Writes go through a temporary file and a rename, so readers only ever see
/// complete records. Writes from clones of one store are serialized.
#[derive(Debug, Clone)]
pub struct RecordStore {
    dir: PathBuf,
    write_lock: Arc<Mutex<()>>,
}

impl RecordStore {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        Ok(RecordStore {
            dir,
            write_lock: Arc::new(Mutex::new(())),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_for(&self, record_id: &str) -> PathBuf {
        self.dir.join(format!("{record_id}.json"))
    }

    pub fn save(&self, record: &GenerationRecord) -> Result<(), StoreError> {
        let path = self.path_for(&record.record_id);
        let tmp = self.dir.join(format!(".{}.json.tmp", record.record_id));
        let body = serde_json::to_vec_pretty(record).map_err(|source| StoreError::Json {
            path: path.clone(),
            source,
        })?;
        let _guard = self.write_lock.lock().expect("store lock poisoned");
        fs::write(&tmp, body).map_err(io_err(&tmp))?;
        fs::rename(&tmp, &path).map_err(io_err(&path))?;
        Ok(())
    }

    pub fn load(&self, record_id: &str) -> Result<Option<GenerationRecord>, StoreError> {
        let path = self.path_for(record_id);
        match fs::read(&path) {
            Ok(bytes) => serde_json::from_slice(&bytes)
                .map(Some)
                .map_err(|source| StoreError::Json { path, source }),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(io_err(&path)(e)),
        }
    }

    pub fn contains(&self, record_id: &str) -> bool {
        self.path_for(record_id).is_file()
    }

    /// All records, sorted by id.
    pub fn list(&self) -> Result<Vec<GenerationRecord>, StoreError> {
        let mut out = Vec::new();
        for entry in fs::read_dir(&self.dir).map_err(io_err(&self.dir))? {
            let path = entry.map_err(io_err(&self.dir))?.path();
            let is_record = path.extension().is_some_and(|e| e == "json")
                && !path
                    .file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with('.'));
            if !is_record {
                continue;
            }
            let bytes = fs::read(&path).map_err(io_err(&path))?;
            out.push(serde_json::from_slice(&bytes).map_err(|source| StoreError::Json { path, source })?);
        }
        out.sort_by(|a: &GenerationRecord, b| a.record_id.cmp(&b.record_id));
        Ok(out)
    }
}
