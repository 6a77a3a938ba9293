//! Design persistence: one JSON file per design id, replaced atomically.

use std::collections::HashMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use chrono::{SecondsFormat, Utc};
use serde_json::{json, Value};
use thiserror::Error;

use darviz_core::ir::{parse_ir, serialize_ir, Model};

#[derive(Debug, Clone, PartialEq)]
pub struct DesignRecord {
    pub id: String,
    pub model: Model,
    /// RFC 3339, UTC.
    pub created: String,
    pub updated: String,
    /// 1 on creation, +1 per successful write.
    pub revision: u64,
}

impl DesignRecord {
    pub fn to_json(&self) -> Value {
        json!({
            "id": self.id,
            "model": document_value(&self.model),
            "created": self.created,
            "updated": self.updated,
            "revision": self.revision,
        })
    }

    fn from_json(v: &Value) -> Result<Self, String> {
        let text = |key: &str| {
            v[key]
                .as_str()
                .map(str::to_string)
                .ok_or_else(|| format!("missing `{key}`"))
        };
        let model = parse_ir(&v["model"].to_string()).map_err(|e| e.to_string())?;
        Ok(DesignRecord {
            id: text("id")?,
            model,
            created: text("created")?,
            updated: text("updated")?,
            revision: v["revision"].as_u64().ok_or("missing `revision`")?,
        })
    }
}

/// The canonical IR document of `model` as a JSON value.
pub fn document_value(model: &Model) -> Value {
    serde_json::from_str(&serialize_ir(model)).expect("serialized IR is JSON")
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("no design `{0}`")]
    NotFound(String),
    #[error("design `{id}` is unreadable: {reason}")]
    Corrupt { id: String, reason: String },
    #[error("storage failure: {0}")]
    Io(#[from] io::Error),
}

pub trait DesignStore: Send + Sync {
    /// Creates a record when `id` is `None`, otherwise overwrites the
    /// existing design `id`.
    fn save(&self, id: Option<&str>, model: &Model) -> Result<DesignRecord, StoreError>;
    fn load(&self, id: &str) -> Result<DesignRecord, StoreError>;
    fn delete(&self, id: &str) -> Result<(), StoreError>;
    /// Stored ids, sorted.
    fn list(&self) -> Result<Vec<String>, StoreError>;
}

/// Store rooted at a directory. Writes go to a temp file in the same
/// directory and are renamed over the target, so readers see either the
/// old or the new revision. Writers to one id are serialized.
pub struct FileStore {
    dir: PathBuf,
    locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
}

/// Server-assigned ids are simple-format UUIDs; anything else cannot name
/// a stored design (and never reaches the filesystem).
fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 64 && id.bytes().all(|b| b.is_ascii_hexdigit() || b == b'-')
}

fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

impl FileStore {
    pub fn open(dir: impl Into<PathBuf>) -> io::Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(FileStore {
            dir,
            locks: Mutex::new(HashMap::new()),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path(&self, id: &str) -> PathBuf {
        self.dir.join(format!("{id}.json"))
    }

    fn lock(&self, id: &str) -> Arc<Mutex<()>> {
        let mut locks = self.locks.lock().unwrap_or_else(|e| e.into_inner());
        locks.entry(id.to_string()).or_default().clone()
    }

    fn read(&self, id: &str) -> Result<DesignRecord, StoreError> {
        if !valid_id(id) {
            return Err(StoreError::NotFound(id.to_string()));
        }
        let text = match fs::read_to_string(self.path(id)) {
            Ok(t) => t,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Err(StoreError::NotFound(id.to_string())),
            Err(e) => return Err(e.into()),
        };
        let corrupt = |reason: String| StoreError::Corrupt {
            id: id.to_string(),
            reason,
        };
        let value: Value = serde_json::from_str(&text).map_err(|e| corrupt(e.to_string()))?;
        DesignRecord::from_json(&value).map_err(corrupt)
    }

    fn write(&self, record: &DesignRecord) -> Result<(), StoreError> {
        let mut tmp = tempfile::NamedTempFile::new_in(&self.dir)?;
        let mut body = serde_json::to_vec(&record.to_json()).expect("records serialize");
        body.push(b'\n');
        tmp.write_all(&body)?;
        tmp.as_file().sync_all()?;
        tmp.persist(self.path(&record.id)).map_err(|e| e.error)?;
        Ok(())
    }
}

impl DesignStore for FileStore {
    fn save(&self, id: Option<&str>, model: &Model) -> Result<DesignRecord, StoreError> {
        let stamp = now();
        let record = match id {
            None => {
                let id = uuid::Uuid::new_v4().simple().to_string();
                let lock = self.lock(&id);
                let _guard = lock.lock().unwrap_or_else(|e| e.into_inner());
                let record = DesignRecord {
                    id,
                    model: model.clone(),
                    created: stamp.clone(),
                    updated: stamp,
                    revision: 1,
                };
                self.write(&record)?;
                record
            }
            Some(id) => {
                let lock = self.lock(id);
                let _guard = lock.lock().unwrap_or_else(|e| e.into_inner());
                let previous = self.read(id)?;
                let record = DesignRecord {
                    id: id.to_string(),
                    model: model.clone(),
                    created: previous.created,
                    updated: stamp,
                    revision: previous.revision + 1,
                };
                self.write(&record)?;
                record
            }
        };
        Ok(record)
    }

    fn load(&self, id: &str) -> Result<DesignRecord, StoreError> {
        self.read(id)
    }

    fn delete(&self, id: &str) -> Result<(), StoreError> {
        if !valid_id(id) {
            return Err(StoreError::NotFound(id.to_string()));
        }
        let lock = self.lock(id);
        let _guard = lock.lock().unwrap_or_else(|e| e.into_inner());
        match fs::remove_file(self.path(id)) {
            Ok(()) => Ok(()),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Err(StoreError::NotFound(id.to_string())),
            Err(e) => Err(e.into()),
        }
    }

    fn list(&self) -> Result<Vec<String>, StoreError> {
        let mut ids = Vec::new();
        for entry in fs::read_dir(&self.dir)? {
            let name = entry?.file_name();
            let Some(id) = name.to_str().and_then(|n| n.strip_suffix(".json")) else {
                continue;
            };
            if valid_id(id) {
                ids.push(id.to_string());
            }
        }
        ids.sort();
        Ok(ids)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use darviz_core::ir::Layer;

    fn model(name: &str) -> Model {
        let mut m = Model::new(name);
        m.insert_layer(Layer::input("in")).unwrap();
        m
    }

    #[test]
    fn revisions_count_writes() {
        let dir = tempfile::tempdir().unwrap();
        let store = FileStore::open(dir.path()).unwrap();
        let first = store.save(None, &model("a")).unwrap();
        assert_eq!(first.revision, 1);
        let second = store.save(Some(&first.id), &model("b")).unwrap();
        assert_eq!(second.revision, 2);
        assert_eq!(second.created, first.created);
        let loaded = store.load(&first.id).unwrap();
        assert_eq!(loaded, second);
        assert_eq!(store.list().unwrap(), vec![first.id.clone()]);
    }

    #[test]
    fn unknown_and_hostile_ids_are_not_found() {
        let dir = tempfile::tempdir().unwrap();
        let store = FileStore::open(dir.path()).unwrap();
        for id in ["abc123", "../etc/passwd", "", "a/b"] {
            assert!(matches!(store.load(id), Err(StoreError::NotFound(_))));
            assert!(matches!(
                store.save(Some(id), &model("x")),
                Err(StoreError::NotFound(_))
            ));
            assert!(matches!(store.delete(id), Err(StoreError::NotFound(_))));
        }
    }

    #[test]
    fn interrupted_write_leaves_previous_revision() {
        let dir = tempfile::tempdir().unwrap();
        let store = FileStore::open(dir.path()).unwrap();
        let rec = store.save(None, &model("a")).unwrap();
        // a writer that died between write and rename
        let mut stray = tempfile::NamedTempFile::new_in(dir.path()).unwrap();
        stray.write_all(b"{\"id\": \"trunc").unwrap();
        let (_file, _path) = stray.keep().unwrap();
        assert_eq!(store.load(&rec.id).unwrap(), rec);
        assert_eq!(store.list().unwrap(), vec![rec.id]);
    }

    #[test]
    fn concurrent_writers_serialize() {
        let dir = tempfile::tempdir().unwrap();
        let store = Arc::new(FileStore::open(dir.path()).unwrap());
        let id = store.save(None, &model("a")).unwrap().id;
        let handles: Vec<_> = (0..16)
            .map(|i| {
                let store = store.clone();
                let id = id.clone();
                std::thread::spawn(move || store.save(Some(&id), &model(&format!("m{i}"))).unwrap().revision)
            })
            .collect();
        let mut revisions: Vec<u64> = handles.into_iter().map(|h| h.join().unwrap()).collect();
        revisions.sort();
        assert_eq!(revisions, (2..=17).collect::<Vec<_>>());
        assert_eq!(store.load(&id).unwrap().revision, 17);
    }
}
