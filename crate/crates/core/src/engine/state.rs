//! Persistent record of completed instances, `.stepline/state.json`.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use super::fingerprint::{Digest, Fingerprint};
use super::EngineError;

pub const STATE_DIR: &str = ".stepline";
pub const STATE_FILE: &str = "state.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateRecord {
    pub script: Option<Digest>,
    pub inputs: BTreeMap<String, Digest>,
    pub params: Digest,
    pub command: Digest,
    pub targets: Vec<String>,
    #[serde(with = "rfc3339")]
    pub completed_at: DateTime<Utc>,
}

impl StateRecord {
    pub fn new(fp: Fingerprint, targets: Vec<String>, completed_at: DateTime<Utc>) -> Self {
        StateRecord {
            script: fp.script,
            inputs: fp.inputs,
            params: fp.params,
            command: fp.command,
            targets,
            completed_at,
        }
    }
}

mod rfc3339 {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(t: &DateTime<Utc>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&t.to_rfc3339_opts(SecondsFormat::Millis, true))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DateTime<Utc>, D::Error> {
        let s = String::deserialize(d)?;
        DateTime::parse_from_rfc3339(&s)
            .map(|t| t.with_timezone(&Utc))
            .map_err(serde::de::Error::custom)
    }
}

/// Records keyed by instance id. A missing record means the instance never ran.
#[derive(Debug, Clone)]
pub struct StateStore {
    path: PathBuf,
    records: BTreeMap<String, StateRecord>,
}

impl StateStore {
    /// State file location for a manifest directory.
    pub fn default_path(root: &Path) -> PathBuf {
        root.join(STATE_DIR).join(STATE_FILE)
    }

    pub fn empty(path: impl Into<PathBuf>) -> Self {
        StateStore {
            path: path.into(),
            records: BTreeMap::new(),
        }
    }

    /// Loads the store; a missing file yields an empty store.
    pub fn load(path: impl Into<PathBuf>) -> Result<Self, EngineError> {
        let path = path.into();
        let text = match std::fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Self::empty(path)),
            Err(source) => return Err(EngineError::Io { path, source }),
        };
        let records = serde_json::from_str(&text).map_err(|e| EngineError::CorruptState {
            path: path.clone(),
            reason: e.to_string(),
        })?;
        Ok(StateStore { path, records })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn get(&self, id: &str) -> Option<&StateRecord> {
        self.records.get(id)
    }

    pub fn records(&self) -> &BTreeMap<String, StateRecord> {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn insert(&mut self, id: impl Into<String>, record: StateRecord) {
        self.records.insert(id.into(), record);
    }

    pub fn remove(&mut self, id: &str) -> Option<StateRecord> {
        self.records.remove(id)
    }

    /// Writes the store to a temporary file next to it and renames it into place.
    pub fn save(&self) -> Result<(), EngineError> {
        let io = |source| EngineError::Io {
            path: self.path.clone(),
            source,
        };
        let dir = self.path.parent().unwrap_or(Path::new("."));
        std::fs::create_dir_all(dir).map_err(io)?;
        let mut text = serde_json::to_string_pretty(&self.records).expect("state serializes");
        text.push('\n');
        let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
        tmp.write_all(text.as_bytes()).map_err(io)?;
        tmp.as_file().sync_all().map_err(io)?;
        tmp.persist(&self.path).map_err(|e| io(e.error))?;
        Ok(())
    }

    /// Drops the records of `ids` and persists. Returns the ids that had no record.
    pub fn forget<'a, I>(&mut self, ids: I) -> Result<Vec<String>, EngineError>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut unknown = Vec::new();
        for id in ids {
            if self.records.remove(id).is_none() {
                log::warn!("forget: no record for `{id}`");
                unknown.push(id.to_string());
            }
        }
        self.save()?;
        Ok(unknown)
    }

    pub fn forget_all(&mut self) -> Result<(), EngineError> {
        self.records.clear();
        self.save()
    }
}
