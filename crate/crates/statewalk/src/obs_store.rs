//! Content-addressed storage for full observations.
//!
//! Graph nodes carry only an `observation_ref`; the page sources themselves
//! live out-of-band, keyed by content digest, so graph files stay small and
//! identical captures are stored once.

use std::collections::BTreeMap;
use std::io;
use std::path::PathBuf;

use crate::state::Observation;

pub trait ObservationStore {
    /// Store an observation, returning its content digest.
    fn put(&mut self, obs: &Observation) -> String;

    fn get(&self, key: &str) -> Option<Observation>;

    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// In-process store; the default for simulated runs.
#[derive(Debug, Default, Clone)]
pub struct MemObsStore {
    entries: BTreeMap<String, Observation>,
}

impl MemObsStore {
    pub fn new() -> Self {
        Self::default()
    }
}

impl ObservationStore for MemObsStore {
    fn put(&mut self, obs: &Observation) -> String {
        let key = obs.content_digest();
        self.entries.entry(key.clone()).or_insert_with(|| obs.clone());
        key
    }

    fn get(&self, key: &str) -> Option<Observation> {
        self.entries.get(key).cloned()
    }

    fn len(&self) -> usize {
        self.entries.len()
    }
}

/// Directory-backed store: one `<digest>.json` per observation, written
/// atomically (temp file + rename).
#[derive(Debug, Clone)]
pub struct FsObsStore {
    dir: PathBuf,
}

impl FsObsStore {
    pub fn open(dir: impl Into<PathBuf>) -> io::Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        Ok(FsObsStore { dir })
    }

    fn path_for(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }
}

impl ObservationStore for FsObsStore {
    fn put(&mut self, obs: &Observation) -> String {
        let key = obs.content_digest();
        let path = self.path_for(&key);
        if !path.exists() {
            let body = serde_json::to_vec_pretty(obs).expect("observation serializes");
            let tmp = self.dir.join(format!(".{key}.tmp"));
            if std::fs::write(&tmp, &body).is_ok() {
                let _ = std::fs::rename(&tmp, &path);
            }
        }
        key
    }

    fn get(&self, key: &str) -> Option<Observation> {
        let body = std::fs::read(self.path_for(key)).ok()?;
        serde_json::from_slice(&body).ok()
    }

    fn len(&self) -> usize {
        std::fs::read_dir(&self.dir)
            .map(|rd| {
                rd.filter_map(Result::ok)
                    .filter(|e| e.path().extension().is_some_and(|x| x == "json"))
                    .count()
            })
            .unwrap_or(0)
    }
}
