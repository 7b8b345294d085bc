use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tlbo_core::seed::derive_seed;
use tlbo_core::{Phase, Schedule, Session};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{context}: {source}")]
    Io {
        context: String,
        source: std::io::Error,
    },
    #[error("snapshot: {0}")]
    Json(#[from] serde_json::Error),
}

impl StoreError {
    pub(crate) fn io(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> StoreError {
        let context = context.into();
        move |source| StoreError::Io { context, source }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionRecord {
    pub session_id: String,
    /// Unix seconds.
    pub created_at: u64,
    pub updated_at: u64,
    pub session: Session,
}

#[derive(Debug, Clone, Serialize)]
pub struct SessionListing {
    pub session_id: String,
    pub phase: Phase,
    pub n_observations: usize,
    pub created_at: u64,
    pub updated_at: u64,
}

type Slot = Arc<Mutex<SessionRecord>>;

/// Sessions in memory plus one snapshot file each.
pub struct Store {
    dir: PathBuf,
    default_schedule: Schedule,
    sessions: RwLock<BTreeMap<String, Slot>>,
    counter: AtomicU64,
}

fn now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

impl Store {
    /// Creates `dir` if needed and loads every `*.json` snapshot in it.
    /// Unreadable snapshots are skipped with a warning.
    pub fn open(dir: &Path, default_schedule: Schedule) -> Result<Self, StoreError> {
        std::fs::create_dir_all(dir).map_err(StoreError::io(dir.display().to_string()))?;
        let mut sessions = BTreeMap::new();
        let entries = std::fs::read_dir(dir).map_err(StoreError::io(dir.display().to_string()))?;
        for entry in entries {
            let path = entry.map_err(StoreError::io("read_dir"))?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("json") {
                continue;
            }
            let loaded = std::fs::read_to_string(&path)
                .map_err(StoreError::io(path.display().to_string()))
                .and_then(|t| Ok(serde_json::from_str::<SessionRecord>(&t)?));
            match loaded {
                Ok(rec) => {
                    sessions.insert(rec.session_id.clone(), Arc::new(Mutex::new(rec)));
                }
                Err(e) => tracing::warn!(path = %path.display(), error = %e, "skipping snapshot"),
            }
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            default_schedule,
            sessions: RwLock::new(sessions),
            counter: AtomicU64::new(0),
        })
    }

    pub fn default_schedule(&self) -> Schedule {
        self.default_schedule
    }

    pub fn len(&self) -> usize {
        self.sessions.read().expect("store lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn list(&self) -> Vec<SessionListing> {
        let slots: Vec<Slot> = self.sessions.read().expect("store lock").values().cloned().collect();
        slots
            .iter()
            .map(|s| {
                let r = s.lock().expect("session lock");
                SessionListing {
                    session_id: r.session_id.clone(),
                    phase: r.session.phase(),
                    n_observations: r.session.n_observations(),
                    created_at: r.created_at,
                    updated_at: r.updated_at,
                }
            })
            .collect()
    }

    pub fn get(&self, id: &str) -> Option<Slot> {
        self.sessions.read().expect("store lock").get(id).cloned()
    }

    fn path_of(&self, id: &str) -> PathBuf {
        self.dir.join(format!("{id}.json"))
    }

    fn persist(&self, rec: &SessionRecord) -> Result<(), StoreError> {
        let path = self.path_of(&rec.session_id);
        let tmp = self.dir.join(format!(".{}.json.tmp", rec.session_id));
        let text = serde_json::to_string_pretty(rec)?;
        std::fs::write(&tmp, text).map_err(StoreError::io(tmp.display().to_string()))?;
        std::fs::rename(&tmp, &path).map_err(StoreError::io(path.display().to_string()))
    }

    /// Persists a new session and returns its id.
    pub fn insert(&self, session: Session) -> Result<String, StoreError> {
        let mut map = self.sessions.write().expect("store lock");
        let id = loop {
            let n = self.counter.fetch_add(1, Ordering::Relaxed);
            let nanos = SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_nanos() as u64)
                .unwrap_or(0);
            let id = format!("{:016x}", derive_seed(nanos, "session-id", n));
            if !map.contains_key(&id) {
                break id;
            }
        };
        let t = now();
        let rec = SessionRecord {
            session_id: id.clone(),
            created_at: t,
            updated_at: t,
            session,
        };
        self.persist(&rec)?;
        map.insert(id.clone(), Arc::new(Mutex::new(rec)));
        Ok(id)
    }

    /// Applies `f` to a copy of the session, persists the copy and commits
    /// it. On any error the stored session is unchanged.
    pub fn mutate<T, E>(
        &self,
        slot: &Slot,
        f: impl FnOnce(&mut Session) -> Result<T, E>,
    ) -> Result<Result<T, E>, StoreError> {
        let mut guard = slot.lock().expect("session lock");
        let mut next = guard.clone();
        let out = match f(&mut next.session) {
            Ok(v) => v,
            Err(e) => return Ok(Err(e)),
        };
        next.updated_at = now();
        self.persist(&next)?;
        *guard = next;
        Ok(Ok(out))
    }
}
