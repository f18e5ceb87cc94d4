//! Append-only JSONL persistence: `sessions.jsonl` lists sessions (with
//! their plans), `responses/<session_id>.jsonl` holds each session's
//! records. State is rebuilt by replaying both on open.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use serde::Serialize;

use crate::error::{Result, ServiceError};
use crate::session::{Session, TrialRecord};

pub const SESSION_INDEX: &str = "sessions.jsonl";
pub const RESPONSES_DIR: &str = "responses";

#[derive(Debug)]
pub struct SessionState {
    pub session: Session,
    pub records: Vec<TrialRecord>,
}

impl SessionState {
    /// Index of the next trial awaiting a response.
    pub fn cursor(&self) -> usize {
        self.records.len()
    }
}

#[derive(Debug)]
pub struct Store {
    dir: PathBuf,
    index_lock: Mutex<()>,
    sessions: RwLock<BTreeMap<String, Arc<Mutex<SessionState>>>>,
}

fn storage(e: impl std::fmt::Display) -> ServiceError {
    ServiceError::Storage(e.to_string())
}

fn append_line<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut line = serde_json::to_string(value).map_err(storage)?;
    line.push('\n');
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| storage(format!("{}: {e}", path.display())))?;
    f.write_all(line.as_bytes()).map_err(storage)?;
    f.sync_data().map_err(storage)
}

fn read_lines<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let f = File::open(path).map_err(storage)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(storage)?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| storage(format!("{}:{}: {e}", path.display(), i + 1)))?);
    }
    Ok(out)
}

impl Store {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(dir.join(RESPONSES_DIR)).map_err(storage)?;
        let mut sessions = BTreeMap::new();
        for session in read_lines::<Session>(&dir.join(SESSION_INDEX))? {
            let records: Vec<TrialRecord> = read_lines(&Self::responses_path(&dir, &session.session_id))?;
            for (i, r) in records.iter().enumerate() {
                if r.trial_index != i {
                    return Err(storage(format!(
                        "session {} log has trial {} at position {i}",
                        session.session_id, r.trial_index
                    )));
                }
            }
            sessions.insert(session.session_id.clone(), Arc::new(Mutex::new(SessionState { session, records })));
        }
        Ok(Store {
            dir,
            index_lock: Mutex::new(()),
            sessions: RwLock::new(sessions),
        })
    }

    fn responses_path(dir: &Path, id: &str) -> PathBuf {
        dir.join(RESPONSES_DIR).join(format!("{id}.jsonl"))
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn insert(&self, session: Session) -> Result<()> {
        {
            let _guard = self.index_lock.lock().expect("index lock");
            append_line(&self.dir.join(SESSION_INDEX), &session)?;
        }
        let id = session.session_id.clone();
        let state = SessionState {
            session,
            records: Vec::new(),
        };
        self.sessions
            .write()
            .expect("session map")
            .insert(id, Arc::new(Mutex::new(state)));
        Ok(())
    }

    pub fn get(&self, id: &str) -> Result<Arc<Mutex<SessionState>>> {
        self.sessions
            .read()
            .expect("session map")
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::UnknownSession(id.to_string()))
    }

    /// Persist `record` and only then add it to the in-memory state.
    pub fn append(&self, state: &mut SessionState, record: TrialRecord) -> Result<()> {
        append_line(&Self::responses_path(&self.dir, &state.session.session_id), &record)?;
        state.records.push(record);
        Ok(())
    }

    pub fn session_ids(&self) -> Vec<String> {
        self.sessions.read().expect("session map").keys().cloned().collect()
    }

    pub fn responses_file(&self, id: &str) -> PathBuf {
        Self::responses_path(&self.dir, id)
    }
}
