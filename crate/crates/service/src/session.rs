//! Composition sessions persisted as one append-only JSON-lines log per
//! session. Replaying a log rebuilds the session exactly.

use std::collections::HashMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use uuid::Uuid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    User,
    Suggested,
    SuggestedModified,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionVerse {
    pub text: String,
    pub origin: Origin,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: String,
    pub model: String,
    pub verses: Vec<SessionVerse>,
    /// Incremented by every write; clients echo it back to detect conflicts.
    pub version: u64,
    pub created_at: u64,
    pub updated_at: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
enum Event {
    Created { model: String, at: u64 },
    Appended { verse: SessionVerse, at: u64 },
    ReplacedLast { verse: SessionVerse, at: u64 },
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("session log io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt session log {path} at line {line}: {message}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

pub fn now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

impl Session {
    fn apply(&mut self, event: &Event) {
        match event {
            Event::Created { .. } => {}
            Event::Appended { verse, at } => {
                self.verses.push(verse.clone());
                self.updated_at = *at;
            }
            Event::ReplacedLast { verse, at } => {
                match self.verses.last_mut() {
                    Some(last) => *last = verse.clone(),
                    None => self.verses.push(verse.clone()),
                }
                self.updated_at = *at;
            }
        }
        self.version += 1;
    }

    pub fn last_verse(&self) -> Option<&str> {
        self.verses.last().map(|v| v.text.as_str())
    }
}

/// In-memory sessions backed by the log directory.
pub struct SessionStore {
    dir: PathBuf,
    sessions: HashMap<String, Session>,
}

impl SessionStore {
    /// Opens `dir`, creating it if needed, and replays every `*.log` file.
    pub fn open(dir: &Path) -> Result<Self, StoreError> {
        let io = |source| StoreError::Io {
            path: dir.to_path_buf(),
            source,
        };
        fs::create_dir_all(dir).map_err(io)?;
        let mut sessions = HashMap::new();
        let mut entries: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(io)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "log"))
            .collect();
        entries.sort();
        for path in entries {
            let session = replay(&path)?;
            sessions.insert(session.session_id.clone(), session);
        }
        Ok(SessionStore {
            dir: dir.to_path_buf(),
            sessions,
        })
    }

    pub fn len(&self) -> usize {
        self.sessions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sessions.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Session> {
        self.sessions.get(id)
    }

    pub fn create(&mut self, model: &str) -> Result<Session, StoreError> {
        let id = Uuid::new_v4().simple().to_string();
        let at = now();
        let mut session = Session {
            session_id: id.clone(),
            model: model.to_string(),
            verses: Vec::new(),
            version: 0,
            created_at: at,
            updated_at: at,
        };
        let event = Event::Created {
            model: model.to_string(),
            at,
        };
        self.append_log(&id, &event)?;
        session.apply(&event);
        self.sessions.insert(id, session.clone());
        Ok(session)
    }

    /// Appends a verse, or replaces the last one. The caller has already
    /// checked the version token.
    pub fn add_verse(
        &mut self,
        id: &str,
        verse: SessionVerse,
        replace_last: bool,
    ) -> Result<Option<Session>, StoreError> {
        if !self.sessions.contains_key(id) {
            return Ok(None);
        }
        let at = now();
        let event = if replace_last {
            Event::ReplacedLast { verse, at }
        } else {
            Event::Appended { verse, at }
        };
        self.append_log(id, &event)?;
        let session = self.sessions.get_mut(id).expect("checked above");
        session.apply(&event);
        Ok(Some(session.clone()))
    }

    fn append_log(&self, id: &str, event: &Event) -> Result<(), StoreError> {
        let path = self.dir.join(format!("{id}.log"));
        let io = |source| StoreError::Io {
            path: path.clone(),
            source,
        };
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(io)?;
        let mut line = serde_json::to_string(event).expect("event serializes");
        line.push('\n');
        file.write_all(line.as_bytes()).map_err(io)?;
        file.sync_data().map_err(io)
    }
}

fn replay(path: &Path) -> Result<Session, StoreError> {
    let corrupt = |line: usize, message: String| StoreError::Corrupt {
        path: path.to_path_buf(),
        line,
        message,
    };
    let raw = fs::read_to_string(path).map_err(|source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let id = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| corrupt(0, "file name is not a session id".into()))?
        .to_string();
    let mut session: Option<Session> = None;
    for (i, line) in raw
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
    {
        let event: Event = serde_json::from_str(line).map_err(|e| corrupt(i + 1, e.to_string()))?;
        match (&mut session, &event) {
            (None, Event::Created { model, at }) => {
                let mut s = Session {
                    session_id: id.clone(),
                    model: model.clone(),
                    verses: Vec::new(),
                    version: 0,
                    created_at: *at,
                    updated_at: *at,
                };
                s.apply(&event);
                session = Some(s);
            }
            (Some(s), Event::Appended { .. } | Event::ReplacedLast { .. }) => s.apply(&event),
            _ => return Err(corrupt(i + 1, "unexpected event order".into())),
        }
    }
    session.ok_or_else(|| corrupt(0, "empty log".into()))
}
