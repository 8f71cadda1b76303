//! Keystroke-level edit events: parsing, validation, session splitting and
//! timing de-identification.

mod csv_ingest;
mod deidentify;
mod jsonl;
mod validate;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

pub use csv_ingest::{ingest_csv, CanonicalField, ColumnMapping, ColumnSpec, ParseRule};
pub use deidentify::deidentify_timing;
pub use jsonl::{parse_jsonl, to_jsonl, write_jsonl};
pub use validate::{validate, IssueCode, ValidationIssue, ValidationReport};

/// Whether an event adds or removes text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EditKind {
    Insert,
    Delete,
}

impl EditKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EditKind::Insert => "insert",
            EditKind::Delete => "delete",
        }
    }
}

impl fmt::Display for EditKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One atomic insert or delete at a character offset.
///
/// `offset` counts Unicode scalar values. For deletes, `text` is the exact
/// text that was removed, which makes every event invertible.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditEvent {
    pub seq: u64,
    pub subject_id: String,
    pub assignment_id: String,
    pub file_path: String,
    pub ts_ms: i64,
    pub kind: EditKind,
    pub offset: usize,
    pub text: String,
}

impl EditEvent {
    pub fn key(&self) -> SessionKey {
        SessionKey {
            subject_id: self.subject_id.clone(),
            assignment_id: self.assignment_id.clone(),
            file_path: self.file_path.clone(),
        }
    }

    fn has_key(&self, key: &SessionKey) -> bool {
        self.subject_id == key.subject_id
            && self.assignment_id == key.assignment_id
            && self.file_path == key.file_path
    }

    /// Length of `text` in Unicode scalar values.
    pub fn char_len(&self) -> usize {
        self.text.chars().count()
    }
}

/// Identifies one (subject, assignment, file) stream.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SessionKey {
    pub subject_id: String,
    pub assignment_id: String,
    pub file_path: String,
}

impl SessionKey {
    pub fn new(
        subject_id: impl Into<String>,
        assignment_id: impl Into<String>,
        file_path: impl Into<String>,
    ) -> Self {
        SessionKey {
            subject_id: subject_id.into(),
            assignment_id: assignment_id.into(),
            file_path: file_path.into(),
        }
    }

    /// Flat identifier `<subject>_<assignment>_<file>`, with path separators
    /// replaced so it is usable as a file name and URL segment.
    pub fn id(&self) -> String {
        format!(
            "{}_{}_{}",
            self.subject_id,
            self.assignment_id,
            self.file_path.replace(['/', '\\'], "-")
        )
    }
}

impl fmt::Display for SessionKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.id())
    }
}

/// Ordered event stream for one [`SessionKey`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub key: SessionKey,
    events: Vec<EditEvent>,
}

impl Session {
    /// Builds a session, sorting events by `(ts_ms, seq)`.
    pub fn new(key: SessionKey, mut events: Vec<EditEvent>) -> Result<Self, EventLogError> {
        if events.is_empty() {
            return Err(EventLogError::EmptySession(key.id()));
        }
        if let Some(e) = events.iter().find(|e| !e.has_key(&key)) {
            return Err(EventLogError::ForeignEvent {
                seq: e.seq,
                session: key.id(),
            });
        }
        events.sort_by_key(|e| (e.ts_ms, e.seq));
        Ok(Session { key, events })
    }

    pub fn events(&self) -> &[EditEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn into_events(self) -> Vec<EditEvent> {
        self.events
    }
}

/// Partitions events into one session per (subject, assignment, file).
///
/// Sessions come back ordered by key; events within each are sorted by
/// `(ts_ms, seq)` with the sort stable, so equal pairs keep input order.
pub fn split_sessions(events: Vec<EditEvent>) -> Vec<Session> {
    let mut groups: BTreeMap<SessionKey, Vec<EditEvent>> = BTreeMap::new();
    for e in events {
        groups.entry(e.key()).or_default().push(e);
    }
    groups
        .into_iter()
        .map(|(key, mut events)| {
            events.sort_by_key(|e| (e.ts_ms, e.seq));
            Session { key, events }
        })
        .collect()
}

#[derive(Debug, thiserror::Error)]
pub enum EventLogError {
    #[error("malformed record at line {line}: {detail}")]
    Malformed { line: usize, detail: String },
    #[error("missing field '{field}' at line {line}")]
    MissingField { line: usize, field: &'static str },
    #[error("invalid field '{field}' at line {line}: {detail}")]
    InvalidField {
        line: usize,
        field: &'static str,
        detail: String,
    },
    #[error("unknown kind at line {line}")]
    UnknownKind { line: usize },
    #[error("column mapping: {0}")]
    Mapping(String),
    #[error("row {row}, column '{column}': {detail}")]
    Cell {
        row: usize,
        column: String,
        detail: String,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("session {0} has no events")]
    EmptySession(String),
    #[error("event seq {seq} does not belong to session {session}")]
    ForeignEvent { seq: u64, session: String },
    #[error("invalid de-identification parameters: {0}")]
    Precondition(String),
}
