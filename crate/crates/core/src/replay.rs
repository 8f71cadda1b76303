//! Deterministic reconstruction of a document from its edit events.
//!
//! Text is held in a rope indexed by Unicode scalar values, so each event
//! costs O(log n) regardless of document size. Line endings are kept verbatim.

use ropey::Rope;
use serde::{Deserialize, Serialize};

use crate::event_log::{EditEvent, EditKind, Session};

/// How strictly deletes are checked against the document.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReplayMode {
    /// The removed slice must equal the event text.
    #[default]
    Strict,
    /// Only bounds are checked; for sources whose delete text is unreliable.
    Lenient,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ReplayError {
    #[error("offset {offset} out of bounds at seq {seq} (document length {len})")]
    OffsetOutOfBounds { seq: u64, offset: usize, len: usize },
    #[error("delete text mismatch at seq {seq}: expected '{expected}', found '{found}'")]
    DeleteMismatch {
        seq: u64,
        expected: String,
        found: String,
    },
    #[error("event index {index} out of range 1..={len}")]
    IndexOutOfRange { index: usize, len: usize },
}

/// A code document at some point in time.
#[derive(Debug, Clone, Default)]
pub struct Document {
    rope: Rope,
}

impl Document {
    pub fn new() -> Self {
        Document::default()
    }

    pub fn from_text(text: &str) -> Self {
        Document {
            rope: Rope::from_str(text),
        }
    }

    /// Length in Unicode scalar values.
    pub fn len(&self) -> usize {
        self.rope.len_chars()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn text(&self) -> String {
        self.rope.to_string()
    }

    pub fn apply_mut(&mut self, e: &EditEvent, mode: ReplayMode) -> Result<(), ReplayError> {
        let len = self.len();
        match e.kind {
            EditKind::Insert => {
                if e.offset > len {
                    return Err(ReplayError::OffsetOutOfBounds {
                        seq: e.seq,
                        offset: e.offset,
                        len,
                    });
                }
                self.rope.insert(e.offset, &e.text);
            }
            EditKind::Delete => {
                let end = e.offset.checked_add(e.char_len()).filter(|end| *end <= len);
                let Some(end) = end else {
                    return Err(ReplayError::OffsetOutOfBounds {
                        seq: e.seq,
                        offset: e.offset,
                        len,
                    });
                };
                if mode == ReplayMode::Strict {
                    let slice = self.rope.slice(e.offset..end);
                    if slice != e.text.as_str() {
                        return Err(ReplayError::DeleteMismatch {
                            seq: e.seq,
                            expected: e.text.clone(),
                            found: slice.to_string(),
                        });
                    }
                }
                self.rope.remove(e.offset..end);
            }
        }
        Ok(())
    }
}

impl PartialEq for Document {
    fn eq(&self, other: &Self) -> bool {
        self.rope == other.rope
    }
}

impl Eq for Document {}

impl PartialEq<str> for Document {
    fn eq(&self, other: &str) -> bool {
        self.rope == other
    }
}

impl PartialEq<&str> for Document {
    fn eq(&self, other: &&str) -> bool {
        self.rope == *other
    }
}

/// Applies one event under strict delete checking, leaving `doc` untouched.
pub fn apply(doc: &Document, e: &EditEvent) -> Result<Document, ReplayError> {
    let mut next = doc.clone();
    next.apply_mut(e, ReplayMode::Strict)?;
    Ok(next)
}

/// Swaps insert and delete; `apply(apply(d, e), invert(e)) == d`.
pub fn invert(e: &EditEvent) -> EditEvent {
    let kind = match e.kind {
        EditKind::Insert => EditKind::Delete,
        EditKind::Delete => EditKind::Insert,
    };
    EditEvent { kind, ..e.clone() }
}

/// The document after a given (1-based) event.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeState {
    pub text: String,
    pub event_index: usize,
    pub ts_ms: i64,
}

/// Folds events `1..=k` over the empty document.
pub fn reconstruct_at(session: &Session, k: usize) -> Result<CodeState, ReplayError> {
    reconstruct_at_with(session, k, ReplayMode::Strict)
}

pub fn reconstruct_at_with(session: &Session, k: usize, mode: ReplayMode) -> Result<CodeState, ReplayError> {
    let events = session.events();
    if k == 0 || k > events.len() {
        return Err(ReplayError::IndexOutOfRange {
            index: k,
            len: events.len(),
        });
    }
    let mut doc = Document::new();
    for e in &events[..k] {
        doc.apply_mut(e, mode)?;
    }
    Ok(CodeState {
        text: doc.text(),
        event_index: k,
        ts_ms: events[k - 1].ts_ms,
    })
}

/// Steps through a session one event at a time.
pub struct Replayer<'a> {
    events: &'a [EditEvent],
    applied: usize,
    doc: Document,
    mode: ReplayMode,
}

impl<'a> Replayer<'a> {
    pub fn new(session: &'a Session) -> Self {
        Self::with_mode(session, ReplayMode::Strict)
    }

    pub fn with_mode(session: &'a Session, mode: ReplayMode) -> Self {
        Replayer {
            events: session.events(),
            applied: 0,
            doc: Document::new(),
            mode,
        }
    }

    /// Number of events applied so far.
    pub fn position(&self) -> usize {
        self.applied
    }

    pub fn document(&self) -> &Document {
        &self.doc
    }

    /// Applies the next event; `None` once the session is exhausted.
    pub fn step(&mut self) -> Option<Result<&Document, ReplayError>> {
        let e = self.events.get(self.applied)?;
        if let Err(err) = self.doc.apply_mut(e, self.mode) {
            return Some(Err(err));
        }
        self.applied += 1;
        Some(Ok(&self.doc))
    }

    pub fn state(&self) -> Option<CodeState> {
        (self.applied > 0).then(|| CodeState {
            text: self.doc.text(),
            event_index: self.applied,
            ts_ms: self.events[self.applied - 1].ts_ms,
        })
    }
}

/// Random access to any prefix state, backed by periodic rope checkpoints.
///
/// Rope clones share structure, so checkpoints are cheap to keep.
#[derive(Debug, Clone)]
pub struct CheckpointedReplay {
    session: Session,
    interval: usize,
    // checkpoints[i] is the document after i * interval events
    checkpoints: Vec<Document>,
    mode: ReplayMode,
}

impl CheckpointedReplay {
    pub const DEFAULT_INTERVAL: usize = 1024;

    pub fn new(session: Session, interval: usize, mode: ReplayMode) -> Result<Self, ReplayError> {
        let interval = interval.max(1);
        let mut checkpoints = vec![Document::new()];
        let mut doc = Document::new();
        for (i, e) in session.events().iter().enumerate() {
            doc.apply_mut(e, mode)?;
            if (i + 1) % interval == 0 {
                checkpoints.push(doc.clone());
            }
        }
        Ok(CheckpointedReplay {
            session,
            interval,
            checkpoints,
            mode,
        })
    }

    pub fn session(&self) -> &Session {
        &self.session
    }

    pub fn state_at(&self, k: usize) -> Result<CodeState, ReplayError> {
        let events = self.session.events();
        if k == 0 || k > events.len() {
            return Err(ReplayError::IndexOutOfRange {
                index: k,
                len: events.len(),
            });
        }
        let base = k / self.interval;
        let mut doc = self.checkpoints[base].clone();
        for e in &events[base * self.interval..k] {
            doc.apply_mut(e, self.mode)?;
        }
        Ok(CodeState {
            text: doc.text(),
            event_index: k,
            ts_ms: events[k - 1].ts_ms,
        })
    }
}
