//! Pause detection and snapshot extraction.
//!
//! A snapshot sequence holds the state after the first event, the state
//! immediately before every pause of at least the threshold, and the final
//! state.

use serde::{Deserialize, Serialize};

use crate::event_log::{EditKind, Session, SessionKey};
use crate::replay::{CodeState, ReplayError, ReplayMode, Replayer};

/// Five minutes.
pub const DEFAULT_THRESHOLD_MS: i64 = 300_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GapInfo {
    /// 1-based index of the event the gap follows.
    pub after_event_index: usize,
    pub gap_ms: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SnapshotReason {
    First,
    PreBreak,
    Final,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Snapshot {
    pub step_index: usize,
    pub reason: SnapshotReason,
    pub state: CodeState,
    pub following_gap_ms: Option<i64>,
}

impl Snapshot {
    pub fn text(&self) -> &str {
        &self.state.text
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnapshotSequence {
    pub session: SessionKey,
    pub threshold_ms: i64,
    pub snapshots: Vec<Snapshot>,
}

impl SnapshotSequence {
    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    /// Keeps steps `from..=to` (1-based) and renumbers them from 1.
    pub fn slice_steps(&self, from: usize, to: usize) -> Result<SnapshotSequence, SegmentationError> {
        if from == 0 || from > to || to > self.len() {
            return Err(SegmentationError::InvalidRange {
                from,
                to,
                len: self.len(),
            });
        }
        let snapshots = self.snapshots[from - 1..to]
            .iter()
            .enumerate()
            .map(|(i, s)| Snapshot {
                step_index: i + 1,
                ..s.clone()
            })
            .collect();
        Ok(SnapshotSequence {
            session: self.session.clone(),
            threshold_ms: self.threshold_ms,
            snapshots,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProcessMetrics {
    pub active_time_ms: i64,
    pub event_count: usize,
    pub inserted_chars: usize,
    pub deleted_chars: usize,
    pub snapshot_count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SegmentationError {
    #[error("threshold_ms must be positive, got {0}")]
    NonPositiveThreshold(i64),
    #[error("session is empty")]
    EmptySession,
    #[error("step range {from}..={to} invalid for {len} steps")]
    InvalidRange { from: usize, to: usize, len: usize },
    #[error(transparent)]
    Replay(#[from] ReplayError),
}

/// Time between each consecutive pair of events.
pub fn gaps(session: &Session) -> Vec<GapInfo> {
    session
        .events()
        .windows(2)
        .enumerate()
        .map(|(i, w)| GapInfo {
            after_event_index: i + 1,
            gap_ms: w[1].ts_ms - w[0].ts_ms,
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SegmentOptions {
    pub threshold_ms: i64,
    pub dedup: bool,
    pub mode: ReplayMode,
}

impl Default for SegmentOptions {
    fn default() -> Self {
        SegmentOptions {
            threshold_ms: DEFAULT_THRESHOLD_MS,
            dedup: false,
            mode: ReplayMode::Strict,
        }
    }
}

impl SegmentOptions {
    pub fn with_threshold(threshold_ms: i64) -> Self {
        SegmentOptions {
            threshold_ms,
            ..Default::default()
        }
    }
}

/// Extracts the snapshot sequence in a single replay pass.
///
/// A gap exactly equal to the threshold counts as a break. With `dedup`, a
/// snapshot whose text equals the previously kept one is dropped; the final
/// snapshot always survives and replaces an identical predecessor instead.
/// A one-event session yields a single snapshot with reason `final`.
pub fn extract_snapshots(session: &Session, opts: SegmentOptions) -> Result<SnapshotSequence, SegmentationError> {
    if opts.threshold_ms <= 0 {
        return Err(SegmentationError::NonPositiveThreshold(opts.threshold_ms));
    }
    let events = session.events();
    if events.is_empty() {
        return Err(SegmentationError::EmptySession);
    }
    let n = events.len();

    let mut snapshots: Vec<Snapshot> = Vec::new();
    let mut replayer = Replayer::with_mode(session, opts.mode);
    for i in 1..=n {
        replayer.step().expect("event available")?;
        let following_gap_ms = (i < n).then(|| events[i].ts_ms - events[i - 1].ts_ms);
        let reason = if i == n {
            SnapshotReason::Final
        } else if i == 1 {
            SnapshotReason::First
        } else if following_gap_ms.is_some_and(|g| g >= opts.threshold_ms) {
            SnapshotReason::PreBreak
        } else {
            continue;
        };
        let snapshot = Snapshot {
            step_index: 0,
            reason,
            state: replayer.state().expect("at least one event applied"),
            following_gap_ms,
        };
        let duplicate = opts.dedup && snapshots.last().is_some_and(|p| p.state.text == snapshot.state.text);
        if duplicate {
            if reason == SnapshotReason::Final {
                snapshots.pop();
            } else {
                continue;
            }
        }
        snapshots.push(snapshot);
    }
    for (i, s) in snapshots.iter_mut().enumerate() {
        s.step_index = i + 1;
    }
    Ok(SnapshotSequence {
        session: session.key.clone(),
        threshold_ms: opts.threshold_ms,
        snapshots,
    })
}

pub fn process_metrics(session: &Session, threshold_ms: i64) -> Result<ProcessMetrics, SegmentationError> {
    let seq = extract_snapshots(session, SegmentOptions::with_threshold(threshold_ms))?;
    let active_time_ms = gaps(session)
        .iter()
        .filter(|g| g.gap_ms < threshold_ms)
        .map(|g| g.gap_ms)
        .sum();
    let (mut inserted_chars, mut deleted_chars) = (0, 0);
    for e in session.events() {
        match e.kind {
            EditKind::Insert => inserted_chars += e.char_len(),
            EditKind::Delete => deleted_chars += e.char_len(),
        }
    }
    Ok(ProcessMetrics {
        active_time_ms,
        event_count: session.len(),
        inserted_chars,
        deleted_chars,
        snapshot_count: seq.len(),
    })
}
