use std::collections::{BTreeMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{split_sessions, EditEvent};
use crate::replay::{Document, ReplayError, ReplayMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IssueCode {
    NonMonotoneTimestamp,
    DuplicateSeq,
    OffsetOutOfBounds,
    DeleteMismatch,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationIssue {
    pub seq: u64,
    pub code: IssueCode,
    pub message: String,
}

impl fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub errors: Vec<ValidationIssue>,
    pub warnings: Vec<ValidationIssue>,
    pub counts: BTreeMap<IssueCode, usize>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.errors.is_empty()
    }

    fn error(&mut self, seq: u64, code: IssueCode, message: String) {
        *self.counts.entry(code).or_default() += 1;
        self.errors.push(ValidationIssue { seq, code, message });
    }

    fn warning(&mut self, seq: u64, code: IssueCode, message: String) {
        *self.counts.entry(code).or_default() += 1;
        self.warnings.push(ValidationIssue { seq, code, message });
    }
}

/// Checks a raw event list and collects every finding.
///
/// Timestamp order is checked in input order per session (warning). Duplicate
/// sequence numbers and replay failures are errors; the trial replay uses the
/// same `(ts_ms, seq)` order that [`split_sessions`] produces and skips any
/// event that fails, so later problems are still reported.
pub fn validate(events: &[EditEvent]) -> ValidationReport {
    let mut report = ValidationReport::default();

    let mut last_ts: BTreeMap<_, i64> = BTreeMap::new();
    let mut seen_seq: HashSet<(_, u64)> = HashSet::new();
    for e in events {
        let key = e.key();
        if let Some(prev) = last_ts.get(&key) {
            if e.ts_ms < *prev {
                report.warning(
                    e.seq,
                    IssueCode::NonMonotoneTimestamp,
                    format!("non-monotone timestamp at seq {}", e.seq),
                );
            }
        }
        last_ts.insert(key.clone(), e.ts_ms);
        if !seen_seq.insert((key, e.seq)) {
            report.error(e.seq, IssueCode::DuplicateSeq, format!("duplicate seq {}", e.seq));
        }
    }

    for session in split_sessions(events.to_vec()) {
        let mut doc = Document::new();
        for e in session.events() {
            match doc.apply_mut(e, ReplayMode::Strict) {
                Ok(()) => {}
                Err(ReplayError::OffsetOutOfBounds { seq, offset, len }) => report.error(
                    seq,
                    IssueCode::OffsetOutOfBounds,
                    format!("offset {offset} out of bounds at seq {seq} (document length {len})"),
                ),
                Err(ReplayError::DeleteMismatch { seq, found, .. }) => report.error(
                    seq,
                    IssueCode::DeleteMismatch,
                    format!("delete text mismatch at seq {seq}: expected '{found}'"),
                ),
                Err(other) => unreachable!("apply only fails on bounds or mismatch: {other}"),
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event_log::test_support::*;

    #[test]
    fn non_monotone_timestamp_is_warning() {
        let events = vec![ins(1, 0, 0, "a"), ins(2, 5, 1, "b"), ins(3, 3, 2, "c")];
        let report = validate(&events);
        assert_eq!(report.warnings.len(), 1);
        assert_eq!(report.warnings[0].message, "non-monotone timestamp at seq 3");
    }

    #[test]
    fn delete_mismatch_found_by_trial_replay() {
        let events = vec![ins(1, 0, 0, "a"), del(2, 1, 0, "b")];
        let report = validate(&events);
        assert_eq!(report.errors.len(), 1);
        assert_eq!(report.errors[0].message, "delete text mismatch at seq 2: expected 'a'");
        assert_eq!(report.counts[&IssueCode::DeleteMismatch], 1);
    }

    #[test]
    fn well_formed_session_is_clean() {
        let report = validate(&[ins(1, 0, 0, "ab"), del(2, 10, 1, "b")]);
        assert!(report.errors.is_empty());
        assert!(report.warnings.is_empty());
        assert!(report.is_clean());
    }

    #[test]
    fn out_of_bounds_and_duplicates() {
        let events = vec![ins(1, 0, 0, "a"), ins(1, 1, 5, "b"), del(3, 2, 0, "ab")];
        let report = validate(&events);
        let codes: Vec<IssueCode> = report.errors.iter().map(|i| i.code).collect();
        assert_eq!(
            codes,
            vec![IssueCode::DuplicateSeq, IssueCode::OffsetOutOfBounds, IssueCode::OffsetOutOfBounds]
        );
    }

    #[test]
    fn clean_report_means_replayable() {
        let events = vec![ins(1, 0, 0, "hello"), del(2, 3, 1, "ell"), ins(3, 9, 1, "ipp")];
        assert!(validate(&events).is_clean());
        let session = split_sessions(events).remove(0);
        let state = crate::replay::reconstruct_at(&session, session.len()).unwrap();
        assert_eq!(state.text, "hippo");
    }
}
