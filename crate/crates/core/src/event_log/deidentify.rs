use super::{EventLogError, Session};

/// Coarsens short inter-event gaps to blur typing rhythm.
///
/// Each gap below `threshold_ms` is rounded up to a multiple of `quantum_ms`.
/// When rounding up would reach the threshold, the gap is rounded down
/// instead, so no short gap ever turns into a break. Gaps at or above the
/// threshold are kept exactly and the first timestamp is unchanged, which
/// keeps segmentation at `threshold_ms` identical. The transform is
/// idempotent for fixed parameters.
pub fn deidentify_timing(session: &Session, quantum_ms: i64, threshold_ms: i64) -> Result<Session, EventLogError> {
    if quantum_ms < 1 {
        return Err(EventLogError::Precondition(format!("quantum_ms must be >= 1, got {quantum_ms}")));
    }
    if threshold_ms <= quantum_ms {
        return Err(EventLogError::Precondition(format!(
            "threshold_ms ({threshold_ms}) must exceed quantum_ms ({quantum_ms})"
        )));
    }

    let events = session.events();
    let mut out = Vec::with_capacity(events.len());
    let mut ts = events[0].ts_ms;
    out.push(events[0].clone());
    for pair in events.windows(2) {
        let gap = pair[1].ts_ms - pair[0].ts_ms;
        ts += quantize_gap(gap, quantum_ms, threshold_ms);
        out.push(super::EditEvent {
            ts_ms: ts,
            ..pair[1].clone()
        });
    }
    Ok(Session {
        key: session.key.clone(),
        events: out,
    })
}

fn quantize_gap(gap: i64, quantum: i64, threshold: i64) -> i64 {
    if gap >= threshold {
        return gap;
    }
    let up = (gap + quantum - 1).div_euclid(quantum) * quantum;
    if up < threshold {
        up
    } else {
        gap.div_euclid(quantum) * quantum
    }
}
