use std::io::{BufRead, BufReader, Read, Write};

use serde_json::{Map, Value};

use super::{EditEvent, EditKind, EventLogError};

/// Parses newline-delimited canonical event records.
///
/// Blank lines are skipped and unknown fields ignored. Line numbers in
/// errors are 1-based.
pub fn parse_jsonl<R: Read>(reader: R) -> Result<Vec<EditEvent>, EventLogError> {
    let mut events = Vec::new();
    for (idx, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(&line).map_err(|e| EventLogError::Malformed {
            line: line_no,
            detail: e.to_string(),
        })?;
        let Value::Object(obj) = value else {
            return Err(EventLogError::Malformed {
                line: line_no,
                detail: "record is not an object".into(),
            });
        };
        events.push(event_from_object(&obj, line_no)?);
    }
    Ok(events)
}

fn event_from_object(obj: &Map<String, Value>, line: usize) -> Result<EditEvent, EventLogError> {
    let field = |name: &'static str| {
        obj.get(name)
            .filter(|v| !v.is_null())
            .ok_or(EventLogError::MissingField { line, field: name })
    };
    let string = |name: &'static str| -> Result<String, EventLogError> {
        field(name)?
            .as_str()
            .map(str::to_owned)
            .ok_or_else(|| invalid(line, name, "expected a string"))
    };

    let seq = field("seq")?
        .as_u64()
        .ok_or_else(|| invalid(line, "seq", "expected a non-negative integer"))?;
    let ts_ms = field("ts_ms")?
        .as_i64()
        .ok_or_else(|| invalid(line, "ts_ms", "expected an integer"))?;
    let kind = match field("kind")?.as_str() {
        Some("insert") => EditKind::Insert,
        Some("delete") => EditKind::Delete,
        _ => return Err(EventLogError::UnknownKind { line }),
    };
    let offset = field("offset")?
        .as_u64()
        .ok_or_else(|| invalid(line, "offset", "expected a non-negative integer"))?
        as usize;
    let text = string("text")?;
    if text.is_empty() {
        return Err(invalid(line, "text", "must not be empty"));
    }

    Ok(EditEvent {
        seq,
        subject_id: string("subject_id")?,
        assignment_id: string("assignment_id")?,
        file_path: string("file_path")?,
        ts_ms,
        kind,
        offset,
        text,
    })
}

fn invalid(line: usize, field: &'static str, detail: &str) -> EventLogError {
    EventLogError::InvalidField {
        line,
        field,
        detail: detail.to_owned(),
    }
}

/// Writes events as canonical records, one per line.
pub fn write_jsonl<W: Write>(mut writer: W, events: &[EditEvent]) -> std::io::Result<()> {
    for e in events {
        serde_json::to_writer(&mut writer, e)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

pub fn to_jsonl(events: &[EditEvent]) -> String {
    let mut buf = Vec::new();
    write_jsonl(&mut buf, events).expect("writing to a Vec cannot fail");
    String::from_utf8(buf).expect("serde_json emits UTF-8")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const ONE: &str = r#"{"seq":1,"subject_id":"S1","assignment_id":"fluky","file_path":"main.py","ts_ms":0,"kind":"insert","offset":0,"text":"x"}"#;

    #[test]
    fn parses_canonical_record() {
        let events = parse_jsonl(ONE.as_bytes()).unwrap();
        assert_eq!(
            events,
            vec![EditEvent {
                seq: 1,
                subject_id: "S1".into(),
                assignment_id: "fluky".into(),
                file_path: "main.py".into(),
                ts_ms: 0,
                kind: EditKind::Insert,
                offset: 0,
                text: "x".into(),
            }]
        );
    }

    #[test]
    fn empty_stream_is_empty() {
        assert!(parse_jsonl(&b""[..]).unwrap().is_empty());
    }

    #[test]
    fn unknown_kind_reports_line() {
        let input = format!("{ONE}\n{}", ONE.replace("insert", "paste"));
        let err = parse_jsonl(input.as_bytes()).unwrap_err();
        assert_eq!(err.to_string(), "unknown kind at line 2");
    }

    #[test]
    fn missing_field_is_named() {
        let input = ONE.replace(r#""offset":0,"#, "");
        let err = parse_jsonl(input.as_bytes()).unwrap_err();
        assert!(matches!(err, EventLogError::MissingField { line: 1, field: "offset" }));
    }

    #[test]
    fn malformed_record_carries_line() {
        let input = format!("{ONE}\n\n{{not json\n");
        let err = parse_jsonl(input.as_bytes()).unwrap_err();
        assert!(matches!(err, EventLogError::Malformed { line: 3, .. }));
    }

    #[test]
    fn rejects_negative_offset_and_empty_text() {
        let neg = ONE.replace(r#""offset":0"#, r#""offset":-1"#);
        assert!(matches!(
            parse_jsonl(neg.as_bytes()),
            Err(EventLogError::InvalidField { field: "offset", .. })
        ));
        let empty = ONE.replace(r#""text":"x""#, r#""text":"""#);
        assert!(matches!(
            parse_jsonl(empty.as_bytes()),
            Err(EventLogError::InvalidField { field: "text", .. })
        ));
    }

    #[test]
    fn extra_fields_ignored() {
        let input = ONE.replace(r#""seq":1,"#, r#""seq":1,"ide":"pycharm","#);
        assert_eq!(parse_jsonl(input.as_bytes()).unwrap().len(), 1);
    }

    fn arb_event() -> impl Strategy<Value = EditEvent> {
        (
            any::<u64>(),
            "[A-Za-z0-9]{1,6}",
            "[a-z_]{1,8}",
            "[a-z/]{1,10}\\.py",
            any::<i64>(),
            any::<bool>(),
            0usize..10_000,
            "\\PC{1,12}",
        )
            .prop_map(|(seq, s, a, f, ts, ins, offset, text)| EditEvent {
                seq,
                subject_id: s,
                assignment_id: a,
                file_path: f,
                ts_ms: ts,
                kind: if ins { EditKind::Insert } else { EditKind::Delete },
                offset,
                text,
            })
    }

    proptest! {
        #[test]
        fn serialize_then_parse_is_identity(events in prop::collection::vec(arb_event(), 0..20)) {
            let text = to_jsonl(&events);
            prop_assert_eq!(parse_jsonl(text.as_bytes()).unwrap(), events);
        }
    }
}
