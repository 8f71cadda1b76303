use std::collections::BTreeMap;
use std::fmt;
use std::io::Read;

use chrono::{DateTime, NaiveDateTime};
use serde::{Deserialize, Serialize};

use super::{EditEvent, EditKind, EventLogError};

/// The eight fields of the canonical event record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CanonicalField {
    Seq,
    SubjectId,
    AssignmentId,
    FilePath,
    TsMs,
    Kind,
    Offset,
    Text,
}

impl CanonicalField {
    pub const ALL: [CanonicalField; 8] = [
        CanonicalField::Seq,
        CanonicalField::SubjectId,
        CanonicalField::AssignmentId,
        CanonicalField::FilePath,
        CanonicalField::TsMs,
        CanonicalField::Kind,
        CanonicalField::Offset,
        CanonicalField::Text,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CanonicalField::Seq => "seq",
            CanonicalField::SubjectId => "subject_id",
            CanonicalField::AssignmentId => "assignment_id",
            CanonicalField::FilePath => "file_path",
            CanonicalField::TsMs => "ts_ms",
            CanonicalField::Kind => "kind",
            CanonicalField::Offset => "offset",
            CanonicalField::Text => "text",
        }
    }

    fn accepts(self, rule: &ParseRule) -> bool {
        use CanonicalField::*;
        matches!(
            (self, rule),
            (Seq | Offset, ParseRule::Integer)
                | (TsMs, ParseRule::Integer | ParseRule::Timestamp(_))
                | (SubjectId | AssignmentId | FilePath | Text, ParseRule::String)
                | (Kind, ParseRule::String | ParseRule::Enum(_))
        )
    }
}

impl fmt::Display for CanonicalField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// How a source cell is turned into a canonical value.
///
/// In a mapping file: `"integer"`, `"string"`, `{"enum": {"i": "insert"}}`
/// or `{"timestamp": "epoch_ms" | "epoch_s" | "rfc3339" | "<strftime>"}`.
/// Custom strftime patterns are read as UTC.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseRule {
    Integer,
    String,
    Enum(BTreeMap<String, EditKind>),
    Timestamp(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub column: String,
    pub rule: ParseRule,
}

/// Maps every canonical field to a source column and parse rule.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ColumnMapping {
    pub fields: BTreeMap<CanonicalField, ColumnSpec>,
}

impl ColumnMapping {
    pub fn from_json(text: &str) -> Result<Self, EventLogError> {
        serde_json::from_str(text).map_err(|e| EventLogError::Mapping(e.to_string()))
    }

    pub fn insert(&mut self, field: CanonicalField, column: impl Into<String>, rule: ParseRule) {
        self.fields.insert(
            field,
            ColumnSpec {
                column: column.into(),
                rule,
            },
        );
    }

    /// Checks coverage and rule compatibility without touching any data.
    pub fn check(&self) -> Result<(), EventLogError> {
        for field in CanonicalField::ALL {
            let spec = self
                .fields
                .get(&field)
                .ok_or_else(|| EventLogError::Mapping(format!("canonical field '{field}' is not mapped")))?;
            if !field.accepts(&spec.rule) {
                return Err(EventLogError::Mapping(format!(
                    "rule {:?} cannot produce field '{field}'",
                    spec.rule
                )));
            }
        }
        Ok(())
    }
}

/// Reads a headed CSV stream and translates each row into an [`EditEvent`].
///
/// Row numbers in errors count data rows from 1 (the header is not counted).
pub fn ingest_csv<R: Read>(reader: R, mapping: &ColumnMapping) -> Result<Vec<EditEvent>, EventLogError> {
    mapping.check()?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();

    let mut columns: BTreeMap<CanonicalField, (usize, &ColumnSpec)> = BTreeMap::new();
    for (field, spec) in &mapping.fields {
        let idx = headers
            .iter()
            .position(|h| h == spec.column)
            .ok_or_else(|| EventLogError::Mapping(format!("column '{}' not in header", spec.column)))?;
        columns.insert(*field, (idx, spec));
    }

    let mut events = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let row = i + 1;
        let record = record?;
        let cell = |field: CanonicalField| -> Result<Cell, EventLogError> {
            let (idx, spec) = columns[&field];
            let raw = record.get(idx).unwrap_or("");
            parse_cell(field, raw, &spec.rule).map_err(|detail| EventLogError::Cell {
                row,
                column: spec.column.clone(),
                detail,
            })
        };
        let text = cell(CanonicalField::Text)?.into_string();
        if text.is_empty() {
            return Err(EventLogError::Cell {
                row,
                column: columns[&CanonicalField::Text].1.column.clone(),
                detail: "text must not be empty".into(),
            });
        }
        let seq = cell(CanonicalField::Seq)?.into_int();
        let offset = cell(CanonicalField::Offset)?.into_int();
        let (seq, offset) = match (u64::try_from(seq), usize::try_from(offset)) {
            (Ok(s), Ok(o)) => (s, o),
            (Err(_), _) => return Err(negative(row, &columns, CanonicalField::Seq)),
            (_, Err(_)) => return Err(negative(row, &columns, CanonicalField::Offset)),
        };
        events.push(EditEvent {
            seq,
            subject_id: cell(CanonicalField::SubjectId)?.into_string(),
            assignment_id: cell(CanonicalField::AssignmentId)?.into_string(),
            file_path: cell(CanonicalField::FilePath)?.into_string(),
            ts_ms: cell(CanonicalField::TsMs)?.into_int(),
            kind: cell(CanonicalField::Kind)?.into_kind(),
            offset,
            text,
        });
    }
    Ok(events)
}

fn negative(row: usize, columns: &BTreeMap<CanonicalField, (usize, &ColumnSpec)>, field: CanonicalField) -> EventLogError {
    EventLogError::Cell {
        row,
        column: columns[&field].1.column.clone(),
        detail: "must be non-negative".into(),
    }
}

enum Cell {
    Int(i64),
    Str(String),
    Kind(EditKind),
}

impl Cell {
    fn into_int(self) -> i64 {
        match self {
            Cell::Int(v) => v,
            _ => unreachable!("mapping check guarantees integer rule"),
        }
    }

    fn into_string(self) -> String {
        match self {
            Cell::Str(s) => s,
            _ => unreachable!("mapping check guarantees string rule"),
        }
    }

    fn into_kind(self) -> EditKind {
        match self {
            Cell::Kind(k) => k,
            _ => unreachable!("mapping check guarantees kind rule"),
        }
    }
}

fn parse_cell(field: CanonicalField, raw: &str, rule: &ParseRule) -> Result<Cell, String> {
    match rule {
        ParseRule::Integer => raw
            .trim()
            .parse::<i64>()
            .map(Cell::Int)
            .map_err(|_| format!("'{raw}' is not an integer")),
        ParseRule::String if field == CanonicalField::Kind => match raw.trim() {
            "insert" => Ok(Cell::Kind(EditKind::Insert)),
            "delete" => Ok(Cell::Kind(EditKind::Delete)),
            _ => Err(format!("'{raw}' is not a known kind")),
        },
        ParseRule::String => Ok(Cell::Str(raw.to_owned())),
        ParseRule::Enum(aliases) => aliases
            .get(raw.trim())
            .copied()
            .map(Cell::Kind)
            .ok_or_else(|| format!("'{raw}' is not a known kind alias")),
        ParseRule::Timestamp(format) => parse_timestamp(raw.trim(), format).map(Cell::Int),
    }
}

fn parse_timestamp(raw: &str, format: &str) -> Result<i64, String> {
    let bad = || format!("'{raw}' does not match timestamp format '{format}'");
    match format {
        "epoch_ms" => raw.parse::<i64>().map_err(|_| bad()),
        "epoch_s" => raw
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .map(|v| (v * 1000.0).round() as i64)
            .ok_or_else(bad),
        "rfc3339" => DateTime::parse_from_rfc3339(raw)
            .map(|d| d.timestamp_millis())
            .map_err(|_| bad()),
        pattern => NaiveDateTime::parse_from_str(raw, pattern)
            .map(|d| d.and_utc().timestamp_millis())
            .map_err(|_| bad()),
    }
}
