#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use serde_json::json;

pub const STUDENTS: usize = 5;
pub const ASSIGNMENTS: [&str; 3] = ["fluky", "zoo", "bounce"];
pub const MODELS: [&str; 3] = ["claude-mock", "gpt-mock", "llama-mock"];

/// Each fixture session has four snapshots: first, two pre-break, final.
pub const STEPS_PER_SESSION: usize = 4;

pub struct Fixture {
    pub dir: tempfile::TempDir,
}

impl Fixture {
    pub fn root(&self) -> &Path {
        self.dir.path()
    }

    pub fn config(&self) -> PathBuf {
        self.root().join("proclens.toml")
    }
}

/// Typing events for one session: three lines, a long pause after each of
/// the first two, and one correction at the end.
pub fn session_lines(student: usize, assignment: &str) -> Vec<String> {
    let lines = [
        "print('hi')\n".to_string(),
        format!("x = {student}\n"),
        "print(x))".to_string(),
    ];
    let mut out = Vec::new();
    let mut ts: i64 = 1_700_000_000_000;
    let mut len = 0usize;
    let mut seq = 0u64;
    let mut push = |ts: i64, kind: &str, offset: usize, text: &str, seq: &mut u64| {
        *seq += 1;
        out.push(
            json!({
                "seq": *seq,
                "subject_id": format!("S{student}"),
                "assignment_id": assignment,
                "file_path": "main.py",
                "ts_ms": ts,
                "kind": kind,
                "offset": offset,
                "text": text,
            })
            .to_string(),
        );
    };
    for (i, line) in lines.iter().enumerate() {
        for ch in line.chars() {
            push(ts, "insert", len, &ch.to_string(), &mut seq);
            len += 1;
            ts += 250;
        }
        if i < 2 {
            ts += 400_000;
        }
    }
    push(ts, "delete", len - 1, ")", &mut seq);
    out
}

pub fn final_text(student: usize) -> String {
    format!("print('hi')\nx = {student}\nprint(x)")
}

pub fn fixture() -> Fixture {
    let dir = tempfile::tempdir().expect("tempdir");
    let root = dir.path();
    fs::create_dir(root.join("events")).unwrap();
    fs::create_dir(root.join("handouts")).unwrap();
    for assignment in ASSIGNMENTS {
        let mut body = String::new();
        for student in 1..=STUDENTS {
            for line in session_lines(student, assignment) {
                body.push_str(&line);
                body.push('\n');
            }
        }
        fs::write(root.join(format!("events/{assignment}.jsonl")), body).unwrap();
        fs::write(
            root.join(format!("handouts/{assignment}.md")),
            format!("# {assignment}\n\nWrite the {assignment} program."),
        )
        .unwrap();
    }
    let mut config = String::from("threshold_ms = 300000\ntasks = [\"summary\", \"feedback\"]\n");
    for m in MODELS {
        config.push_str(&format!(
            "\n[[models]]\nmodel_id = \"{m}\"\nendpoint = \"http://127.0.0.1:9/v1/chat/completions\"\nwindow_tokens = 128000\nbackoff_ms = 1\n"
        ));
    }
    fs::write(root.join("proclens.toml"), config).unwrap();
    fs::write(root.join("full.json"), "{}").unwrap();
    Fixture { dir }
}
