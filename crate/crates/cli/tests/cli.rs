mod common;

use std::fs;
use std::io::Write;
use std::process::{Command, Output, Stdio};

use common::{fixture, Fixture, STEPS_PER_SESSION};

fn proclens(fx: &Fixture, args: &[&str]) -> Output {
    proclens_with_input(fx, args, "")
}

fn proclens_with_input(fx: &Fixture, args: &[&str], input: &str) -> Output {
    let mut child = Command::new(env!("CARGO_BIN_EXE_proclens"))
        .args(args)
        .env("PROCLENS_CONFIG", fx.config())
        .current_dir(fx.root())
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .expect("spawn proclens");
    child.stdin.take().unwrap().write_all(input.as_bytes()).unwrap();
    child.wait_with_output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn replay_prints_state() {
    let fx = fixture();
    let o = proclens(&fx, &["replay", "--session", "S1_fluky_main.py", "--at", "1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o), "p");

    let o = proclens(&fx, &["replay", "--session", "S2_zoo_main.py", "--at", "1000", "--json"]);
    assert_eq!(o.status.code(), Some(1), "past the end is a data error");

    let events = common::session_lines(2, "zoo").len().to_string();
    let o = proclens(&fx, &["replay", "--session", "S2_zoo_main.py", "--at", &events]);
    assert_eq!(stdout(&o), common::final_text(2));
}

#[test]
fn replay_at_zero_is_usage_error() {
    let fx = fixture();
    let o = proclens(&fx, &["replay", "--session", "S1_fluky_main.py", "--at", "0"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unknown_session_and_flag_are_usage_errors() {
    let fx = fixture();
    let o = proclens(&fx, &["snapshots", "--session", "S9_fluky_main.py"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("unknown session"));
    assert_eq!(proclens(&fx, &["snapshots", "--bogus"]).status.code(), Some(2));
    assert_eq!(proclens(&fx, &["frobnicate"]).status.code(), Some(2));
}

#[test]
fn snapshots_json() {
    let fx = fixture();
    let o = proclens(&fx, &["snapshots", "--session", "S1_fluky_main.py"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let snaps = v["snapshots"].as_array().unwrap();
    assert_eq!(snaps.len(), STEPS_PER_SESSION);
    let reasons: Vec<&str> = snaps.iter().map(|s| s["reason"].as_str().unwrap()).collect();
    assert_eq!(reasons, ["first", "pre_break", "pre_break", "final"]);
    assert_eq!(snaps[3]["state"]["text"], common::final_text(1));

    let o = proclens(&fx, &["snapshots", "--session", "S1_fluky_main.py", "--threshold", "500000"]);
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["snapshots"].as_array().unwrap().len(), 2);
}

#[test]
fn render_prompt_full_and_ranged() {
    let fx = fixture();
    let o = proclens(&fx, &["render-prompt", "--session", "S3_bounce_main.py", "--task", "feedback"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.starts_with("You are an introductory programming teaching assistant"));
    assert!(text.contains("Write the bounce program."));
    assert!(text.contains("Step: 004") && !text.contains("Step: 005"));

    let o = proclens(
        &fx,
        &["render-prompt", "--session", "S3_bounce_main.py", "--task", "summary", "--from", "2", "--to", "3"],
    );
    let text = stdout(&o);
    assert!(text.contains("Step: 001") && text.contains("Step: 002") && !text.contains("Step: 003"));
    assert!(text.contains("Do not provide any suggestions or feedback."));

    let o = proclens(&fx, &["render-prompt", "--session", "S3_bounce_main.py", "--task", "summary", "--to", "9"]);
    assert_eq!(o.status.code(), Some(2));
    let o = proclens(&fx, &["render-prompt", "--session", "S3_bounce_main.py", "--task", "poem"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn run_mock_gives_ninety_records_then_reuses() {
    let fx = fixture();
    let o = proclens(&fx, &["run", "--plan", "full.json", "--mock"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.starts_with("90 records (90 generated, 0 reused, 0 errors)"), "{out}");
    assert!(out.contains("| claude-mock |") && out.contains("| llama-mock |"));
    assert_eq!(fs::read_dir(fx.root().join("records")).unwrap().count(), 90);

    let o = proclens(&fx, &["run", "--plan", "full.json", "--mock"]);
    assert!(stdout(&o).starts_with("90 records (0 generated, 90 reused, 0 errors)"));

    // Replaying from the cache needs no network and matches byte for byte.
    let before = fs::read(fx.root().join("records/S1_fluky_summary_gpt-mock.json")).unwrap();
    let o = proclens(&fx, &["run", "--plan", "full.json", "--cache", "--force"]);
    assert!(stdout(&o).starts_with("90 records (90 generated, 0 reused, 0 errors)"), "{}", stdout(&o));
    let after: serde_json::Value =
        serde_json::from_slice(&fs::read(fx.root().join("records/S1_fluky_summary_gpt-mock.json")).unwrap()).unwrap();
    let before: serde_json::Value = serde_json::from_slice(&before).unwrap();
    assert_eq!(before["response_text"], after["response_text"]);

    let o = proclens(&fx, &["stats"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).lines().filter(|l| l.starts_with("| ") && l.contains("-mock")).count(), 3);
}

#[test]
fn run_rejects_bad_plan() {
    let fx = fixture();
    fs::write(fx.root().join("bad.json"), r#"{"models": ["nope"]}"#).unwrap();
    let o = proclens(&fx, &["run", "--plan", "bad.json", "--mock"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("unknown model"));
    assert!(!fx.root().join("records").read_dir().unwrap().any(|_| true));
    let o = proclens(&fx, &["run", "--plan", "full.json", "--mock", "--cache"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn evaluate_with_flags_and_interactively() {
    let fx = fixture();
    fs::write(
        fx.root().join("one.json"),
        r#"{"items": [{"session": "S1_fluky_main.py", "task": "feedback", "model": "gpt-mock"}]}"#,
    )
    .unwrap();
    assert!(proclens(&fx, &["run", "--plan", "one.json", "--mock"]).status.success());
    let rec = "S1_fluky_feedback_gpt-mock";

    let o = proclens(
        &fx,
        &[
            "evaluate", "--record", rec, "--rater", "r1", "--acceptable", "true", "--hallucinations", "0",
            "--process-focus", "4", "--specificity", "3", "--correctness", "5", "--utility", "4", "--theme",
            "incremental_testing",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("1 version(s)"));

    let o = proclens(
        &fx,
        &[
            "evaluate", "--record", rec, "--rater", "r1", "--acceptable", "true", "--hallucinations", "0",
            "--process-focus", "9", "--specificity", "3", "--correctness", "5", "--utility", "4",
        ],
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("process_focus"));

    let o = proclens(&fx, &["evaluate", "--record", rec, "--rater", "r1", "--acceptable", "true", "--utility", "4"]);
    assert_eq!(o.status.code(), Some(2), "partial rubric");

    let answers = "maybe\nn\ngeneric_only\ny\n1\n2\n2\n3\n2\nnaming, type_hints\nmostly generic\n";
    let o = proclens_with_input(&fx, &["evaluate", "--record", rec, "--rater", "r2"], answers);
    assert!(o.status.success(), "{}", stderr(&o));
    let stored: serde_json::Value =
        serde_json::from_slice(&fs::read(fx.root().join(format!("evaluations/{rec}__r2.json"))).unwrap()).unwrap();
    assert_eq!(stored["latest"]["acceptable"], false);
    assert_eq!(stored["latest"]["reject_reason"], "generic_only");
    assert_eq!(stored["latest"]["rubric"]["hallucination_count"], 1);
    assert_eq!(stored["latest"]["themes"], serde_json::json!(["naming", "type_hints"]));

    let o = proclens(&fx, &["evaluate", "--record", "missing", "--rater", "r1", "--acceptable", "true"]);
    assert_eq!(o.status.code(), Some(2));

    let o = proclens(&fx, &["report"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("| gpt-mock | r1 | 0/0 | 1/1 |"), "{text}");
    assert!(text.contains("| r1 | r2 | 1 | 0.0000 |"), "{text}");
    assert!(text.contains("Uncoded tags: type_hints (1)"));

    let o = proclens(&fx, &["report", "--json"]);
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["agreement"][0]["stats"]["n_items"], 1);
}

#[test]
fn ingest_writes_one_file_per_session() {
    let fx = fixture();
    let out = fx.root().join("canonical");
    let o = proclens(&fx, &["ingest", "events/fluky.jsonl", "events/zoo.jsonl", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("10 sessions"));
    let mut names: Vec<String> = fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(names.len(), 10);
    assert_eq!(names[0], "S1_fluky_main.py.jsonl");
}

#[test]
fn ingest_csv_needs_mapping_and_rejects_bad_data() {
    let fx = fixture();
    let csv = "EventID,SubjectID,Assignment,File,Time,Op,Pos,Text\n1,S1,a,m.py,0,ins,0,x\n2,S1,a,m.py,5,del,0,y\n";
    fs::write(fx.root().join("raw.csv"), csv).unwrap();
    let o = proclens(&fx, &["ingest", "raw.csv", "--out", "x"]);
    assert_eq!(o.status.code(), Some(2));

    let mapping = r#"{
        "seq": {"column": "EventID", "rule": "integer"},
        "subject_id": {"column": "SubjectID", "rule": "string"},
        "assignment_id": {"column": "Assignment", "rule": "string"},
        "file_path": {"column": "File", "rule": "string"},
        "ts_ms": {"column": "Time", "rule": {"timestamp": "epoch_s"}},
        "kind": {"column": "Op", "rule": {"enum": {"ins": "insert", "del": "delete"}}},
        "offset": {"column": "Pos", "rule": "integer"},
        "text": {"column": "Text", "rule": "string"}
    }"#;
    fs::write(fx.root().join("map.json"), mapping).unwrap();
    let o = proclens(&fx, &["ingest", "raw.csv", "--mapping", "map.json", "--out", "x"]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stderr(&o).contains("delete text mismatch"));
    assert!(!fx.root().join("x").exists());

    fs::write(fx.root().join("raw.csv"), csv.replace("del,0,y", "del,0,x")).unwrap();
    let o = proclens(&fx, &["ingest", "raw.csv", "--mapping", "map.json", "--out", "x"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let body = fs::read_to_string(fx.root().join("x/S1_a_m.py.jsonl")).unwrap();
    assert!(body.contains(r#""ts_ms":5000"#));
}

#[test]
fn malformed_events_are_data_errors() {
    let fx = fixture();
    fs::write(fx.root().join("events/broken.jsonl"), "{\"seq\": 1}\n").unwrap();
    let o = proclens(&fx, &["snapshots", "--session", "S1_fluky_main.py"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("broken.jsonl"));
}

#[test]
fn config_flag_overrides_env() {
    let fx = fixture();
    let o = Command::new(env!("CARGO_BIN_EXE_proclens"))
        .args(["--config", fx.config().to_str().unwrap(), "stats"])
        .env_remove("PROCLENS_CONFIG")
        .current_dir(std::env::temp_dir())
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = Command::new(env!("CARGO_BIN_EXE_proclens"))
        .args(["stats"])
        .env("PROCLENS_CONFIG", fx.root().join("missing.toml"))
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
}
