//! Project configuration and on-disk data loading.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::evaluation::{Codebook, EvaluationStore};
use crate::event_log::{parse_jsonl, split_sessions, validate, Session};
use crate::llm_harness::{BatchInputs, CompleteOptions, GenerationRecord, Harness, ModelConfig, RecordStore, StoreError};
use crate::promptgen::{build_prompt, Handout, PromptBundle, PromptError, TaskKind};
use crate::replay::ReplayMode;
use crate::segmentation::{extract_snapshots, SegmentOptions, SegmentationError, SnapshotSequence, DEFAULT_THRESHOLD_MS};

/// Environment variable that may point at the project config file.
pub const CONFIG_ENV: &str = "PROCLENS_CONFIG";

fn default_threshold() -> i64 {
    DEFAULT_THRESHOLD_MS
}
fn default_tasks() -> Vec<TaskKind> {
    TaskKind::ALL.to_vec()
}
fn default_dir(name: &str) -> PathBuf {
    PathBuf::from(name)
}

/// `proclens.toml`. Relative paths resolve against the config file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectConfig {
    #[serde(default = "events_default")]
    pub events_dir: PathBuf,
    #[serde(default = "handouts_default")]
    pub handouts_dir: PathBuf,
    #[serde(default = "records_default")]
    pub records_dir: PathBuf,
    #[serde(default = "evaluations_default")]
    pub evaluations_dir: PathBuf,
    #[serde(default = "default_threshold")]
    pub threshold_ms: i64,
    #[serde(default = "default_tasks")]
    pub tasks: Vec<TaskKind>,
    #[serde(default)]
    pub replay_mode: ReplayMode,
    /// Optional JSON codebook; the seeded theme list is used otherwise.
    #[serde(default)]
    pub codebook: Option<PathBuf>,
    /// Minimum spacing between request starts across all models.
    #[serde(default)]
    pub rate_limit_ms: u64,
    #[serde(default)]
    pub models: Vec<ModelConfig>,
}

fn events_default() -> PathBuf {
    default_dir("events")
}
fn handouts_default() -> PathBuf {
    default_dir("handouts")
}
fn records_default() -> PathBuf {
    default_dir("records")
}
fn evaluations_default() -> PathBuf {
    default_dir("evaluations")
}

impl Default for ProjectConfig {
    fn default() -> Self {
        toml::from_str("").expect("all fields have defaults")
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ProjectError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config {path}: {detail}")]
    Config { path: PathBuf, detail: String },
    #[error("{path}: {detail}")]
    Data { path: PathBuf, detail: String },
}

impl ProjectConfig {
    pub fn from_toml(text: &str) -> Result<Self, String> {
        let cfg: ProjectConfig = toml::from_str(text).map_err(|e| e.to_string())?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn check(&self) -> Result<(), String> {
        if self.threshold_ms <= 0 {
            return Err(format!("threshold_ms must be positive, got {}", self.threshold_ms));
        }
        let mut ids = std::collections::HashSet::new();
        for m in &self.models {
            m.check()?;
            if !ids.insert(&m.model_id) {
                return Err(format!("model {} configured twice", m.model_id));
            }
        }
        Ok(())
    }

    /// Reads a config file and resolves its relative paths.
    pub fn load(config_path: &Path) -> Result<Self, ProjectError> {
        let text = fs::read_to_string(config_path).map_err(|source| ProjectError::Io {
            path: config_path.to_owned(),
            source,
        })?;
        let mut config = ProjectConfig::from_toml(&text).map_err(|detail| ProjectError::Config {
            path: config_path.to_owned(),
            detail,
        })?;
        config.resolve(config_path.parent().unwrap_or(Path::new(".")));
        Ok(config)
    }

    fn resolve(&mut self, base: &Path) {
        for p in [
            &mut self.events_dir,
            &mut self.handouts_dir,
            &mut self.records_dir,
            &mut self.evaluations_dir,
        ] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if let Some(cb) = &mut self.codebook {
            if cb.is_relative() {
                *cb = base.join(&*cb);
            }
        }
    }
}

/// Loaded project: sessions, handouts, models and the two stores.
#[derive(Debug, Clone)]
pub struct Project {
    pub config: ProjectConfig,
    /// Keyed by session id.
    pub sessions: BTreeMap<String, Session>,
    /// Keyed by assignment id.
    pub handouts: BTreeMap<String, Handout>,
    pub models: BTreeMap<String, ModelConfig>,
    pub codebook: Codebook,
    pub records: RecordStore,
    pub evaluations: EvaluationStore,
}

impl Project {
    pub fn load(config_path: &Path) -> Result<Self, ProjectError> {
        Self::open(ProjectConfig::load(config_path)?)
    }

    /// Opens a project from an already resolved config.
    pub fn open(config: ProjectConfig) -> Result<Self, ProjectError> {
        config.check().map_err(|detail| ProjectError::Config {
            path: PathBuf::new(),
            detail,
        })?;
        for dir in [&config.events_dir, &config.handouts_dir] {
            if !dir.is_dir() {
                return Err(ProjectError::Config {
                    path: dir.clone(),
                    detail: "directory does not exist".into(),
                });
            }
        }
        let sessions = load_sessions(&config.events_dir)?;
        let handouts = load_handouts(&config.handouts_dir)?;
        let models = config.models.iter().map(|m| (m.model_id.clone(), m.clone())).collect();
        let codebook = match &config.codebook {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|source| ProjectError::Io {
                    path: path.clone(),
                    source,
                })?;
                serde_json::from_str(&text).map_err(|e| ProjectError::Data {
                    path: path.clone(),
                    detail: e.to_string(),
                })?
            }
            None => Codebook::seeded(),
        };
        let store_err = |path: &Path| {
            let path = path.to_owned();
            move |e: crate::llm_harness::StoreError| ProjectError::Data {
                path,
                detail: e.to_string(),
            }
        };
        let records = RecordStore::open(&config.records_dir).map_err(store_err(&config.records_dir))?;
        let evaluations =
            EvaluationStore::open(&config.evaluations_dir).map_err(store_err(&config.evaluations_dir))?;
        Ok(Project {
            config,
            sessions,
            handouts,
            models,
            codebook,
            records,
            evaluations,
        })
    }

    pub fn session(&self, id: &str) -> Option<&Session> {
        self.sessions.get(id)
    }

    pub fn session_ids(&self) -> Vec<String> {
        self.sessions.keys().cloned().collect()
    }

    pub fn model_ids(&self) -> Vec<String> {
        self.models.keys().cloned().collect()
    }

    pub fn batch_inputs(&self) -> BatchInputs<'_> {
        BatchInputs {
            sessions: &self.sessions,
            handouts: &self.handouts,
            models: &self.models,
        }
    }

    /// Snapshots with the project's replay mode; `threshold_ms` defaults to the configured one.
    pub fn snapshots(
        &self,
        session_id: &str,
        threshold_ms: Option<i64>,
        dedup: bool,
    ) -> Result<SnapshotSequence, GenerateError> {
        let session = self
            .session(session_id)
            .ok_or_else(|| GenerateError::UnknownSession(session_id.to_owned()))?;
        let opts = SegmentOptions {
            threshold_ms: threshold_ms.unwrap_or(self.config.threshold_ms),
            dedup,
            mode: self.config.replay_mode,
        };
        Ok(extract_snapshots(session, opts)?)
    }

    /// Renders the prompt for one session, optionally over steps `from..=to`.
    pub fn prompt(
        &self,
        session_id: &str,
        task: TaskKind,
        step_range: Option<(usize, usize)>,
    ) -> Result<(PromptBundle, Option<(usize, usize)>), GenerateError> {
        let seq = self.snapshots(session_id, None, false)?;
        let handout = self
            .handouts
            .get(&seq.session.assignment_id)
            .ok_or_else(|| GenerateError::UnknownHandout(seq.session.assignment_id.clone()))?;
        // The full range is the same request as no range at all.
        let range = step_range.filter(|&r| r != (1, seq.len()));
        let seq = match range {
            Some((from, to)) => seq.slice_steps(from, to)?,
            None => seq,
        };
        Ok((build_prompt(task, handout, &seq)?, range))
    }

    /// Generates and stores one record. Transport failures come back as a
    /// stored record with status error, not as `Err`.
    pub fn generate(
        &self,
        harness: &Harness,
        session_id: &str,
        task: TaskKind,
        model_id: &str,
        step_range: Option<(usize, usize)>,
        override_fit: bool,
    ) -> Result<GenerationRecord, GenerateError> {
        let model = self
            .models
            .get(model_id)
            .ok_or_else(|| GenerateError::UnknownModel(model_id.to_owned()))?;
        let (bundle, step_range) = self.prompt(session_id, task, step_range)?;
        let opts = CompleteOptions {
            override_fit,
            step_range,
        };
        let record = harness.complete(model, &bundle, &opts);
        self.records.save(&record)?;
        Ok(record)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum GenerateError {
    #[error("unknown session '{0}'")]
    UnknownSession(String),
    #[error("unknown model '{0}'")]
    UnknownModel(String),
    #[error("no handout for assignment '{0}'")]
    UnknownHandout(String),
    #[error(transparent)]
    Segmentation(#[from] SegmentationError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

impl GenerateError {
    pub fn is_not_found(&self) -> bool {
        matches!(
            self,
            GenerateError::UnknownSession(_) | GenerateError::UnknownModel(_) | GenerateError::UnknownHandout(_)
        )
    }
}

/// Reads every `*.jsonl` file in `dir` and splits the union into sessions.
/// Files with validation errors are rejected.
pub fn load_sessions(dir: &Path) -> Result<BTreeMap<String, Session>, ProjectError> {
    let mut events = Vec::new();
    for path in sorted_files(dir, &["jsonl"])? {
        let file = fs::File::open(&path).map_err(|source| ProjectError::Io {
            path: path.clone(),
            source,
        })?;
        let parsed = parse_jsonl(file).map_err(|e| ProjectError::Data {
            path: path.clone(),
            detail: e.to_string(),
        })?;
        events.extend(parsed);
    }
    let report = validate(&events);
    if let Some(first) = report.errors.first() {
        return Err(ProjectError::Data {
            path: dir.to_owned(),
            detail: format!("{} validation error(s), first: {first}", report.errors.len()),
        });
    }
    Ok(split_sessions(events).into_iter().map(|s| (s.key.id(), s)).collect())
}

/// Handout files are named `<assignment_id>.md` or `<assignment_id>.txt`.
pub fn load_handouts(dir: &Path) -> Result<BTreeMap<String, Handout>, ProjectError> {
    let mut out = BTreeMap::new();
    for path in sorted_files(dir, &["md", "txt"])? {
        let Some(id) = path.file_stem().and_then(|s| s.to_str()).map(str::to_owned) else {
            continue;
        };
        let text = fs::read_to_string(&path).map_err(|source| ProjectError::Io {
            path: path.clone(),
            source,
        })?;
        out.insert(id.clone(), Handout { id, text });
    }
    Ok(out)
}

fn sorted_files(dir: &Path, extensions: &[&str]) -> Result<Vec<PathBuf>, ProjectError> {
    let entries = fs::read_dir(dir).map_err(|source| ProjectError::Io {
        path: dir.to_owned(),
        source,
    })?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| p.is_file() && p.extension().and_then(|e| e.to_str()).is_some_and(|e| extensions.contains(&e)))
        .collect();
    files.sort();
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let cfg = ProjectConfig::default();
        assert_eq!(cfg.threshold_ms, 300_000);
        assert_eq!(cfg.tasks, TaskKind::ALL.to_vec());
        assert_eq!(cfg.events_dir, PathBuf::from("events"));
    }

    #[test]
    fn rejects_bad_threshold_and_duplicate_models() {
        assert!(ProjectConfig::from_toml("threshold_ms = 0").is_err());
        let dup = r#"
            [[models]]
            model_id = "a"
            endpoint = "http://x"
            window_tokens = 10
            [[models]]
            model_id = "a"
            endpoint = "http://y"
            window_tokens = 10
        "#;
        assert!(ProjectConfig::from_toml(dup).unwrap_err().contains("twice"));
    }

    #[test]
    fn loads_directory_layout() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        fs::create_dir(root.join("events")).unwrap();
        fs::create_dir(root.join("handouts")).unwrap();
        fs::write(
            root.join("events/a.jsonl"),
            r#"{"seq":1,"subject_id":"S1","assignment_id":"zoo","file_path":"main.py","ts_ms":0,"kind":"insert","offset":0,"text":"x"}
"#,
        )
        .unwrap();
        fs::write(root.join("handouts/zoo.md"), "Simulate the zookeeper.").unwrap();
        fs::write(
            root.join("proclens.toml"),
            r#"
            [[models]]
            model_id = "m"
            endpoint = "http://localhost:1/v1/chat/completions"
            window_tokens = 128000
            auth_env_var = "M_KEY"
            "#,
        )
        .unwrap();
        let p = Project::load(&root.join("proclens.toml")).unwrap();
        assert_eq!(p.session_ids(), vec!["S1_zoo_main.py"]);
        assert_eq!(p.handouts["zoo"].text, "Simulate the zookeeper.");
        assert_eq!(p.models["m"].auth_env_var.as_deref(), Some("M_KEY"));
        assert!(root.join("records").is_dir());
        assert!(root.join("evaluations").is_dir());
    }

    #[test]
    fn generate_slices_and_stores() {
        use crate::llm_harness::{ManualClock, MockTransport};
        use std::sync::Arc;

        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        fs::create_dir(root.join("events")).unwrap();
        fs::create_dir(root.join("handouts")).unwrap();
        let mut lines = String::new();
        for i in 0..6u64 {
            let ts = i as i64 * 400_000;
            lines.push_str(&format!(
                "{{\"seq\":{},\"subject_id\":\"S1\",\"assignment_id\":\"zoo\",\"file_path\":\"main.py\",\"ts_ms\":{ts},\"kind\":\"insert\",\"offset\":{i},\"text\":\"x\"}}\n",
                i + 1
            ));
        }
        fs::write(root.join("events/a.jsonl"), lines).unwrap();
        fs::write(root.join("handouts/zoo.txt"), "Zoo.").unwrap();
        fs::write(
            root.join("p.toml"),
            "[[models]]\nmodel_id = \"m\"\nendpoint = \"http://127.0.0.1:9/\"\nwindow_tokens = 100000\n",
        )
        .unwrap();
        let p = Project::load(&root.join("p.toml")).unwrap();
        assert_eq!(p.snapshots("S1_zoo_main.py", None, false).unwrap().len(), 6);

        let h = Harness::with_clock(Arc::new(MockTransport::canned()), Arc::new(ManualClock::new(0)));
        let r = p.generate(&h, "S1_zoo_main.py", TaskKind::Feedback, "m", Some((2, 4)), false).unwrap();
        assert_eq!(r.step_count, 3);
        assert_eq!(r.step_range, Some((2, 4)));
        assert!(p.records.contains(&r.record_id));

        let full = p.generate(&h, "S1_zoo_main.py", TaskKind::Feedback, "m", Some((1, 6)), false).unwrap();
        assert_eq!(full.step_range, None);
        assert_eq!(full.record_id, "S1_zoo_feedback_m");

        assert!(matches!(
            p.generate(&h, "S1_zoo_main.py", TaskKind::Feedback, "m", Some((5, 9)), false),
            Err(GenerateError::Segmentation(SegmentationError::InvalidRange { .. }))
        ));
        assert!(p.generate(&h, "nope", TaskKind::Feedback, "m", None, false).unwrap_err().is_not_found());
        assert!(p.generate(&h, "S1_zoo_main.py", TaskKind::Feedback, "x", None, false).unwrap_err().is_not_found());
    }

    #[test]
    fn missing_events_dir_is_config_error() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("p.toml"), "").unwrap();
        assert!(matches!(
            Project::load(&dir.path().join("p.toml")),
            Err(ProjectError::Config { .. })
        ));
    }
}
