use std::collections::{BTreeMap, HashSet, VecDeque};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{prompt_hash, record_id, CompleteOptions, GenerationRecord, Harness, ModelConfig, RecordStore, StoreError};
use crate::event_log::Session;
use crate::promptgen::{build_prompt, Handout, PromptBundle, PromptError, TaskKind};
use crate::segmentation::{extract_snapshots, SegmentOptions, SegmentationError, DEFAULT_THRESHOLD_MS};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PlanItem {
    /// Session id as produced by [`crate::event_log::SessionKey::id`].
    pub session: String,
    pub task: TaskKind,
    #[serde(rename = "model")]
    pub model_id: String,
}

/// Concrete list of generations to run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchPlan {
    pub items: Vec<PlanItem>,
    pub threshold_ms: i64,
    #[serde(default)]
    pub dedup: bool,
}

impl BatchPlan {
    /// Every session × task × model combination, in that nesting order.
    pub fn cross(sessions: &[String], tasks: &[TaskKind], models: &[String], threshold_ms: i64) -> Self {
        let mut items = Vec::new();
        for s in sessions {
            for t in tasks {
                for m in models {
                    items.push(PlanItem {
                        session: s.clone(),
                        task: *t,
                        model_id: m.clone(),
                    });
                }
            }
        }
        BatchPlan {
            items,
            threshold_ms,
            dedup: false,
        }
    }
}

/// Plan file contents: either explicit `items`, or `sessions` / `tasks` /
/// `models` lists that are crossed. Omitted lists mean "all configured".
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanSpec {
    #[serde(default)]
    pub threshold_ms: Option<i64>,
    #[serde(default)]
    pub dedup: bool,
    #[serde(default)]
    pub items: Option<Vec<PlanItem>>,
    #[serde(default)]
    pub sessions: Option<Vec<String>>,
    #[serde(default)]
    pub tasks: Option<Vec<TaskKind>>,
    #[serde(default)]
    pub models: Option<Vec<String>>,
}

impl PlanSpec {
    pub fn resolve(
        &self,
        all_sessions: &[String],
        default_tasks: &[TaskKind],
        all_models: &[String],
        default_threshold_ms: i64,
    ) -> BatchPlan {
        let threshold_ms = self.threshold_ms.unwrap_or(default_threshold_ms);
        let mut plan = match &self.items {
            Some(items) => BatchPlan {
                items: items.clone(),
                threshold_ms,
                dedup: false,
            },
            None => BatchPlan::cross(
                self.sessions.as_deref().unwrap_or(all_sessions),
                self.tasks.as_deref().unwrap_or(default_tasks),
                self.models.as_deref().unwrap_or(all_models),
                threshold_ms,
            ),
        };
        plan.dedup = self.dedup;
        plan
    }
}

/// Lookup tables a plan is resolved against.
#[derive(Debug, Clone, Copy)]
pub struct BatchInputs<'a> {
    /// Keyed by session id.
    pub sessions: &'a BTreeMap<String, Session>,
    /// Keyed by assignment id.
    pub handouts: &'a BTreeMap<String, Handout>,
    pub models: &'a BTreeMap<String, ModelConfig>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchOutcome {
    /// One record per plan item, in plan order.
    pub records: Vec<GenerationRecord>,
    /// Items that went through the transport (or the too-long short circuit).
    pub executed: usize,
    /// Items satisfied by an existing successful record with the same prompt.
    pub reused: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum BatchError {
    #[error("duplicate plan item {session}/{task}/{model}")]
    DuplicateItem {
        session: String,
        task: TaskKind,
        model: String,
    },
    #[error("unknown session '{0}'")]
    UnknownSession(String),
    #[error("no handout for assignment '{0}'")]
    UnknownHandout(String),
    #[error("unknown model '{0}'")]
    UnknownModel(String),
    #[error("plan items {0} and {1} map to the same record id {2}")]
    RecordIdCollision(usize, usize, String),
    #[error("invalid model config: {0}")]
    Model(String),
    #[error("session {session}: {source}")]
    Segmentation {
        session: String,
        #[source]
        source: SegmentationError,
    },
    #[error("session {session}: {source}")]
    Prompt {
        session: String,
        #[source]
        source: PromptError,
    },
    #[error(transparent)]
    Store(#[from] StoreError),
}

struct Job<'a> {
    index: usize,
    bundle: PromptBundle,
    model: &'a ModelConfig,
}

/// Runs every plan item, persisting each record as it completes.
///
/// All references are resolved and all prompts rendered before the first
/// transport call, so a bad plan aborts without side effects. Items whose
/// stored record has the same prompt hash and status ok are reused unless
/// `force` is set. Each model gets its own pool of `concurrency` workers.
pub fn run_batch(
    plan: &BatchPlan,
    inputs: BatchInputs<'_>,
    harness: &Harness,
    store: &RecordStore,
    force: bool,
) -> Result<BatchOutcome, BatchError> {
    let mut seen = HashSet::new();
    for item in &plan.items {
        if !seen.insert(item) {
            return Err(BatchError::DuplicateItem {
                session: item.session.clone(),
                task: item.task,
                model: item.model_id.clone(),
            });
        }
    }

    let opts = SegmentOptions {
        threshold_ms: plan.threshold_ms,
        dedup: plan.dedup,
        ..Default::default()
    };
    let mut ids: BTreeMap<String, usize> = BTreeMap::new();
    let mut sequences = BTreeMap::new();
    let mut jobs: Vec<Job<'_>> = Vec::with_capacity(plan.items.len());
    for (index, item) in plan.items.iter().enumerate() {
        let session = inputs
            .sessions
            .get(&item.session)
            .ok_or_else(|| BatchError::UnknownSession(item.session.clone()))?;
        let handout = inputs
            .handouts
            .get(&session.key.assignment_id)
            .ok_or_else(|| BatchError::UnknownHandout(session.key.assignment_id.clone()))?;
        let model = inputs
            .models
            .get(&item.model_id)
            .ok_or_else(|| BatchError::UnknownModel(item.model_id.clone()))?;
        model.check().map_err(BatchError::Model)?;

        let id = record_id(&session.key, item.task, &model.model_id, None);
        if let Some(prev) = ids.insert(id.clone(), index) {
            return Err(BatchError::RecordIdCollision(prev, index, id));
        }

        if !sequences.contains_key(&item.session) {
            let seq = extract_snapshots(session, opts).map_err(|source| BatchError::Segmentation {
                session: item.session.clone(),
                source,
            })?;
            sequences.insert(item.session.clone(), seq);
        }
        let bundle = build_prompt(item.task, handout, &sequences[&item.session]).map_err(|source| BatchError::Prompt {
            session: item.session.clone(),
            source,
        })?;
        jobs.push(Job { index, bundle, model });
    }

    let mut results: Vec<Option<GenerationRecord>> = vec![None; jobs.len()];
    let mut pending: BTreeMap<&str, VecDeque<Job<'_>>> = BTreeMap::new();
    let mut reused = 0;
    for job in jobs {
        let id = record_id(&job.bundle.session, job.bundle.task, &job.model.model_id, None);
        if !force {
            if let Some(existing) = store.load(&id)? {
                if existing.is_ok() && existing.prompt_hash == prompt_hash(&job.bundle.prompt_text) {
                    results[job.index] = Some(existing);
                    reused += 1;
                    continue;
                }
            }
        }
        pending.entry(job.model.model_id.as_str()).or_default().push_back(job);
    }
    let executed = pending.values().map(VecDeque::len).sum();

    let results = Mutex::new(results);
    let first_error: Mutex<Option<StoreError>> = Mutex::new(None);
    let queues: Vec<(usize, Mutex<VecDeque<Job<'_>>>)> = pending
        .into_values()
        .map(|q| {
            let workers = q.front().map_or(1, |j| j.model.concurrency.max(1)).min(q.len());
            (workers, Mutex::new(q))
        })
        .collect();
    std::thread::scope(|scope| {
        for (workers, queue) in &queues {
            for _ in 0..*workers {
                let results = &results;
                let first_error = &first_error;
                scope.spawn(move || loop {
                    let Some(job) = queue.lock().expect("queue poisoned").pop_front() else {
                        break;
                    };
                    let record = harness.complete(job.model, &job.bundle, &CompleteOptions::default());
                    if let Err(e) = store.save(&record) {
                        first_error.lock().expect("poisoned").get_or_insert(e);
                    }
                    results.lock().expect("poisoned")[job.index] = Some(record);
                });
            }
        }
    });
    if let Some(e) = first_error.into_inner().expect("poisoned") {
        return Err(e.into());
    }

    let records = results
        .into_inner()
        .expect("poisoned")
        .into_iter()
        .map(|r| r.expect("every job produces a record"))
        .collect();
    Ok(BatchOutcome {
        records,
        executed,
        reused,
    })
}

impl Default for BatchPlan {
    fn default() -> Self {
        BatchPlan {
            items: Vec::new(),
            threshold_ms: DEFAULT_THRESHOLD_MS,
            dedup: false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event_log::{split_sessions, test_support::ins, EditEvent};
    use crate::llm_harness::{GenerationStatus, ManualClock, MockTransport, TransportError};
    use std::sync::Arc;

    struct Fixture {
        sessions: BTreeMap<String, Session>,
        handouts: BTreeMap<String, Handout>,
        models: BTreeMap<String, ModelConfig>,
    }

    impl Fixture {
        fn new() -> Self {
            let mut events = Vec::new();
            for (si, s) in ["S1", "S2"].iter().enumerate() {
                for a in ["fluky", "zoo"] {
                    events.push(EditEvent {
                        subject_id: s.to_string(),
                        assignment_id: a.into(),
                        ..ins(si as u64, 0, 0, "x = 1")
                    });
                }
            }
            let sessions = split_sessions(events).into_iter().map(|s| (s.key.id(), s)).collect();
            let handouts = ["fluky", "zoo"]
                .iter()
                .map(|a| {
                    (
                        a.to_string(),
                        Handout {
                            id: a.to_string(),
                            text: format!("Handout for {a}"),
                        },
                    )
                })
                .collect();
            let models = ["m1", "m2"]
                .iter()
                .map(|m| (m.to_string(), ModelConfig::new(*m, "http://unused", 128_000)))
                .collect();
            Fixture {
                sessions,
                handouts,
                models,
            }
        }

        fn inputs(&self) -> BatchInputs<'_> {
            BatchInputs {
                sessions: &self.sessions,
                handouts: &self.handouts,
                models: &self.models,
            }
        }

        fn plan(&self) -> BatchPlan {
            let sessions: Vec<String> = self.sessions.keys().cloned().collect();
            let models: Vec<String> = self.models.keys().cloned().collect();
            BatchPlan::cross(&sessions, &TaskKind::ALL, &models, DEFAULT_THRESHOLD_MS)
        }
    }

    fn harness(mock: Arc<MockTransport>) -> Harness {
        Harness::with_clock(mock, Arc::new(ManualClock::new(0)))
    }

    #[test]
    fn one_record_per_item_and_resume() {
        let fx = Fixture::new();
        let dir = tempfile::tempdir().unwrap();
        let store = RecordStore::open(dir.path()).unwrap();
        let mock = Arc::new(MockTransport::canned());
        let h = harness(mock.clone());
        let plan = fx.plan();
        assert_eq!(plan.items.len(), 16);

        let out = run_batch(&plan, fx.inputs(), &h, &store, false).unwrap();
        assert_eq!(out.records.len(), 16);
        assert_eq!(out.executed, 16);
        assert_eq!(mock.calls(), 16);
        assert_eq!(store.list().unwrap().len(), 16);
        for (item, rec) in plan.items.iter().zip(&out.records) {
            assert_eq!(rec.model_id, item.model_id);
            assert_eq!(rec.task, item.task);
            assert_eq!(rec.session.id(), item.session);
        }

        let again = run_batch(&plan, fx.inputs(), &h, &store, false).unwrap();
        assert_eq!(mock.calls(), 16);
        assert_eq!(again.reused, 16);
        assert_eq!(again.records, out.records);

        run_batch(&plan, fx.inputs(), &h, &store, true).unwrap();
        assert_eq!(mock.calls(), 32);
    }

    #[test]
    fn failed_records_are_retried_on_resume() {
        let fx = Fixture::new();
        let dir = tempfile::tempdir().unwrap();
        let store = RecordStore::open(dir.path()).unwrap();
        let mut plan = fx.plan();
        plan.items.truncate(1);
        let failing = Arc::new(MockTransport::scripted(vec![Err(TransportError::Fatal("boom".into()))]));
        let out = run_batch(&plan, fx.inputs(), &harness(failing), &store, false).unwrap();
        assert_eq!(out.records[0].status, GenerationStatus::Error);

        let ok = Arc::new(MockTransport::fixed("fine"));
        let out = run_batch(&plan, fx.inputs(), &harness(ok.clone()), &store, false).unwrap();
        assert_eq!(ok.calls(), 1);
        assert!(out.records[0].is_ok());
    }

    #[test]
    fn empty_plan() {
        let fx = Fixture::new();
        let dir = tempfile::tempdir().unwrap();
        let store = RecordStore::open(dir.path()).unwrap();
        let out = run_batch(&BatchPlan::default(), fx.inputs(), &harness(Arc::new(MockTransport::fixed("x"))), &store, false).unwrap();
        assert!(out.records.is_empty());
    }

    #[test]
    fn unresolvable_reference_aborts_before_sending() {
        let fx = Fixture::new();
        let dir = tempfile::tempdir().unwrap();
        let store = RecordStore::open(dir.path()).unwrap();
        let mock = Arc::new(MockTransport::fixed("x"));
        let mut plan = fx.plan();
        plan.items.push(PlanItem {
            session: "S1_fluky_main.py".into(),
            task: TaskKind::Summary,
            model_id: "nope".into(),
        });
        let err = run_batch(&plan, fx.inputs(), &harness(mock.clone()), &store, false).unwrap_err();
        assert!(matches!(err, BatchError::UnknownModel(ref m) if m == "nope"));
        assert_eq!(mock.calls(), 0);
        assert!(store.list().unwrap().is_empty());

        let mut plan = fx.plan();
        plan.items[3].session = "ghost".into();
        assert!(matches!(
            run_batch(&plan, fx.inputs(), &harness(mock.clone()), &store, false),
            Err(BatchError::UnknownSession(_))
        ));
        let mut no_handouts = BTreeMap::new();
        no_handouts.insert("zoo".to_string(), fx.handouts["zoo"].clone());
        let inputs = BatchInputs {
            handouts: &no_handouts,
            ..fx.inputs()
        };
        assert!(matches!(
            run_batch(&fx.plan(), inputs, &harness(mock.clone()), &store, false),
            Err(BatchError::UnknownHandout(ref a)) if a == "fluky"
        ));
        assert_eq!(mock.calls(), 0);
    }

    #[test]
    fn duplicate_items_rejected() {
        let fx = Fixture::new();
        let dir = tempfile::tempdir().unwrap();
        let store = RecordStore::open(dir.path()).unwrap();
        let mut plan = fx.plan();
        plan.items.push(plan.items[0].clone());
        assert!(matches!(
            run_batch(&plan, fx.inputs(), &harness(Arc::new(MockTransport::fixed("x"))), &store, false),
            Err(BatchError::DuplicateItem { .. })
        ));
    }

    #[test]
    fn plan_spec_forms() {
        let all = vec!["a".to_string(), "b".to_string()];
        let models = vec!["m".to_string()];
        let spec: PlanSpec = serde_json::from_str(r#"{"tasks":["feedback"]}"#).unwrap();
        let plan = spec.resolve(&all, &TaskKind::ALL, &models, 1000);
        assert_eq!(plan.items.len(), 2);
        assert_eq!(plan.threshold_ms, 1000);
        let spec: PlanSpec =
            serde_json::from_str(r#"{"threshold_ms":5,"items":[{"session":"a","task":"summary","model":"m"}]}"#)
                .unwrap();
        let plan = spec.resolve(&all, &TaskKind::ALL, &models, 1000);
        assert_eq!(plan.items.len(), 1);
        assert_eq!(plan.threshold_ms, 5);
        assert!(serde_json::from_str::<PlanSpec>(r#"{"bogus":1}"#).is_err());
    }
}
