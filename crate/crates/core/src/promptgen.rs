//! Summary and feedback prompt rendering, token estimation and context-window
//! gating.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::event_log::SessionKey;
use crate::llm_harness::ModelConfig;
use crate::segmentation::SnapshotSequence;

pub const FEEDBACK_TEMPLATE: &str = include_str!("../templates/feedback.txt");
pub const SUMMARY_TEMPLATE: &str = include_str!("../templates/summary.txt");

const HANDOUT_SLOT: &str = "<handout>";
const PROCESS_SLOT: &str = "<process data>";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Summary,
    Feedback,
}

impl TaskKind {
    pub const ALL: [TaskKind; 2] = [TaskKind::Summary, TaskKind::Feedback];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::Summary => "summary",
            TaskKind::Feedback => "feedback",
        }
    }

    pub fn template(self) -> &'static str {
        match self {
            TaskKind::Summary => SUMMARY_TEMPLATE,
            TaskKind::Feedback => FEEDBACK_TEMPLATE,
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskKind {
    type Err = PromptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "summary" => Ok(TaskKind::Summary),
            "feedback" => Ok(TaskKind::Feedback),
            other => Err(PromptError::UnknownTask(other.to_owned())),
        }
    }
}

/// Assignment description shown to the model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Handout {
    pub id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub task: TaskKind,
    pub handout_id: String,
    pub session: SessionKey,
    pub prompt_text: String,
    pub estimated_tokens: usize,
    pub step_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FitReport {
    pub estimated_tokens: usize,
    pub window_tokens: usize,
    pub reserve_tokens: usize,
    pub fits: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PromptError {
    #[error("handout text is empty")]
    EmptyHandout,
    #[error("snapshot sequence is empty")]
    EmptySequence,
    #[error("unknown task '{0}' (expected summary or feedback)")]
    UnknownTask(String),
}

/// Renders each snapshot as a `#####` / `Step: NNN` / `#####` block.
///
/// Step ids are zero-padded to three digits, or wider when a sequence has
/// more than 999 steps. No timestamps are emitted.
pub fn render_steps(seq: &SnapshotSequence) -> String {
    let width = seq.len().to_string().len().max(3);
    let mut out = String::new();
    for s in &seq.snapshots {
        out.push_str("#####\n");
        out.push_str(&format!("Step: {:0width$}\n", s.step_index));
        out.push_str("#####\n");
        out.push_str(s.text());
        out.push_str("\n\n");
    }
    out
}

pub fn build_prompt(task: TaskKind, handout: &Handout, seq: &SnapshotSequence) -> Result<PromptBundle, PromptError> {
    if handout.text.is_empty() {
        return Err(PromptError::EmptyHandout);
    }
    if seq.is_empty() {
        return Err(PromptError::EmptySequence);
    }
    let prompt_text = fill_template(task.template(), &handout.text, &render_steps(seq));
    Ok(PromptBundle {
        task,
        handout_id: handout.id.clone(),
        session: seq.session.clone(),
        estimated_tokens: estimate_tokens(&prompt_text),
        step_count: seq.len(),
        prompt_text,
    })
}

// Each slot is filled once, left to right, so placeholder-like text inside
// the handout is never substituted again.
fn fill_template(template: &str, handout: &str, process: &str) -> String {
    let (head, rest) = template.split_once(HANDOUT_SLOT).expect("template has a handout slot");
    let (middle, tail) = rest.split_once(PROCESS_SLOT).expect("template has a process slot");
    let mut out = String::with_capacity(template.len() + handout.len() + process.len());
    out.push_str(head);
    out.push_str(handout);
    out.push_str(middle);
    out.push_str(process);
    out.push_str(tail);
    out
}

/// `ceil(chars / 4)`.
pub fn estimate_tokens(text: &str) -> usize {
    text.chars().count().div_ceil(4)
}

pub fn fit_report(estimated_tokens: usize, window_tokens: usize, reserve_tokens: usize) -> FitReport {
    FitReport {
        estimated_tokens,
        window_tokens,
        reserve_tokens,
        fits: estimated_tokens.saturating_add(reserve_tokens) <= window_tokens,
    }
}

pub fn check_context_fit(bundle: &PromptBundle, model: &ModelConfig) -> FitReport {
    fit_report(bundle.estimated_tokens, model.window_tokens, model.reserve_tokens)
}

/// Numbered step headers (`Step: 001`) found at line starts.
pub fn step_headers(prompt: &str) -> Vec<usize> {
    prompt
        .lines()
        .filter_map(|l| l.strip_prefix("Step: "))
        .filter(|rest| !rest.is_empty() && rest.bytes().all(|b| b.is_ascii_digit()))
        .filter_map(|rest| rest.parse().ok())
        .collect()
}
