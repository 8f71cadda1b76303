//! Human ratings of generated summaries and feedback, automatic step-reference
//! checks, rater agreement, and theme counts.

mod agreement;
mod autocheck;
mod store;
mod themes;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::llm_harness::{RecordStore, StoreError};

pub use agreement::{acceptability_agreement, AgreementStats};
pub use autocheck::{auto_checks, check_step_refs, extract_step_refs, AutoCheckReport};
pub use store::{EvaluationStore, StoredEvaluation};
pub use themes::{theme_frequencies, Codebook, Theme, ThemeCount, ThemeFrequencies, UNCODED};

/// Why an output was judged unacceptable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    /// A summary that describes one code state instead of the process.
    SingleStateOnly,
    /// Feedback with generic code advice and nothing about the process.
    GenericOnly,
    Other,
}

impl std::str::FromStr for RejectReason {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "single_state_only" => Ok(RejectReason::SingleStateOnly),
            "generic_only" => Ok(RejectReason::GenericOnly),
            "other" => Ok(RejectReason::Other),
            _ => Err(EvalError::Invalid(format!("unknown reject reason '{s}'"))),
        }
    }
}

/// Five scores: hallucinations as a count, the rest on a 1 to 5 scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rubric {
    pub hallucination_count: u32,
    /// How well the output addresses process rather than static code.
    pub process_focus: u8,
    pub specificity: u8,
    pub correctness: u8,
    pub utility: u8,
}

impl Rubric {
    pub fn check(&self) -> Result<(), EvalError> {
        for (name, v) in [
            ("process_focus", self.process_focus),
            ("specificity", self.specificity),
            ("correctness", self.correctness),
            ("utility", self.utility),
        ] {
            if !(1..=5).contains(&v) {
                return Err(EvalError::OutOfRange { field: name, value: v });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvaluationRecord {
    pub record_id: String,
    pub rater_id: String,
    pub acceptable: bool,
    #[serde(default)]
    pub reject_reason: Option<RejectReason>,
    #[serde(default)]
    pub rubric: Option<Rubric>,
    #[serde(default)]
    pub themes: Vec<String>,
    #[serde(default)]
    pub notes: String,
}

impl EvaluationRecord {
    pub fn check(&self) -> Result<(), EvalError> {
        if self.rater_id.is_empty() || self.rater_id.contains(['/', '\\']) || self.rater_id.contains("__") {
            return Err(EvalError::Invalid(format!("invalid rater id '{}'", self.rater_id)));
        }
        if !self.acceptable && self.reject_reason.is_none() {
            return Err(EvalError::Invalid("an unacceptable rating needs a reject_reason".into()));
        }
        if let Some(r) = &self.rubric {
            r.check()?;
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("unknown generation record '{0}'")]
    UnknownRecord(String),
    #[error("{field} must be within 1..=5, got {value}")]
    OutOfRange { field: &'static str, value: u8 },
    #[error("{0}")]
    Invalid(String),
    #[error("rating vectors differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("no items to compare")]
    Empty,
    #[error("generation {0} has no successful response to check")]
    NotOk(String),
    #[error(transparent)]
    Store(#[from] StoreError),
}

impl EvalError {
    /// Validation failures, as opposed to lookups and storage problems.
    pub fn is_validation(&self) -> bool {
        matches!(self, EvalError::OutOfRange { .. } | EvalError::Invalid(_))
    }
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RejectReason::SingleStateOnly => "single_state_only",
            RejectReason::GenericOnly => "generic_only",
            RejectReason::Other => "other",
        })
    }
}

/// Validates and stores a rating. One rating per (record, rater) is current;
/// earlier versions stay in its history.
pub fn record_rating(
    evaluations: &EvaluationStore,
    generations: &RecordStore,
    rating: EvaluationRecord,
) -> Result<StoredEvaluation, EvalError> {
    if !generations.contains(&rating.record_id) {
        return Err(EvalError::UnknownRecord(rating.record_id));
    }
    rating.check()?;
    Ok(evaluations.put(rating)?)
}
