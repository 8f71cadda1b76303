//! Programming-process analytics over keystroke-level edit logs.
//!
//! The pipeline runs in stages, one module each:
//!
//! - [`event_log`]: parse, validate, de-identify and split raw edit events
//! - [`replay`]: reconstruct the code at any event index
//! - [`segmentation`]: cut a session into snapshots at long pauses
//! - [`promptgen`]: render summary and feedback prompts from snapshots
//! - [`llm_harness`]: send prompts, record responses, run batches
//! - [`evaluation`]: ratings, step-reference checks, agreement, themes
//!
//! [`project`] and [`report`] tie the stages to an on-disk project layout.

pub mod evaluation;
pub mod event_log;
pub mod llm_harness;
pub mod project;
pub mod promptgen;
pub mod replay;
pub mod report;
pub mod segmentation;

pub use event_log::{EditEvent, EditKind, Session, SessionKey};
pub use llm_harness::{GenerationRecord, ModelConfig};
pub use promptgen::{PromptBundle, TaskKind};
pub use replay::{CodeState, Document};
pub use segmentation::{Snapshot, SnapshotSequence};
