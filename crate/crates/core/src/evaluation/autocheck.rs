use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::llm_harness::GenerationRecord;
use crate::segmentation::SnapshotSequence;

/// Step references in a response, checked against the steps actually sent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutoCheckReport {
    pub referenced_steps: Vec<u64>,
    /// References outside `1..=step_count`; candidates for hallucination.
    pub invalid_steps: Vec<u64>,
    pub response_chars: usize,
    /// References per 1 000 characters.
    pub step_ref_density: f64,
}

fn step_ref_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\bsteps?\b[ \t]*[:#.\-]?[ \t]*(\d+)").expect("valid regex"))
}

/// Numbers following the word "step", in order of appearance.
///
/// Case-insensitive; zero padding is ignored ("Step 008" and "step 8" both
/// give 8). Values too large for `u64` saturate.
pub fn extract_step_refs(text: &str) -> Vec<u64> {
    step_ref_regex()
        .captures_iter(text)
        .map(|c| c[1].parse::<u64>().unwrap_or(u64::MAX))
        .collect()
}

pub fn check_step_refs(text: &str, step_count: usize) -> AutoCheckReport {
    let referenced_steps = extract_step_refs(text);
    let invalid_steps = referenced_steps
        .iter()
        .copied()
        .filter(|s| *s < 1 || *s > step_count as u64)
        .collect();
    let response_chars = text.chars().count();
    let step_ref_density = if response_chars == 0 {
        0.0
    } else {
        referenced_steps.len() as f64 * 1000.0 / response_chars as f64
    };
    AutoCheckReport {
        referenced_steps,
        invalid_steps,
        response_chars,
        step_ref_density,
    }
}

pub fn auto_checks(generation: &GenerationRecord, seq: &SnapshotSequence) -> Result<AutoCheckReport, EvalError> {
    if !generation.is_ok() {
        return Err(EvalError::NotOk(generation.record_id.clone()));
    }
    Ok(check_step_refs(&generation.response_text, seq.len()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quoted_ranges() {
        assert_eq!(extract_step_refs("As you iterated from Step 002 to Step 005, it looks"), vec![2, 5]);
        assert_eq!(extract_step_refs("in step 008 to keep track"), vec![8]);
        assert!(extract_step_refs("no references here").is_empty());
    }

    #[test]
    fn separators_and_padding() {
        assert_eq!(extract_step_refs("Step: 001, STEP#3, steps 4, step-12"), vec![1, 3, 4, 12]);
        assert_eq!(extract_step_refs("Step 8"), extract_step_refs("Step 008"));
        assert!(extract_step_refs("footstep 3 and step-by-step").is_empty());
        assert_eq!(extract_step_refs("Step 99999999999999999999999"), vec![u64::MAX]);
    }

    #[test]
    fn bound_check() {
        assert_eq!(check_step_refs("See Step 012.", 8).invalid_steps, vec![12]);
        assert!(check_step_refs("Step 1, Step 2 and Step 3", 5).invalid_steps.is_empty());
        assert_eq!(check_step_refs("Step 0", 5).invalid_steps, vec![0]);
    }

    #[test]
    fn density() {
        let mut text = "Step 001 Step 002 Step 003 Step 004".to_string();
        text.push_str(&"x".repeat(2000 - text.len()));
        let r = check_step_refs(&text, 4);
        assert_eq!(r.response_chars, 2000);
        assert_eq!(r.step_ref_density, 2.0);
    }
}
