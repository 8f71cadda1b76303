//! Aggregate report over generations and ratings.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::evaluation::{
    acceptability_agreement, check_step_refs, theme_frequencies, AgreementStats, Codebook, EvaluationRecord,
    ThemeFrequencies,
};
use crate::llm_harness::{generation_stats, GenerationRecord, StatsTable};
use crate::promptgen::TaskKind;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AcceptabilityRow {
    pub model_id: String,
    pub rater_id: String,
    pub summaries_rated: usize,
    pub summaries_acceptable: usize,
    pub feedback_rated: usize,
    pub feedback_acceptable: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairAgreement {
    pub rater_a: String,
    pub rater_b: String,
    pub stats: AgreementStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRefRow {
    pub model_id: String,
    pub responses_checked: usize,
    pub responses_with_invalid_refs: usize,
    pub invalid_refs: usize,
    pub mean_density: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub generation: StatsTable,
    pub acceptability: Vec<AcceptabilityRow>,
    pub agreement: Vec<PairAgreement>,
    pub step_refs: Vec<StepRefRow>,
    pub themes: ThemeFrequencies,
}

pub fn build_report(records: &[GenerationRecord], evaluations: &[EvaluationRecord], codebook: &Codebook) -> Report {
    let by_id: BTreeMap<&str, &GenerationRecord> = records.iter().map(|r| (r.record_id.as_str(), r)).collect();

    let mut acceptability: BTreeMap<(String, String), AcceptabilityRow> = BTreeMap::new();
    for e in evaluations {
        let Some(gen) = by_id.get(e.record_id.as_str()) else {
            continue;
        };
        let row = acceptability
            .entry((gen.model_id.clone(), e.rater_id.clone()))
            .or_insert_with(|| AcceptabilityRow {
                model_id: gen.model_id.clone(),
                rater_id: e.rater_id.clone(),
                summaries_rated: 0,
                summaries_acceptable: 0,
                feedback_rated: 0,
                feedback_acceptable: 0,
            });
        let (rated, ok) = match gen.task {
            TaskKind::Summary => (&mut row.summaries_rated, &mut row.summaries_acceptable),
            TaskKind::Feedback => (&mut row.feedback_rated, &mut row.feedback_acceptable),
        };
        *rated += 1;
        *ok += usize::from(e.acceptable);
    }

    let mut by_rater: BTreeMap<&str, BTreeMap<&str, bool>> = BTreeMap::new();
    for e in evaluations {
        by_rater.entry(&e.rater_id).or_default().insert(&e.record_id, e.acceptable);
    }
    let raters: Vec<&str> = by_rater.keys().copied().collect();
    let mut agreement = Vec::new();
    for (i, a) in raters.iter().enumerate() {
        for b in &raters[i + 1..] {
            let common: BTreeSet<&str> = by_rater[a]
                .keys()
                .filter(|k| by_rater[b].contains_key(*k))
                .copied()
                .collect();
            let va: Vec<bool> = common.iter().map(|k| by_rater[a][k]).collect();
            let vb: Vec<bool> = common.iter().map(|k| by_rater[b][k]).collect();
            if let Ok(stats) = acceptability_agreement(&va, &vb) {
                agreement.push(PairAgreement {
                    rater_a: a.to_string(),
                    rater_b: b.to_string(),
                    stats,
                });
            }
        }
    }

    let mut step_rows: BTreeMap<&str, (usize, usize, usize, f64)> = BTreeMap::new();
    for r in records.iter().filter(|r| r.is_ok()) {
        let check = check_step_refs(&r.response_text, r.step_count);
        let row = step_rows.entry(&r.model_id).or_default();
        row.0 += 1;
        row.1 += usize::from(!check.invalid_steps.is_empty());
        row.2 += check.invalid_steps.len();
        row.3 += check.step_ref_density;
    }
    let step_refs = step_rows
        .into_iter()
        .map(|(model, (n, with_invalid, invalid, density))| StepRefRow {
            model_id: model.to_owned(),
            responses_checked: n,
            responses_with_invalid_refs: with_invalid,
            invalid_refs: invalid,
            mean_density: density / n as f64,
        })
        .collect();

    Report {
        generation: generation_stats(records),
        acceptability: acceptability.into_values().collect(),
        agreement,
        step_refs,
        themes: theme_frequencies(evaluations, codebook),
    }
}

impl Report {
    /// Markdown rendering for terminals and files.
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str("# Generation report\n\n## Generation statistics\n\n");
        out.push_str(&self.generation.to_string());

        out.push_str("\n## Acceptable outputs\n\n");
        if self.acceptability.is_empty() {
            out.push_str("No ratings recorded.\n");
        } else {
            out.push_str("| Model | Rater | Summaries acceptable | Feedback acceptable |\n|---|---|---:|---:|\n");
            for r in &self.acceptability {
                let _ = writeln!(
                    out,
                    "| {} | {} | {}/{} | {}/{} |",
                    r.model_id, r.rater_id, r.summaries_acceptable, r.summaries_rated, r.feedback_acceptable, r.feedback_rated
                );
            }
        }

        out.push_str("\n## Rater agreement (acceptability)\n\n");
        if self.agreement.is_empty() {
            out.push_str("Fewer than two raters share any item.\n");
        } else {
            out.push_str("| Rater A | Rater B | Items | Agreement | Cohen's kappa |\n|---|---|---:|---:|---:|\n");
            for p in &self.agreement {
                let _ = writeln!(
                    out,
                    "| {} | {} | {} | {:.4} | {:.4} |",
                    p.rater_a, p.rater_b, p.stats.n_items, p.stats.percent_agreement, p.stats.cohen_kappa
                );
            }
        }

        out.push_str("\n## Step references\n\n");
        out.push_str("| Model | Responses | With invalid refs | Invalid refs | Refs per 1000 chars |\n|---|---:|---:|---:|---:|\n");
        for r in &self.step_refs {
            let _ = writeln!(
                out,
                "| {} | {} | {} | {} | {:.2} |",
                r.model_id, r.responses_checked, r.responses_with_invalid_refs, r.invalid_refs, r.mean_density
            );
        }

        out.push_str("\n## Themes\n\n| Theme | Count |\n|---|---:|\n");
        for t in &self.themes.rows {
            let _ = writeln!(out, "| {} | {} |", t.tag, t.count);
        }
        if !self.themes.uncoded_tags.is_empty() {
            let tags: Vec<String> = self.themes.uncoded_tags.iter().map(|(t, n)| format!("{t} ({n})")).collect();
            let _ = writeln!(out, "\nUncoded tags: {}", tags.join(", "));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event_log::SessionKey;
    use crate::evaluation::RejectReason;
    use crate::llm_harness::GenerationStatus;

    fn gen(id: &str, model: &str, task: TaskKind, text: &str, steps: usize) -> GenerationRecord {
        GenerationRecord {
            record_id: id.into(),
            session: SessionKey::new("S1", "a", "f"),
            task,
            model_id: model.into(),
            prompt_hash: String::new(),
            response_text: text.into(),
            latency_ms: 1000,
            response_chars: text.chars().count(),
            created_ts: 0,
            status: GenerationStatus::Ok,
            error_detail: None,
            attempts: 1,
            step_count: steps,
            step_range: None,
        }
    }

    fn rate(id: &str, rater: &str, ok: bool, themes: &[&str]) -> EvaluationRecord {
        EvaluationRecord {
            record_id: id.into(),
            rater_id: rater.into(),
            acceptable: ok,
            reject_reason: (!ok).then_some(RejectReason::Other),
            rubric: None,
            themes: themes.iter().map(|s| s.to_string()).collect(),
            notes: String::new(),
        }
    }

    #[test]
    fn aggregates() {
        let gens = vec![
            gen("g1", "m1", TaskKind::Summary, "Step 001 then Step 009", 3),
            gen("g2", "m1", TaskKind::Feedback, "fine", 3),
            gen("g3", "m2", TaskKind::Feedback, "Step 002", 3),
        ];
        let evals = vec![
            rate("g1", "a", true, &[]),
            rate("g2", "a", false, &["naming"]),
            rate("g3", "a", true, &["incremental_testing"]),
            rate("g1", "b", true, &[]),
            rate("g2", "b", true, &["naming"]),
        ];
        let r = build_report(&gens, &evals, &Codebook::seeded());
        let m1a = r.acceptability.iter().find(|x| x.model_id == "m1" && x.rater_id == "a").unwrap();
        assert_eq!((m1a.summaries_acceptable, m1a.summaries_rated), (1, 1));
        assert_eq!((m1a.feedback_acceptable, m1a.feedback_rated), (0, 1));
        assert_eq!(r.agreement.len(), 1);
        assert_eq!(r.agreement[0].stats.n_items, 2);
        assert_eq!(r.agreement[0].stats.percent_agreement, 0.5);
        let m1 = r.step_refs.iter().find(|x| x.model_id == "m1").unwrap();
        assert_eq!((m1.responses_with_invalid_refs, m1.invalid_refs), (1, 1));
        assert_eq!(r.themes.count("naming"), 2);
        let text = r.render();
        assert!(text.contains("| m1 | a | 1/1 | 0/1 |"));
        assert!(text.contains("| a | b | 2 | 0.5000 |"));
    }
}
