use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::GenerationRecord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelStats {
    pub model_id: String,
    /// Mean latency over ok records, in seconds; absent with no ok records.
    pub mean_latency_s: Option<f64>,
    pub mean_response_chars: Option<f64>,
    pub count_ok: usize,
    pub count_error: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StatsTable {
    pub rows: Vec<ModelStats>,
}

impl StatsTable {
    pub fn get(&self, model_id: &str) -> Option<&ModelStats> {
        self.rows.iter().find(|r| r.model_id == model_id)
    }
}

/// Per-model means of latency and response length over successful records.
pub fn generation_stats(records: &[GenerationRecord]) -> StatsTable {
    #[derive(Default)]
    struct Acc {
        latency_ms: u128,
        chars: u128,
        ok: usize,
        err: usize,
    }
    let mut by_model: BTreeMap<&str, Acc> = BTreeMap::new();
    for r in records {
        let acc = by_model.entry(&r.model_id).or_default();
        if r.is_ok() {
            acc.ok += 1;
            acc.latency_ms += u128::from(r.latency_ms);
            acc.chars += r.response_chars as u128;
        } else {
            acc.err += 1;
        }
    }
    let rows = by_model
        .into_iter()
        .map(|(model, acc)| {
            let n = acc.ok as f64;
            ModelStats {
                model_id: model.to_owned(),
                mean_latency_s: (acc.ok > 0).then(|| acc.latency_ms as f64 / 1000.0 / n),
                mean_response_chars: (acc.ok > 0).then(|| acc.chars as f64 / n),
                count_ok: acc.ok,
                count_error: acc.err,
            }
        })
        .collect();
    StatsTable { rows }
}

impl fmt::Display for StatsTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let fmt_opt = |v: Option<f64>, prec: usize| v.map_or_else(|| "-".to_string(), |x| format!("{x:.prec$}"));
        writeln!(
            f,
            "| Model | Average response time (s) | Average response length (chars) | OK | Errors |"
        )?;
        writeln!(f, "|---|---:|---:|---:|---:|")?;
        for r in &self.rows {
            writeln!(
                f,
                "| {} | {} | {} | {} | {} |",
                r.model_id,
                fmt_opt(r.mean_latency_s, 1),
                fmt_opt(r.mean_response_chars, 0),
                r.count_ok,
                r.count_error
            )?;
        }
        Ok(())
    }
}
