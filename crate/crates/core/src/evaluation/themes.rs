use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use super::{EvalError, EvaluationRecord};

pub const UNCODED: &str = "uncoded";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Theme {
    pub tag: String,
    pub description: String,
}

/// Ordered, duplicate-free list of theme tags.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Codebook {
    themes: Vec<Theme>,
    /// Tags added on top of the seeded list, in the order they were added.
    #[serde(default)]
    extensions: Vec<String>,
}

impl Codebook {
    pub fn new(themes: Vec<Theme>) -> Result<Self, EvalError> {
        let mut seen = HashSet::new();
        for t in &themes {
            if t.tag == UNCODED || !seen.insert(t.tag.as_str()) {
                return Err(EvalError::Invalid(format!("duplicate or reserved theme tag '{}'", t.tag)));
            }
        }
        Ok(Codebook {
            themes,
            extensions: Vec::new(),
        })
    }

    /// Process-improvement themes that recur in model feedback.
    pub fn seeded() -> Self {
        let themes = [
            ("incremental_testing", "incremental implementation and testing of the solution"),
            ("planning_ahead", "planning ahead before writing code"),
            ("reducing_outputs", "reducing unnecessary outputs and comments"),
            ("removing_commented_code", "removing commented out code"),
            ("adding_comments", "adding comments"),
            ("functions", "dividing code into functions"),
            ("naming", "variable and function naming"),
        ]
        .into_iter()
        .map(|(tag, description)| Theme {
            tag: tag.into(),
            description: description.into(),
        })
        .collect();
        Codebook::new(themes).expect("seeded tags are unique")
    }

    pub fn extend(&mut self, tag: &str, description: &str) -> Result<(), EvalError> {
        if tag == UNCODED || self.contains(tag) {
            return Err(EvalError::Invalid(format!("duplicate or reserved theme tag '{tag}'")));
        }
        self.themes.push(Theme {
            tag: tag.into(),
            description: description.into(),
        });
        self.extensions.push(tag.into());
        Ok(())
    }

    pub fn themes(&self) -> &[Theme] {
        &self.themes
    }

    pub fn extensions(&self) -> &[String] {
        &self.extensions
    }

    pub fn contains(&self, tag: &str) -> bool {
        self.themes.iter().any(|t| t.tag == tag)
    }
}

impl Default for Codebook {
    fn default() -> Self {
        Self::seeded()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThemeCount {
    pub tag: String,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThemeFrequencies {
    /// Every codebook tag plus the `uncoded` bucket, by descending count;
    /// ties keep codebook order with `uncoded` last.
    pub rows: Vec<ThemeCount>,
    /// The literal tags that landed in the `uncoded` bucket.
    pub uncoded_tags: BTreeMap<String, usize>,
}

impl ThemeFrequencies {
    pub fn count(&self, tag: &str) -> usize {
        self.rows.iter().find(|r| r.tag == tag).map_or(0, |r| r.count)
    }
}

pub fn theme_frequencies(evaluations: &[EvaluationRecord], codebook: &Codebook) -> ThemeFrequencies {
    let mut counts: Vec<ThemeCount> = codebook
        .themes()
        .iter()
        .map(|t| ThemeCount {
            tag: t.tag.clone(),
            count: 0,
        })
        .collect();
    let mut uncoded_tags: BTreeMap<String, usize> = BTreeMap::new();
    for e in evaluations {
        for tag in &e.themes {
            match counts.iter_mut().find(|c| &c.tag == tag) {
                Some(c) => c.count += 1,
                None => *uncoded_tags.entry(tag.clone()).or_default() += 1,
            }
        }
    }
    counts.push(ThemeCount {
        tag: UNCODED.into(),
        count: uncoded_tags.values().sum(),
    });
    counts.sort_by_key(|c| std::cmp::Reverse(c.count));
    ThemeFrequencies {
        rows: counts,
        uncoded_tags,
    }
}
