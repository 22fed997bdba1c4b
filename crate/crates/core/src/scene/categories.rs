use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

/// Floor-standing vs wall-mounted object categories. Only standers are
/// eligible for insertion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CategoryTable {
    pub standers: BTreeSet<String>,
    pub hangers: BTreeSet<String>,
}

const DEFAULT_STANDERS: &[&str] = &[
    "chair",
    "armchair",
    "cabinet",
    "table",
    "desk",
    "coffee table",
    "sofa",
    "couch",
    "bed",
    "nightstand",
    "dresser",
    "bookshelf",
    "ottoman",
    "stool",
    "trash can",
];

const DEFAULT_HANGERS: &[&str] = &["window", "curtain", "picture", "mirror", "whiteboard", "shelf"];

impl Default for CategoryTable {
    fn default() -> Self {
        Self {
            standers: DEFAULT_STANDERS.iter().map(|s| s.to_string()).collect(),
            hangers: DEFAULT_HANGERS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl CategoryTable {
    /// Matches the full lowercase label first, then its last word
    /// (so "office chair" resolves to "chair").
    pub fn is_stander(&self, label: &str) -> bool {
        let label = label.trim().to_lowercase();
        if self.hangers.contains(&label) {
            return false;
        }
        if self.standers.contains(&label) {
            return true;
        }
        match label.rsplit(' ').next() {
            Some(last) if last != label => self.standers.contains(last) && !self.hangers.contains(last),
            _ => false,
        }
    }
}
