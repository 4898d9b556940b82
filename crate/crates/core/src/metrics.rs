use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::resolution::Crosswalk;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LinkCounts {
    pub true_links: usize,
    pub found_links: usize,
    pub correct_found: usize,
}

/// Recall and precision of the linked pairs against a gold standard.
/// A ratio with a zero denominator is `None`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub recall: Option<f64>,
    pub precision: Option<f64>,
    pub counts: LinkCounts,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn metrics_for_pairs(found: &BTreeSet<(String, String)>, gold: &BTreeSet<(String, String)>) -> MetricsReport {
    let correct = found.intersection(gold).count();
    MetricsReport {
        recall: ratio(correct, gold.len()),
        precision: ratio(correct, found.len()),
        counts: LinkCounts {
            true_links: gold.len(),
            found_links: found.len(),
            correct_found: correct,
        },
    }
}

pub fn compute_metrics(crosswalk: &Crosswalk, gold: &BTreeSet<(String, String)>) -> MetricsReport {
    metrics_for_pairs(&crosswalk.linked_pairs(), gold)
}

#[derive(Debug, thiserror::Error)]
pub enum GoldError {
    #[error("{path}: {reason}")]
    Malformed { path: String, reason: String },
}

/// Reads gold pairs from a CSV with `left_id,right_id` columns.
pub fn load_gold(path: &Path) -> Result<BTreeSet<(String, String)>, GoldError> {
    let bad = |reason: String| GoldError::Malformed {
        path: path.display().to_string(),
        reason,
    };
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| bad(e.to_string()))?;
    let headers = reader.headers().map_err(|e| bad(e.to_string()))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| bad(format!("missing column '{name}'")))
    };
    let (l, r) = (col("left_id")?, col("right_id")?);
    let mut out = BTreeSet::new();
    for row in reader.records() {
        let row = row.map_err(|e| bad(e.to_string()))?;
        let left = row.get(l).unwrap_or("");
        let right = row.get(r).unwrap_or("");
        if left.is_empty() || right.is_empty() {
            return Err(bad("empty id in gold pair".into()));
        }
        out.insert((left.to_string(), right.to_string()));
    }
    Ok(out)
}
