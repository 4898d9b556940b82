//! Per-pass partitioning of the comparison space.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::standardize::NormalizedRecord;

/// Key of the universal block used by passes without blocking.
pub const UNIVERSAL_KEY: &str = "*";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlockKey {
    Zip,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Comparator {
    Name,
    Address,
}

impl fmt::Display for Comparator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Comparator::Name => "name",
            Comparator::Address => "address",
        })
    }
}

fn all_comparators() -> BTreeSet<Comparator> {
    [Comparator::Name, Comparator::Address].into()
}

fn yes() -> bool {
    true
}

/// Settings for one block → score → resolve cycle.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PassConfig {
    pub pass_number: u32,
    pub block_key: BlockKey,
    #[serde(default = "all_comparators")]
    pub allowed_comparators: BTreeSet<Comparator>,
    /// When false only exact attribute matches count.
    #[serde(default = "yes")]
    pub approximate: bool,
    pub auto_accept_priorities: BTreeSet<u8>,
    pub confirm_priorities: BTreeSet<u8>,
}

impl PassConfig {
    /// Zip blocking with approximate matching; everything but the
    /// approximate-only class is accepted automatically.
    pub fn zip_pass(pass_number: u32) -> Self {
        Self {
            pass_number,
            block_key: BlockKey::Zip,
            allowed_comparators: all_comparators(),
            approximate: true,
            auto_accept_priorities: [1, 2, 3, 4, 5].into(),
            confirm_priorities: [6].into(),
        }
    }

    /// No blocking, exact comparisons only; single-attribute matches go to
    /// review.
    pub fn universal_pass(pass_number: u32) -> Self {
        Self {
            pass_number,
            block_key: BlockKey::None,
            allowed_comparators: all_comparators(),
            approximate: false,
            auto_accept_priorities: [1].into(),
            confirm_priorities: [4, 5].into(),
        }
    }

    pub fn default_passes() -> Vec<Self> {
        vec![Self::zip_pass(1), Self::universal_pass(2)]
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.pass_number == 0 {
            return Err("pass_number must be at least 1".into());
        }
        let bad = self
            .auto_accept_priorities
            .iter()
            .chain(&self.confirm_priorities)
            .find(|p| !(1..=6).contains(*p));
        if let Some(p) = bad {
            return Err(format!("pass {}: priority {p} outside 1..=6", self.pass_number));
        }
        if let Some(p) = self
            .auto_accept_priorities
            .intersection(&self.confirm_priorities)
            .next()
        {
            return Err(format!(
                "pass {}: priority {p} is both auto-accepted and confirmed",
                self.pass_number
            ));
        }
        if self.allowed_comparators.is_empty() {
            return Err(format!("pass {}: no comparators allowed", self.pass_number));
        }
        Ok(())
    }
}

/// Records of both sides sharing one key.
#[derive(Debug, Clone)]
pub struct Block<'a> {
    pub key: String,
    pub left: Vec<&'a NormalizedRecord>,
    pub right: Vec<&'a NormalizedRecord>,
}

impl Block<'_> {
    pub fn comparisons(&self) -> u64 {
        self.left.len() as u64 * self.right.len() as u64
    }
}

/// Search-space statistics for one pass. Sizes are counted in rows.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BlockStats {
    pub pass_number: u32,
    pub left_rows: usize,
    pub right_rows: usize,
    pub excluded_left: usize,
    pub excluded_right: usize,
    pub distinct_keys_left: usize,
    pub distinct_keys_right: usize,
    pub shared_keys: usize,
    pub total_comparisons: u64,
    pub mean_left_block_size: f64,
    pub mean_right_block_size: f64,
    pub max_left_block_size: usize,
    pub max_right_block_size: usize,
}

/// Block key of a record, or `None` when the key attribute is missing.
pub fn block_key(record: &NormalizedRecord, config: &PassConfig) -> Option<String> {
    match config.block_key {
        BlockKey::Zip if record.zip.is_empty() => None,
        BlockKey::Zip => Some(record.zip.clone()),
        BlockKey::None => Some(UNIVERSAL_KEY.to_string()),
    }
}

fn partition<'a>(
    records: &'a [NormalizedRecord],
    config: &PassConfig,
) -> (BTreeMap<String, Vec<&'a NormalizedRecord>>, usize) {
    let mut groups: BTreeMap<String, Vec<&NormalizedRecord>> = BTreeMap::new();
    let mut excluded = 0;
    for r in records {
        match block_key(r, config) {
            Some(k) => groups.entry(k).or_default().push(r),
            None => excluded += 1,
        }
    }
    for rows in groups.values_mut() {
        rows.sort_by(|a, b| (a.row_index, &a.entity_id).cmp(&(b.row_index, &b.entity_id)));
    }
    (groups, excluded)
}

fn size_summary(groups: &BTreeMap<String, Vec<&NormalizedRecord>>) -> (f64, usize) {
    if groups.is_empty() {
        return (0.0, 0);
    }
    let total: usize = groups.values().map(Vec::len).sum();
    let max = groups.values().map(Vec::len).max().unwrap_or(0);
    (total as f64 / groups.len() as f64, max)
}

/// Builds one block per key present on both sides, ordered by key.
pub fn build_blocks<'a>(
    left: &'a [NormalizedRecord],
    right: &'a [NormalizedRecord],
    config: &PassConfig,
) -> (Vec<Block<'a>>, BlockStats) {
    let (left_groups, excluded_left) = partition(left, config);
    let (mut right_groups, excluded_right) = partition(right, config);
    let (mean_left, max_left) = size_summary(&left_groups);
    let (mean_right, max_right) = size_summary(&right_groups);

    let mut stats = BlockStats {
        pass_number: config.pass_number,
        left_rows: left.len(),
        right_rows: right.len(),
        excluded_left,
        excluded_right,
        distinct_keys_left: left_groups.len(),
        distinct_keys_right: right_groups.len(),
        mean_left_block_size: mean_left,
        mean_right_block_size: mean_right,
        max_left_block_size: max_left,
        max_right_block_size: max_right,
        ..Default::default()
    };

    let mut blocks = Vec::new();
    for (key, left_rows) in left_groups {
        if let Some(right_rows) = right_groups.remove(&key) {
            let block = Block {
                key,
                left: left_rows,
                right: right_rows,
            };
            stats.total_comparisons += block.comparisons();
            blocks.push(block);
        }
    }
    stats.shared_keys = blocks.len();
    if excluded_left + excluded_right > 0 {
        log::info!(
            "pass {}: {} left and {} right rows have no block key",
            config.pass_number,
            excluded_left,
            excluded_right
        );
    }
    (blocks, stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::Side;

    fn rec(side: Side, id: &str, row: usize, zip: &str) -> NormalizedRecord {
        crate::testutil::plain(side, id, row, "", "", zip)
    }

    #[test]
    fn keys() {
        let zip = PassConfig::zip_pass(1);
        let none = PassConfig::universal_pass(2);
        assert_eq!(block_key(&rec(Side::Left, "a", 0, "77030"), &zip).as_deref(), Some("77030"));
        assert_eq!(block_key(&rec(Side::Left, "a", 0, ""), &zip), None);
        assert_eq!(block_key(&rec(Side::Left, "a", 0, ""), &none).as_deref(), Some("*"));
    }

    #[test]
    fn shared_key_product() {
        let left = vec![rec(Side::Left, "l1", 0, "a"), rec(Side::Left, "l2", 1, "a")];
        let right = vec![
            rec(Side::Right, "r1", 0, "a"),
            rec(Side::Right, "r2", 1, "a"),
            rec(Side::Right, "r3", 2, "a"),
            rec(Side::Right, "r4", 3, "b"),
        ];
        let (blocks, stats) = build_blocks(&left, &right, &PassConfig::zip_pass(1));
        assert_eq!(blocks.len(), 1);
        assert_eq!(stats.total_comparisons, 6);
        assert_eq!(stats.distinct_keys_right, 2);
        assert_eq!(stats.shared_keys, 1);
        assert_eq!(stats.max_right_block_size, 3);
        assert_eq!(stats.mean_right_block_size, 2.0);
    }

    #[test]
    fn disjoint_keys() {
        let left = vec![rec(Side::Left, "l1", 0, "a")];
        let right = vec![rec(Side::Right, "r1", 0, "b")];
        let (blocks, stats) = build_blocks(&left, &right, &PassConfig::zip_pass(1));
        assert!(blocks.is_empty());
        assert_eq!(stats.total_comparisons, 0);
    }

    #[test]
    fn missing_zip_excluded_then_universal() {
        let left = vec![rec(Side::Left, "l1", 0, ""), rec(Side::Left, "l2", 1, "a")];
        let right = vec![rec(Side::Right, "r1", 0, "a")];
        let (_, stats) = build_blocks(&left, &right, &PassConfig::zip_pass(1));
        assert_eq!(stats.excluded_left, 1);
        let (blocks, stats) = build_blocks(&left, &right, &PassConfig::universal_pass(2));
        assert_eq!(blocks.len(), 1);
        assert_eq!(blocks[0].key, "*");
        assert_eq!(stats.excluded_left, 0);
        assert_eq!(stats.total_comparisons, 2);
    }

    #[test]
    fn pass_validation() {
        assert!(PassConfig::zip_pass(1).validate().is_ok());
        let mut p = PassConfig::zip_pass(1);
        p.confirm_priorities.insert(1);
        assert!(p.validate().is_err());
        let mut p = PassConfig::zip_pass(1);
        p.auto_accept_priorities.insert(7);
        assert!(p.validate().is_err());
    }
}
