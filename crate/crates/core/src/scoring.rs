//! Pairwise scoring into a bipartite candidate graph.
//!
//! Each cross-side row pair in a block gets an exact / approximate / no-match
//! level per attribute and a priority from 1 (best) to 6:
//!
//! | name \ address | exact | approx | none |
//! |----------------|-------|--------|------|
//! | exact          | 1     | 2      | 4    |
//! | approx         | 3     | 6      | 6    |
//! | none           | 5     | 6      | -    |
//!
//! Pairs with no match on either attribute are dropped from the graph.

use std::collections::HashSet;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::blocking::{block_key, Block, Comparator, PassConfig};
use crate::standardize::NormalizedRecord;

pub const DEFAULT_DICE_THRESHOLD: f64 = 2.0 / 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchLevel {
    Exact,
    Approx,
    None,
}

impl MatchLevel {
    pub fn as_str(self) -> &'static str {
        match self {
            MatchLevel::Exact => "exact",
            MatchLevel::Approx => "approx",
            MatchLevel::None => "none",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttributeScore {
    pub level: MatchLevel,
    pub dice: f64,
    pub common_tokens: usize,
}

impl AttributeScore {
    pub const NONE: AttributeScore = AttributeScore {
        level: MatchLevel::None,
        dice: 0.0,
        common_tokens: 0,
    };
}

/// Dice thresholds per attribute plus the optional city filter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreSettings {
    pub name_threshold: f64,
    pub addr_threshold: f64,
    /// Drop pairs whose cities are both known and differ.
    pub city_comparator: bool,
}

impl Default for ScoreSettings {
    fn default() -> Self {
        Self {
            name_threshold: DEFAULT_DICE_THRESHOLD,
            addr_threshold: DEFAULT_DICE_THRESHOLD,
            city_comparator: false,
        }
    }
}

/// An edge of the candidate graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredPair {
    pub pass_number: u32,
    pub block_key: String,
    pub left_entity_id: String,
    pub left_row_index: usize,
    pub right_entity_id: String,
    pub right_row_index: usize,
    pub name_score: AttributeScore,
    pub addr_score: AttributeScore,
    pub priority: u8,
}

/// Dice coefficient over distinct-token sets: `2|A∩B| / (|A|+|B|)`.
///
/// Returns the coefficient and the number of shared distinct tokens; two
/// empty lists score 0.
pub fn token_dice<S: AsRef<str>>(a: &[S], b: &[S]) -> (f64, usize) {
    let a: HashSet<&str> = a.iter().map(AsRef::as_ref).collect();
    let b: HashSet<&str> = b.iter().map(AsRef::as_ref).collect();
    let total = a.len() + b.len();
    if total == 0 {
        return (0.0, 0);
    }
    let common = a.intersection(&b).count();
    ((2 * common) as f64 / total as f64, common)
}

/// Compares one attribute of two records.
pub fn compare_attribute(
    a: &NormalizedRecord,
    b: &NormalizedRecord,
    attribute: Comparator,
    threshold: f64,
) -> AttributeScore {
    let (std_a, std_b, approx_a, approx_b) = match attribute {
        Comparator::Name => (
            &a.std_name,
            &b.std_name,
            &a.name_tokens_for_approx,
            &b.name_tokens_for_approx,
        ),
        Comparator::Address => (
            &a.std_address,
            &b.std_address,
            &a.addr_tokens_for_approx,
            &b.addr_tokens_for_approx,
        ),
    };
    if std_a.is_empty() || std_b.is_empty() {
        return AttributeScore::NONE;
    }
    let (dice, common_tokens) = token_dice(approx_a, approx_b);
    if std_a == std_b {
        return AttributeScore {
            level: MatchLevel::Exact,
            dice: 1.0,
            common_tokens,
        };
    }
    let level = if dice >= threshold {
        MatchLevel::Approx
    } else {
        MatchLevel::None
    };
    AttributeScore {
        level,
        dice,
        common_tokens,
    }
}

/// Priority of a (name level, address level) combination; `None` when
/// neither attribute matches.
pub fn priority(name: MatchLevel, addr: MatchLevel) -> Option<u8> {
    use MatchLevel::*;
    Some(match (name, addr) {
        (Exact, Exact) => 1,
        (Exact, Approx) => 2,
        (Approx, Exact) => 3,
        (Exact, None) => 4,
        (None, Exact) => 5,
        (None, None) => return Option::None,
        _ => 6,
    })
}

fn restricted(
    a: &NormalizedRecord,
    b: &NormalizedRecord,
    attribute: Comparator,
    threshold: f64,
    config: &PassConfig,
) -> AttributeScore {
    if !config.allowed_comparators.contains(&attribute) {
        return AttributeScore::NONE;
    }
    let mut score = compare_attribute(a, b, attribute, threshold);
    if score.level == MatchLevel::Approx && !config.approximate {
        score.level = MatchLevel::None;
    }
    score
}

/// Scores one left/right row pair; `None` means the edge is deleted.
pub fn score_pair(
    a: &NormalizedRecord,
    b: &NormalizedRecord,
    config: &PassConfig,
    settings: &ScoreSettings,
) -> Option<ScoredPair> {
    if settings.city_comparator && !a.city.is_empty() && !b.city.is_empty() && a.city != b.city {
        return None;
    }
    let name_score = restricted(a, b, Comparator::Name, settings.name_threshold, config);
    let addr_score = restricted(a, b, Comparator::Address, settings.addr_threshold, config);
    let priority = priority(name_score.level, addr_score.level)?;
    Some(ScoredPair {
        pass_number: config.pass_number,
        block_key: block_key(a, config).unwrap_or_default(),
        left_entity_id: a.entity_id.clone(),
        left_row_index: a.row_index,
        right_entity_id: b.entity_id.clone(),
        right_row_index: b.row_index,
        name_score,
        addr_score,
        priority,
    })
}

/// Scores all cross pairs of all blocks. Blocks are scored in parallel; the
/// output order is (block key, left row, right row).
pub fn build_candidate_graph(
    blocks: &[Block<'_>],
    config: &PassConfig,
    settings: &ScoreSettings,
) -> Vec<ScoredPair> {
    blocks
        .par_iter()
        .map(|block| {
            let mut edges = Vec::new();
            for l in &block.left {
                for r in &block.right {
                    if let Some(mut pair) = score_pair(l, r, config, settings) {
                        pair.block_key = block.key.clone();
                        edges.push(pair);
                    }
                }
            }
            edges
        })
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect()
}

/// Writes the candidate graph as CSV for debugging.
pub fn write_candidate_graph(path: &Path, pairs: &[ScoredPair]) -> std::io::Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(
        out,
        "pass,block_key,left_id,left_row,right_id,right_row,name_level,name_dice,addr_level,addr_dice,priority"
    )?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    for p in pairs {
        w.write_record([
            p.pass_number.to_string(),
            p.block_key.clone(),
            p.left_entity_id.clone(),
            p.left_row_index.to_string(),
            p.right_entity_id.clone(),
            p.right_row_index.to_string(),
            p.name_score.level.as_str().to_string(),
            p.name_score.dice.to_string(),
            p.addr_score.level.as_str().to_string(),
            p.addr_score.dice.to_string(),
            p.priority.to_string(),
        ])?;
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blocking::build_blocks;
    use crate::ingest::Side;
    use crate::standardize::tokenize;
    use crate::testutil::{nrec, plain};

    #[test]
    fn dice_worked_example() {
        let (d, common) = token_dice(&tokenize("865 deshong"), &tokenize("865 deshong 5th floor"));
        assert_eq!(common, 2);
        assert_eq!(d, 2.0 / 3.0);
    }

    #[test]
    fn dice_identity_and_disjoint() {
        let a = tokenize("baylor plano");
        assert_eq!(token_dice(&a, &a).0, 1.0);
        assert_eq!(token_dice(&a, &tokenize("memorial hermann")).0, 0.0);
        let empty: Vec<String> = vec![];
        assert_eq!(token_dice(&empty, &empty), (0.0, 0));
    }

    #[test]
    fn dice_uses_distinct_tokens() {
        assert_eq!(token_dice(&["a", "a", "b"], &["a", "b"]).0, 1.0);
    }

    #[test]
    fn exact_address() {
        let a = nrec(Side::Left, "l", 0, "", "1200 Main Street", "1");
        let b = nrec(Side::Right, "r", 0, "", "1200 main st.", "1");
        let s = compare_attribute(&a, &b, Comparator::Address, DEFAULT_DICE_THRESHOLD);
        assert_eq!(s.level, MatchLevel::Exact);
        assert_eq!(s.dice, 1.0);
    }

    #[test]
    fn approx_address_at_threshold() {
        let a = nrec(Side::Left, "l", 0, "", "865 Deshong", "1");
        let b = nrec(Side::Right, "r", 0, "", "865 Deshong 5th Floor", "1");
        let s = compare_attribute(&a, &b, Comparator::Address, DEFAULT_DICE_THRESHOLD);
        assert_eq!(s.level, MatchLevel::Approx);
        assert_eq!(s.dice, 2.0 / 3.0);
    }

    #[test]
    fn ignored_suffixes_do_not_count() {
        let a = nrec(Side::Left, "l", 0, "", "1200 Main Street", "1");
        let b = nrec(Side::Right, "r", 0, "", "4500 Oak Boulevard", "1");
        assert_eq!(a.addr_tokens_for_approx, vec!["1200", "main"]);
        let s = compare_attribute(&a, &b, Comparator::Address, DEFAULT_DICE_THRESHOLD);
        assert_eq!(s.level, MatchLevel::None);
        assert_eq!(s.dice, 0.0);

        // a dropped suffix is still an approximate match
        let c = nrec(Side::Right, "r", 0, "", "1200 Main", "1");
        let s = compare_attribute(&a, &c, Comparator::Address, DEFAULT_DICE_THRESHOLD);
        assert_eq!(s.level, MatchLevel::Approx);
        assert_eq!(s.dice, 1.0);
    }

    #[test]
    fn empty_scores_none() {
        let a = plain(Side::Left, "l", 0, "", "", "1");
        let b = plain(Side::Right, "r", 0, "", "", "1");
        assert_eq!(compare_attribute(&a, &b, Comparator::Name, 0.5).level, MatchLevel::None);
    }

    #[test]
    fn priority_table() {
        use MatchLevel::*;
        assert_eq!(priority(Exact, Exact), Some(1));
        assert_eq!(priority(Exact, Approx), Some(2));
        assert_eq!(priority(Approx, Exact), Some(3));
        assert_eq!(priority(Exact, None), Some(4));
        assert_eq!(priority(None, Exact), Some(5));
        assert_eq!(priority(Approx, Approx), Some(6));
        assert_eq!(priority(Approx, None), Some(6));
        assert_eq!(priority(None, Approx), Some(6));
        assert_eq!(priority(None, None), Option::None);
    }

    #[test]
    fn priority_is_monotone() {
        use MatchLevel::*;
        let up = |l: MatchLevel| match l {
            None => Approx,
            _ => Exact,
        };
        for n in [Exact, Approx, None] {
            for a in [Exact, Approx, None] {
                let base = priority(n, a).unwrap_or(7);
                assert!(priority(up(n), a).unwrap_or(7) <= base);
                assert!(priority(n, up(a)).unwrap_or(7) <= base);
            }
        }
    }

    #[test]
    fn score_pair_classes() {
        let cfg = PassConfig::zip_pass(1);
        let s = ScoreSettings::default();
        let l = plain(Side::Left, "l", 0, "baylor plano", "1200 main", "1");
        let exact = plain(Side::Right, "r", 0, "baylor plano", "1200 main", "1");
        assert_eq!(score_pair(&l, &exact, &cfg, &s).unwrap().priority, 1);
        let name_only = plain(Side::Right, "r", 0, "baylor plano", "9 elm", "1");
        assert_eq!(score_pair(&l, &name_only, &cfg, &s).unwrap().priority, 4);
        let approx = plain(Side::Right, "r", 0, "baylor plano west", "1200 main 5th", "1");
        assert_eq!(score_pair(&l, &approx, &cfg, &s).unwrap().priority, 6);
        let nothing = plain(Side::Right, "r", 0, "memorial hermann", "9 elm", "1");
        assert!(score_pair(&l, &nothing, &cfg, &s).is_none());
    }

    #[test]
    fn exact_only_pass_drops_approx() {
        let cfg = PassConfig::universal_pass(2);
        let s = ScoreSettings::default();
        let l = plain(Side::Left, "l", 0, "baylor plano", "1200 main", "1");
        let r = plain(Side::Right, "r", 0, "baylor plano west", "1200 main", "2");
        let p = score_pair(&l, &r, &cfg, &s).unwrap();
        assert_eq!(p.priority, 5);
        assert_eq!(p.block_key, "*");
        let r = plain(Side::Right, "r", 0, "baylor plano west", "1200 main 5th", "2");
        assert!(score_pair(&l, &r, &cfg, &s).is_none());
    }

    #[test]
    fn comparator_restriction() {
        let mut cfg = PassConfig::zip_pass(1);
        cfg.allowed_comparators = [Comparator::Address].into();
        let l = plain(Side::Left, "l", 0, "baylor plano", "1200 main", "1");
        let r = plain(Side::Right, "r", 0, "baylor plano", "9 elm", "1");
        assert!(score_pair(&l, &r, &cfg, &ScoreSettings::default()).is_none());
    }

    #[test]
    fn city_filter() {
        let cfg = PassConfig::zip_pass(1);
        let mut l = plain(Side::Left, "l", 0, "baylor", "1 main", "1");
        let mut r = plain(Side::Right, "r", 0, "baylor", "1 main", "1");
        l.city = "dallas".into();
        r.city = "plano".into();
        let on = ScoreSettings {
            city_comparator: true,
            ..Default::default()
        };
        assert!(score_pair(&l, &r, &cfg, &on).is_none());
        assert!(score_pair(&l, &r, &cfg, &ScoreSettings::default()).is_some());
    }

    #[test]
    fn graph_order_and_bounds() {
        let left = vec![
            plain(Side::Left, "l1", 0, "a b", "1 x", "z"),
            plain(Side::Left, "l2", 1, "a b", "2 y", "z"),
        ];
        let right = vec![
            plain(Side::Right, "r1", 0, "a b", "1 x", "z"),
            plain(Side::Right, "r2", 1, "a b", "3 q", "z"),
            plain(Side::Right, "r3", 2, "c d", "2 y", "z"),
        ];
        let cfg = PassConfig::zip_pass(1);
        let (blocks, _) = build_blocks(&left, &right, &cfg);
        let g = build_candidate_graph(&blocks, &cfg, &ScoreSettings::default());
        assert!(g.len() <= 6);
        let keys: Vec<_> = g.iter().map(|p| (p.left_row_index, p.right_row_index)).collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
        assert_eq!(g[0].priority, 1);
    }
}
