//! Human Intelligent Tasks: the uncertain pairs handed to reviewers, and the
//! decisions that come back.

mod audit;
mod files;

pub use audit::{audit_append, digest, AuditEvent};
pub use files::{
    append_resolution, emit_hits, ingest_resolutions, read_hits, read_resolution_rows,
    write_resolutions, Ingested, UnknownHits, HIT_HEADER, RESOLUTION_HEADER,
};

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ingest::Side;
use crate::resolution::{DecisionStatus, MatchDecision};
use crate::scoring::{token_dice, MatchLevel};
use crate::standardize::NormalizedRecord;

/// Candidate cap for manual-match HITs.
pub const MANUAL_CANDIDATE_CAP: usize = 200;

#[derive(Debug, thiserror::Error)]
pub enum HitError {
    #[error("unknown HIT id '{0}'")]
    UnknownHitId(String),
    #[error("invalid decision: {0}")]
    InvalidDecision(String),
    #[error("HIT '{0}': a match decision needs chosen_right_id")]
    MissingChosenCandidate(String),
    #[error("HIT '{hit}': '{chosen}' is not one of its candidates")]
    ChosenNotCandidate { hit: String, chosen: String },
    #[error("HIT '{0}' has conflicting resolutions with the same timestamp")]
    ConflictingDuplicate(String),
    #[error("HIT '{hit}': timestamp '{value}' is not RFC 3339")]
    InvalidTimestamp { hit: String, value: String },
    #[error("{path}: {reason}")]
    Malformed { path: PathBuf, reason: String },
    #[error("I/O failure on {path}: {source}")]
    IoFailure {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HitKind {
    ConfirmProposed,
    ResolveAmbiguous,
    ManualMatch,
}

impl HitKind {
    pub fn as_str(self) -> &'static str {
        match self {
            HitKind::ConfirmProposed => "confirm_proposed",
            HitKind::ResolveAmbiguous => "resolve_ambiguous",
            HitKind::ManualMatch => "manual_match",
        }
    }
}

impl fmt::Display for HitKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for HitKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "confirm_proposed" => Ok(HitKind::ConfirmProposed),
            "resolve_ambiguous" => Ok(HitKind::ResolveAmbiguous),
            "manual_match" => Ok(HitKind::ManualMatch),
            other => Err(format!("unknown HIT kind '{other}'")),
        }
    }
}

/// The fields a reviewer sees for one record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordDisplay {
    pub entity_id: String,
    pub name: String,
    pub std_name: String,
    pub address: String,
    pub std_address: String,
    pub zip: String,
}

impl RecordDisplay {
    pub fn of(r: &NormalizedRecord) -> Self {
        Self {
            entity_id: r.entity_id.clone(),
            name: r.raw_name.clone(),
            std_name: r.std_name.clone(),
            address: r.raw_address.clone(),
            std_address: r.std_address.clone(),
            zip: r.zip.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HitCandidate {
    pub right: RecordDisplay,
    /// 0 for manual-match suggestions.
    pub priority: u8,
    pub name_dice: f64,
    pub addr_dice: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub hit_id: String,
    pub kind: HitKind,
    pub pass_number: u32,
    pub left: RecordDisplay,
    pub candidates: Vec<HitCandidate>,
    pub reason: String,
}

impl Hit {
    pub fn has_candidate(&self, right_id: &str) -> bool {
        self.candidates.iter().any(|c| c.right.entity_id == right_id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Match,
    Nonmatch,
    NoLink,
    Defer,
}

impl Decision {
    pub fn as_str(self) -> &'static str {
        match self {
            Decision::Match => "match",
            Decision::Nonmatch => "nonmatch",
            Decision::NoLink => "no_link",
            Decision::Defer => "defer",
        }
    }
}

impl std::str::FromStr for Decision {
    type Err = HitError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "match" => Ok(Decision::Match),
            "nonmatch" => Ok(Decision::Nonmatch),
            "no_link" => Ok(Decision::NoLink),
            "defer" => Ok(Decision::Defer),
            other => Err(HitError::InvalidDecision(format!("'{other}'"))),
        }
    }
}

/// A reviewer's decision on one HIT. `timestamp` is RFC 3339 (or empty).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HitResolution {
    pub hit_id: String,
    pub decision: Decision,
    pub chosen_right_entity_id: Option<String>,
    pub reviewer: String,
    pub note: String,
    pub timestamp: String,
}

/// Content-derived HIT id: changes exactly when the uncertainty it
/// describes changes.
pub fn hit_id(pass_number: u32, kind: HitKind, left_id: &str, right_ids: &[&str]) -> String {
    let mut rights: Vec<&str> = right_ids.to_vec();
    rights.sort_unstable();
    let mut h = Sha256::new();
    h.update(pass_number.to_string());
    h.update([0x1f]);
    h.update(kind.as_str());
    h.update([0x1f]);
    h.update(left_id);
    for r in rights {
        h.update([0x1e]);
        h.update(r);
    }
    format!("H{}", &hex::encode(h.finalize())[..12])
}

/// Lookup of normalized rows by side, entity and row.
pub struct RecordIndex<'a> {
    rows: HashMap<(Side, &'a str, usize), &'a NormalizedRecord>,
    first: HashMap<(Side, &'a str), &'a NormalizedRecord>,
    tokens: HashMap<(Side, &'a str), BTreeSet<&'a str>>,
}

impl<'a> RecordIndex<'a> {
    pub fn new<I: IntoIterator<Item = &'a NormalizedRecord>>(records: I) -> Self {
        let mut rows = HashMap::new();
        let mut first: HashMap<(Side, &str), &NormalizedRecord> = HashMap::new();
        let mut tokens: HashMap<(Side, &str), BTreeSet<&str>> = HashMap::new();
        for r in records {
            let key = (r.side, r.entity_id.as_str());
            rows.insert((r.side, r.entity_id.as_str(), r.row_index), r);
            first
                .entry(key)
                .and_modify(|cur| {
                    if r.row_index < cur.row_index {
                        *cur = r;
                    }
                })
                .or_insert(r);
            tokens.entry(key).or_default().extend(
                r.name_tokens_for_approx
                    .iter()
                    .chain(&r.addr_tokens_for_approx)
                    .map(String::as_str),
            );
        }
        Self { rows, first, tokens }
    }

    pub fn row(&self, side: Side, entity: &str, row: usize) -> Option<&'a NormalizedRecord> {
        self.rows.get(&(side, entity, row)).copied()
    }

    pub fn first_row(&self, side: Side, entity: &str) -> Option<&'a NormalizedRecord> {
        self.first.get(&(side, entity)).copied()
    }

    fn display(&self, side: Side, entity: &str, row: usize) -> RecordDisplay {
        self.row(side, entity, row)
            .or_else(|| self.first_row(side, entity))
            .map(RecordDisplay::of)
            .unwrap_or_else(|| RecordDisplay {
                entity_id: entity.to_string(),
                name: String::new(),
                std_name: String::new(),
                address: String::new(),
                std_address: String::new(),
                zip: String::new(),
            })
    }

    fn shared_tokens(&self, left: &str, right: &str) -> usize {
        match (
            self.tokens.get(&(Side::Left, left)),
            self.tokens.get(&(Side::Right, right)),
        ) {
            (Some(a), Some(b)) => a.intersection(b).count(),
            _ => 0,
        }
    }
}

fn describe(level: MatchLevel, dice: f64) -> String {
    match level {
        MatchLevel::Approx => format!("approx (dice {dice:.2})"),
        other => other.as_str().to_string(),
    }
}

fn candidate_of(d: &MatchDecision, index: &RecordIndex<'_>) -> HitCandidate {
    let p = &d.best_pair;
    HitCandidate {
        right: index.display(Side::Right, &d.right_entity_id, p.right_row_index),
        priority: d.priority,
        name_dice: p.name_score.dice,
        addr_dice: p.addr_score.dice,
    }
}

/// HITs for the proposed and ambiguous decisions of one pass, ordered by
/// (kind, left id).
pub fn build_pass_hits(decisions: &[MatchDecision], index: &RecordIndex<'_>, pass_number: u32) -> Vec<Hit> {
    let mut hits = Vec::new();
    let mut ambiguous: BTreeMap<&str, Vec<&MatchDecision>> = BTreeMap::new();
    for d in decisions {
        match d.status {
            DecisionStatus::ProposedMatch => {
                let p = &d.best_pair;
                hits.push(Hit {
                    hit_id: hit_id(pass_number, HitKind::ConfirmProposed, &d.left_entity_id, &[&d.right_entity_id]),
                    kind: HitKind::ConfirmProposed,
                    pass_number,
                    left: index.display(Side::Left, &d.left_entity_id, p.left_row_index),
                    candidates: vec![candidate_of(d, index)],
                    reason: format!(
                        "priority {}: name {}, address {}",
                        d.priority,
                        describe(p.name_score.level, p.name_score.dice),
                        describe(p.addr_score.level, p.addr_score.dice)
                    ),
                });
            }
            DecisionStatus::HitAmbiguous => ambiguous.entry(&d.left_entity_id).or_default().push(d),
            _ => {}
        }
    }
    for (left, mut group) in ambiguous {
        group.sort_by(|a, b| {
            crate::resolution::closeness(&a.best_pair, &b.best_pair)
                .then_with(|| a.right_entity_id.cmp(&b.right_entity_id))
        });
        let rights: Vec<&str> = group.iter().map(|d| d.right_entity_id.as_str()).collect();
        let reason = if group[0].degree_left > 1 {
            format!("left entity has {} candidates", group[0].degree_left)
        } else {
            let crowded = group.iter().max_by_key(|d| d.degree_right).unwrap();
            format!(
                "right entity {} has {} candidate left entities",
                crowded.right_entity_id, crowded.degree_right
            )
        };
        hits.push(Hit {
            hit_id: hit_id(pass_number, HitKind::ResolveAmbiguous, left, &rights),
            kind: HitKind::ResolveAmbiguous,
            pass_number,
            left: index.display(Side::Left, left, group[0].best_pair.left_row_index),
            candidates: group.iter().map(|d| candidate_of(d, index)).collect(),
            reason,
        });
    }
    hits.sort_by(|a, b| (a.kind, &a.left.entity_id).cmp(&(b.kind, &b.left.entity_id)));
    hits
}

/// Manual-match HITs for residual left entities. Each lists up to `cap`
/// unmatched right entities, most shared tokens first.
pub fn build_manual_hits(
    residual_left: &[String],
    residual_right: &[String],
    index: &RecordIndex<'_>,
    pass_number: u32,
    cap: usize,
) -> Vec<Hit> {
    let mut hits: Vec<Hit> = residual_left
        .iter()
        .map(|left| {
            let mut ranked: Vec<(usize, &String)> = residual_right
                .iter()
                .map(|r| (index.shared_tokens(left, r), r))
                .collect();
            ranked.sort_by(|a, b| b.0.cmp(&a.0).then_with(|| a.1.cmp(b.1)));
            ranked.truncate(cap);
            let left_row = index.first_row(Side::Left, left);
            let candidates: Vec<HitCandidate> = ranked
                .iter()
                .map(|(_, r)| {
                    let right_row = index.first_row(Side::Right, r);
                    let (name_dice, addr_dice) = match (left_row, right_row) {
                        (Some(a), Some(b)) => (
                            token_dice(&a.name_tokens_for_approx, &b.name_tokens_for_approx).0,
                            token_dice(&a.addr_tokens_for_approx, &b.addr_tokens_for_approx).0,
                        ),
                        _ => (0.0, 0.0),
                    };
                    HitCandidate {
                        right: index.display(Side::Right, r, right_row.map_or(0, |x| x.row_index)),
                        priority: 0,
                        name_dice,
                        addr_dice,
                    }
                })
                .collect();
            let rights: Vec<&str> = candidates.iter().map(|c| c.right.entity_id.as_str()).collect();
            Hit {
                hit_id: hit_id(pass_number, HitKind::ManualMatch, left, &rights),
                kind: HitKind::ManualMatch,
                pass_number,
                left: index.display(Side::Left, left, left_row.map_or(0, |x| x.row_index)),
                reason: format!(
                    "no automatic candidate after pass {pass_number}; {} of {} unmatched right entities listed",
                    candidates.len(),
                    residual_right.len()
                ),
                candidates,
            }
        })
        .collect();
    hits.sort_by(|a, b| a.left.entity_id.cmp(&b.left.entity_id));
    hits
}

/// Checks a resolution against the HIT it answers.
pub fn validate_resolution(hit: &Hit, res: &HitResolution) -> Result<(), HitError> {
    if res.hit_id != hit.hit_id {
        return Err(HitError::UnknownHitId(res.hit_id.clone()));
    }
    if res.decision != Decision::Match {
        return Ok(());
    }
    match (&res.chosen_right_entity_id, hit.kind) {
        (None, HitKind::ConfirmProposed) => Ok(()),
        (None, _) => Err(HitError::MissingChosenCandidate(hit.hit_id.clone())),
        (Some(_), HitKind::ManualMatch) => Ok(()),
        (Some(c), _) if hit.has_candidate(c) => Ok(()),
        (Some(c), _) => Err(HitError::ChosenNotCandidate {
            hit: hit.hit_id.clone(),
            chosen: c.clone(),
        }),
    }
}

fn parse_timestamp(res: &HitResolution) -> Result<Option<chrono::DateTime<chrono::FixedOffset>>, HitError> {
    if res.timestamp.trim().is_empty() {
        return Ok(None);
    }
    chrono::DateTime::parse_from_rfc3339(res.timestamp.trim())
        .map(Some)
        .map_err(|_| HitError::InvalidTimestamp {
            hit: res.hit_id.clone(),
            value: res.timestamp.clone(),
        })
}

type Stamp = chrono::DateTime<chrono::FixedOffset>;

/// Collapses an append-only resolution log to one resolution per HIT.
///
/// Identical repeats are dropped. A differing row supersedes the current one
/// only if its timestamp is strictly later; otherwise the log is ambiguous.
/// Output keeps first-appearance order of hit ids.
pub fn effective_resolutions(rows: &[HitResolution]) -> Result<Vec<HitResolution>, HitError> {
    let mut order: Vec<&str> = Vec::new();
    let mut groups: HashMap<&str, Vec<(Option<Stamp>, &HitResolution)>> = HashMap::new();
    for r in rows {
        let ts = parse_timestamp(r)?;
        let g = groups.entry(&r.hit_id).or_default();
        if g.is_empty() {
            order.push(&r.hit_id);
        }
        g.push((ts, r));
    }
    let same = |a: &HitResolution, b: &HitResolution| {
        a.decision == b.decision && a.chosen_right_entity_id == b.chosen_right_entity_id
    };
    order
        .into_iter()
        .map(|id| {
            let mut g = groups.remove(id).unwrap_or_default();
            g.sort_by_key(|a| a.0);
            let mut current = g[0];
            for next in &g[1..] {
                if same(current.1, next.1) {
                    continue;
                }
                if next.0 > current.0 {
                    current = *next;
                } else {
                    return Err(HitError::ConflictingDuplicate(id.to_string()));
                }
            }
            Ok(current.1.clone())
        })
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HitCounts {
    pub confirm_proposed: usize,
    pub resolve_ambiguous: usize,
    pub manual_match: usize,
}

impl HitCounts {
    pub fn of(hits: &[Hit]) -> Self {
        let mut c = Self::default();
        for h in hits {
            match h.kind {
                HitKind::ConfirmProposed => c.confirm_proposed += 1,
                HitKind::ResolveAmbiguous => c.resolve_ambiguous += 1,
                HitKind::ManualMatch => c.manual_match += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.confirm_proposed + self.resolve_ambiguous + self.manual_match
    }
}
