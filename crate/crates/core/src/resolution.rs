//! Turning a scored candidate graph into match decisions and a 1-to-1
//! crosswalk.
//!
//! Row-level edges are first collapsed to one edge per entity pair (the
//! closest link). An entity edge is only decided automatically when both of
//! its endpoints have degree one in that collapsed graph; anything touching
//! a higher-degree node goes to human review.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::blocking::PassConfig;
use crate::hits::{validate_resolution, Decision, Hit, HitError, HitKind, HitResolution};
use crate::ingest::EntityView;
use crate::scoring::ScoredPair;

#[derive(Debug, thiserror::Error)]
pub enum ResolutionError {
    #[error(
        "pass {pass}: priority {priority} is neither auto-accepted nor confirmed \
         (edge {left} - {right}); fix the pass configuration"
    )]
    ConfigGap {
        pass: u32,
        priority: u8,
        left: String,
        right: String,
    },
    #[error("unknown HIT id '{0}'")]
    UnknownHitId(String),
    #[error("conflicting resolutions for HIT '{0}'")]
    ConflictingResolutions(String),
    #[error("1-to-1 violation: {0}")]
    OneToOneViolation(String),
    #[error("unknown {side} entity id '{id}'")]
    UnknownEntityId { side: &'static str, id: String },
    #[error(transparent)]
    Hit(#[from] HitError),
}

/// The closest row-level link between two entities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityEdge {
    pub left_entity_id: String,
    pub right_entity_id: String,
    pub best_pair: ScoredPair,
    pub pass_number: u32,
}

impl EntityEdge {
    pub fn priority(&self) -> u8 {
        self.best_pair.priority
    }
}

/// `Less` when `a` is the closer link.
pub fn closeness(a: &ScoredPair, b: &ScoredPair) -> Ordering {
    a.priority
        .cmp(&b.priority)
        .then_with(|| b.name_score.dice.total_cmp(&a.name_score.dice))
        .then_with(|| b.addr_score.dice.total_cmp(&a.addr_score.dice))
        .then_with(|| a.left_row_index.cmp(&b.left_row_index))
        .then_with(|| a.right_row_index.cmp(&b.right_row_index))
}

/// Keeps the closest row edge for every entity pair; output is sorted by
/// (left id, right id).
pub fn collapse_to_entity_edges(pairs: &[ScoredPair]) -> Vec<EntityEdge> {
    let mut best: BTreeMap<(&str, &str), &ScoredPair> = BTreeMap::new();
    for p in pairs {
        best.entry((&p.left_entity_id, &p.right_entity_id))
            .and_modify(|cur| {
                if closeness(p, cur) == Ordering::Less {
                    *cur = p;
                }
            })
            .or_insert(p);
    }
    best.into_values()
        .map(|p| EntityEdge {
            left_entity_id: p.left_entity_id.clone(),
            right_entity_id: p.right_entity_id.clone(),
            best_pair: p.clone(),
            pass_number: p.pass_number,
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionStatus {
    AutoMatch,
    ProposedMatch,
    HitAmbiguous,
    Confirmed,
    Rejected,
}

impl fmt::Display for DecisionStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DecisionStatus::AutoMatch => "auto_match",
            DecisionStatus::ProposedMatch => "proposed_match",
            DecisionStatus::HitAmbiguous => "hit_ambiguous",
            DecisionStatus::Confirmed => "confirmed",
            DecisionStatus::Rejected => "rejected",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchDecision {
    pub left_entity_id: String,
    pub right_entity_id: String,
    pub status: DecisionStatus,
    pub priority: u8,
    pub pass_number: u32,
    pub degree_left: usize,
    pub degree_right: usize,
    pub best_pair: ScoredPair,
}

/// Classifies every entity edge by the 1-to-1 rule.
pub fn extract_one_to_one(
    edges: &[EntityEdge],
    config: &PassConfig,
) -> Result<Vec<MatchDecision>, ResolutionError> {
    let mut left_degree: HashMap<&str, usize> = HashMap::new();
    let mut right_degree: HashMap<&str, usize> = HashMap::new();
    for e in edges {
        *left_degree.entry(&e.left_entity_id).or_default() += 1;
        *right_degree.entry(&e.right_entity_id).or_default() += 1;
    }
    edges
        .iter()
        .map(|e| {
            let priority = e.priority();
            let degree_left = left_degree[e.left_entity_id.as_str()];
            let degree_right = right_degree[e.right_entity_id.as_str()];
            let status = if degree_left > 1 || degree_right > 1 {
                DecisionStatus::HitAmbiguous
            } else if config.auto_accept_priorities.contains(&priority) {
                DecisionStatus::AutoMatch
            } else if config.confirm_priorities.contains(&priority) {
                DecisionStatus::ProposedMatch
            } else {
                return Err(ResolutionError::ConfigGap {
                    pass: config.pass_number,
                    priority,
                    left: e.left_entity_id.clone(),
                    right: e.right_entity_id.clone(),
                });
            };
            Ok(MatchDecision {
                left_entity_id: e.left_entity_id.clone(),
                right_entity_id: e.right_entity_id.clone(),
                status,
                priority,
                pass_number: config.pass_number,
                degree_left,
                degree_right,
                best_pair: e.best_pair.clone(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkStatus {
    Linked,
    NoLink,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkSource {
    Auto,
    HumanConfirmed,
    HumanManual,
}

/// One row of the crosswalk. `right_entity_id` is empty for `no_link`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CrosswalkEntry {
    pub left_entity_id: String,
    pub right_entity_id: String,
    pub link_status: LinkStatus,
    pub source: LinkSource,
    pub pass_number: u32,
    pub priority: u8,
    pub hit_id: Option<String>,
    pub note: Option<String>,
}

impl CrosswalkEntry {
    pub fn auto(decision: &MatchDecision) -> Self {
        Self {
            left_entity_id: decision.left_entity_id.clone(),
            right_entity_id: decision.right_entity_id.clone(),
            link_status: LinkStatus::Linked,
            source: LinkSource::Auto,
            pass_number: decision.pass_number,
            priority: decision.priority,
            hit_id: None,
            note: None,
        }
    }

    pub fn is_linked(&self) -> bool {
        self.link_status == LinkStatus::Linked
    }
}

/// The 1-to-1 link table. Every left id appears in at most one entry and
/// every right id in at most one linked entry.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Crosswalk {
    entries: Vec<CrosswalkEntry>,
    #[serde(skip)]
    by_left: HashMap<String, usize>,
    #[serde(skip)]
    by_right: HashMap<String, usize>,
}

impl Crosswalk {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, entry: CrosswalkEntry) -> Result<(), ResolutionError> {
        if let Some(&i) = self.by_left.get(&entry.left_entity_id) {
            let prior = &self.entries[i];
            return Err(ResolutionError::OneToOneViolation(format!(
                "left '{}' already has a {} entry (right '{}')",
                entry.left_entity_id,
                if prior.is_linked() { "linked" } else { "no_link" },
                prior.right_entity_id
            )));
        }
        if entry.is_linked() {
            if entry.right_entity_id.is_empty() {
                return Err(ResolutionError::OneToOneViolation(format!(
                    "linked entry for left '{}' has no right id",
                    entry.left_entity_id
                )));
            }
            if let Some(&i) = self.by_right.get(&entry.right_entity_id) {
                return Err(ResolutionError::OneToOneViolation(format!(
                    "right '{}' is already linked to left '{}'",
                    entry.right_entity_id, self.entries[i].left_entity_id
                )));
            }
            self.by_right
                .insert(entry.right_entity_id.clone(), self.entries.len());
        }
        self.by_left
            .insert(entry.left_entity_id.clone(), self.entries.len());
        self.entries.push(entry);
        Ok(())
    }

    pub fn entries(&self) -> &[CrosswalkEntry] {
        &self.entries
    }

    pub fn entry_for_left(&self, id: &str) -> Option<&CrosswalkEntry> {
        self.by_left.get(id).map(|&i| &self.entries[i])
    }

    pub fn is_left_settled(&self, id: &str) -> bool {
        self.by_left.contains_key(id)
    }

    pub fn is_right_linked(&self, id: &str) -> bool {
        self.by_right.contains_key(id)
    }

    pub fn linked(&self) -> impl Iterator<Item = &CrosswalkEntry> {
        self.entries.iter().filter(|e| e.is_linked())
    }

    pub fn linked_pairs(&self) -> BTreeSet<(String, String)> {
        self.linked()
            .map(|e| (e.left_entity_id.clone(), e.right_entity_id.clone()))
            .collect()
    }

    /// Entries sorted by (left id, right id), the order used on disk.
    pub fn sorted_entries(&self) -> Vec<&CrosswalkEntry> {
        let mut v: Vec<&CrosswalkEntry> = self.entries.iter().collect();
        v.sort_by(|a, b| {
            (&a.left_entity_id, &a.right_entity_id).cmp(&(&b.left_entity_id, &b.right_entity_id))
        });
        v
    }

    /// Checks injectivity from scratch.
    pub fn is_injective(&self) -> bool {
        let mut lefts = HashSet::new();
        let mut rights = HashSet::new();
        self.entries.iter().all(|e| {
            lefts.insert(&e.left_entity_id)
                && (!e.is_linked() || rights.insert(&e.right_entity_id))
        })
    }
}

/// What applying HIT resolutions did to one pass.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct HitApplication {
    pub resolved: BTreeSet<String>,
    pub pending: Vec<String>,
    pub rejected_pairs: Vec<(String, String)>,
}

fn check_conflicts(
    resolutions: &[HitResolution],
) -> Result<HashMap<&str, &HitResolution>, ResolutionError> {
    let mut by_hit: HashMap<&str, &HitResolution> = HashMap::new();
    for r in resolutions {
        if let Some(prev) = by_hit.insert(&r.hit_id, r) {
            if (prev.decision, &prev.chosen_right_entity_id)
                != (r.decision, &r.chosen_right_entity_id)
            {
                return Err(ResolutionError::ConflictingResolutions(r.hit_id.clone()));
            }
        }
    }
    Ok(by_hit)
}

fn human_entry(hit: &Hit, res: &HitResolution, right: &str, status: LinkStatus, priority: u8) -> CrosswalkEntry {
    CrosswalkEntry {
        left_entity_id: hit.left.entity_id.clone(),
        right_entity_id: right.to_string(),
        link_status: status,
        source: if hit.kind == HitKind::ManualMatch {
            LinkSource::HumanManual
        } else {
            LinkSource::HumanConfirmed
        },
        pass_number: hit.pass_number,
        priority,
        hit_id: Some(hit.hit_id.clone()),
        note: (!res.note.is_empty()).then(|| res.note.clone()),
    }
}

/// Applies human decisions to the confirm/ambiguous HITs of one pass.
///
/// Confirmed pairs are linked in `crosswalk` (source `human_confirmed`);
/// rejected pairs are returned so later passes never re-propose them.
/// Resolutions for manual-match HITs go through [`register_manual_links`].
pub fn apply_hit_resolutions(
    decisions: &mut [MatchDecision],
    hits: &[Hit],
    resolutions: &[HitResolution],
    crosswalk: &mut Crosswalk,
) -> Result<HitApplication, ResolutionError> {
    let by_hit = check_conflicts(resolutions)?;
    let known: HashSet<&str> = hits.iter().map(|h| h.hit_id.as_str()).collect();
    if let Some(r) = resolutions.iter().find(|r| !known.contains(r.hit_id.as_str())) {
        return Err(ResolutionError::UnknownHitId(r.hit_id.clone()));
    }
    let mut index: HashMap<(String, String), usize> = HashMap::new();
    for (i, d) in decisions.iter().enumerate() {
        index.insert((d.left_entity_id.clone(), d.right_entity_id.clone()), i);
    }

    let mut out = HitApplication::default();
    for hit in hits {
        let Some(res) = by_hit.get(hit.hit_id.as_str()).copied() else {
            out.pending.push(hit.hit_id.clone());
            continue;
        };
        validate_resolution(hit, res)?;
        if res.decision == Decision::Defer {
            out.pending.push(hit.hit_id.clone());
            continue;
        }
        if hit.kind == HitKind::ManualMatch {
            return Err(ResolutionError::Hit(HitError::InvalidDecision(format!(
                "manual-match HIT '{}' cannot be applied to pass decisions",
                hit.hit_id
            ))));
        }
        let left = &hit.left.entity_id;
        let chosen = match res.decision {
            Decision::Match => Some(
                res.chosen_right_entity_id
                    .clone()
                    .unwrap_or_else(|| hit.candidates[0].right.entity_id.clone()),
            ),
            _ => None,
        };
        for cand in &hit.candidates {
            let right = &cand.right.entity_id;
            let Some(&i) = index.get(&(left.clone(), right.clone())) else {
                continue;
            };
            if chosen.as_deref() == Some(right.as_str()) {
                crosswalk.insert(human_entry(hit, res, right, LinkStatus::Linked, decisions[i].priority))?;
                decisions[i].status = DecisionStatus::Confirmed;
            } else {
                decisions[i].status = DecisionStatus::Rejected;
                out.rejected_pairs.push((left.clone(), right.clone()));
            }
        }
        if res.decision == Decision::NoLink {
            crosswalk.insert(human_entry(hit, res, "", LinkStatus::NoLink, 0))?;
        }
        out.resolved.insert(hit.hit_id.clone());
    }
    Ok(out)
}

/// A reviewer-supplied link; `right_entity_id == None` records a confirmed
/// no-link.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManualLink {
    pub left_entity_id: String,
    pub right_entity_id: Option<String>,
    pub note: String,
    pub hit_id: Option<String>,
}

/// Adds manual links (priority 0, source `human_manual`) to the crosswalk.
/// All links are validated before any is inserted.
pub fn register_manual_links(
    crosswalk: &mut Crosswalk,
    manual: &[ManualLink],
    known_left: &HashSet<&str>,
    known_right: &HashSet<&str>,
    pass_number: u32,
) -> Result<(), ResolutionError> {
    let mut staged = crosswalk.clone();
    for m in manual {
        if !known_left.contains(m.left_entity_id.as_str()) {
            return Err(ResolutionError::UnknownEntityId {
                side: "left",
                id: m.left_entity_id.clone(),
            });
        }
        if let Some(r) = &m.right_entity_id {
            if !known_right.contains(r.as_str()) {
                return Err(ResolutionError::UnknownEntityId {
                    side: "right",
                    id: r.clone(),
                });
            }
        }
        staged.insert(CrosswalkEntry {
            left_entity_id: m.left_entity_id.clone(),
            right_entity_id: m.right_entity_id.clone().unwrap_or_default(),
            link_status: if m.right_entity_id.is_some() {
                LinkStatus::Linked
            } else {
                LinkStatus::NoLink
            },
            source: LinkSource::HumanManual,
            pass_number,
            priority: 0,
            hit_id: m.hit_id.clone(),
            note: (!m.note.is_empty()).then(|| m.note.clone()),
        })?;
    }
    *crosswalk = staged;
    Ok(())
}

/// Entities that are neither settled in the crosswalk nor waiting on a HIT,
/// in view order.
pub fn residual_entities(
    crosswalk: &Crosswalk,
    pending_left: &BTreeSet<String>,
    pending_right: &BTreeSet<String>,
    left_views: &[EntityView],
    right_views: &[EntityView],
) -> (Vec<String>, Vec<String>) {
    let left = left_views
        .iter()
        .map(|v| &v.entity_id)
        .filter(|id| !crosswalk.is_left_settled(id) && !pending_left.contains(*id))
        .cloned()
        .collect();
    let right = right_views
        .iter()
        .map(|v| &v.entity_id)
        .filter(|id| !crosswalk.is_right_linked(id) && !pending_right.contains(*id))
        .cloned()
        .collect();
    (left, right)
}

pub const CROSSWALK_HEADER: &str = "left_id,right_id,link_status,source,pass,priority,hit_id,note";

#[derive(Serialize, Deserialize)]
struct CrosswalkRow {
    left_id: String,
    right_id: String,
    link_status: LinkStatus,
    source: LinkSource,
    pass: u32,
    priority: u8,
    hit_id: String,
    note: String,
}

/// Writes the crosswalk sorted by (left id, right id).
pub fn write_crosswalk(path: &std::path::Path, crosswalk: &Crosswalk) -> Result<(), csv::Error> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(CROSSWALK_HEADER.split(','))?;
    for e in crosswalk.sorted_entries() {
        w.serialize(CrosswalkRow {
            left_id: e.left_entity_id.clone(),
            right_id: e.right_entity_id.clone(),
            link_status: e.link_status,
            source: e.source,
            pass: e.pass_number,
            priority: e.priority,
            hit_id: e.hit_id.clone().unwrap_or_default(),
            note: e.note.clone().unwrap_or_default(),
        })?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, thiserror::Error)]
pub enum CrosswalkReadError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Invalid(#[from] ResolutionError),
}

/// Reads a crosswalk file, re-checking the 1-to-1 invariant.
pub fn read_crosswalk(path: &std::path::Path) -> Result<Crosswalk, CrosswalkReadError> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut out = Crosswalk::new();
    for row in reader.deserialize::<CrosswalkRow>() {
        let row = row?;
        out.insert(CrosswalkEntry {
            left_entity_id: row.left_id,
            right_entity_id: row.right_id,
            link_status: row.link_status,
            source: row.source,
            pass_number: row.pass,
            priority: row.priority,
            hit_id: (!row.hit_id.is_empty()).then_some(row.hit_id),
            note: (!row.note.is_empty()).then_some(row.note),
        })?;
    }
    Ok(out)
}
