//! Multi-pass orchestration.
//!
//! [`Workbench::prepare`] loads and standardizes both inputs once.
//! [`Workbench::execute`] is a pure function of the prepared inputs and a
//! resolution log, so the batch `run` command and the review service share
//! one code path. [`Workbench::write_outputs`] puts a state on disk.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::blocking::{build_blocks, BlockStats};
use crate::config::{ConfigError, RunConfig};
use crate::hits::{
    audit_append, build_manual_hits, build_pass_hits, digest, effective_resolutions, emit_hits,
    read_resolution_rows, validate_resolution, AuditEvent, Decision, Hit, HitCounts, HitError,
    HitResolution, RecordIndex,
};
use crate::ingest::{group_entities, parse_source, EntityView, IngestError, Side, SourceRecord};
use crate::manifest::{manifest_hash, InputDigests, PassSummary, RunManifest, TOOL_VERSION};
use crate::metrics::{load_gold, metrics_for_pairs, GoldError, MetricsReport};
use crate::resolution::{
    apply_hit_resolutions, collapse_to_entity_edges, extract_one_to_one, register_manual_links,
    residual_entities, write_crosswalk, Crosswalk, CrosswalkEntry, DecisionStatus, LinkSource, ManualLink,
    MatchDecision, ResolutionError,
};
use crate::scoring::{build_candidate_graph, write_candidate_graph, ScoredPair};
use crate::standardize::{
    compile_rules, normalize_entity, NormalizedRecord, RuleError, RulePlan, Target, DEFAULT_ADDR_RULES,
    DEFAULT_NAME_RULES,
};

pub const CROSSWALK_FILE: &str = "crosswalk.csv";
pub const HITS_FILE: &str = "hits.csv";
pub const UNMATCHED_LEFT_FILE: &str = "unmatched_left.csv";
pub const UNMATCHED_RIGHT_FILE: &str = "unmatched_right.csv";
pub const REPORT_FILE: &str = "run_report.json";
pub const AUDIT_FILE: &str = "audit.log.jsonl";
pub const RESOLUTIONS_FILE: &str = "resolutions.csv";

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("ingest: {0}")]
    Ingest(#[from] IngestError),
    #[error("{target} rules: {source}")]
    Rules {
        target: &'static str,
        #[source]
        source: RuleError,
    },
    #[error("{stage}: {source}")]
    Resolution {
        stage: String,
        #[source]
        source: ResolutionError,
    },
    #[error("{stage}: {source}")]
    Hits {
        stage: String,
        #[source]
        source: HitError,
    },
    #[error("manual HIT {hit}: right entity '{right}' is not among the unmatched right entities")]
    ManualChoiceUnavailable { hit: String, right: String },
    #[error("gold standard: {0}")]
    Gold(#[from] GoldError),
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("writing {path}: {reason}")]
    Write { path: PathBuf, reason: String },
}

fn write_err(path: &Path, e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Write {
        path: path.to_path_buf(),
        reason: e.to_string(),
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>, PipelineError> {
    std::fs::read(path).map_err(|source| PipelineError::Read {
        path: path.to_path_buf(),
        source,
    })
}

fn load_plan(target: Target, path: Option<&Path>) -> Result<(RulePlan, String), PipelineError> {
    let text = match (path, target) {
        (Some(p), _) => String::from_utf8_lossy(&read_file(p)?).into_owned(),
        (None, Target::Name) => DEFAULT_NAME_RULES.to_string(),
        (None, Target::Address) => DEFAULT_ADDR_RULES.to_string(),
    };
    let plan = compile_rules(target, &text).map_err(|source| PipelineError::Rules {
        target: match target {
            Target::Name => "name",
            Target::Address => "address",
        },
        source,
    })?;
    Ok((plan, digest(text.as_bytes())))
}

/// Loaded, standardized inputs of one study.
#[derive(Debug, Clone)]
pub struct Workbench {
    pub config: RunConfig,
    pub name_plan: RulePlan,
    pub addr_plan: RulePlan,
    pub left_source: Vec<SourceRecord>,
    pub right_source: Vec<SourceRecord>,
    pub left_views: Vec<EntityView>,
    pub right_views: Vec<EntityView>,
    pub left_records: Vec<NormalizedRecord>,
    pub right_records: Vec<NormalizedRecord>,
    pub inputs: InputDigests,
    pub manifest_hash: String,
}

/// One HIT and the resolution currently answering it, if any.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HitState {
    pub hit: Hit,
    pub resolution: Option<HitResolution>,
}

impl HitState {
    /// Unanswered and deferred HITs are pending.
    pub fn is_pending(&self) -> bool {
        self.resolution.as_ref().is_none_or(|r| r.decision == Decision::Defer)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PassOutcome {
    pub pass_number: u32,
    pub block_stats: BlockStats,
    pub candidates: Vec<ScoredPair>,
    /// Decisions after human resolutions were applied.
    pub decisions: Vec<MatchDecision>,
    pub hits: HitCounts,
}

/// Linked pairs at a stage boundary, for tracking how the crosswalk grows.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Stage {
    pub label: String,
    pub linked: BTreeSet<(String, String)>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SideCounts {
    pub total: usize,
    pub linked: usize,
    pub no_link: usize,
    pub pending_hit: usize,
    pub unmatched: usize,
}

#[derive(Debug, Clone)]
pub struct RunState {
    pub crosswalk: Crosswalk,
    pub passes: Vec<PassOutcome>,
    /// Every HIT of the run in emission order: pass HITs by pass, then
    /// manual-match HITs.
    pub hits: Vec<HitState>,
    pub stages: Vec<Stage>,
    /// Effective resolutions whose HIT no longer exists.
    pub orphaned: Vec<HitResolution>,
    pub pending_left: BTreeSet<String>,
    pub pending_right: BTreeSet<String>,
    pub unmatched_left: Vec<String>,
    pub unmatched_right: Vec<String>,
}

impl RunState {
    pub fn pending_hits(&self) -> Vec<&Hit> {
        self.hits.iter().filter(|h| h.is_pending()).map(|h| &h.hit).collect()
    }

    pub fn hit(&self, id: &str) -> Option<&HitState> {
        self.hits.iter().find(|h| h.hit.hit_id == id)
    }

    /// Entity counts per output category. Manual-match HITs do not hold
    /// entities back, so their left entities count as unmatched.
    pub fn side_counts(&self, side: Side, total: usize) -> SideCounts {
        let entries = self.crosswalk.entries();
        match side {
            Side::Left => SideCounts {
                total,
                linked: entries.iter().filter(|e| e.is_linked()).count(),
                no_link: entries.iter().filter(|e| !e.is_linked()).count(),
                pending_hit: self.pending_left.len(),
                unmatched: self.unmatched_left.len(),
            },
            Side::Right => SideCounts {
                total,
                linked: entries.iter().filter(|e| e.is_linked()).count(),
                no_link: 0,
                pending_hit: self
                    .pending_right
                    .iter()
                    .filter(|r| !self.crosswalk.is_right_linked(r))
                    .count(),
                unmatched: self.unmatched_right.len(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub stage: String,
    pub linked: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub recall: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub manifest: RunManifest,
    pub left: SideCounts,
    pub right: SideCounts,
    pub pending_hits: HitCounts,
    pub stages: Vec<StageSummary>,
    pub orphaned_resolutions: Vec<String>,
    pub metrics: Option<MetricsReport>,
}

/// Which audit events a write records.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AuditScope {
    /// A full run: pass completions plus everything below.
    Run,
    /// A single resolution arriving through the review service.
    Resolution,
}

impl Workbench {
    pub fn prepare(config: RunConfig) -> Result<Self, PipelineError> {
        config.validate()?;
        let left_bytes = read_file(&config.left.path)?;
        let right_bytes = read_file(&config.right.path)?;
        let left_source = parse_source(&left_bytes, &config.left.path, Side::Left, &config.left.columns)?;
        let right_source = parse_source(&right_bytes, &config.right.path, Side::Right, &config.right.columns)?;
        let (name_plan, name_digest) = load_plan(Target::Name, config.name_rules.as_deref())?;
        let (addr_plan, addr_digest) = load_plan(Target::Address, config.addr_rules.as_deref())?;

        let left_views = group_entities(&left_source);
        let right_views = group_entities(&right_source);
        let normalize = |views: &[EntityView]| -> Vec<NormalizedRecord> {
            views
                .iter()
                .flat_map(|v| normalize_entity(v, &name_plan, &addr_plan))
                .collect()
        };
        let left_records = normalize(&left_views);
        let right_records = normalize(&right_views);
        log::info!(
            "loaded {} left rows ({} entities), {} right rows ({} entities)",
            left_source.len(),
            left_views.len(),
            right_source.len(),
            right_views.len()
        );

        let inputs = InputDigests {
            left: digest(&left_bytes),
            right: digest(&right_bytes),
            name_rules: name_digest,
            addr_rules: addr_digest,
        };
        let manifest_hash = manifest_hash(&inputs, &config);
        Ok(Self {
            config,
            name_plan,
            addr_plan,
            left_source,
            right_source,
            left_views,
            right_views,
            left_records,
            right_records,
            inputs,
            manifest_hash,
        })
    }

    /// Reads the resolution log from the output directory, if there is one.
    pub fn stored_resolutions(&self) -> Result<Vec<HitResolution>, PipelineError> {
        let path = self.config.output_dir.join(RESOLUTIONS_FILE);
        if !path.exists() {
            return Ok(Vec::new());
        }
        read_resolution_rows(&path).map_err(|source| PipelineError::Hits {
            stage: "reading resolutions".into(),
            source,
        })
    }

    /// Runs every pass over the prepared inputs, applying the given
    /// resolution log. Either the whole log applies or an error is returned.
    pub fn execute(&self, resolution_log: &[HitResolution]) -> Result<RunState, PipelineError> {
        let effective = effective_resolutions(resolution_log).map_err(|source| PipelineError::Hits {
            stage: "resolution log".into(),
            source,
        })?;
        let by_hit: HashMap<&str, &HitResolution> = effective.iter().map(|r| (r.hit_id.as_str(), r)).collect();
        let index = RecordIndex::new(self.left_records.iter().chain(&self.right_records));
        let settings = self.config.score_settings();

        let mut crosswalk = Crosswalk::new();
        let mut rejected: HashSet<(String, String)> = HashSet::new();
        let mut pending_left = BTreeSet::new();
        let mut pending_right = BTreeSet::new();
        let mut hit_states: Vec<HitState> = Vec::new();
        let mut passes = Vec::new();
        let mut stages = Vec::new();

        for pass in &self.config.passes {
            let n = pass.pass_number;
            let ctx = |what: &str| format!("pass {n} {what}");
            let (res_left, res_right) =
                residual_entities(&crosswalk, &pending_left, &pending_right, &self.left_views, &self.right_views);
            let left = residual_rows(&self.left_records, &res_left);
            let right = residual_rows(&self.right_records, &res_right);

            let (blocks, block_stats) = build_blocks(&left, &right, pass);
            let mut candidates = build_candidate_graph(&blocks, pass, &settings);
            candidates.retain(|p| !rejected.contains(&(p.left_entity_id.clone(), p.right_entity_id.clone())));
            let edges = collapse_to_entity_edges(&candidates);
            let mut decisions = extract_one_to_one(&edges, pass).map_err(|source| PipelineError::Resolution {
                stage: ctx("resolution"),
                source,
            })?;
            for d in decisions.iter().filter(|d| d.status == DecisionStatus::AutoMatch) {
                crosswalk
                    .insert(CrosswalkEntry::auto(d))
                    .map_err(|source| PipelineError::Resolution {
                        stage: ctx("auto links"),
                        source,
                    })?;
            }
            stages.push(Stage {
                label: format!("pass{n}:auto"),
                linked: crosswalk.linked_pairs(),
            });

            let hits = build_pass_hits(&decisions, &index, n);
            let answers: Vec<HitResolution> = hits
                .iter()
                .filter_map(|h| by_hit.get(h.hit_id.as_str()).map(|r| (*r).clone()))
                .collect();
            let applied = apply_hit_resolutions(&mut decisions, &hits, &answers, &mut crosswalk).map_err(|source| {
                PipelineError::Resolution {
                    stage: ctx("HIT resolutions"),
                    source,
                }
            })?;
            rejected.extend(applied.rejected_pairs);
            for hit in &hits {
                let state = HitState {
                    hit: hit.clone(),
                    resolution: by_hit.get(hit.hit_id.as_str()).map(|r| (*r).clone()),
                };
                if state.is_pending() {
                    pending_left.insert(hit.left.entity_id.clone());
                    pending_right.extend(hit.candidates.iter().map(|c| c.right.entity_id.clone()));
                }
                hit_states.push(state);
            }
            stages.push(Stage {
                label: format!("pass{n}:reviewed"),
                linked: crosswalk.linked_pairs(),
            });
            log::info!(
                "pass {n}: {} comparisons, {} edges, {} entity edges, {} HITs",
                block_stats.total_comparisons,
                candidates.len(),
                edges.len(),
                hits.len()
            );
            passes.push(PassOutcome {
                pass_number: n,
                block_stats,
                candidates,
                decisions,
                hits: HitCounts::of(&hits),
            });
        }

        if self.config.manual_hits {
            let last = self.config.passes.last().map_or(1, |p| p.pass_number);
            let (res_left, res_right) =
                residual_entities(&crosswalk, &pending_left, &pending_right, &self.left_views, &self.right_views);
            let manual = build_manual_hits(&res_left, &res_right, &index, last, self.config.manual_candidate_cap);
            let open_right: HashSet<&str> = res_right.iter().map(String::as_str).collect();
            let mut links = Vec::new();
            for hit in &manual {
                let res = by_hit.get(hit.hit_id.as_str()).copied();
                if let Some(res) = res {
                    validate_resolution(hit, res).map_err(|source| PipelineError::Hits {
                        stage: "manual HITs".into(),
                        source,
                    })?;
                    match res.decision {
                        Decision::Match => {
                            let right = res.chosen_right_entity_id.clone().unwrap_or_default();
                            if !open_right.contains(right.as_str()) {
                                return Err(PipelineError::ManualChoiceUnavailable {
                                    hit: hit.hit_id.clone(),
                                    right,
                                });
                            }
                            links.push(manual_link(hit, res, Some(right)));
                        }
                        Decision::NoLink => links.push(manual_link(hit, res, None)),
                        Decision::Nonmatch | Decision::Defer => {}
                    }
                }
                hit_states.push(HitState {
                    hit: hit.clone(),
                    resolution: res.cloned(),
                });
            }
            let known_left: HashSet<&str> = self.left_views.iter().map(|v| v.entity_id.as_str()).collect();
            let known_right: HashSet<&str> = self.right_views.iter().map(|v| v.entity_id.as_str()).collect();
            register_manual_links(&mut crosswalk, &links, &known_left, &known_right, last).map_err(|source| {
                PipelineError::Resolution {
                    stage: "manual links".into(),
                    source,
                }
            })?;
            stages.push(Stage {
                label: "manual".into(),
                linked: crosswalk.linked_pairs(),
            });
        }

        debug_assert!(crosswalk.is_injective());
        let seen: HashSet<&str> = hit_states.iter().map(|h| h.hit.hit_id.as_str()).collect();
        let orphaned = effective
            .iter()
            .filter(|r| !seen.contains(r.hit_id.as_str()))
            .cloned()
            .collect();
        let (unmatched_left, unmatched_right) =
            residual_entities(&crosswalk, &pending_left, &pending_right, &self.left_views, &self.right_views);
        Ok(RunState {
            crosswalk,
            passes,
            hits: hit_states,
            stages,
            orphaned,
            pending_left,
            pending_right,
            unmatched_left,
            unmatched_right,
        })
    }

    pub fn gold(&self) -> Result<Option<BTreeSet<(String, String)>>, PipelineError> {
        Ok(match &self.config.gold_standard {
            Some(p) => Some(load_gold(p)?),
            None => None,
        })
    }

    /// Builds the run report for a state without touching the disk.
    pub fn report(&self, state: &RunState, started_at: &str) -> Result<RunReport, PipelineError> {
        let gold = self.gold()?;
        let mut by_status: BTreeMap<String, usize> = BTreeMap::new();
        let pass_summaries = state
            .passes
            .iter()
            .map(|p| {
                let mut decisions = BTreeMap::new();
                for d in &p.decisions {
                    *decisions.entry(d.status.to_string()).or_default() += 1;
                    *by_status.entry(d.status.to_string()).or_default() += 1;
                }
                PassSummary {
                    pass_number: p.pass_number,
                    block_stats: p.block_stats.clone(),
                    decisions,
                    hits: p.hits.clone(),
                }
            })
            .collect();
        let mut by_source: BTreeMap<String, usize> = BTreeMap::new();
        for e in state.crosswalk.entries() {
            let key = match (e.link_status, e.source) {
                (crate::resolution::LinkStatus::NoLink, _) => "no_link",
                (_, LinkSource::Auto) => "auto",
                (_, LinkSource::HumanConfirmed) => "human_confirmed",
                (_, LinkSource::HumanManual) => "human_manual",
            };
            *by_source.entry(key.to_string()).or_default() += 1;
        }
        let pending: Vec<Hit> = state.pending_hits().into_iter().cloned().collect();
        Ok(RunReport {
            manifest: RunManifest {
                tool_version: TOOL_VERSION.to_string(),
                manifest_hash: self.manifest_hash.clone(),
                inputs: self.inputs.clone(),
                config: self.config.clone(),
                passes: pass_summaries,
                decisions_by_status: by_status,
                links_by_source: by_source,
                started_at: started_at.to_string(),
                finished_at: chrono::Utc::now().to_rfc3339(),
            },
            left: state.side_counts(Side::Left, self.left_views.len()),
            right: state.side_counts(Side::Right, self.right_views.len()),
            pending_hits: HitCounts::of(&pending),
            stages: state
                .stages
                .iter()
                .map(|s| StageSummary {
                    stage: s.label.clone(),
                    linked: s.linked.len(),
                    recall: gold.as_ref().and_then(|g| metrics_for_pairs(&s.linked, g).recall),
                })
                .collect(),
            orphaned_resolutions: state.orphaned.iter().map(|r| r.hit_id.clone()).collect(),
            metrics: gold.as_ref().map(|g| metrics_for_pairs(&state.crosswalk.linked_pairs(), g)),
        })
    }

    /// Writes the crosswalk, pending HITs, unmatched entities and the run
    /// report, and appends to the audit log.
    pub fn write_outputs(
        &self,
        state: &RunState,
        started_at: &str,
        scope: AuditScope,
        resolutions_applied: usize,
    ) -> Result<RunReport, PipelineError> {
        let dir = &self.config.output_dir;
        std::fs::create_dir_all(dir).map_err(|e| write_err(dir, e))?;
        let audit_path = dir.join(AUDIT_FILE);
        let audit = |event: AuditEvent, payload: serde_json::Value| {
            audit_append(&audit_path, event, &payload).map_err(|e| write_err(&audit_path, e))
        };
        let report = self.report(state, started_at)?;

        if self.config.debug_candidates {
            for p in &state.passes {
                let path = dir.join(format!("candidates_pass{}.csv", p.pass_number));
                write_candidate_graph(&path, &p.candidates).map_err(|e| write_err(&path, e))?;
            }
        }
        if scope == AuditScope::Run {
            for p in &report.manifest.passes {
                audit(
                    AuditEvent::PassCompleted,
                    serde_json::json!({
                        "pass": p.pass_number,
                        "block_stats_digest": digest(&serde_json::to_vec(&p.block_stats).unwrap()),
                        "decisions": p.decisions,
                    }),
                )?;
            }
        }
        if resolutions_applied > 0 {
            let path = dir.join(RESOLUTIONS_FILE);
            let file_digest = std::fs::read(&path).map(|b| digest(&b)).unwrap_or_default();
            audit(
                AuditEvent::ResolutionIngested,
                serde_json::json!({
                    "rows": resolutions_applied,
                    "orphaned": report.orphaned_resolutions,
                    "file_digest": file_digest,
                }),
            )?;
        }

        let crosswalk_path = dir.join(CROSSWALK_FILE);
        write_crosswalk(&crosswalk_path, &state.crosswalk).map_err(|e| write_err(&crosswalk_path, e))?;
        let hits_path = dir.join(HITS_FILE);
        let pending: Vec<Hit> = state.pending_hits().into_iter().cloned().collect();
        let counts = emit_hits(&hits_path, &pending).map_err(|e| write_err(&hits_path, e))?;
        write_unmatched(&dir.join(UNMATCHED_LEFT_FILE), &self.left_records, &state.unmatched_left)?;
        write_unmatched(&dir.join(UNMATCHED_RIGHT_FILE), &self.right_records, &state.unmatched_right)?;

        audit(
            AuditEvent::HitsEmitted,
            serde_json::json!({
                "count": counts.total(),
                "by_kind": counts,
                "file_digest": file_digest(&hits_path),
            }),
        )?;
        audit(
            AuditEvent::CrosswalkUpdated,
            serde_json::json!({
                "linked": report.left.linked,
                "no_link": report.left.no_link,
                "by_source": report.manifest.links_by_source,
                "file_digest": file_digest(&crosswalk_path),
            }),
        )?;

        let report_path = dir.join(REPORT_FILE);
        let text = serde_json::to_string_pretty(&report).expect("report serializes");
        std::fs::write(&report_path, text + "\n").map_err(|e| write_err(&report_path, e))?;
        Ok(report)
    }
}

fn file_digest(path: &Path) -> String {
    std::fs::read(path).map(|b| digest(&b)).unwrap_or_default()
}

fn residual_rows(records: &[NormalizedRecord], ids: &[String]) -> Vec<NormalizedRecord> {
    let keep: HashSet<&str> = ids.iter().map(String::as_str).collect();
    records
        .iter()
        .filter(|r| keep.contains(r.entity_id.as_str()))
        .cloned()
        .collect()
}

fn manual_link(hit: &Hit, res: &HitResolution, right: Option<String>) -> ManualLink {
    ManualLink {
        left_entity_id: hit.left.entity_id.clone(),
        right_entity_id: right,
        note: res.note.clone(),
        hit_id: Some(hit.hit_id.clone()),
    }
}

const UNMATCHED_HEADER: [&str; 7] = ["entity_id", "row_index", "name", "std_name", "address", "std_address", "zip"];

fn write_unmatched(path: &Path, records: &[NormalizedRecord], ids: &[String]) -> Result<(), PipelineError> {
    let keep: HashSet<&str> = ids.iter().map(String::as_str).collect();
    let write = || -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(UNMATCHED_HEADER)?;
        for r in records.iter().filter(|r| keep.contains(r.entity_id.as_str())) {
            w.write_record([
                r.entity_id.as_str(),
                &r.row_index.to_string(),
                &r.raw_name,
                &r.std_name,
                &r.raw_address,
                &r.std_address,
                &r.zip,
            ])?;
        }
        w.flush()?;
        Ok(())
    };
    write().map_err(|e| write_err(path, e))
}

/// Loads the inputs, applies any stored resolutions and writes all outputs.
pub fn run(config: RunConfig) -> Result<(Workbench, RunState, RunReport), PipelineError> {
    let started = chrono::Utc::now().to_rfc3339();
    let bench = Workbench::prepare(config)?;
    let log = bench.stored_resolutions()?;
    let state = bench.execute(&log)?;
    if !state.orphaned.is_empty() {
        log::warn!(
            "{} stored resolution(s) refer to HITs that no longer exist",
            state.orphaned.len()
        );
    }
    let report = bench.write_outputs(&state, &started, AuditScope::Run, log.len())?;
    Ok((bench, state, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::InputSpec;
    use crate::hits::{self, HitKind};
    use crate::ingest::ColumnMap;

    fn study(dir: &Path, left: &str, right: &str) -> RunConfig {
        std::fs::write(dir.join("left.csv"), left).unwrap();
        std::fs::write(dir.join("right.csv"), right).unwrap();
        let spec = |f: &str| InputSpec {
            path: dir.join(f),
            columns: ColumnMap::default(),
        };
        RunConfig::new(spec("left.csv"), spec("right.csv"), dir.join("out"))
    }

    const HEADER: &str = "id,name,address,zip\n";

    #[test]
    fn three_exact_pairs_link_automatically() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = study(
            dir.path(),
            &format!("{HEADER}M1,Baylor Hospital,1 Main St,77001\nM2,Ben Taub General,2 Oak Ave,77002\nM3,Texas Childrens,3 Elm Rd,77003\n"),
            &format!("{HEADER}F1,Baylor Hosp,1 Main Street,77001\nF2,Ben Taub General,2 Oak Avenue,77002\nF3,Texas Childrens,3 Elm Road,77003\n"),
        );
        let (_, state, report) = run(cfg).unwrap();
        assert_eq!(state.crosswalk.linked().count(), 3);
        assert!(state.crosswalk.linked().all(|e| e.source == LinkSource::Auto));
        assert_eq!(report.pending_hits.total(), 0);
        assert!(state.pending_hits().is_empty());
        assert_eq!(report.left.unmatched, 0);
        let hits = std::fs::read_to_string(dir.path().join("out").join(HITS_FILE)).unwrap();
        assert_eq!(hits.lines().count(), 1);
    }

    #[test]
    fn two_to_one_collision_becomes_one_hit() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = study(
            dir.path(),
            &format!("{HEADER}M1,Baylor Hospital,1 Main St,77001\nM2,Ben Taub General,2 Oak Ave,77002\n"),
            &format!(
                "{HEADER}F1,Baylor Hospital,1 Main St,77001\nF9,Baylor,9 Pine St,77001\nF2,Ben Taub General,2 Oak Ave,77002\n"
            ),
        );
        let (_, state, report) = run(cfg).unwrap();
        assert_eq!(report.pending_hits.resolve_ambiguous, 1);
        assert_eq!(report.pending_hits.confirm_proposed, 0);
        assert_eq!(
            state.crosswalk.linked_pairs(),
            [("M2".to_string(), "F2".to_string())].into()
        );
        assert_eq!(report.left.pending_hit, 1);
        let c = report.left;
        assert_eq!(c.linked + c.no_link + c.pending_hit + c.unmatched, c.total);
        let c = report.right;
        assert_eq!(c.linked + c.pending_hit + c.unmatched, c.total);
    }

    #[test]
    fn stored_resolutions_are_applied_on_rerun() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = study(
            dir.path(),
            &format!("{HEADER}M1,Baylor Hospital,1 Main St,77001\n"),
            &format!("{HEADER}F1,Baylor Hospital,1 Main St,77001\nF9,Baylor,9 Pine St,77001\n"),
        );
        let (_, state, _) = run(cfg.clone()).unwrap();
        let hit = state.pending_hits()[0].clone();
        let out = dir.path().join("out");
        hits::append_resolution(
            &out.join(RESOLUTIONS_FILE),
            &HitResolution {
                hit_id: hit.hit_id.clone(),
                decision: Decision::Match,
                chosen_right_entity_id: Some("F1".into()),
                reviewer: "jdoe".into(),
                note: String::new(),
                timestamp: "2026-01-01T00:00:00Z".into(),
            },
        )
        .unwrap();
        let (_, state, report) = run(cfg).unwrap();
        let e = state.crosswalk.entry_for_left("M1").unwrap();
        assert_eq!((e.right_entity_id.as_str(), e.source), ("F1", LinkSource::HumanConfirmed));
        assert_eq!(e.hit_id.as_deref(), Some(hit.hit_id.as_str()));
        assert_eq!(report.pending_hits.total(), 0);
        assert_eq!(report.right.unmatched, 1);
        let audit = std::fs::read_to_string(out.join(AUDIT_FILE)).unwrap();
        assert!(audit.contains("resolution_ingested"));
    }

    #[test]
    fn rejected_pair_is_not_reproposed() {
        let dir = tempfile::tempdir().unwrap();
        // Approximate name and address: a proposed match in pass 1.
        let cfg = study(
            dir.path(),
            &format!("{HEADER}M1,Cypress Fairbanks Methodist,865 Deshong,77001\n"),
            &format!("{HEADER}F1,Cypress Fairbanks,865 Deshong 5th Floor,77001\n"),
        );
        let bench = Workbench::prepare(cfg).unwrap();
        let state = bench.execute(&[]).unwrap();
        let hit = state.pending_hits()[0].clone();
        assert_eq!(hit.kind, HitKind::ConfirmProposed);
        let no = HitResolution {
            hit_id: hit.hit_id.clone(),
            decision: Decision::Nonmatch,
            chosen_right_entity_id: None,
            reviewer: "jdoe".into(),
            note: "different campus".into(),
            timestamp: String::new(),
        };
        let state = bench.execute(&[no]).unwrap();
        assert!(state.passes[1].candidates.is_empty());
        assert_eq!(state.crosswalk.entries().len(), 0);
        // Only the manual-match HIT remains open.
        let open: Vec<_> = state.pending_hits().iter().map(|h| h.kind).collect();
        assert_eq!(open, vec![HitKind::ManualMatch]);
    }

    #[test]
    fn manual_resolution_links_and_orphans_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = study(
            dir.path(),
            &format!("{HEADER}M1,Memorial Hermann,1 Main St,77001\nM2,Closed Clinic,5 Lost Rd,77005\n"),
            &format!("{HEADER}F1,Harris County Hospital District,100 Other Blvd,77009\n"),
        );
        let bench = Workbench::prepare(cfg).unwrap();
        let state = bench.execute(&[]).unwrap();
        let manual: Vec<&Hit> = state.pending_hits();
        assert_eq!(manual.len(), 2);
        let res = |hit: &Hit, d: Decision, right: Option<&str>| HitResolution {
            hit_id: hit.hit_id.clone(),
            decision: d,
            chosen_right_entity_id: right.map(str::to_string),
            reviewer: "r".into(),
            note: "checked website".into(),
            timestamp: String::new(),
        };
        let log = vec![
            res(manual[0], Decision::Match, Some("F1")),
            res(manual[1], Decision::NoLink, None),
            HitResolution {
                hit_id: "Hgone".into(),
                ..res(manual[0], Decision::Defer, None)
            },
        ];
        let state = bench.execute(&log).unwrap();
        let m1 = state.crosswalk.entry_for_left("M1").unwrap();
        assert_eq!((m1.source, m1.priority), (LinkSource::HumanManual, 0));
        assert!(!state.crosswalk.entry_for_left("M2").unwrap().is_linked());
        assert_eq!(state.orphaned.len(), 1);
        assert!(state.unmatched_left.is_empty());

        let bad = vec![res(manual[1], Decision::Match, Some("F404"))];
        assert!(matches!(
            bench.execute(&bad),
            Err(PipelineError::ManualChoiceUnavailable { .. })
        ));
    }
}
