use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::blocking::BlockStats;
use crate::config::RunConfig;
use crate::hits::{digest, HitCounts};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Content digests of everything a run reads.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputDigests {
    pub left: String,
    pub right: String,
    pub name_rules: String,
    pub addr_rules: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassSummary {
    pub pass_number: u32,
    pub block_stats: BlockStats,
    pub decisions: BTreeMap<String, usize>,
    pub hits: HitCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    /// Digest over tool version, input digests and config. Outputs are a
    /// function of these plus the resolution log.
    pub manifest_hash: String,
    pub inputs: InputDigests,
    pub config: RunConfig,
    pub passes: Vec<PassSummary>,
    pub decisions_by_status: BTreeMap<String, usize>,
    pub links_by_source: BTreeMap<String, usize>,
    pub started_at: String,
    pub finished_at: String,
}

pub fn manifest_hash(inputs: &InputDigests, config: &RunConfig) -> String {
    let doc = serde_json::json!({
        "tool_version": TOOL_VERSION,
        "inputs": inputs,
        "config": config,
    });
    digest(&serde_json::to_vec(&doc).expect("manifest serializes"))
}
