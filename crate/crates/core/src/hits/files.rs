use std::collections::HashMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    effective_resolutions, validate_resolution, Decision, Hit, HitCandidate, HitCounts, HitError,
    HitKind, HitResolution, RecordDisplay,
};

pub const HIT_HEADER: &str = "hit_id,kind,pass,left_id,left_name,left_std_name,left_addr,left_std_addr,left_zip,cand_rank,right_id,right_name,right_std_name,right_addr,right_std_addr,right_zip,priority,name_dice,addr_dice,reason";
pub const RESOLUTION_HEADER: &str = "hit_id,decision,chosen_right_id,reviewer,note,timestamp";

#[derive(Debug, Serialize, Deserialize)]
struct HitRow {
    hit_id: String,
    kind: String,
    pass: u32,
    left_id: String,
    left_name: String,
    left_std_name: String,
    left_addr: String,
    left_std_addr: String,
    left_zip: String,
    cand_rank: usize,
    right_id: String,
    right_name: String,
    right_std_name: String,
    right_addr: String,
    right_std_addr: String,
    right_zip: String,
    priority: Option<u8>,
    name_dice: Option<f64>,
    addr_dice: Option<f64>,
    reason: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct ResolutionRow {
    hit_id: String,
    decision: String,
    chosen_right_id: String,
    reviewer: String,
    note: String,
    timestamp: String,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HitError + '_ {
    move |source| HitError::IoFailure {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> HitError + '_ {
    move |e| match e.into_kind() {
        csv::ErrorKind::Io(source) => HitError::IoFailure {
            path: path.to_path_buf(),
            source,
        },
        other => HitError::Malformed {
            path: path.to_path_buf(),
            reason: format!("{other:?}"),
        },
    }
}

fn row_for(hit: &Hit, rank: usize, cand: Option<&HitCandidate>) -> HitRow {
    let blank = RecordDisplay {
        entity_id: String::new(),
        name: String::new(),
        std_name: String::new(),
        address: String::new(),
        std_address: String::new(),
        zip: String::new(),
    };
    let right = cand.map_or(&blank, |c| &c.right);
    HitRow {
        hit_id: hit.hit_id.clone(),
        kind: hit.kind.as_str().into(),
        pass: hit.pass_number,
        left_id: hit.left.entity_id.clone(),
        left_name: hit.left.name.clone(),
        left_std_name: hit.left.std_name.clone(),
        left_addr: hit.left.address.clone(),
        left_std_addr: hit.left.std_address.clone(),
        left_zip: hit.left.zip.clone(),
        cand_rank: rank,
        right_id: right.entity_id.clone(),
        right_name: right.name.clone(),
        right_std_name: right.std_name.clone(),
        right_addr: right.address.clone(),
        right_std_addr: right.std_address.clone(),
        right_zip: right.zip.clone(),
        priority: cand.map(|c| c.priority),
        name_dice: cand.map(|c| c.name_dice),
        addr_dice: cand.map(|c| c.addr_dice),
        reason: hit.reason.clone(),
    }
}

/// Writes HITs as CSV, one row per candidate (a candidate-less HIT gets a
/// single row with rank 0). Returns counts by kind.
pub fn emit_hits(path: &Path, hits: &[Hit]) -> Result<HitCounts, HitError> {
    let file = std::fs::File::create(path).map_err(io_err(path))?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
    w.write_record(HIT_HEADER.split(',')).map_err(csv_err(path))?;
    for hit in hits {
        if hit.candidates.is_empty() {
            w.serialize(row_for(hit, 0, None)).map_err(csv_err(path))?;
        }
        for (i, c) in hit.candidates.iter().enumerate() {
            w.serialize(row_for(hit, i + 1, Some(c))).map_err(csv_err(path))?;
        }
    }
    w.flush().map_err(io_err(path))?;
    Ok(HitCounts::of(hits))
}

/// Reads a HIT file back into HITs, in file order.
pub fn read_hits(path: &Path) -> Result<Vec<Hit>, HitError> {
    let mut reader = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let mut hits: Vec<Hit> = Vec::new();
    for row in reader.deserialize::<HitRow>() {
        let row = row.map_err(csv_err(path))?;
        let kind: HitKind = row.kind.parse().map_err(|reason| HitError::Malformed {
            path: path.to_path_buf(),
            reason,
        })?;
        if hits.last().map(|h| h.hit_id != row.hit_id).unwrap_or(true) {
            hits.push(Hit {
                hit_id: row.hit_id.clone(),
                kind,
                pass_number: row.pass,
                left: RecordDisplay {
                    entity_id: row.left_id.clone(),
                    name: row.left_name.clone(),
                    std_name: row.left_std_name.clone(),
                    address: row.left_addr.clone(),
                    std_address: row.left_std_addr.clone(),
                    zip: row.left_zip.clone(),
                },
                candidates: Vec::new(),
                reason: row.reason.clone(),
            });
        }
        if row.cand_rank > 0 {
            hits.last_mut().unwrap().candidates.push(HitCandidate {
                right: RecordDisplay {
                    entity_id: row.right_id,
                    name: row.right_name,
                    std_name: row.right_std_name,
                    address: row.right_addr,
                    std_address: row.right_std_addr,
                    zip: row.right_zip,
                },
                priority: row.priority.unwrap_or(0),
                name_dice: row.name_dice.unwrap_or(0.0),
                addr_dice: row.addr_dice.unwrap_or(0.0),
            });
        }
    }
    Ok(hits)
}

fn to_row(r: &HitResolution) -> ResolutionRow {
    ResolutionRow {
        hit_id: r.hit_id.clone(),
        decision: r.decision.as_str().into(),
        chosen_right_id: r.chosen_right_entity_id.clone().unwrap_or_default(),
        reviewer: r.reviewer.clone(),
        note: r.note.clone(),
        timestamp: r.timestamp.clone(),
    }
}

/// Reads every row of a resolution log without collapsing duplicates.
pub fn read_resolution_rows(path: &Path) -> Result<Vec<HitResolution>, HitError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(csv_err(path))?;
    let mut out = Vec::new();
    for row in reader.deserialize::<ResolutionRow>() {
        let row = row.map_err(csv_err(path))?;
        let decision: Decision = row.decision.parse().map_err(|_| {
            HitError::InvalidDecision(format!("'{}' for HIT '{}'", row.decision, row.hit_id))
        })?;
        out.push(HitResolution {
            hit_id: row.hit_id,
            decision,
            chosen_right_entity_id: (!row.chosen_right_id.is_empty()).then_some(row.chosen_right_id),
            reviewer: row.reviewer,
            note: row.note,
            timestamp: row.timestamp,
        });
    }
    Ok(out)
}

pub fn write_resolutions(path: &Path, rows: &[HitResolution]) -> Result<(), HitError> {
    let file = std::fs::File::create(path).map_err(io_err(path))?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
    w.write_record(RESOLUTION_HEADER.split(',')).map_err(csv_err(path))?;
    for r in rows {
        w.serialize(to_row(r)).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Appends one resolution and syncs the file before returning.
pub fn append_resolution(path: &Path, res: &HitResolution) -> Result<(), HitError> {
    let fresh = !path.exists() || std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(io_err(path))?;
    let mut buf = Vec::new();
    {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(&mut buf);
        if fresh {
            w.write_record(RESOLUTION_HEADER.split(',')).map_err(csv_err(path))?;
        }
        w.serialize(to_row(res)).map_err(csv_err(path))?;
        w.flush().map_err(io_err(path))?;
    }
    file.write_all(&buf).map_err(io_err(path))?;
    file.sync_all().map_err(io_err(path))
}

/// How to treat resolutions whose HIT is not among the current ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnknownHits {
    Reject,
    /// Keep them aside as orphans (HITs from an earlier, different run).
    Orphan,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Ingested {
    pub resolutions: Vec<HitResolution>,
    pub orphaned: Vec<HitResolution>,
}

/// Reads, collapses and validates a resolution file against `hits`.
/// Either every row validates or an error is returned.
pub fn ingest_resolutions(path: &Path, hits: &[Hit], unknown: UnknownHits) -> Result<Ingested, HitError> {
    let rows = read_resolution_rows(path)?;
    let effective = effective_resolutions(&rows)?;
    let by_id: HashMap<&str, &Hit> = hits.iter().map(|h| (h.hit_id.as_str(), h)).collect();
    let mut out = Ingested::default();
    for r in effective {
        match by_id.get(r.hit_id.as_str()) {
            Some(hit) => {
                validate_resolution(hit, &r)?;
                out.resolutions.push(r);
            }
            None if unknown == UnknownHits::Orphan => out.orphaned.push(r),
            None => return Err(HitError::UnknownHitId(r.hit_id)),
        }
    }
    Ok(out)
}
