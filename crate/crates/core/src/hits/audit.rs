use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use super::HitError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditEvent {
    HitsEmitted,
    ResolutionIngested,
    CrosswalkUpdated,
    PassCompleted,
}

/// `sha256:<hex>` of the bytes.
pub fn digest(bytes: &[u8]) -> String {
    format!("sha256:{}", hex::encode(Sha256::digest(bytes)))
}

#[derive(Serialize)]
struct AuditLine<'a> {
    ts: String,
    event: AuditEvent,
    digest: &'a str,
    payload: &'a serde_json::Value,
}

/// Appends one JSON line to the audit log. The log is only ever appended to.
/// Returns the payload digest.
pub fn audit_append(path: &Path, event: AuditEvent, payload: &serde_json::Value) -> Result<String, HitError> {
    let io = |source| HitError::IoFailure {
        path: path.to_path_buf(),
        source,
    };
    let payload_digest = digest(&serde_json::to_vec(payload).expect("json values serialize"));
    let line = AuditLine {
        ts: chrono::Utc::now().to_rfc3339(),
        event,
        digest: &payload_digest,
        payload,
    };
    let mut text = serde_json::to_string(&line).expect("audit line serializes");
    text.push('\n');
    let mut file = OpenOptions::new().create(true).append(true).open(path).map_err(io)?;
    file.write_all(text.as_bytes()).map_err(io)?;
    Ok(payload_digest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn appends_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("audit.jsonl");
        let d1 = audit_append(&path, AuditEvent::HitsEmitted, &serde_json::json!({"count": 0})).unwrap();
        let d2 = audit_append(&path, AuditEvent::HitsEmitted, &serde_json::json!({"count": 0})).unwrap();
        assert_eq!(d1, d2);
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0]["event"], "hits_emitted");
        assert_eq!(lines[0]["payload"]["count"], 0);
    }
}
