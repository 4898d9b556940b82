//! Loading source CSV files, grouping multi-row entities and profiling
//! attributes.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::standardize::tokenize;

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("{path}: column '{column}' (mapped for {field}) not found in header")]
    MissingColumn {
        path: PathBuf,
        field: &'static str,
        column: String,
    },
    #[error("{path}: malformed CSV: {reason}")]
    MalformedCsv { path: PathBuf, reason: String },
    #[error("{path}: row {row} has an empty entity id")]
    EmptyEntityId { path: PathBuf, row: usize },
    #[error("attribute '{0}' has no non-empty values")]
    AllMissing(Attribute),
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::Left => "left",
            Side::Right => "right",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Attribute {
    Name,
    Address,
    Zip,
    City,
}

impl fmt::Display for Attribute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Attribute::Name => "name",
            Attribute::Address => "address",
            Attribute::Zip => "zip",
            Attribute::City => "city",
        })
    }
}

impl std::str::FromStr for Attribute {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "name" => Ok(Attribute::Name),
            "address" | "addr" => Ok(Attribute::Address),
            "zip" => Ok(Attribute::Zip),
            "city" => Ok(Attribute::City),
            other => Err(format!("unknown attribute '{other}'")),
        }
    }
}

/// Maps logical fields onto the column headers of one input file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnMap {
    pub id: String,
    pub name: String,
    pub address: String,
    pub zip: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub city: Option<String>,
}

impl Default for ColumnMap {
    fn default() -> Self {
        Self {
            id: "id".into(),
            name: "name".into(),
            address: "address".into(),
            zip: "zip".into(),
            city: None,
        }
    }
}

/// One data row of a source file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceRecord {
    pub side: Side,
    pub entity_id: String,
    pub name: String,
    pub address: String,
    pub zip: String,
    pub city: String,
    pub row_index: usize,
}

impl SourceRecord {
    pub fn attribute(&self, attribute: Attribute) -> &str {
        match attribute {
            Attribute::Name => &self.name,
            Attribute::Address => &self.address,
            Attribute::Zip => &self.zip,
            Attribute::City => &self.city,
        }
    }
}

/// All rows of one real-world entity, in input order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityView {
    pub side: Side,
    pub entity_id: String,
    pub rows: Vec<SourceRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeProfile {
    pub attribute: Attribute,
    pub distinct_count: usize,
    pub entropy_bits: f64,
    pub missing_fraction: f64,
    pub top_tokens: Vec<(String, usize)>,
}

/// Reduces a raw zip cell to its 5-digit form.
///
/// ZIP+4 suffixes are cut, and digit strings shorter than five characters get
/// their leading zeros back (spreadsheet exports routinely drop them). Values
/// that are not digit strings come back empty.
pub fn normalize_zip(raw: &str) -> String {
    let trimmed = raw.trim();
    let head = trimmed.split('-').next().unwrap_or("").trim();
    if head.is_empty() || !head.bytes().all(|b| b.is_ascii_digit()) {
        return String::new();
    }
    if head.len() >= 5 {
        head[..5].to_string()
    } else {
        format!("{head:0>5}")
    }
}

/// Loads one side's records from a CSV file.
pub fn load_source(
    path: &Path,
    side: Side,
    columns: &ColumnMap,
) -> Result<Vec<SourceRecord>, IngestError> {
    let bytes = std::fs::read(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_source(&bytes, path, side, columns)
}

/// Parses CSV bytes; `origin` is only used in error messages.
pub fn parse_source(
    bytes: &[u8],
    origin: &Path,
    side: Side,
    columns: &ColumnMap,
) -> Result<Vec<SourceRecord>, IngestError> {
    let malformed = |reason: String| IngestError::MalformedCsv {
        path: origin.to_path_buf(),
        reason,
    };
    // RFC 4180 escapes quotes by doubling, so a well-formed file always has an
    // even number of them.
    if bytecount_quotes(bytes) % 2 == 1 {
        return Err(malformed("unbalanced quotes".into()));
    }

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(bytes);
    let headers = reader
        .headers()
        .map_err(|e| malformed(e.to_string()))?
        .clone();
    let locate = |field: &'static str, column: &str| {
        headers
            .iter()
            .position(|h| h.trim() == column)
            .ok_or_else(|| IngestError::MissingColumn {
                path: origin.to_path_buf(),
                field,
                column: column.to_string(),
            })
    };
    let id_col = locate("id", &columns.id)?;
    let name_col = locate("name", &columns.name)?;
    let addr_col = locate("address", &columns.address)?;
    let zip_col = locate("zip", &columns.zip)?;
    let city_col = match &columns.city {
        Some(c) => Some(locate("city", c)?),
        None => None,
    };

    let mut records = Vec::new();
    for (row_index, row) in reader.records().enumerate() {
        let row = row.map_err(|e| malformed(e.to_string()))?;
        let cell = |i: usize| row.get(i).unwrap_or("").trim().to_string();
        let entity_id = cell(id_col);
        if entity_id.is_empty() {
            return Err(IngestError::EmptyEntityId {
                path: origin.to_path_buf(),
                row: row_index,
            });
        }
        records.push(SourceRecord {
            side,
            entity_id,
            name: cell(name_col),
            address: cell(addr_col),
            zip: normalize_zip(&cell(zip_col)),
            city: city_col.map(cell).unwrap_or_default(),
            row_index,
        });
    }
    if records.is_empty() {
        log::warn!("{}: no data rows", origin.display());
    }
    Ok(records)
}

fn bytecount_quotes(bytes: &[u8]) -> usize {
    bytes.iter().filter(|&&b| b == b'"').count()
}

/// Groups records into one view per (side, entity id).
///
/// Views come out in order of each entity's first row; rows inside a view
/// keep their `row_index` order.
pub fn group_entities(records: &[SourceRecord]) -> Vec<EntityView> {
    let mut slot: HashMap<(Side, &str), usize> = HashMap::new();
    let mut views: Vec<EntityView> = Vec::new();
    let mut sorted: Vec<&SourceRecord> = records.iter().collect();
    sorted.sort_by_key(|r| (r.side, r.row_index));
    for record in sorted {
        let key = (record.side, record.entity_id.as_str());
        match slot.get(&key) {
            Some(&i) => views[i].rows.push(record.clone()),
            None => {
                slot.insert(key, views.len());
                views.push(EntityView {
                    side: record.side,
                    entity_id: record.entity_id.clone(),
                    rows: vec![record.clone()],
                });
            }
        }
    }
    views
}

fn value_counts(
    records: &[SourceRecord],
    attribute: Attribute,
) -> (BTreeMap<&str, usize>, usize) {
    let mut counts = BTreeMap::new();
    let mut missing = 0;
    for r in records {
        let v = r.attribute(attribute);
        if v.is_empty() {
            missing += 1;
        } else {
            *counts.entry(v).or_insert(0) += 1;
        }
    }
    (counts, missing)
}

fn entropy_of(counts: impl IntoIterator<Item = usize>) -> f64 {
    let counts: Vec<usize> = counts.into_iter().collect();
    let total: usize = counts.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let n = total as f64;
    let h: f64 = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum();
    // a single value gives -1*log2(1) = -0.0
    h.max(0.0)
}

/// Shannon entropy in bits of the non-empty values of `attribute`.
pub fn attribute_entropy(
    records: &[SourceRecord],
    attribute: Attribute,
) -> Result<f64, IngestError> {
    let (counts, _) = value_counts(records, attribute);
    if counts.is_empty() {
        return Err(IngestError::AllMissing(attribute));
    }
    Ok(entropy_of(counts.into_values()))
}

/// Token frequencies over all rows, most frequent first (ties by token).
pub fn frequent_tokens(
    records: &[SourceRecord],
    attribute: Attribute,
    min_count: usize,
) -> Vec<(String, usize)> {
    let min_count = min_count.max(1);
    let mut counts: HashMap<String, usize> = HashMap::new();
    for r in records {
        for token in tokenize(r.attribute(attribute)) {
            *counts.entry(token).or_insert(0) += 1;
        }
    }
    let mut out: Vec<(String, usize)> = counts
        .into_iter()
        .filter(|(_, c)| *c >= min_count)
        .collect();
    out.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    out
}

/// Full profile of one attribute; `top_n` caps the token list.
pub fn profile_attribute(
    records: &[SourceRecord],
    attribute: Attribute,
    top_n: usize,
) -> Result<AttributeProfile, IngestError> {
    let (counts, missing) = value_counts(records, attribute);
    if counts.is_empty() {
        return Err(IngestError::AllMissing(attribute));
    }
    let distinct_count = counts.len();
    let entropy_bits = entropy_of(counts.into_values());
    let mut top_tokens = frequent_tokens(records, attribute, 1);
    top_tokens.truncate(top_n);
    Ok(AttributeProfile {
        attribute,
        distinct_count,
        entropy_bits,
        missing_fraction: missing as f64 / records.len() as f64,
        top_tokens,
    })
}
