use crate::ingest::Side;
use crate::standardize::{tokenize, NormalizedRecord, RulePlan};

/// A record with the given raw name/address run through the shipped plans.
pub fn nrec(side: Side, id: &str, row: usize, name: &str, addr: &str, zip: &str) -> NormalizedRecord {
    let view = crate::ingest::EntityView {
        side,
        entity_id: id.into(),
        rows: vec![crate::ingest::SourceRecord {
            side,
            entity_id: id.into(),
            name: name.into(),
            address: addr.into(),
            zip: zip.into(),
            city: String::new(),
            row_index: row,
        }],
    };
    crate::standardize::normalize_entity(&view, &RulePlan::default_name(), &RulePlan::default_address())
        .remove(0)
}

/// A record whose standardized fields are exactly the tokenized inputs.
pub fn plain(side: Side, id: &str, row: usize, name: &str, addr: &str, zip: &str) -> NormalizedRecord {
    let name_tokens = tokenize(name);
    let addr_tokens = tokenize(addr);
    NormalizedRecord {
        side,
        entity_id: id.into(),
        row_index: row,
        raw_name: name.into(),
        std_name: name_tokens.join(" "),
        name_tokens_for_approx: name_tokens.clone(),
        name_tokens,
        raw_address: addr.into(),
        std_address: addr_tokens.join(" "),
        addr_tokens_for_approx: addr_tokens.clone(),
        addr_tokens,
        zip: zip.into(),
        city: String::new(),
        name_trace: vec![],
        addr_trace: vec![],
    }
}
