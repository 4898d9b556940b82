//! Ordered standardization rules for names and addresses.
//!
//! A [`RulePlan`] is an ordered list of token-level rewrite rules compiled
//! from a JSON document. Order is significant: `[drop "hospital", replace
//! "hosp" -> "hospital"]` and its reverse give different results on `"hosp"`.
//! Replace and drop rules only ever match whole whitespace-separated tokens,
//! so `street` never rewrites the inside of `streeter`.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::ingest::{EntityView, Side};

pub const DEFAULT_NAME_RULES: &str = include_str!("../rules/name_rules.json");
pub const DEFAULT_ADDR_RULES: &str = include_str!("../rules/addr_rules.json");

#[derive(Debug, thiserror::Error)]
pub enum RuleError {
    #[error("ruleset is not valid JSON: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("rule {index}: unknown rule kind '{kind}'")]
    UnknownRuleKind { index: usize, kind: String },
    #[error("rule {index}: null_fallback must be the last rule (and appear once)")]
    FallbackNotLast { index: usize },
    #[error("pattern '{pattern}' appears in rules {first} and {second}")]
    DuplicatePattern {
        pattern: String,
        first: usize,
        second: usize,
    },
    #[error("rule {index}: {reason}")]
    InvalidRule { index: usize, reason: String },
    #[error("failed to read ruleset {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleKind {
    Lowercase,
    StripSpecial,
    ReplaceToken,
    DropToken,
    CollapseWhitespace,
    NullFallback,
}

impl RuleKind {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "lowercase" => Self::Lowercase,
            "strip_special" => Self::StripSpecial,
            "replace_token" => Self::ReplaceToken,
            "drop_token" => Self::DropToken,
            "collapse_whitespace" => Self::CollapseWhitespace,
            "null_fallback" => Self::NullFallback,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rule {
    pub kind: RuleKind,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub pattern: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub replacement: String,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub ignore_for_approx: bool,
}

impl Rule {
    pub fn new(kind: RuleKind) -> Self {
        Self {
            kind,
            pattern: String::new(),
            replacement: String::new(),
            ignore_for_approx: false,
        }
    }

    pub fn replace(pattern: &str, replacement: &str) -> Self {
        Self {
            pattern: pattern.into(),
            replacement: replacement.into(),
            ..Self::new(RuleKind::ReplaceToken)
        }
    }

    pub fn drop(pattern: &str) -> Self {
        Self {
            pattern: pattern.into(),
            ..Self::new(RuleKind::DropToken)
        }
    }

    pub fn ignored(mut self) -> Self {
        self.ignore_for_approx = true;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    Name,
    Address,
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Target::Name => "name",
            Target::Address => "address",
        })
    }
}

/// A validated, ordered rule list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RulePlan {
    pub target: Target,
    rules: Vec<Rule>,
    ignore_tokens: BTreeSet<String>,
}

impl RulePlan {
    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    /// Standardized tokens excluded from approximate comparison.
    pub fn ignore_tokens(&self) -> &BTreeSet<String> {
        &self.ignore_tokens
    }

    pub fn default_name() -> Self {
        compile_rules(Target::Name, DEFAULT_NAME_RULES).expect("shipped name rules compile")
    }

    pub fn default_address() -> Self {
        compile_rules(Target::Address, DEFAULT_ADDR_RULES).expect("shipped address rules compile")
    }

    pub fn load(target: Target, path: &Path) -> Result<Self, RuleError> {
        let text = std::fs::read_to_string(path).map_err(|source| RuleError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        compile_rules(target, &text)
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRule {
    kind: String,
    #[serde(default)]
    pattern: Option<String>,
    #[serde(default)]
    replacement: Option<String>,
    #[serde(default)]
    ignore_for_approx: bool,
}

/// Parses and validates a JSON ruleset document.
pub fn compile_rules(target: Target, document: &str) -> Result<RulePlan, RuleError> {
    let raw: Vec<RawRule> = serde_json::from_str(document)?;
    let mut rules = Vec::with_capacity(raw.len());
    for (index, r) in raw.into_iter().enumerate() {
        let kind = RuleKind::parse(&r.kind).ok_or_else(|| RuleError::UnknownRuleKind {
            index,
            kind: r.kind.clone(),
        })?;
        rules.push(Rule {
            kind,
            pattern: r.pattern.unwrap_or_default(),
            replacement: r.replacement.unwrap_or_default(),
            ignore_for_approx: r.ignore_for_approx,
        });
    }
    compile_rule_list(target, rules)
}

/// Validates an already-built rule list.
pub fn compile_rule_list(target: Target, rules: Vec<Rule>) -> Result<RulePlan, RuleError> {
    let invalid = |index: usize, reason: &str| RuleError::InvalidRule {
        index,
        reason: reason.to_string(),
    };
    let mut seen: HashMap<&str, usize> = HashMap::new();
    let mut ignore_tokens = BTreeSet::new();
    for (index, rule) in rules.iter().enumerate() {
        let has_ws = |s: &str| s.chars().any(char::is_whitespace);
        match rule.kind {
            RuleKind::ReplaceToken | RuleKind::DropToken => {
                if rule.pattern.is_empty() {
                    return Err(invalid(index, "pattern must not be empty"));
                }
                if has_ws(&rule.pattern) {
                    return Err(invalid(index, "pattern must be a single token"));
                }
                if rule.kind == RuleKind::ReplaceToken && rule.replacement.trim().is_empty() {
                    return Err(invalid(index, "replace_token needs a replacement"));
                }
                if rule.kind == RuleKind::DropToken && !rule.replacement.is_empty() {
                    return Err(invalid(index, "drop_token takes no replacement"));
                }
                if let Some(&first) = seen.get(rule.pattern.as_str()) {
                    return Err(RuleError::DuplicatePattern {
                        pattern: rule.pattern.clone(),
                        first,
                        second: index,
                    });
                }
                seen.insert(&rule.pattern, index);
            }
            RuleKind::NullFallback => {
                if index + 1 != rules.len() {
                    return Err(RuleError::FallbackNotLast { index });
                }
                if !rule.pattern.is_empty() || !rule.replacement.is_empty() {
                    return Err(invalid(index, "null_fallback takes no pattern or replacement"));
                }
            }
            _ => {
                if !rule.pattern.is_empty() || !rule.replacement.is_empty() {
                    return Err(invalid(index, "this rule kind takes no pattern or replacement"));
                }
            }
        }
        if rule.ignore_for_approx {
            if rule.kind != RuleKind::ReplaceToken {
                return Err(invalid(index, "ignore_for_approx only applies to replace_token"));
            }
            ignore_tokens.extend(rule.replacement.split_whitespace().map(str::to_string));
        }
    }
    Ok(RulePlan {
        target,
        rules,
        ignore_tokens,
    })
}

/// Canonical tokenizer: lowercase, non-alphanumerics become spaces, split on
/// whitespace.
pub fn tokenize(value: &str) -> Vec<String> {
    strip_special(&value.to_lowercase())
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

fn strip_special(value: &str) -> String {
    value
        .chars()
        .map(|c| {
            if c.is_alphanumeric() || c.is_whitespace() {
                c
            } else {
                ' '
            }
        })
        .collect()
}

/// One rule application that changed the value. `rule` is `None` for the
/// final canonical tokenization step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceStep {
    pub rule: Option<usize>,
    pub before: String,
    pub after: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Standardized {
    pub value: String,
    pub tokens: Vec<String>,
    pub trace: Vec<TraceStep>,
}

fn rewrite_tokens<'a>(
    current: &'a str,
    f: impl Fn(&str) -> Option<Option<&'a str>>,
) -> Option<String> {
    let mut changed = false;
    let mut out: Vec<&'a str> = Vec::new();
    for token in current.split_whitespace() {
        match f(token) {
            Some(Some(rep)) => {
                changed = true;
                out.extend(rep.split_whitespace());
            }
            Some(None) => changed = true,
            None => out.push(token),
        }
    }
    changed.then(|| out.join(" "))
}

fn apply_one(rule: &Rule, current: &str, original: &str) -> String {
    match rule.kind {
        RuleKind::Lowercase => current.to_lowercase(),
        RuleKind::StripSpecial => strip_special(current),
        RuleKind::CollapseWhitespace => current.split_whitespace().collect::<Vec<_>>().join(" "),
        RuleKind::ReplaceToken => rewrite_tokens(current, |t| {
            (t == rule.pattern).then_some(Some(rule.replacement.as_str()))
        })
        .unwrap_or_else(|| current.to_string()),
        RuleKind::DropToken => rewrite_tokens(current, |t| (t == rule.pattern).then_some(None))
            .unwrap_or_else(|| current.to_string()),
        RuleKind::NullFallback => {
            if tokenize(current).is_empty() {
                tokenize(original).join(" ")
            } else {
                current.to_string()
            }
        }
    }
}

/// Applies `plan` to `value` in authored order.
///
/// The result always goes through the canonical tokenizer, so an empty plan
/// reduces to [`tokenize`].
pub fn apply_rules(value: &str, plan: &RulePlan) -> Standardized {
    let mut trace = Vec::new();
    let mut current = value.to_string();
    for (i, rule) in plan.rules.iter().enumerate() {
        let next = apply_one(rule, &current, value);
        if next != current {
            trace.push(TraceStep {
                rule: Some(i),
                before: std::mem::replace(&mut current, next.clone()),
                after: next,
            });
        }
    }
    let tokens = tokenize(&current);
    let joined = tokens.join(" ");
    if joined != current {
        trace.push(TraceStep {
            rule: None,
            before: current,
            after: joined.clone(),
        });
    }
    Standardized {
        value: joined,
        tokens,
        trace,
    }
}

/// Replays a trace over the raw value. Returns `None` if a step does not
/// start from the value produced by the previous one.
pub fn replay_trace(raw: &str, trace: &[TraceStep]) -> Option<String> {
    let mut current = raw.to_string();
    for step in trace {
        if step.before != current {
            return None;
        }
        current = step.after.clone();
    }
    Some(current)
}

/// An entity row after standardization.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormalizedRecord {
    pub side: Side,
    pub entity_id: String,
    pub row_index: usize,
    pub raw_name: String,
    pub std_name: String,
    pub name_tokens: Vec<String>,
    pub name_tokens_for_approx: Vec<String>,
    pub raw_address: String,
    pub std_address: String,
    pub addr_tokens: Vec<String>,
    pub addr_tokens_for_approx: Vec<String>,
    pub zip: String,
    pub city: String,
    pub name_trace: Vec<TraceStep>,
    pub addr_trace: Vec<TraceStep>,
}

fn without(tokens: &[String], ignore: &BTreeSet<String>) -> Vec<String> {
    tokens
        .iter()
        .filter(|t| !ignore.contains(*t))
        .cloned()
        .collect()
}

/// Standardizes every row of an entity.
pub fn normalize_entity(
    view: &EntityView,
    name_plan: &RulePlan,
    addr_plan: &RulePlan,
) -> Vec<NormalizedRecord> {
    view.rows
        .iter()
        .map(|row| {
            let name = apply_rules(&row.name, name_plan);
            let addr = apply_rules(&row.address, addr_plan);
            NormalizedRecord {
                side: row.side,
                entity_id: row.entity_id.clone(),
                row_index: row.row_index,
                raw_name: row.name.clone(),
                name_tokens_for_approx: without(&name.tokens, name_plan.ignore_tokens()),
                std_name: name.value,
                name_tokens: name.tokens,
                raw_address: row.address.clone(),
                addr_tokens_for_approx: without(&addr.tokens, addr_plan.ignore_tokens()),
                std_address: addr.value,
                addr_tokens: addr.tokens,
                zip: row.zip.clone(),
                city: tokenize(&row.city).join(" "),
                name_trace: name.trace,
                addr_trace: addr.trace,
            }
        })
        .collect()
}
