//! Value matching between curated cells and ground truth.
//!
//! Numbers, dates, booleans, and enum choices compare exactly after
//! parsing. Strings are normalized (trim, case fold, collapse runs of
//! whitespace) and optionally routed through an alias table so that
//! name variants ("MIT", "Massachusetts Institute of Technology") count
//! as the same answer. Matching is total: anything unparseable simply
//! does not match.

use std::collections::BTreeMap;

use chrono::NaiveDate;

use super::EvalError;
use crate::task::ValueKind;

/// Trim, lowercase, and collapse internal whitespace.
pub fn normalize(s: &str) -> String {
    s.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

/// Maps normalized name variants to a canonical form. Canonical names
/// map to themselves.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AliasTable {
    canonical: BTreeMap<String, String>,
}

impl AliasTable {
    /// Parse a two-column CSV with header `variant,canonical`.
    pub fn from_csv(text: &str) -> Result<Self, EvalError> {
        let mut reader = csv::ReaderBuilder::new().from_reader(text.as_bytes());
        let headers = reader
            .headers()
            .map_err(|e| EvalError::MalformedAliases(e.to_string()))?
            .clone();
        if headers.iter().collect::<Vec<_>>() != ["variant", "canonical"] {
            return Err(EvalError::MalformedAliases(format!(
                "header must be variant,canonical, got {:?}",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut table = AliasTable::default();
        for row in reader.records() {
            let row = row.map_err(|e| EvalError::MalformedAliases(e.to_string()))?;
            let variant = normalize(row.get(0).unwrap_or_default());
            let canonical = normalize(row.get(1).unwrap_or_default());
            if variant.is_empty() || canonical.is_empty() {
                return Err(EvalError::MalformedAliases(
                    "empty variant or canonical name".into(),
                ));
            }
            table.canonical.insert(variant, canonical.clone());
            table.canonical.insert(canonical.clone(), canonical);
        }
        Ok(table)
    }

    pub fn is_empty(&self) -> bool {
        self.canonical.is_empty()
    }

    /// Resolve an already-normalized string to its canonical form.
    pub fn resolve<'a>(&'a self, normalized: &'a str) -> &'a str {
        self.canonical
            .get(normalized)
            .map(String::as_str)
            .unwrap_or(normalized)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MatchRule {
    pub aliases: AliasTable,
}

impl MatchRule {
    pub fn with_aliases(aliases: AliasTable) -> Self {
        MatchRule { aliases }
    }
}

/// Does a found value agree with the ground truth under `rule`?
pub fn match_value(kind: ValueKind, predicted: &str, truth: &str, rule: &MatchRule) -> bool {
    match kind {
        ValueKind::Integer | ValueKind::Year => {
            match (predicted.trim().parse::<i64>(), truth.trim().parse::<i64>()) {
                (Ok(a), Ok(b)) => a == b,
                _ => false,
            }
        }
        ValueKind::Date => {
            let parse = |s: &str| NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d");
            match (parse(predicted), parse(truth)) {
                (Ok(a), Ok(b)) => a == b,
                _ => false,
            }
        }
        ValueKind::Boolean => {
            match (predicted.trim().parse::<bool>(), truth.trim().parse::<bool>()) {
                (Ok(a), Ok(b)) => a == b,
                _ => false,
            }
        }
        ValueKind::Enum => predicted.trim() == truth.trim(),
        ValueKind::String => {
            let a = normalize(predicted);
            let b = normalize(truth);
            rule.aliases.resolve(&a) == rule.aliases.resolve(&b)
        }
    }
}
