//! Scoring curated tables against ground truth.
//!
//! Every attribute is scored under two regimes: `include_not_found`
//! divides correct answers by all evaluated entities (a not_found or
//! failed row counts against the model), while `found_only` divides by
//! the entities the model actually answered. Each score carries an
//! exact binomial confidence interval from [`binomial::clopper_pearson`].

pub mod binomial;
pub mod matching;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use binomial::clopper_pearson;
pub use matching::{match_value, normalize, AliasTable, MatchRule};

use crate::compile::{CellStatus, CuratedTable};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("invalid arguments: {0}")]
    InvalidArgs(String),
    #[error("no entities to evaluate")]
    EmptyTable,
    #[error("ground truth is missing entity {entity_id:?}, attribute {attribute:?}")]
    MissingTruth { entity_id: String, attribute: String },
    #[error("denominator is zero for regime {0}")]
    EmptyDenominator(Regime),
    #[error("malformed ground truth: {0}")]
    MalformedTruth(String),
    #[error("malformed alias table: {0}")]
    MalformedAliases(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    IncludeNotFound,
    FoundOnly,
}

impl Regime {
    pub fn as_str(self) -> &'static str {
        match self {
            Regime::IncludeNotFound => "include_not_found",
            Regime::FoundOnly => "found_only",
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// True values keyed by entity id, then attribute name. Every stored
/// value is non-empty.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GroundTruth {
    values: BTreeMap<String, BTreeMap<String, String>>,
}

impl GroundTruth {
    pub fn get(&self, entity_id: &str, attribute: &str) -> Option<&str> {
        self.values.get(entity_id)?.get(attribute).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn insert(&mut self, entity_id: &str, attribute: &str, value: &str) {
        self.values
            .entry(entity_id.to_string())
            .or_default()
            .insert(attribute.to_string(), value.to_string());
    }
}

/// Parse ground truth CSV: header `entity_id,<attr>,<attr>,...`, one
/// row per entity, every cell filled.
pub fn parse_ground_truth(text: &str) -> Result<GroundTruth, EvalError> {
    let malformed = |detail: String| EvalError::MalformedTruth(detail);
    let mut reader = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| malformed(e.to_string()))?.clone();
    let mut columns = headers.iter();
    if columns.next() != Some("entity_id") {
        return Err(malformed("first column must be entity_id".into()));
    }
    let attributes: Vec<String> = columns.map(str::to_string).collect();
    if attributes.is_empty() {
        return Err(malformed("no attribute columns".into()));
    }

    let mut truth = GroundTruth::default();
    for row in reader.records() {
        let row = row.map_err(|e| malformed(e.to_string()))?;
        let entity_id = row.get(0).unwrap_or_default().to_string();
        if entity_id.is_empty() {
            return Err(malformed("empty entity_id".into()));
        }
        if truth.values.contains_key(&entity_id) {
            return Err(malformed(format!("duplicate entity {entity_id:?}")));
        }
        for (i, attribute) in attributes.iter().enumerate() {
            let value = row.get(i + 1).unwrap_or_default();
            if value.is_empty() {
                return Err(malformed(format!(
                    "empty value for entity {entity_id:?}, attribute {attribute:?}"
                )));
            }
            truth.insert(&entity_id, attribute, value);
        }
    }
    Ok(truth)
}

/// Per-attribute counts feeding both regimes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalCell {
    pub attribute: String,
    pub n_total: u64,
    pub n_found: u64,
    pub k_correct: u64,
}

/// Count per-attribute totals, found answers, and correct answers.
///
/// `n_total` covers every row; rows with status not_found or failed are
/// excluded from `n_found` and can never be correct.
pub fn tally(
    table: &CuratedTable,
    truth: &GroundTruth,
    rule: &MatchRule,
) -> Result<Vec<EvalCell>, EvalError> {
    if table.rows.is_empty() {
        return Err(EvalError::EmptyTable);
    }
    let mut cells = Vec::with_capacity(table.attributes.len());
    for (idx, attr) in table.attributes.iter().enumerate() {
        let mut cell = EvalCell {
            attribute: attr.name.clone(),
            n_total: 0,
            n_found: 0,
            k_correct: 0,
        };
        for row in &table.rows {
            let true_value = truth.get(&row.entity_id, &attr.name).ok_or_else(|| {
                EvalError::MissingTruth {
                    entity_id: row.entity_id.clone(),
                    attribute: attr.name.clone(),
                }
            })?;
            cell.n_total += 1;
            let curated = &row.cells[idx];
            if curated.status == CellStatus::Found {
                cell.n_found += 1;
                if match_value(attr.value_kind, &curated.value, true_value, rule) {
                    cell.k_correct += 1;
                }
            }
        }
        debug_assert!(cell.k_correct <= cell.n_found && cell.n_found <= cell.n_total);
        cells.push(cell);
    }
    Ok(cells)
}

/// Fraction correct under one regime.
pub fn accuracy(cell: &EvalCell, regime: Regime) -> Result<f64, EvalError> {
    let denominator = match regime {
        Regime::IncludeNotFound => cell.n_total,
        Regime::FoundOnly => cell.n_found,
    };
    if denominator == 0 {
        return Err(EvalError::EmptyDenominator(regime));
    }
    Ok(cell.k_correct as f64 / denominator as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeScore {
    pub regime: Regime,
    pub k: u64,
    pub n: u64,
    pub accuracy: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeEval {
    pub cell: EvalCell,
    pub include_not_found: RegimeScore,
    /// None when nothing was found: the regime's accuracy is undefined,
    /// not zero.
    pub found_only: Option<RegimeScore>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub alpha: f64,
    /// Marks reports over knowledge-only baseline runs.
    pub baseline: bool,
    pub attributes: Vec<AttributeEval>,
}

fn score(cell: &EvalCell, regime: Regime, alpha: f64) -> Result<RegimeScore, EvalError> {
    let n = match regime {
        Regime::IncludeNotFound => cell.n_total,
        Regime::FoundOnly => cell.n_found,
    };
    let (ci_low, ci_high) = clopper_pearson(cell.k_correct, n, alpha)?;
    Ok(RegimeScore {
        regime,
        k: cell.k_correct,
        n,
        accuracy: accuracy(cell, regime)?,
        ci_low,
        ci_high,
    })
}

/// Score every attribute under both regimes at level `1 - alpha`.
pub fn evaluate(
    table: &CuratedTable,
    truth: &GroundTruth,
    rule: &MatchRule,
    alpha: f64,
) -> Result<EvalReport, EvalError> {
    let cells = tally(table, truth, rule)?;
    let mut attributes = Vec::with_capacity(cells.len());
    for cell in cells {
        let include_not_found = score(&cell, Regime::IncludeNotFound, alpha)?;
        let found_only = if cell.n_found == 0 {
            None
        } else {
            Some(score(&cell, Regime::FoundOnly, alpha)?)
        };
        attributes.push(AttributeEval { cell, include_not_found, found_only });
    }
    Ok(EvalReport { alpha, baseline: false, attributes })
}

impl EvalReport {
    /// Aligned text table, one line per attribute and regime.
    pub fn render_text(&self) -> String {
        let ci_label = format!("{:.0}% CI", (1.0 - self.alpha) * 100.0);
        let name_width = self
            .attributes
            .iter()
            .map(|a| a.cell.attribute.len())
            .chain(["attribute".len()])
            .max()
            .unwrap_or(9);

        let mut out = String::new();
        if self.baseline {
            out.push_str("mode: knowledge-only baseline (search disabled)\n");
        }
        out.push_str(&format!(
            "{:<name_width$}  {:<17}  {:>9}  {:<16}  {:>9}\n",
            "attribute", "regime", "accuracy", ci_label, "k/n"
        ));
        for attr in &self.attributes {
            let mut line = |score: Option<&RegimeScore>, regime: Regime| {
                match score {
                    Some(s) => out.push_str(&format!(
                        "{:<name_width$}  {:<17}  {:>9.3}  [{:.3}, {:.3}]  {:>9}\n",
                        attr.cell.attribute,
                        regime.as_str(),
                        s.accuracy,
                        s.ci_low,
                        s.ci_high,
                        format!("{}/{}", s.k, s.n),
                    )),
                    None => out.push_str(&format!(
                        "{:<name_width$}  {:<17}  {:>9}  {:<16}  {:>9}\n",
                        attr.cell.attribute,
                        regime.as_str(),
                        "undefined",
                        "-",
                        format!("0/{}", 0),
                    )),
                }
            };
            line(Some(&attr.include_not_found), Regime::IncludeNotFound);
            line(attr.found_only.as_ref(), Regime::FoundOnly);
        }
        out
    }
}
