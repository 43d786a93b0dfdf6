//! Compile checkpointed per-entity results into one flat curated table,
//! and fold in human review overrides.
//!
//! The table is text-valued: one row per entity in the original entity
//! order, and for every attribute three columns named `<attr>`,
//! `<attr>__status`, and `<attr>__provenance`. Values render exactly as
//! the evaluator and any downstream CSV tooling will read them. The
//! typed per-entity JSON files stay the source of truth.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::engine::checkpoint::{CheckpointError, RunDir};
use crate::engine::parse::validate_value;
use crate::engine::AttrStatus;
use crate::task::{AttributeSpec, ValueKind};
use crate::util::atomic_write;

#[derive(Debug, Error)]
pub enum CompileError {
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("run is not finished; missing entities: {}", missing.join(", "))]
    IncompleteRun { missing: Vec<String> },
    #[error("override names unknown entity {0:?}")]
    UnknownEntity(String),
    #[error("override names unknown attribute {0:?}")]
    UnknownAttribute(String),
    #[error("duplicate override for entity {entity_id:?}, attribute {attribute:?}")]
    DuplicateOverride { entity_id: String, attribute: String },
    #[error("malformed override file: {0}")]
    MalformedOverride(String),
    #[error(
        "override value for entity {entity_id:?}, attribute {attribute:?} \
         is invalid: {reason}"
    )]
    InvalidOverrideValue { entity_id: String, attribute: String, reason: String },
    #[error("malformed curated table: {0}")]
    MalformedCurated(String),
}

/// Status of one table cell. `Failed` marks entities the engine gave up
/// on; it is distinct from a model-reported `not_found`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellStatus {
    Found,
    NotFound,
    Failed,
}

impl CellStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            CellStatus::Found => "found",
            CellStatus::NotFound => "not_found",
            CellStatus::Failed => "failed",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellProvenance {
    Model,
    Human,
    Failed,
}

impl CellProvenance {
    pub fn as_str(self) -> &'static str {
        match self {
            CellProvenance::Model => "model",
            CellProvenance::Human => "human",
            CellProvenance::Failed => "failed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CuratedCell {
    pub value: String,
    pub status: CellStatus,
    pub provenance: CellProvenance,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CuratedRow {
    pub entity_id: String,
    /// Key column values, in `key_columns` order.
    pub keys: Vec<String>,
    /// One cell per attribute, in `attributes` order.
    pub cells: Vec<CuratedCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CuratedTable {
    pub key_columns: Vec<String>,
    pub attributes: Vec<AttributeSpec>,
    pub rows: Vec<CuratedRow>,
}

impl CuratedTable {
    pub fn columns(&self) -> Vec<String> {
        let mut cols = self.key_columns.clone();
        for attr in &self.attributes {
            cols.push(attr.name.clone());
            cols.push(format!("{}__status", attr.name));
            cols.push(format!("{}__provenance", attr.name));
        }
        cols
    }

    pub fn attribute_index(&self, name: &str) -> Option<usize> {
        self.attributes.iter().position(|a| a.name == name)
    }

    pub fn row(&self, entity_id: &str) -> Option<&CuratedRow> {
        self.rows.iter().find(|r| r.entity_id == entity_id)
    }

    pub fn to_csv(&self) -> String {
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer.write_record(self.columns()).expect("in-memory write");
        for row in &self.rows {
            let mut record = row.keys.clone();
            for cell in &row.cells {
                record.push(cell.value.clone());
                record.push(cell.status.as_str().to_string());
                record.push(cell.provenance.as_str().to_string());
            }
            writer.write_record(&record).expect("in-memory write");
        }
        String::from_utf8(writer.into_inner().expect("in-memory flush"))
            .expect("csv output is utf-8")
    }

    /// One JSON object per row, keyed by the same column names as the
    /// CSV. Keys serialize sorted, so output is deterministic.
    pub fn to_jsonl(&self) -> String {
        let columns = self.columns();
        let mut out = String::new();
        for row in &self.rows {
            let mut record = row.keys.clone();
            for cell in &row.cells {
                record.push(cell.value.clone());
                record.push(cell.status.as_str().to_string());
                record.push(cell.provenance.as_str().to_string());
            }
            let object: BTreeMap<&str, &str> = columns
                .iter()
                .map(String::as_str)
                .zip(record.iter().map(String::as_str))
                .collect();
            out.push_str(&serde_json::to_string(&object).expect("string map serializes"));
            out.push('\n');
        }
        out
    }

    /// Swap in real attribute definitions for the string-kinded stubs a
    /// reloaded table carries. Attributes absent from `specs` keep their
    /// stubs.
    pub fn retyped(&self, specs: &[AttributeSpec]) -> CuratedTable {
        let mut next = self.clone();
        for attr in &mut next.attributes {
            if let Some(real) = specs.iter().find(|s| s.name == attr.name) {
                *attr = real.clone();
            }
        }
        next
    }
}

fn stub_attribute(name: &str) -> AttributeSpec {
    AttributeSpec {
        name: name.to_string(),
        question_template: String::new(),
        value_kind: ValueKind::String,
        enum_choices: None,
        allow_not_found: true,
    }
}

/// Reload a curated table from its CSV rendering. The file does not
/// store attribute definitions, so every attribute comes back as a
/// string-kinded stub; use [`CuratedTable::retyped`] with the task's
/// attributes when typed handling matters.
pub fn parse_curated_csv(text: &str) -> Result<CuratedTable, CompileError> {
    let malformed = |detail: String| CompileError::MalformedCurated(detail);
    let mut reader = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| malformed(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();

    // Key columns run until the first <name>, <name>__status pair.
    let mut split = header.len();
    for i in 0..header.len().saturating_sub(1) {
        if header[i + 1] == format!("{}__status", header[i]) {
            split = i;
            break;
        }
    }
    if split == 0 || split == header.len() {
        return Err(malformed(
            "header has no key columns or no attribute column triples".into(),
        ));
    }
    let key_columns = header[..split].to_vec();
    let mut attributes = Vec::new();
    let mut i = split;
    while i < header.len() {
        let name = &header[i];
        let want = [name.clone(), format!("{name}__status"), format!("{name}__provenance")];
        if header.len() - i < 3 || header[i..i + 3] != want {
            return Err(malformed(format!(
                "attribute columns for {name:?} must be the triple {want:?}"
            )));
        }
        attributes.push(stub_attribute(name));
        i += 3;
    }

    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| malformed(e.to_string()))?;
        let fields: Vec<&str> = record.iter().collect();
        if fields.len() != header.len() {
            return Err(malformed(format!(
                "row has {} fields, header has {}",
                fields.len(),
                header.len()
            )));
        }
        let keys: Vec<String> = fields[..split].iter().map(|s| s.to_string()).collect();
        let mut cells = Vec::with_capacity(attributes.len());
        for chunk in fields[split..].chunks(3) {
            let status = match chunk[1] {
                "found" => CellStatus::Found,
                "not_found" => CellStatus::NotFound,
                "failed" => CellStatus::Failed,
                other => return Err(malformed(format!("unknown status {other:?}"))),
            };
            let provenance = match chunk[2] {
                "model" => CellProvenance::Model,
                "human" => CellProvenance::Human,
                "failed" => CellProvenance::Failed,
                other => return Err(malformed(format!("unknown provenance {other:?}"))),
            };
            cells.push(CuratedCell { value: chunk[0].to_string(), status, provenance });
        }
        rows.push(CuratedRow { entity_id: keys.join("|"), keys, cells });
    }

    Ok(CuratedTable { key_columns, attributes, rows })
}

/// Merge a finished run directory into a curated table and write
/// `curated.csv` plus `curated.jsonl` beside it.
pub fn compile_run(run_dir: &Path) -> Result<CuratedTable, CompileError> {
    let dir = RunDir::new(run_dir);
    let manifest = dir.load_manifest()?;
    let expected = crate::engine::checkpoint::config_hash(&manifest.task, &manifest.entities);
    if manifest.config_hash != expected {
        return Err(CheckpointError::ConfigHashMismatch {
            expected,
            found: manifest.config_hash,
        }
        .into());
    }

    let state = dir.scan(&manifest.entities)?;
    if !state.pending.is_empty() {
        return Err(CompileError::IncompleteRun { missing: state.pending });
    }

    let spec = &manifest.task;
    let mut rows = Vec::with_capacity(manifest.entities.rows.len());
    for record in &manifest.entities.rows {
        let keys: Vec<String> = spec
            .entity_key_columns
            .iter()
            .map(|c| record.get(c).unwrap_or_default().to_string())
            .collect();
        let cells = if state.done.contains(&record.entity_id) {
            let result = dir.load_result(&record.entity_id)?;
            let by_name: BTreeMap<&str, &crate::engine::AttributeResult> = result
                .attribute_results
                .iter()
                .map(|a| (a.attribute.as_str(), a))
                .collect();
            spec.attributes
                .iter()
                .map(|attr| {
                    let found = by_name.get(attr.name.as_str()).ok_or_else(|| {
                        CheckpointError::Corrupt {
                            path: dir.result_path(&record.entity_id),
                            detail: format!("result lacks attribute {:?}", attr.name),
                        }
                    })?;
                    Ok(CuratedCell {
                        value: found.value_text(),
                        status: match found.status {
                            AttrStatus::Found => CellStatus::Found,
                            AttrStatus::NotFound => CellStatus::NotFound,
                        },
                        provenance: CellProvenance::Model,
                    })
                })
                .collect::<Result<Vec<_>, CompileError>>()?
        } else {
            spec.attributes
                .iter()
                .map(|_| CuratedCell {
                    value: String::new(),
                    status: CellStatus::Failed,
                    provenance: CellProvenance::Failed,
                })
                .collect()
        };
        rows.push(CuratedRow { entity_id: record.entity_id.clone(), keys, cells });
    }

    let table = CuratedTable {
        key_columns: spec.entity_key_columns.clone(),
        attributes: spec.attributes.clone(),
        rows,
    };
    let write = |path: &Path, text: &str| {
        atomic_write(path, text.as_bytes())
            .map_err(|source| CheckpointError::Io { path: path.to_path_buf(), source })
    };
    write(&dir.curated_csv_path(), &table.to_csv())?;
    write(&dir.curated_jsonl_path(), &table.to_jsonl())?;
    Ok(table)
}

/// One human correction: a found value, or an explicit not_found.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OverrideEntry {
    pub entity_id: String,
    pub attribute: String,
    pub status: AttrStatus,
    pub value: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct OverrideSet {
    pub entries: Vec<OverrideEntry>,
}

impl OverrideSet {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Parse an overrides CSV with header `entity_id,attribute,status,value`.
pub fn parse_overrides(text: &str) -> Result<OverrideSet, CompileError> {
    let mut reader = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| CompileError::MalformedOverride(e.to_string()))?
        .clone();
    let expected = ["entity_id", "attribute", "status", "value"];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(CompileError::MalformedOverride(format!(
            "header must be {:?}, got {:?}",
            expected.join(","),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut entries = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| CompileError::MalformedOverride(e.to_string()))?;
        let field = |i: usize| row.get(i).unwrap_or_default().to_string();
        let status = match field(2).as_str() {
            "found" => AttrStatus::Found,
            "not_found" => AttrStatus::NotFound,
            other => {
                return Err(CompileError::MalformedOverride(format!(
                    "status must be found or not_found, got {other:?}"
                )))
            }
        };
        entries.push(OverrideEntry {
            entity_id: field(0),
            attribute: field(1),
            status,
            value: field(3),
        });
    }
    Ok(OverrideSet { entries })
}

pub fn serialize_overrides(set: &OverrideSet) -> String {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer
        .write_record(["entity_id", "attribute", "status", "value"])
        .expect("in-memory write");
    for e in &set.entries {
        let status = match e.status {
            AttrStatus::Found => "found",
            AttrStatus::NotFound => "not_found",
        };
        writer
            .write_record([e.entity_id.as_str(), e.attribute.as_str(), status, &e.value])
            .expect("in-memory write");
    }
    String::from_utf8(writer.into_inner().expect("in-memory flush"))
        .expect("csv output is utf-8")
}

/// Check an override value against its attribute's kind and return the
/// canonical text to store.
fn checked_override_value(
    attr: &AttributeSpec,
    entry: &OverrideEntry,
) -> Result<String, CompileError> {
    let invalid = |reason: String| CompileError::InvalidOverrideValue {
        entity_id: entry.entity_id.clone(),
        attribute: entry.attribute.clone(),
        reason,
    };
    let text = entry.value.trim();
    let value = match attr.value_kind {
        ValueKind::Integer | ValueKind::Year => Value::from(
            text.parse::<i64>()
                .map_err(|_| invalid(format!("expected an integer, got {text:?}")))?,
        ),
        ValueKind::Boolean => match text {
            "true" => Value::Bool(true),
            "false" => Value::Bool(false),
            other => return Err(invalid(format!("expected true or false, got {other:?}"))),
        },
        ValueKind::String | ValueKind::Date | ValueKind::Enum => {
            Value::String(text.to_string())
        }
    };
    validate_value(attr, &value).map_err(|e| invalid(e.to_string()))?;
    Ok(match value {
        Value::String(s) => s,
        other => other.to_string(),
    })
}

/// Apply human overrides. Exactly the named cells change; everything
/// else is carried over untouched.
pub fn apply_overrides(
    table: &CuratedTable,
    overrides: &OverrideSet,
) -> Result<CuratedTable, CompileError> {
    let mut seen: BTreeSet<(String, String)> = BTreeSet::new();
    let mut next = table.clone();
    for entry in &overrides.entries {
        let pair = (entry.entity_id.clone(), entry.attribute.clone());
        if !seen.insert(pair) {
            return Err(CompileError::DuplicateOverride {
                entity_id: entry.entity_id.clone(),
                attribute: entry.attribute.clone(),
            });
        }
        let attr_idx = table
            .attribute_index(&entry.attribute)
            .ok_or_else(|| CompileError::UnknownAttribute(entry.attribute.clone()))?;
        let row = next
            .rows
            .iter_mut()
            .find(|r| r.entity_id == entry.entity_id)
            .ok_or_else(|| CompileError::UnknownEntity(entry.entity_id.clone()))?;
        row.cells[attr_idx] = match entry.status {
            AttrStatus::Found => CuratedCell {
                value: checked_override_value(&table.attributes[attr_idx], entry)?,
                status: CellStatus::Found,
                provenance: CellProvenance::Human,
            },
            AttrStatus::NotFound => CuratedCell {
                value: String::new(),
                status: CellStatus::NotFound,
                provenance: CellProvenance::Human,
            },
        };
    }
    Ok(next)
}
