//! Task descriptors and entity tables.
//!
//! A task is defined by two small files: a YAML descriptor (schema,
//! prompts, model settings, pricing) and a CSV of entities. Parsing is
//! two-stage: serde gets the raw shape, then validation produces either a
//! [`TaskSpec`] whose invariants all hold or a typed [`TaskError`].
//! Everything downstream may assume a validated spec.

use std::collections::{BTreeSet, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ledger::PricingTable;
use crate::provider::schema::build_output_schema;
use crate::provider::SchemaDoc;

pub const DEFAULT_MAX_ATTEMPTS: u32 = 3;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TaskError {
    #[error("malformed YAML: {0}")]
    MalformedYaml(String),
    #[error("missing or empty field: {0}")]
    MissingField(String),
    #[error("duplicate attribute name: {0}")]
    DuplicateAttribute(String),
    #[error("unknown value kind: {0}")]
    UnknownValueKind(String),
    #[error("invalid placeholder {name:?} in template {template:?}")]
    InvalidPlaceholder { template: String, name: String },
    #[error("invalid {field}: {reason}")]
    InvalidField { field: String, reason: String },
    #[error("malformed CSV: {0}")]
    MalformedCsv(String),
    #[error("entity file is missing required column: {0}")]
    MissingColumn(String),
    #[error("duplicate entity id: {0}")]
    DuplicateEntityId(String),
    #[error("entity file contains no data rows")]
    EmptyEntitySet,
}

/// What type an attribute's extracted value must have.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValueKind {
    String,
    Integer,
    Year,
    Date,
    Boolean,
    Enum,
}

impl ValueKind {
    pub fn parse(s: &str) -> Result<Self, TaskError> {
        match s {
            "string" => Ok(ValueKind::String),
            "integer" => Ok(ValueKind::Integer),
            "year" => Ok(ValueKind::Year),
            "date" => Ok(ValueKind::Date),
            "boolean" => Ok(ValueKind::Boolean),
            "enum" => Ok(ValueKind::Enum),
            other => Err(TaskError::UnknownValueKind(other.to_string())),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ValueKind::String => "string",
            ValueKind::Integer => "integer",
            ValueKind::Year => "year",
            ValueKind::Date => "date",
            ValueKind::Boolean => "boolean",
            ValueKind::Enum => "enum",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeSpec {
    pub name: String,
    pub question_template: String,
    pub value_kind: ValueKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub enum_choices: Option<Vec<String>>,
    #[serde(default = "default_true")]
    pub allow_not_found: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub model_id: String,
    #[serde(default = "default_true")]
    pub search_enabled: bool,
    pub max_output_tokens: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionConfig {
    pub max_parallel: u32,
    pub requests_per_minute: u32,
    #[serde(default = "default_max_attempts")]
    pub max_attempts: u32,
}

/// A validated task descriptor. Construct via [`parse_task_spec`]; the
/// fields are public for reading but the invariants are only guaranteed
/// on values that came through validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_name: String,
    pub system_prompt: String,
    pub entity_key_columns: Vec<String>,
    pub attributes: Vec<AttributeSpec>,
    pub model: ModelConfig,
    pub execution: ExecutionConfig,
    pub pricing: PricingTable,
}

impl TaskSpec {
    pub fn attribute(&self, name: &str) -> Option<&AttributeSpec> {
        self.attributes.iter().find(|a| a.name == name)
    }

    /// Columns referenced by `{placeholder}`s in the system prompt or any
    /// question template, sorted and deduplicated.
    pub fn placeholder_columns(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        // Validation already proved these templates scan cleanly.
        out.extend(scan_placeholders(&self.system_prompt).unwrap_or_default());
        for attr in &self.attributes {
            out.extend(scan_placeholders(&attr.question_template).unwrap_or_default());
        }
        out
    }

    /// Every column the entity file must provide: key columns plus all
    /// placeholder columns.
    pub fn required_columns(&self) -> BTreeSet<String> {
        let mut out = self.placeholder_columns();
        out.extend(self.entity_key_columns.iter().cloned());
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityRecord {
    pub entity_id: String,
    /// Column/value pairs in file column order.
    pub fields: Vec<(String, String)>,
}

impl EntityRecord {
    pub fn get(&self, column: &str) -> Option<&str> {
        self.fields
            .iter()
            .find(|(name, _)| name == column)
            .map(|(_, value)| value.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntitySet {
    pub columns: Vec<String>,
    pub rows: Vec<EntityRecord>,
}

impl EntitySet {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn get(&self, entity_id: &str) -> Option<&EntityRecord> {
        self.rows.iter().find(|r| r.entity_id == entity_id)
    }
}

/// The fully rendered inputs for one entity's model call.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptBundle {
    pub system: String,
    pub user: String,
    pub output_schema: SchemaDoc,
}

fn default_true() -> bool {
    true
}

fn default_max_attempts() -> u32 {
    DEFAULT_MAX_ATTEMPTS
}

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn is_snake_name(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_lowercase())
        && chars.all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
}

/// Collect placeholder names from a template, or return the offending
/// fragment. `{` opens a placeholder and must be followed by an
/// identifier and `}`; a bare `}` is literal text.
fn scan_placeholders(template: &str) -> Result<Vec<String>, String> {
    let mut names = Vec::new();
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        let after = &rest[open + 1..];
        let close = match after.find('}') {
            Some(c) => c,
            None => return Err(rest[open..].to_string()),
        };
        let name = &after[..close];
        if !is_identifier(name) {
            return Err(name.to_string());
        }
        names.push(name.to_string());
        rest = &after[close + 1..];
    }
    Ok(names)
}

/// Substitute `{column}` placeholders from `record` in a single pass.
/// Substituted values are emitted verbatim and never re-scanned.
fn substitute(template: &str, record: &EntityRecord) -> Result<String, TaskError> {
    let invalid = |name: &str| TaskError::InvalidPlaceholder {
        template: template.to_string(),
        name: name.to_string(),
    };
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let close = after.find('}').ok_or_else(|| invalid(&rest[open..]))?;
        let name = &after[..close];
        let value = record.get(name).ok_or_else(|| invalid(name))?;
        out.push_str(value);
        rest = &after[close + 1..];
    }
    out.push_str(rest);
    Ok(out)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTaskSpec {
    task_name: Option<String>,
    system_prompt: Option<String>,
    entity_key_columns: Option<Vec<String>>,
    attributes: Option<Vec<RawAttribute>>,
    model: Option<RawModel>,
    execution: Option<RawExecution>,
    pricing: Option<PricingTable>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAttribute {
    name: Option<String>,
    question_template: Option<String>,
    value_kind: Option<String>,
    enum_choices: Option<Vec<String>>,
    allow_not_found: Option<bool>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    model_id: Option<String>,
    search_enabled: Option<bool>,
    max_output_tokens: Option<u32>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawExecution {
    max_parallel: Option<u32>,
    requests_per_minute: Option<u32>,
    max_attempts: Option<u32>,
}

fn require<T>(value: Option<T>, field: &str) -> Result<T, TaskError> {
    value.ok_or_else(|| TaskError::MissingField(field.to_string()))
}

fn require_text(value: Option<String>, field: &str) -> Result<String, TaskError> {
    match value {
        Some(s) if !s.trim().is_empty() => Ok(s),
        _ => Err(TaskError::MissingField(field.to_string())),
    }
}

fn require_positive(value: Option<u32>, field: &str) -> Result<u32, TaskError> {
    let v = require(value, field)?;
    if v == 0 {
        return Err(TaskError::InvalidField {
            field: field.to_string(),
            reason: "must be positive".to_string(),
        });
    }
    Ok(v)
}

fn validate_template(template: &str) -> Result<(), TaskError> {
    scan_placeholders(template).map(drop).map_err(|name| {
        TaskError::InvalidPlaceholder { template: template.to_string(), name }
    })
}

fn validate_attribute(raw: RawAttribute, index: usize) -> Result<AttributeSpec, TaskError> {
    let at = |field: &str| format!("attributes[{index}].{field}");
    let name = require_text(raw.name, &at("name"))?;
    if !is_snake_name(&name) {
        return Err(TaskError::InvalidField {
            field: at("name"),
            reason: format!("{name:?} must match [a-z][a-z0-9_]*"),
        });
    }
    let question_template = require_text(raw.question_template, &at("question_template"))?;
    validate_template(&question_template)?;
    let value_kind = ValueKind::parse(&require_text(raw.value_kind, &at("value_kind"))?)?;
    let enum_choices = match (value_kind, raw.enum_choices) {
        (ValueKind::Enum, Some(choices)) => {
            if choices.is_empty() {
                return Err(TaskError::MissingField(at("enum_choices")));
            }
            let mut seen = HashSet::new();
            for c in &choices {
                if c.trim().is_empty() || !seen.insert(c.clone()) {
                    return Err(TaskError::InvalidField {
                        field: at("enum_choices"),
                        reason: "choices must be non-empty and distinct".to_string(),
                    });
                }
            }
            Some(choices)
        }
        (ValueKind::Enum, None) => return Err(TaskError::MissingField(at("enum_choices"))),
        (_, Some(_)) => {
            return Err(TaskError::InvalidField {
                field: at("enum_choices"),
                reason: "only allowed when value_kind is enum".to_string(),
            })
        }
        (_, None) => None,
    };
    Ok(AttributeSpec {
        name,
        question_template,
        value_kind,
        enum_choices,
        allow_not_found: raw.allow_not_found.unwrap_or(true),
    })
}

/// Parse and validate a YAML task descriptor.
pub fn parse_task_spec(yaml_text: &str) -> Result<TaskSpec, TaskError> {
    let raw: RawTaskSpec = serde_yaml::from_str(yaml_text)
        .map_err(|e| TaskError::MalformedYaml(e.to_string()))?;

    let task_name = require_text(raw.task_name, "task_name")?;
    if !is_snake_name(&task_name) {
        return Err(TaskError::InvalidField {
            field: "task_name".to_string(),
            reason: format!("{task_name:?} must match [a-z][a-z0-9_]*"),
        });
    }
    let system_prompt = require_text(raw.system_prompt, "system_prompt")?;
    validate_template(&system_prompt)?;

    let entity_key_columns = require(raw.entity_key_columns, "entity_key_columns")?;
    if entity_key_columns.is_empty() {
        return Err(TaskError::MissingField("entity_key_columns".to_string()));
    }
    let mut seen_columns = HashSet::new();
    for column in &entity_key_columns {
        if column.trim().is_empty() {
            return Err(TaskError::MissingField("entity_key_columns".to_string()));
        }
        if !seen_columns.insert(column.clone()) {
            return Err(TaskError::InvalidField {
                field: "entity_key_columns".to_string(),
                reason: format!("duplicate column {column:?}"),
            });
        }
    }

    let raw_attributes = require(raw.attributes, "attributes")?;
    if raw_attributes.is_empty() {
        return Err(TaskError::MissingField("attributes".to_string()));
    }
    let mut attributes = Vec::with_capacity(raw_attributes.len());
    let mut seen_names = HashSet::new();
    for (i, raw_attr) in raw_attributes.into_iter().enumerate() {
        let attr = validate_attribute(raw_attr, i)?;
        if !seen_names.insert(attr.name.clone()) {
            return Err(TaskError::DuplicateAttribute(attr.name));
        }
        attributes.push(attr);
    }

    let model = require(raw.model, "model")?;
    let model = ModelConfig {
        model_id: require_text(model.model_id, "model.model_id")?,
        search_enabled: model.search_enabled.unwrap_or(true),
        max_output_tokens: require_positive(model.max_output_tokens, "model.max_output_tokens")?,
    };

    let execution = require(raw.execution, "execution")?;
    let execution = ExecutionConfig {
        max_parallel: require_positive(execution.max_parallel, "execution.max_parallel")?,
        requests_per_minute: require_positive(
            execution.requests_per_minute,
            "execution.requests_per_minute",
        )?,
        max_attempts: {
            let v = execution.max_attempts.unwrap_or(DEFAULT_MAX_ATTEMPTS);
            require_positive(Some(v), "execution.max_attempts")?
        },
    };

    let pricing = require(raw.pricing, "pricing")?;

    Ok(TaskSpec {
        task_name,
        system_prompt,
        entity_key_columns,
        attributes,
        model,
        execution,
        pricing,
    })
}

/// Serialize a spec back to YAML. Guaranteed to re-parse to an equal
/// value.
pub fn serialize_task_spec(spec: &TaskSpec) -> String {
    serde_yaml::to_string(spec).expect("task spec serializes")
}

/// Parse the entity CSV against a validated spec.
///
/// Rows are kept in file order; `entity_id` is the key column values
/// joined with `|`.
pub fn parse_entity_set(csv_text: &str, spec: &TaskSpec) -> Result<EntitySet, TaskError> {
    let mut reader = csv::ReaderBuilder::new().from_reader(csv_text.as_bytes());
    let columns: Vec<String> = reader
        .headers()
        .map_err(|e| TaskError::MalformedCsv(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    for required in spec.required_columns() {
        if !columns.iter().any(|c| *c == required) {
            return Err(TaskError::MissingColumn(required));
        }
    }

    let mut rows = Vec::new();
    let mut seen_ids = HashSet::new();
    for record in reader.records() {
        let record = record.map_err(|e| TaskError::MalformedCsv(e.to_string()))?;
        let fields: Vec<(String, String)> = columns
            .iter()
            .cloned()
            .zip(record.iter().map(str::to_string))
            .collect();
        let row = EntityRecord { entity_id: String::new(), fields };
        let entity_id = spec
            .entity_key_columns
            .iter()
            .map(|c| row.get(c).unwrap_or_default())
            .collect::<Vec<_>>()
            .join("|");
        if !seen_ids.insert(entity_id.clone()) {
            return Err(TaskError::DuplicateEntityId(entity_id));
        }
        rows.push(EntityRecord { entity_id, ..row });
    }
    if rows.is_empty() {
        return Err(TaskError::EmptyEntitySet);
    }
    Ok(EntitySet { columns, rows })
}

/// Render the per-entity prompts. Pure: identical inputs produce
/// byte-identical bundles.
pub fn render_prompt(spec: &TaskSpec, record: &EntityRecord) -> Result<PromptBundle, TaskError> {
    let system = substitute(&spec.system_prompt, record)?;
    let mut user = String::new();
    user.push_str("Entity:\n");
    for (column, value) in &record.fields {
        user.push_str("  ");
        user.push_str(column);
        user.push_str(": ");
        user.push_str(value);
        user.push('\n');
    }
    user.push_str("\nDetermine the following attributes:\n");
    for (i, attr) in spec.attributes.iter().enumerate() {
        let question = substitute(&attr.question_template, record)?;
        user.push_str(&format!("{}. {}: {}\n", i + 1, attr.name, question));
    }
    user.push_str(
        "\nReturn a single JSON object conforming to the output schema, \
         with exactly one entry per attribute listed above.",
    );
    Ok(PromptBundle {
        system,
        user,
        output_schema: build_output_schema(spec),
    })
}
