//! Output schema rendering.
//!
//! A [`SchemaDoc`] is the provider-independent description of what the
//! model must return: one `{status, value}` object per attribute, where
//! `value` is present exactly when `status` is `found`. Backends that
//! support constrained decoding get it rendered as JSON Schema via
//! [`to_json_schema`]; the same rendering feeds the request key, so any
//! schema change invalidates cached replies.

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::task::{TaskSpec, ValueKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemaDoc {
    pub title: String,
    pub fields: Vec<SchemaField>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemaField {
    pub name: String,
    /// The attribute's question template, verbatim. Placeholders are
    /// resolved in the user prompt, not here, so the schema stays
    /// identical across entities.
    pub question: String,
    pub kind: ValueKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub choices: Option<Vec<String>>,
    pub allow_not_found: bool,
}

impl SchemaDoc {
    pub fn field(&self, name: &str) -> Option<&SchemaField> {
        self.fields.iter().find(|f| f.name == name)
    }
}

/// Derive the output schema from a task: one field per attribute, in
/// declaration order.
pub fn build_output_schema(task: &TaskSpec) -> SchemaDoc {
    SchemaDoc {
        title: task.task_name.clone(),
        fields: task
            .attributes
            .iter()
            .map(|a| SchemaField {
                name: a.name.clone(),
                question: a.question_template.clone(),
                kind: a.value_kind,
                choices: a.enum_choices.clone(),
                allow_not_found: a.allow_not_found,
            })
            .collect(),
    }
}

fn value_schema(field: &SchemaField) -> Value {
    match field.kind {
        ValueKind::String => json!({ "type": "string" }),
        ValueKind::Integer => json!({ "type": "integer" }),
        ValueKind::Boolean => json!({ "type": "boolean" }),
        ValueKind::Year => json!({
            "type": "integer",
            "minimum": 1000,
            "maximum": 2100,
        }),
        ValueKind::Date => json!({
            "type": "string",
            "description": "ISO 8601 date, YYYY-MM-DD",
        }),
        ValueKind::Enum => json!({
            "type": "string",
            "enum": field.choices.clone().unwrap_or_default(),
        }),
    }
}

/// Render as a strict JSON Schema object. Every attribute is required and
/// carries an explicit status, so absence is always an affirmative claim
/// rather than an omission; `value` is only legal alongside
/// `status=found`.
pub fn to_json_schema(doc: &SchemaDoc) -> Value {
    let mut properties = Map::new();
    for field in &doc.fields {
        let status_values: Vec<&str> = if field.allow_not_found {
            vec!["found", "not_found"]
        } else {
            vec!["found"]
        };
        properties.insert(
            field.name.clone(),
            json!({
                "type": "object",
                "description": field.question,
                "additionalProperties": false,
                "required": ["status"],
                "properties": {
                    "status": { "type": "string", "enum": status_values },
                    "value": value_schema(field),
                    "evidence_urls": {
                        "type": "array",
                        "items": { "type": "string" },
                    },
                },
            }),
        );
    }
    let required: Vec<Value> =
        doc.fields.iter().map(|f| Value::String(f.name.clone())).collect();
    json!({
        "type": "object",
        "title": doc.title,
        "additionalProperties": false,
        "required": required,
        "properties": properties,
    })
}
