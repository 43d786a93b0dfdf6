//! Strict validation of model output against the task schema.
//!
//! The model's reply must be a single JSON object with exactly one entry
//! per attribute. Anything else is a typed parse error, which the engine
//! turns into a corrective retry. Leniency here would silently corrupt
//! the curated table, so every rule is enforced.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::task::{AttributeSpec, TaskSpec, ValueKind};

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ParseError {
    #[error("output is not valid JSON: {0}")]
    InvalidJson(String),
    #[error("schema violation on {attribute:?}: {detail}")]
    SchemaViolation { attribute: String, detail: String },
    #[error("inconsistent status on {attribute:?}: not_found with a value present")]
    InconsistentStatus { attribute: String },
}

fn violation(attribute: &str, detail: impl Into<String>) -> ParseError {
    ParseError::SchemaViolation {
        attribute: attribute.to_string(),
        detail: detail.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttrStatus {
    Found,
    NotFound,
}

/// One attribute's validated outcome. `value` is present exactly when
/// `status` is `Found`, and its JSON type has been checked against the
/// attribute's value kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeResult {
    pub attribute: String,
    pub status: AttrStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evidence_urls: Option<Vec<String>>,
}

impl AttributeResult {
    pub fn is_found(&self) -> bool {
        self.status == AttrStatus::Found
    }

    /// Cell rendering for CSV/JSONL output: canonical text for found
    /// values, empty for not_found.
    pub fn value_text(&self) -> String {
        match &self.value {
            None => String::new(),
            Some(Value::String(s)) => s.clone(),
            Some(Value::Bool(b)) => b.to_string(),
            Some(Value::Number(n)) => n.to_string(),
            Some(other) => other.to_string(),
        }
    }
}

pub(crate) fn validate_value(attr: &AttributeSpec, value: &Value) -> Result<(), ParseError> {
    let name = attr.name.as_str();
    match attr.value_kind {
        ValueKind::String => match value.as_str() {
            Some(s) if !s.trim().is_empty() => Ok(()),
            Some(_) => Err(violation(name, "string value is empty")),
            None => Err(violation(name, format!("expected a string, got {value}"))),
        },
        ValueKind::Integer => match value.as_i64() {
            Some(_) => Ok(()),
            None => Err(violation(name, format!("expected an integer, got {value}"))),
        },
        ValueKind::Year => match value.as_i64() {
            Some(y) if (1000..=2100).contains(&y) => Ok(()),
            Some(y) => Err(violation(name, format!("year {y} outside [1000, 2100]"))),
            None => Err(violation(name, format!("expected a year integer, got {value}"))),
        },
        ValueKind::Date => {
            let s = value.as_str().ok_or_else(|| {
                violation(name, format!("expected an ISO date string, got {value}"))
            })?;
            let parsed = chrono::NaiveDate::parse_from_str(s, "%Y-%m-%d")
                .map_err(|_| violation(name, format!("{s:?} is not a valid ISO date")))?;
            if parsed.format("%Y-%m-%d").to_string() != s {
                return Err(violation(name, format!("{s:?} is not in YYYY-MM-DD form")));
            }
            Ok(())
        }
        ValueKind::Boolean => match value.as_bool() {
            Some(_) => Ok(()),
            None => Err(violation(name, format!("expected a boolean, got {value}"))),
        },
        ValueKind::Enum => {
            let s = value
                .as_str()
                .ok_or_else(|| violation(name, format!("expected a choice string, got {value}")))?;
            let choices = attr.enum_choices.as_deref().unwrap_or_default();
            if choices.iter().any(|c| c == s) {
                Ok(())
            } else {
                Err(violation(
                    name,
                    format!("{s:?} is not one of the allowed choices {choices:?}"),
                ))
            }
        }
    }
}

fn parse_entry(attr: &AttributeSpec, entry: &Value) -> Result<AttributeResult, ParseError> {
    let name = attr.name.as_str();
    let obj = entry
        .as_object()
        .ok_or_else(|| violation(name, format!("expected an object, got {entry}")))?;
    for key in obj.keys() {
        if !matches!(key.as_str(), "status" | "value" | "evidence_urls") {
            return Err(violation(name, format!("unexpected key {key:?}")));
        }
    }

    let status = match obj.get("status").and_then(Value::as_str) {
        Some("found") => AttrStatus::Found,
        Some("not_found") => AttrStatus::NotFound,
        Some(other) => return Err(violation(name, format!("unknown status {other:?}"))),
        None => return Err(violation(name, "missing status")),
    };

    // JSON null counts as absent.
    let value = obj.get("value").filter(|v| !v.is_null());
    let value = match (status, value) {
        (AttrStatus::Found, Some(v)) => {
            validate_value(attr, v)?;
            Some(v.clone())
        }
        (AttrStatus::Found, None) => {
            return Err(violation(name, "status is found but value is missing"))
        }
        (AttrStatus::NotFound, Some(_)) => {
            return Err(ParseError::InconsistentStatus { attribute: attr.name.clone() })
        }
        (AttrStatus::NotFound, None) => {
            if !attr.allow_not_found {
                return Err(violation(name, "not_found is not permitted for this attribute"));
            }
            None
        }
    };

    let evidence_urls = match obj.get("evidence_urls").filter(|v| !v.is_null()) {
        None => None,
        Some(v) => {
            let urls = v
                .as_array()
                .ok_or_else(|| violation(name, "evidence_urls must be an array"))?
                .iter()
                .map(|u| {
                    u.as_str().map(str::to_string).ok_or_else(|| {
                        violation(name, "evidence_urls must contain only strings")
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            Some(urls)
        }
    };

    Ok(AttributeResult {
        attribute: attr.name.clone(),
        status,
        value,
        evidence_urls,
    })
}

/// Validate raw model output against the task spec. Returns one result
/// per attribute in spec order regardless of JSON key order.
pub fn parse_structured_output(
    raw_text: &str,
    spec: &TaskSpec,
) -> Result<Vec<AttributeResult>, ParseError> {
    let root: Value = serde_json::from_str(raw_text)
        .map_err(|e| ParseError::InvalidJson(e.to_string()))?;
    let obj = root
        .as_object()
        .ok_or_else(|| violation("", "output must be a JSON object"))?;

    let mut results = Vec::with_capacity(spec.attributes.len());
    for attr in &spec.attributes {
        let entry = obj
            .get(&attr.name)
            .ok_or_else(|| violation(&attr.name, "missing from output"))?;
        results.push(parse_entry(attr, entry)?);
    }
    for key in obj.keys() {
        if spec.attribute(key).is_none() {
            return Err(violation(key, "not an attribute of this task"));
        }
    }
    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::task::parse_task_spec;

    fn nobel_spec() -> TaskSpec {
        parse_task_spec(
            r#"
task_name: nobel_death
system_prompt: Careful biographical research only.
entity_key_columns: [name]
attributes:
  - name: is_alive
    question_template: "Is {name} still alive?"
    value_kind: boolean
  - name: death_date
    question_template: "If deceased, on what date did {name} die?"
    value_kind: date
model:
  model_id: test-model
  max_output_tokens: 1024
execution:
  max_parallel: 4
  requests_per_minute: 60
pricing:
  input_per_million_tokens: "0.25"
  output_per_million_tokens: "2.00"
  per_search_call: "0.01"
"#,
        )
        .unwrap()
    }

    fn year_spec() -> TaskSpec {
        parse_task_spec(
            r#"
task_name: degrees
system_prompt: Find facts.
entity_key_columns: [name]
attributes:
  - name: degree_year
    question_template: "When did {name} graduate?"
    value_kind: year
model:
  model_id: test-model
  max_output_tokens: 512
execution:
  max_parallel: 1
  requests_per_minute: 60
pricing:
  input_per_million_tokens: "1"
  output_per_million_tokens: "1"
  per_search_call: "0.01"
"#,
        )
        .unwrap()
    }

    #[test]
    fn found_boolean_and_date_parse() {
        let raw = r#"{"is_alive":{"status":"found","value":false},
                      "death_date":{"status":"found","value":"1996-12-20"}}"#;
        let results = parse_structured_output(raw, &nobel_spec()).unwrap();
        assert_eq!(results.len(), 2);
        assert!(results.iter().all(AttributeResult::is_found));
        assert_eq!(results[1].value_text(), "1996-12-20");
    }

    #[test]
    fn all_not_found_is_accepted() {
        let raw = r#"{"is_alive":{"status":"not_found"},
                      "death_date":{"status":"not_found"}}"#;
        let results = parse_structured_output(raw, &nobel_spec()).unwrap();
        assert!(results.iter().all(|r| r.status == AttrStatus::NotFound));
        assert!(results.iter().all(|r| r.value.is_none()));
        assert_eq!(results[0].value_text(), "");
    }

    #[test]
    fn not_found_with_value_is_inconsistent() {
        let raw = r#"{"degree_year":{"status":"not_found","value":1999}}"#;
        assert_eq!(
            parse_structured_output(raw, &year_spec()),
            Err(ParseError::InconsistentStatus { attribute: "degree_year".into() })
        );
    }

    #[test]
    fn null_value_counts_as_absent() {
        let raw = r#"{"degree_year":{"status":"not_found","value":null}}"#;
        assert!(parse_structured_output(raw, &year_spec()).is_ok());
        let raw = r#"{"degree_year":{"status":"found","value":null}}"#;
        assert!(matches!(
            parse_structured_output(raw, &year_spec()),
            Err(ParseError::SchemaViolation { .. })
        ));
    }

    #[test]
    fn non_json_is_invalid_json() {
        assert!(matches!(
            parse_structured_output("the year was 1999", &year_spec()),
            Err(ParseError::InvalidJson(_))
        ));
    }

    #[test]
    fn year_bounds_are_enforced() {
        for (raw, ok) in [
            (r#"{"degree_year":{"status":"found","value":1000}}"#, true),
            (r#"{"degree_year":{"status":"found","value":2100}}"#, true),
            (r#"{"degree_year":{"status":"found","value":999}}"#, false),
            (r#"{"degree_year":{"status":"found","value":2101}}"#, false),
            (r#"{"degree_year":{"status":"found","value":"1999"}}"#, false),
        ] {
            assert_eq!(parse_structured_output(raw, &year_spec()).is_ok(), ok, "{raw}");
        }
    }

    #[test]
    fn calendar_dates_must_be_real_and_canonical() {
        let spec = nobel_spec();
        let alive = r#""is_alive":{"status":"found","value":true}"#;
        for (date, ok) in [
            ("1996-12-20", true),
            ("1996-02-29", true),
            ("1996-13-01", false),
            ("1995-02-29", false),
            ("1996-2-9", false),
            ("12/20/1996", false),
        ] {
            let raw = format!(
                r#"{{{alive},"death_date":{{"status":"found","value":"{date}"}}}}"#
            );
            assert_eq!(parse_structured_output(&raw, &spec).is_ok(), ok, "{date}");
        }
    }

    #[test]
    fn missing_attribute_is_a_violation() {
        let raw = r#"{"is_alive":{"status":"found","value":true}}"#;
        assert_eq!(
            parse_structured_output(raw, &nobel_spec()),
            Err(ParseError::SchemaViolation {
                attribute: "death_date".into(),
                detail: "missing from output".into(),
            })
        );
    }

    #[test]
    fn extra_attribute_is_a_violation() {
        let raw = r#"{"degree_year":{"status":"found","value":1999},
                      "shoe_size":{"status":"found","value":42}}"#;
        assert_eq!(
            parse_structured_output(raw, &year_spec()),
            Err(ParseError::SchemaViolation {
                attribute: "shoe_size".into(),
                detail: "not an attribute of this task".into(),
            })
        );
    }

    #[test]
    fn unknown_status_and_extra_entry_keys_are_violations() {
        for raw in [
            r#"{"degree_year":{"status":"maybe","value":1999}}"#,
            r#"{"degree_year":{"status":"found","value":1999,"confidence":0.9}}"#,
            r#"{"degree_year":{"value":1999}}"#,
            r#"{"degree_year":1999}"#,
        ] {
            assert!(matches!(
                parse_structured_output(raw, &year_spec()),
                Err(ParseError::SchemaViolation { .. })
            ), "{raw}");
        }
    }

    #[test]
    fn string_values_must_be_non_empty() {
        let spec = parse_task_spec(
            &r#"
task_name: degrees
system_prompt: Find facts.
entity_key_columns: [name]
attributes:
  - name: school
    question_template: "Where did {name} study?"
    value_kind: string
model:
  model_id: test-model
  max_output_tokens: 512
execution:
  max_parallel: 1
  requests_per_minute: 60
pricing:
  input_per_million_tokens: "1"
  output_per_million_tokens: "1"
  per_search_call: "0.01"
"#,
        )
        .unwrap();
        let ok = r#"{"school":{"status":"found","value":"MIT"}}"#;
        assert!(parse_structured_output(ok, &spec).is_ok());
        let empty = r#"{"school":{"status":"found","value":"  "}}"#;
        assert!(parse_structured_output(empty, &spec).is_err());
    }

    #[test]
    fn enum_values_must_be_listed_choices() {
        let spec = parse_task_spec(
            r#"
task_name: senate
system_prompt: Find facts.
entity_key_columns: [name]
attributes:
  - name: entry_method
    question_template: "How did {name} first enter?"
    value_kind: enum
    enum_choices: [elected, appointed]
model:
  model_id: test-model
  max_output_tokens: 512
execution:
  max_parallel: 1
  requests_per_minute: 60
pricing:
  input_per_million_tokens: "1"
  output_per_million_tokens: "1"
  per_search_call: "0.01"
"#,
        )
        .unwrap();
        let ok = r#"{"entry_method":{"status":"found","value":"elected"}}"#;
        assert!(parse_structured_output(ok, &spec).is_ok());
        let bad = r#"{"entry_method":{"status":"found","value":"acclaimed"}}"#;
        assert!(matches!(
            parse_structured_output(bad, &spec),
            Err(ParseError::SchemaViolation { .. })
        ));
    }

    #[test]
    fn not_found_respects_allow_flag() {
        let yaml = r#"
task_name: degrees
system_prompt: Find facts.
entity_key_columns: [name]
attributes:
  - name: degree_year
    question_template: "When did {name} graduate?"
    value_kind: year
    allow_not_found: false
model:
  model_id: test-model
  max_output_tokens: 512
execution:
  max_parallel: 1
  requests_per_minute: 60
pricing:
  input_per_million_tokens: "1"
  output_per_million_tokens: "1"
  per_search_call: "0.01"
"#;
        let spec = parse_task_spec(yaml).unwrap();
        let raw = r#"{"degree_year":{"status":"not_found"}}"#;
        assert!(matches!(
            parse_structured_output(raw, &spec),
            Err(ParseError::SchemaViolation { .. })
        ));
    }

    #[test]
    fn evidence_urls_are_optional_but_typed() {
        let raw = r#"{"degree_year":{"status":"found","value":1999,
                      "evidence_urls":["https://example.org/cv"]}}"#;
        let results = parse_structured_output(raw, &year_spec()).unwrap();
        assert_eq!(
            results[0].evidence_urls.as_deref(),
            Some(["https://example.org/cv".to_string()].as_slice())
        );
        let bad = r#"{"degree_year":{"status":"found","value":1999,"evidence_urls":[7]}}"#;
        assert!(parse_structured_output(bad, &year_spec()).is_err());
    }

    #[test]
    fn results_follow_spec_order_not_json_order() {
        let raw = r#"{"death_date":{"status":"not_found"},
                      "is_alive":{"status":"found","value":true}}"#;
        let results = parse_structured_output(raw, &nobel_spec()).unwrap();
        assert_eq!(results[0].attribute, "is_alive");
        assert_eq!(results[1].attribute, "death_date");
    }
}
