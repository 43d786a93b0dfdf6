//! Generate replay fixtures for a task directory so every pipeline
//! stage can be driven completely offline.
//!
//! ```text
//! cargo run -p dp-core --example seed_fixtures -- tasks/faculty_hiring fixtures/faculty
//! ```
//!
//! Reads `task.yaml` and `entities.csv` from the task directory, plus
//! `truth.csv` when present. Two fixtures are written per entity: one
//! keyed on the task as configured (replies echo the ground truth, so
//! `dp eval` scores 1.000), and one keyed on its knowledge-only
//! baseline form (boolean attributes still echo truth, everything else
//! comes back not_found, and search_calls is zero).

use std::path::Path;
use std::process::ExitCode;

use dp_core::bootstrap::set_baseline_mode;
use dp_core::engine::build_request;
use dp_core::eval::{parse_ground_truth, GroundTruth};
use dp_core::provider::replay::write_fixture;
use dp_core::provider::{ProviderResponse, Usage};
use dp_core::task::{
    parse_entity_set, parse_task_spec, AttributeSpec, EntityRecord, TaskSpec, ValueKind,
};
use sha2::{Digest, Sha256};

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().collect();
    let (task_dir, out_dir) = match &args[..] {
        [_, task_dir, out_dir] => (Path::new(task_dir), Path::new(out_dir)),
        _ => {
            eprintln!("usage: seed_fixtures TASK_DIR OUT_DIR");
            return ExitCode::FAILURE;
        }
    };
    match seed(task_dir, out_dir) {
        Ok(count) => {
            println!("wrote {count} fixtures to {}", out_dir.display());
            println!("next:");
            println!(
                "  dp run --task {0}/task.yaml --entities {0}/entities.csv \\",
                task_dir.display()
            );
            println!(
                "      --run-dir runs/demo --provider replay --fixtures {}",
                out_dir.display()
            );
            ExitCode::SUCCESS
        }
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::FAILURE
        }
    }
}

fn seed(task_dir: &Path, out_dir: &Path) -> Result<usize, String> {
    let read = |name: &str| {
        let path = task_dir.join(name);
        std::fs::read_to_string(&path).map_err(|e| format!("cannot read {}: {e}", path.display()))
    };
    let spec = parse_task_spec(&read("task.yaml")?).map_err(|e| e.to_string())?;
    let entities = parse_entity_set(&read("entities.csv")?, &spec).map_err(|e| e.to_string())?;
    let truth = match read("truth.csv") {
        Ok(text) => Some(parse_ground_truth(&text).map_err(|e| e.to_string())?),
        Err(_) => None,
    };

    let baseline = set_baseline_mode(&spec);
    let mut count = 0;
    for record in &entities.rows {
        for (keyed_on, knowledge_only) in [(&spec, false), (&baseline, true)] {
            let request = build_request(keyed_on, record).map_err(|e| e.to_string())?;
            let response = ProviderResponse {
                raw_text: reply_for(keyed_on, record, truth.as_ref(), knowledge_only),
                usage: usage_for(record, knowledge_only),
                model_id: keyed_on.model.model_id.clone(),
            };
            write_fixture(out_dir, &request, &response).map_err(|e| e.to_string())?;
            count += 1;
        }
    }
    Ok(count)
}

/// One reply covering every attribute. Ground truth is echoed when it
/// exists and fits the attribute's kind; otherwise a value is
/// synthesized from a stable hash, so reruns write identical bytes.
fn reply_for(
    spec: &TaskSpec,
    record: &EntityRecord,
    truth: Option<&GroundTruth>,
    knowledge_only: bool,
) -> String {
    let mut reply = serde_json::Map::new();
    for attr in &spec.attributes {
        let cell = if knowledge_only && attr.value_kind != ValueKind::Boolean {
            serde_json::json!({"status": "not_found"})
        } else {
            let value = truth
                .and_then(|t| t.get(&record.entity_id, &attr.name))
                .and_then(|text| typed_value(attr, text))
                .unwrap_or_else(|| synthesized_value(attr, &record.entity_id));
            serde_json::json!({"status": "found", "value": value})
        };
        reply.insert(attr.name.clone(), cell);
    }
    serde_json::Value::Object(reply).to_string()
}

fn typed_value(attr: &AttributeSpec, text: &str) -> Option<serde_json::Value> {
    match attr.value_kind {
        ValueKind::Integer | ValueKind::Year => {
            text.parse::<i64>().ok().map(serde_json::Value::from)
        }
        ValueKind::Boolean => text.parse::<bool>().ok().map(serde_json::Value::from),
        ValueKind::String | ValueKind::Date | ValueKind::Enum => {
            Some(serde_json::Value::from(text))
        }
    }
}

fn synthesized_value(attr: &AttributeSpec, entity_id: &str) -> serde_json::Value {
    let digest = Sha256::digest(format!("{entity_id}\u{1f}{}", attr.name));
    let h = u64::from_be_bytes(digest[..8].try_into().unwrap());
    match attr.value_kind {
        ValueKind::String => serde_json::Value::from(format!("Sample {}", h % 1_000)),
        ValueKind::Integer => serde_json::Value::from((h % 500) as i64),
        ValueKind::Year => serde_json::Value::from(1950 + (h % 75) as i64),
        ValueKind::Date => serde_json::Value::from(format!(
            "{:04}-{:02}-{:02}",
            1950 + h % 75,
            1 + h % 12,
            1 + h % 28,
        )),
        ValueKind::Boolean => serde_json::Value::from(h % 2 == 0),
        ValueKind::Enum => {
            let choices = attr.enum_choices.as_deref().unwrap_or_default();
            match choices.get((h % choices.len().max(1) as u64) as usize) {
                Some(choice) => serde_json::Value::from(choice.as_str()),
                None => serde_json::Value::from("unknown"),
            }
        }
    }
}

fn usage_for(record: &EntityRecord, knowledge_only: bool) -> Usage {
    let digest = Sha256::digest(record.entity_id.as_bytes());
    let h = u64::from_be_bytes(digest[..8].try_into().unwrap());
    Usage {
        input_tokens: 8_000 + h % 2_000,
        output_tokens: 900 + h % 300,
        search_calls: if knowledge_only { 0 } else { 2 + h % 3 },
    }
}
