//! Shared fixture builders for the binary-level tests: two fully
//! seeded replay workspaces (a faculty task and a knowledge-only
//! laureate task) plus process-spawning helpers.

#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dp_core::bootstrap::set_baseline_mode;
use dp_core::engine::build_request;
use dp_core::provider::replay::write_fixture;
use dp_core::provider::{ProviderResponse, Usage};
use dp_core::task::{parse_entity_set, parse_task_spec, EntitySet, TaskSpec};

pub const FACULTY_YAML: &str = r#"task_name: faculty_hiring
system_prompt: You are a careful research assistant verifying faculty career facts.
entity_key_columns: [name]
attributes:
  - name: degree_year
    question_template: "In which year did {name} receive their doctorate?"
    value_kind: year
  - name: university
    question_template: "Which university granted {name}'s doctorate?"
    value_kind: string
  - name: advisor
    question_template: "Who was {name}'s doctoral advisor?"
    value_kind: string
model:
  model_id: test-model
  search_enabled: true
  max_output_tokens: 800
execution:
  max_parallel: 8
  requests_per_minute: 6000
pricing:
  input_per_million_tokens: "0.25"
  output_per_million_tokens: "1.25"
  per_search_call: "0.0425"
"#;

pub const NOBEL_YAML: &str = r#"task_name: laureate_deaths
system_prompt: You verify biographical facts about Nobel laureates.
entity_key_columns: [laureate]
attributes:
  - name: is_alive
    question_template: "Is {laureate} currently alive?"
    value_kind: boolean
  - name: death_date
    question_template: "If {laureate} has died, on what date did they die?"
    value_kind: date
model:
  model_id: test-model
  search_enabled: true
  max_output_tokens: 400
execution:
  max_parallel: 8
  requests_per_minute: 6000
pricing:
  input_per_million_tokens: "0.25"
  output_per_million_tokens: "1.25"
  per_search_call: "0.0425"
"#;

pub fn faculty_entities_csv(n: usize) -> String {
    let mut out = String::from("name\n");
    for i in 0..n {
        out.push_str(&format!("Faculty {i:03}\n"));
    }
    out
}

pub fn nobel_entities_csv(n: usize) -> String {
    let mut out = String::from("laureate\n");
    for i in 0..n {
        out.push_str(&format!("Laureate {i:03}\n"));
    }
    out
}

pub fn faculty_degree_year(i: usize) -> i64 {
    1980 + (i % 40) as i64
}

pub fn faculty_university(i: usize) -> String {
    format!("University {}", i % 10)
}

pub fn faculty_advisor(i: usize) -> String {
    format!("Advisor {i:03}")
}

pub fn faculty_reply(i: usize) -> String {
    serde_json::json!({
        "degree_year": {"status": "found", "value": faculty_degree_year(i)},
        "university": {"status": "found", "value": faculty_university(i)},
        "advisor": {"status": "found", "value": faculty_advisor(i)},
    })
    .to_string()
}

/// Per-entity usage whose cost at the faculty pricing is exactly
/// $0.09, with search accounting for $0.085 of it.
pub fn faculty_usage() -> Usage {
    Usage { input_tokens: 10_000, output_tokens: 2_000, search_calls: 2 }
}

/// The model knows 44 of the laureates are dead and wrongly calls the
/// rest alive; no death date is ever recalled.
pub fn nobel_reply(i: usize) -> String {
    serde_json::json!({
        "is_alive": {"status": "found", "value": i >= 44},
        "death_date": {"status": "not_found"},
    })
    .to_string()
}

pub fn nobel_usage() -> Usage {
    Usage { input_tokens: 3_000, output_tokens: 500, search_calls: 0 }
}

pub fn faculty_truth_csv(n: usize) -> String {
    let mut out = String::from("entity_id,degree_year,university,advisor\n");
    for i in 0..n {
        out.push_str(&format!(
            "Faculty {i:03},{},{},{}\n",
            faculty_degree_year(i),
            faculty_university(i),
            faculty_advisor(i),
        ));
    }
    out
}

pub fn nobel_truth_csv(n: usize) -> String {
    let mut out = String::from("entity_id,is_alive,death_date\n");
    for i in 0..n {
        out.push_str(&format!("Laureate {i:03},false,1996-07-14\n"));
    }
    out
}

pub struct Workspace {
    pub root: tempfile::TempDir,
    pub task_yaml: PathBuf,
    pub entities_csv: PathBuf,
    pub truth_csv: PathBuf,
    pub fixtures: PathBuf,
    pub spec: TaskSpec,
    pub entities: EntitySet,
}

impl Workspace {
    pub fn run_dir(&self, name: &str) -> PathBuf {
        self.root.path().join(name)
    }
}

fn seed(
    task_yaml: &str,
    entities_csv: String,
    truth_csv: String,
    reply: impl Fn(usize) -> String,
    usage: Usage,
    request_spec: Option<&TaskSpec>,
) -> Workspace {
    let root = tempfile::tempdir().expect("tempdir");
    let spec = parse_task_spec(task_yaml).expect("task yaml parses");
    let entities = parse_entity_set(&entities_csv, &spec).expect("entity csv parses");

    let task_path = root.path().join("task.yaml");
    std::fs::write(&task_path, task_yaml).unwrap();
    let entities_path = root.path().join("entities.csv");
    std::fs::write(&entities_path, &entities_csv).unwrap();
    let truth_path = root.path().join("truth.csv");
    std::fs::write(&truth_path, &truth_csv).unwrap();

    let fixtures = root.path().join("fixtures");
    let keyed_on = request_spec.unwrap_or(&spec);
    for (i, record) in entities.rows.iter().enumerate() {
        let request = build_request(keyed_on, record).expect("request builds");
        let response = ProviderResponse {
            raw_text: reply(i),
            usage,
            model_id: keyed_on.model.model_id.clone(),
        };
        write_fixture(&fixtures, &request, &response).expect("fixture writes");
    }

    Workspace {
        root,
        task_yaml: task_path,
        entities_csv: entities_path,
        truth_csv: truth_path,
        fixtures,
        spec,
        entities,
    }
}

pub fn faculty_workspace(n: usize) -> Workspace {
    seed(
        FACULTY_YAML,
        faculty_entities_csv(n),
        faculty_truth_csv(n),
        faculty_reply,
        faculty_usage(),
        None,
    )
}

/// Faculty workspace with caller-chosen replies, for tests that need
/// specific cells to come back not_found.
pub fn faculty_workspace_with(n: usize, reply: impl Fn(usize) -> String) -> Workspace {
    seed(
        FACULTY_YAML,
        faculty_entities_csv(n),
        faculty_truth_csv(n),
        reply,
        faculty_usage(),
        None,
    )
}

/// Fixtures are keyed on the baseline form of the task, which is what
/// `dp baseline` sends; a plain `dp run` would miss them all.
pub fn nobel_baseline_workspace(n: usize) -> Workspace {
    let spec = parse_task_spec(NOBEL_YAML).expect("task yaml parses");
    let baseline = set_baseline_mode(&spec);
    let ws = seed(
        NOBEL_YAML,
        nobel_entities_csv(n),
        nobel_truth_csv(n),
        nobel_reply,
        nobel_usage(),
        Some(&baseline),
    );
    // A second descriptor already in baseline form, for eval --task.
    let baseline_yaml = serde_yaml::to_string(&baseline).expect("spec serializes");
    parse_task_spec(&baseline_yaml).expect("baseline yaml reparses");
    std::fs::write(ws.root.path().join("task_baseline.yaml"), baseline_yaml).unwrap();
    ws
}

/// The dp binary with a scrubbed environment, so ambient credentials
/// can never leak into a test.
pub fn dp() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_dp"));
    cmd.env_remove("DP_API_KEY").env_remove("DP_API_BASE_URL");
    cmd
}

pub fn stdout_of(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

pub fn stderr_of(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

pub fn assert_exit(output: &Output, code: i32) {
    assert_eq!(
        output.status.code(),
        Some(code),
        "wrong exit code\nstdout:\n{}\nstderr:\n{}",
        stdout_of(output),
        stderr_of(output),
    );
}

pub fn read(path: &Path) -> String {
    std::fs::read_to_string(path)
        .unwrap_or_else(|e| panic!("cannot read {}: {e}", path.display()))
}
