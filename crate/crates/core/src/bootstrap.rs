//! Bootstrapping new tasks from a natural-language request.
//!
//! The playbook (CONSTITUTION.md) plus the request go to the provider,
//! which drafts configuration artifacts in fenced blocks. Every draft
//! is validated with the same parsers the engine uses; rejected drafts
//! are fed back with the validation error and retried a bounded number
//! of times, so whatever comes out of here is guaranteed to run.
//!
//! Two modes: with a caller-supplied entity CSV only the YAML is
//! drafted; without one, a first phase discovers the entity list online
//! and emits it as CSV, then the YAML is drafted against that header.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::provider::{CurationRequest, Provider, ProviderError};
use crate::task::{parse_entity_set, parse_task_spec, EntitySet, TaskSpec};
use crate::util::{atomic_write, atomic_write_json};

pub const DEFAULT_MAX_BOOTSTRAP_ATTEMPTS: u32 = 3;

/// Fixed system-prompt prefix for knowledge-only baseline runs.
pub const BASELINE_PREFIX: &str = "Answer from your internal knowledge only. Do not \
    use web search. If you are not confident in a value, return not_found instead of \
    guessing.\n\n";

const PLAYBOOK_MARKER: &str = "## YAML key reference";

const BOOTSTRAP_SYSTEM: &str = "You configure data-curation tasks for this \
    repository. Follow the playbook exactly; it defines every key and rule. Reply \
    only with the fenced blocks you are asked for.";

#[derive(Debug, Error)]
pub enum BootstrapError {
    #[error("invalid playbook: {0}")]
    InvalidPlaybook(String),
    #[error("entity csv is invalid: {0}")]
    InvalidEntityCsv(String),
    #[error("no draft passed validation ({} rejected)", validation_log.len())]
    Exhausted { validation_log: Vec<RejectedDraft> },
    #[error("entity discovery returned an empty list")]
    EmptyEntityDiscovery,
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("i/o failure at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// The repository playbook fed to the bootstrap agent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Playbook {
    text: String,
}

impl Playbook {
    pub fn new(text: impl Into<String>) -> Result<Self, BootstrapError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(BootstrapError::InvalidPlaybook("playbook is empty".into()));
        }
        if !text.contains(PLAYBOOK_MARKER) {
            return Err(BootstrapError::InvalidPlaybook(format!(
                "playbook lacks the {PLAYBOOK_MARKER:?} section"
            )));
        }
        Ok(Playbook { text })
    }

    pub fn load(path: &Path) -> Result<Self, BootstrapError> {
        let text = std::fs::read_to_string(path).map_err(|source| BootstrapError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Playbook::new(text)
    }

    pub fn text(&self) -> &str {
        &self.text
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BootstrapPhase {
    Entities,
    Task,
}

/// One rejected draft and why it was rejected.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectedDraft {
    pub phase: BootstrapPhase,
    pub attempt: u32,
    pub draft: String,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct BootstrapResult {
    /// The validated YAML draft, verbatim.
    pub task_yaml: String,
    /// The entity CSV the task was validated against: discovered in
    /// phase 1, or echoing the caller's file.
    pub entity_csv: Option<String>,
    pub attempts_used: u32,
    pub validation_log: Vec<RejectedDraft>,
    pub spec: TaskSpec,
    pub entities: Option<EntitySet>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BootstrapOptions {
    pub model_id: String,
    pub max_output_tokens: u32,
    pub max_attempts: u32,
}

impl Default for BootstrapOptions {
    fn default() -> Self {
        BootstrapOptions {
            model_id: "gpt-5".into(),
            max_output_tokens: 4096,
            max_attempts: DEFAULT_MAX_BOOTSTRAP_ATTEMPTS,
        }
    }
}

/// First fenced block tagged `tag`, without the fences.
pub fn extract_fenced(text: &str, tag: &str) -> Option<String> {
    let open = format!("```{tag}");
    let mut lines = text.lines();
    for line in lines.by_ref() {
        if line.trim() == open {
            let mut body = String::new();
            for inner in lines.by_ref() {
                if inner.trim() == "```" {
                    return Some(body);
                }
                body.push_str(inner);
                body.push('\n');
            }
            return None;
        }
    }
    None
}

fn csv_head(text: &str, rows: usize) -> String {
    text.lines().take(rows + 1).collect::<Vec<_>>().join("\n")
}

fn bootstrap_request(
    options: &BootstrapOptions,
    user: String,
    search_enabled: bool,
) -> CurationRequest {
    CurationRequest {
        model_id: options.model_id.clone(),
        system: BOOTSTRAP_SYSTEM.to_string(),
        user,
        output_schema: None,
        search_enabled,
        max_output_tokens: options.max_output_tokens,
    }
}

/// Run one draft-validate-feedback loop. `validate` returns a rejection
/// reason or the parsed artifact.
async fn draft_loop<T>(
    provider: &dyn Provider,
    options: &BootstrapOptions,
    mut user: String,
    search_enabled: bool,
    tag: &str,
    phase: BootstrapPhase,
    log: &mut Vec<RejectedDraft>,
    attempts_used: &mut u32,
    mut validate: impl FnMut(&str) -> Result<T, String>,
) -> Result<Option<T>, BootstrapError> {
    for attempt in 1..=options.max_attempts {
        *attempts_used += 1;
        let request = bootstrap_request(options, user.clone(), search_enabled);
        let response = provider.complete(&request).await?;
        let (draft, verdict) = match extract_fenced(&response.raw_text, tag) {
            Some(draft) => {
                let verdict = validate(&draft);
                (draft, verdict)
            }
            None => (
                response.raw_text.clone(),
                Err(format!("reply contains no fenced ```{tag} block")),
            ),
        };
        match verdict {
            Ok(value) => return Ok(Some(value)),
            Err(reason) => {
                log.push(RejectedDraft {
                    phase,
                    attempt,
                    draft,
                    reason: reason.clone(),
                });
                user.push_str(&format!(
                    "\n\nYour previous draft was rejected: {reason}\nReply again \
                     with one corrected fenced ```{tag} block."
                ));
            }
        }
    }
    Ok(None)
}

/// Mode (i): the caller brings the entity CSV, the agent writes the
/// YAML.
pub async fn bootstrap_with_entities(
    request: &str,
    playbook: &Playbook,
    entity_csv: &str,
    provider: &dyn Provider,
    options: &BootstrapOptions,
) -> Result<BootstrapResult, BootstrapError> {
    // The CSV must at least be readable before we ask for a spec.
    let mut reader = csv::ReaderBuilder::new().from_reader(entity_csv.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| BootstrapError::InvalidEntityCsv(e.to_string()))?;
    if headers.is_empty() || headers.iter().any(str::is_empty) {
        return Err(BootstrapError::InvalidEntityCsv(
            "header row is missing or has empty column names".into(),
        ));
    }
    reader
        .into_records()
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| BootstrapError::InvalidEntityCsv(e.to_string()))?;

    let user = format!(
        "{playbook}\n\n---\n\nRequest:\n{request}\n\nThe entity CSV already exists. \
         Its header and first rows:\n\n```csv\n{head}\n```\n\nWrite the task \
         configuration for this request. Reply with exactly one fenced ```yaml \
         block containing task.yaml.",
        playbook = playbook.text(),
        head = csv_head(entity_csv, 5),
    );

    let mut log = Vec::new();
    let mut attempts_used = 0;
    let outcome = draft_loop(
        provider,
        options,
        user,
        false,
        "yaml",
        BootstrapPhase::Task,
        &mut log,
        &mut attempts_used,
        |draft| {
            let spec = parse_task_spec(draft).map_err(|e| e.to_string())?;
            let entities = parse_entity_set(entity_csv, &spec).map_err(|e| e.to_string())?;
            Ok((draft.to_string(), spec, entities))
        },
    )
    .await?;

    match outcome {
        Some((task_yaml, spec, entities)) => Ok(BootstrapResult {
            task_yaml,
            entity_csv: Some(entity_csv.to_string()),
            attempts_used,
            validation_log: log,
            spec,
            entities: Some(entities),
        }),
        None => Err(BootstrapError::Exhausted { validation_log: log }),
    }
}

/// Mode (ii): no entity list yet. Phase 1 discovers it online as CSV,
/// phase 2 drafts the YAML against it. Each phase has its own attempt
/// budget.
pub async fn bootstrap_discover_entities(
    request: &str,
    playbook: &Playbook,
    provider: &dyn Provider,
    options: &BootstrapOptions,
) -> Result<BootstrapResult, BootstrapError> {
    let mut log = Vec::new();
    let mut attempts_used = 0;

    let phase1_user = format!(
        "{playbook}\n\n---\n\nRequest:\n{request}\n\nNo entity CSV exists yet. \
         Search online for the complete entity list this request needs. Reply with \
         exactly one fenced ```csv block: a header row naming the key column(s), \
         then one row per entity.",
        playbook = playbook.text(),
    );
    let discovered = draft_loop(
        provider,
        options,
        phase1_user,
        true,
        "csv",
        BootstrapPhase::Entities,
        &mut log,
        &mut attempts_used,
        |draft| {
            let mut reader = csv::ReaderBuilder::new().from_reader(draft.as_bytes());
            let headers = reader.headers().map_err(|e| e.to_string())?.clone();
            if headers.is_empty() || headers.iter().any(str::is_empty) {
                return Err("header row is missing or has empty column names".into());
            }
            let rows: Vec<csv::StringRecord> = reader
                .into_records()
                .collect::<Result<_, _>>()
                .map_err(|e| e.to_string())?;
            let mut seen = std::collections::BTreeSet::new();
            for row in &rows {
                let key = row.get(0).unwrap_or_default().to_string();
                if !seen.insert(key.clone()) {
                    return Err(format!("duplicate entity key {key:?}"));
                }
            }
            Ok((draft.to_string(), rows.len()))
        },
    )
    .await?;

    let (entity_csv, row_count) = match discovered {
        Some(found) => found,
        None => return Err(BootstrapError::Exhausted { validation_log: log }),
    };
    if row_count == 0 {
        return Err(BootstrapError::EmptyEntityDiscovery);
    }

    let phase2_user = format!(
        "{playbook}\n\n---\n\nRequest:\n{request}\n\nThe discovered entity CSV \
         starts:\n\n```csv\n{head}\n```\n\nWrite the task configuration for this \
         request against that header. Reply with exactly one fenced ```yaml block \
         containing task.yaml.",
        playbook = playbook.text(),
        head = csv_head(&entity_csv, 5),
    );
    let outcome = draft_loop(
        provider,
        options,
        phase2_user,
        true,
        "yaml",
        BootstrapPhase::Task,
        &mut log,
        &mut attempts_used,
        |draft| {
            let spec = parse_task_spec(draft).map_err(|e| e.to_string())?;
            let entities =
                parse_entity_set(&entity_csv, &spec).map_err(|e| e.to_string())?;
            Ok((draft.to_string(), spec, entities))
        },
    )
    .await?;

    match outcome {
        Some((task_yaml, spec, entities)) => Ok(BootstrapResult {
            task_yaml,
            entity_csv: Some(entity_csv),
            attempts_used,
            validation_log: log,
            spec,
            entities: Some(entities),
        }),
        None => Err(BootstrapError::Exhausted { validation_log: log }),
    }
}

/// Copy a task into knowledge-only baseline form: search off, and a
/// fixed prefix on the system prompt. Applying it twice changes nothing
/// more.
pub fn set_baseline_mode(spec: &TaskSpec) -> TaskSpec {
    let mut next = spec.clone();
    next.model.search_enabled = false;
    if !next.system_prompt.starts_with(BASELINE_PREFIX) {
        next.system_prompt = format!("{BASELINE_PREFIX}{}", next.system_prompt);
    }
    next
}

/// Was this task put into baseline form by [`set_baseline_mode`]?
pub fn is_baseline(spec: &TaskSpec) -> bool {
    !spec.model.search_enabled && spec.system_prompt.starts_with(BASELINE_PREFIX)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct BootstrapLog {
    attempts_used: u32,
    validation_log: Vec<RejectedDraft>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BootstrapPaths {
    pub dir: PathBuf,
    pub task_yaml: PathBuf,
    pub entities_csv: PathBuf,
    pub log: PathBuf,
}

/// Write `tasks/<task_name>/{task.yaml, entities.csv, bootstrap_log.json}`
/// under `root`.
pub fn write_bootstrap_outputs(
    root: &Path,
    result: &BootstrapResult,
) -> Result<BootstrapPaths, BootstrapError> {
    let dir = root.join("tasks").join(&result.spec.task_name);
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source: std::io::Error| BootstrapError::Io { path, source }
    };
    std::fs::create_dir_all(&dir).map_err(io(&dir))?;

    let paths = BootstrapPaths {
        task_yaml: dir.join("task.yaml"),
        entities_csv: dir.join("entities.csv"),
        log: dir.join("bootstrap_log.json"),
        dir,
    };
    atomic_write(&paths.task_yaml, result.task_yaml.as_bytes())
        .map_err(io(&paths.task_yaml))?;
    if let Some(csv) = &result.entity_csv {
        atomic_write(&paths.entities_csv, csv.as_bytes()).map_err(io(&paths.entities_csv))?;
    }
    let log = BootstrapLog {
        attempts_used: result.attempts_used,
        validation_log: result.validation_log.clone(),
    };
    atomic_write_json(&paths.log, &log).map_err(io(&paths.log))?;
    Ok(paths)
}
