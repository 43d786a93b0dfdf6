//! Subcommand bodies. Each returns the process exit code on success;
//! hard failures travel as [`CliError`] and carry their own codes.

use std::path::Path;

use dp_core::bootstrap::{self, BootstrapError, BootstrapOptions, BootstrapPhase, Playbook};
use dp_core::compile::{
    apply_overrides, compile_run, parse_curated_csv, parse_overrides, CuratedTable,
};
use dp_core::engine::checkpoint::{read_telemetry, RunDir};
use dp_core::engine::{run_task, RunSummary};
use dp_core::eval::{evaluate, parse_ground_truth, AliasTable, MatchRule};
use dp_core::ledger::{aggregate, human_baseline, per_entity_costs, Money};
use dp_core::task::{parse_entity_set, parse_task_spec, EntitySet, TaskSpec};
use dp_core::util::{atomic_write, atomic_write_json};

use crate::{
    read_file, runtime, CliError, ProviderFlags, RunArgs, EXIT_FAILED_ENTITIES, EXIT_OK,
};

fn io_at(path: &Path) -> impl FnOnce(std::io::Error) -> CliError {
    let path = path.to_path_buf();
    move |source| CliError::Io { path, source }
}

pub(crate) fn write_table(dir: &RunDir, table: &CuratedTable) -> Result<(), CliError> {
    let csv = dir.curated_csv_path();
    atomic_write(&csv, table.to_csv().as_bytes()).map_err(io_at(&csv))?;
    let jsonl = dir.curated_jsonl_path();
    atomic_write(&jsonl, table.to_jsonl().as_bytes()).map_err(io_at(&jsonl))?;
    Ok(())
}

/// Compile a run and, when an overrides file is present, fold it in and
/// rewrite the table files. Returns the table and how many overrides
/// were applied.
pub(crate) fn compile_with_overrides(
    run_dir: &Path,
) -> Result<(CuratedTable, usize), CliError> {
    let table = compile_run(run_dir)?;
    let dir = RunDir::new(run_dir);
    let path = dir.overrides_path();
    if !path.exists() {
        return Ok((table, 0));
    }
    let set = parse_overrides(&read_file(&path)?)?;
    let table = apply_overrides(&table, &set)?;
    write_table(&dir, &table)?;
    Ok((table, set.entries.len()))
}

fn finish_run(
    run_dir: &Path,
    entities: &EntitySet,
    summary: &RunSummary,
) -> Result<i32, CliError> {
    let (_, overrides_applied) = compile_with_overrides(run_dir)?;
    let dir = RunDir::new(run_dir);
    let manifest = dir.load_manifest()?;
    let lines = read_telemetry(&dir.telemetry_path())?;
    let report = aggregate(&per_entity_costs(
        lines.into_iter().map(|l| (l.entity_id, l.usage)),
        &manifest.task.pricing,
    ));

    println!("task: {}", manifest.task.task_name);
    println!("done: {}   failed: {}", summary.done, summary.failed);
    if summary.failed > 0 {
        let state = dir.scan(entities)?;
        let ids: Vec<String> = state.failed.iter().cloned().collect();
        println!("failed entities: {}", ids.join(", "));
    }
    println!(
        "total cost: {}   mean/record: {}   search share: {:.1}%",
        report.total.format_cents(),
        report.mean.format_cents(),
        report.search_share * 100.0,
    );
    if overrides_applied > 0 {
        println!("overrides applied: {overrides_applied}");
    }
    println!("curated: {}", dir.curated_csv_path().display());
    Ok(if summary.failed > 0 { EXIT_FAILED_ENTITIES } else { EXIT_OK })
}

pub fn cmd_run(args: &RunArgs, baseline: bool) -> Result<i32, CliError> {
    let spec = parse_task_spec(&read_file(&args.task)?)?;
    let spec = if baseline { bootstrap::set_baseline_mode(&spec) } else { spec };
    let entities = parse_entity_set(&read_file(&args.entities)?, &spec)?;
    let provider = args.provider.build()?;
    let summary =
        runtime().block_on(run_task(&spec, &entities, provider, &args.run_dir))?;
    finish_run(&args.run_dir, &entities, &summary)
}

/// Pick up an interrupted run from its manifest alone.
pub fn cmd_resume(run_dir: &Path, provider: &ProviderFlags) -> Result<i32, CliError> {
    let manifest = RunDir::new(run_dir).load_manifest()?;
    let provider = provider.build()?;
    let summary = runtime().block_on(run_task(
        &manifest.task,
        &manifest.entities,
        provider,
        run_dir,
    ))?;
    finish_run(run_dir, &manifest.entities, &summary)
}

pub fn cmd_compile(run_dir: &Path) -> Result<i32, CliError> {
    let (table, overrides_applied) = compile_with_overrides(run_dir)?;
    let dir = RunDir::new(run_dir);
    println!("compiled {} rows", table.rows.len());
    if overrides_applied > 0 {
        println!("overrides applied: {overrides_applied}");
    }
    println!("curated: {}", dir.curated_csv_path().display());
    println!("jsonl:   {}", dir.curated_jsonl_path().display());
    Ok(EXIT_OK)
}

/// A curated table inside a run directory sits next to the manifest, which
/// already carries the task spec it was produced under. Without an explicit
/// --task file, borrow that spec for typed matching and baseline detection.
/// A foreign or unreadable manifest just means untyped matching.
fn sibling_manifest_spec(curated: &Path) -> Option<TaskSpec> {
    let dir = curated.parent()?;
    if !dir.join("manifest.json").exists() {
        return None;
    }
    RunDir::new(dir).load_manifest().ok().map(|m| m.task)
}

pub fn cmd_eval(
    curated: &Path,
    truth: &Path,
    task: Option<&Path>,
    aliases: Option<&Path>,
    alpha: f64,
) -> Result<i32, CliError> {
    let mut table = parse_curated_csv(&read_file(curated)?)?;
    let spec = match task {
        Some(path) => Some(parse_task_spec(&read_file(path)?)?),
        None => sibling_manifest_spec(curated),
    };
    let mut baseline = false;
    if let Some(spec) = spec {
        table = table.retyped(&spec.attributes);
        baseline = bootstrap::is_baseline(&spec);
    }
    let truth = parse_ground_truth(&read_file(truth)?)?;
    let rule = match aliases {
        Some(path) => MatchRule::with_aliases(AliasTable::from_csv(&read_file(path)?)?),
        None => MatchRule::default(),
    };

    let mut report = evaluate(&table, &truth, &rule, alpha)?;
    report.baseline = baseline;
    print!("{}", report.render_text());

    let out = match curated.parent() {
        Some(parent) if !parent.as_os_str().is_empty() => parent.join("eval_report.json"),
        _ => Path::new("eval_report.json").to_path_buf(),
    };
    atomic_write_json(&out, &report).map_err(io_at(&out))?;
    println!("report: {}", out.display());
    Ok(EXIT_OK)
}

pub fn cmd_report(
    run_dir: &Path,
    wage: &str,
    records_per_hour: u32,
) -> Result<i32, CliError> {
    let dir = RunDir::new(run_dir);
    let manifest = dir.load_manifest()?;
    let lines = read_telemetry(&dir.telemetry_path())?;
    let records = per_entity_costs(
        lines.into_iter().map(|l| (l.entity_id, l.usage)),
        &manifest.task.pricing,
    );
    let wage = Money::parse_dollars(wage)?;
    let report =
        aggregate(&records).with_human_baseline(human_baseline(wage, records_per_hour)?);
    print!("{}", report.render_text());

    let out = dir.root().join("cost_report.json");
    atomic_write_json(&out, &report).map_err(io_at(&out))?;
    println!("report: {}", out.display());
    Ok(EXIT_OK)
}

fn phase_label(phase: BootstrapPhase) -> &'static str {
    match phase {
        BootstrapPhase::Entities => "entities",
        BootstrapPhase::Task => "task",
    }
}

pub fn cmd_bootstrap(
    request: &str,
    playbook_path: &Path,
    entities: Option<&Path>,
    out_root: &Path,
    model: &str,
    flags: &ProviderFlags,
) -> Result<i32, CliError> {
    let playbook = Playbook::load(playbook_path)?;
    let provider = flags.build()?;
    let options =
        BootstrapOptions { model_id: model.to_string(), ..BootstrapOptions::default() };

    let rt = runtime();
    let outcome = match entities {
        Some(csv_path) => {
            let csv = read_file(csv_path)?;
            rt.block_on(bootstrap::bootstrap_with_entities(
                request,
                &playbook,
                &csv,
                provider.as_ref(),
                &options,
            ))
        }
        None => rt.block_on(bootstrap::bootstrap_discover_entities(
            request,
            &playbook,
            provider.as_ref(),
            &options,
        )),
    };

    match outcome {
        Ok(result) => {
            let paths = bootstrap::write_bootstrap_outputs(out_root, &result)?;
            println!("task: {}", result.spec.task_name);
            println!(
                "drafting attempts: {} ({} rejected)",
                result.attempts_used,
                result.validation_log.len(),
            );
            for rejected in &result.validation_log {
                println!(
                    "  rejected {} draft (attempt {}): {}",
                    phase_label(rejected.phase),
                    rejected.attempt,
                    rejected.reason,
                );
            }
            println!("wrote: {}", paths.task_yaml.display());
            if paths.entities_csv.exists() {
                println!("wrote: {}", paths.entities_csv.display());
            }
            println!("wrote: {}", paths.log.display());
            Ok(EXIT_OK)
        }
        Err(BootstrapError::Exhausted { validation_log }) => {
            println!("bootstrap exhausted after {} rejected drafts:", validation_log.len());
            for rejected in &validation_log {
                println!(
                    "  [{} attempt {}] {}",
                    phase_label(rejected.phase),
                    rejected.attempt,
                    rejected.reason,
                );
            }
            Err(BootstrapError::Exhausted { validation_log }.into())
        }
        Err(other) => Err(other.into()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use dp_core::compile::{CellProvenance, CellStatus};

    const TRUTH: &str = "entity_id,year\nAda,1842\nGrace,1952\n";

    fn curated_csv() -> String {
        "name,year,year__status,year__provenance\n\
         Ada,1842,found,model\n\
         Grace,1944,found,model\n"
            .to_string()
    }

    #[test]
    fn eval_writes_a_report_next_to_the_table() {
        let tmp = tempfile::tempdir().unwrap();
        let curated = tmp.path().join("curated.csv");
        std::fs::write(&curated, curated_csv()).unwrap();
        let truth = tmp.path().join("truth.csv");
        std::fs::write(&truth, TRUTH).unwrap();

        let code = cmd_eval(&curated, &truth, None, None, 0.05).unwrap();
        assert_eq!(code, EXIT_OK);

        let report: serde_json::Value = serde_json::from_str(
            &std::fs::read_to_string(tmp.path().join("eval_report.json")).unwrap(),
        )
        .unwrap();
        assert_eq!(report["attributes"][0]["cell"]["n_total"], 2);
        assert_eq!(report["attributes"][0]["cell"]["k_correct"], 1);
        assert_eq!(report["alpha"], 0.05);
        assert_eq!(report["baseline"], false);
    }

    #[test]
    fn eval_missing_truth_entity_is_a_plain_error() {
        let tmp = tempfile::tempdir().unwrap();
        let curated = tmp.path().join("curated.csv");
        std::fs::write(&curated, curated_csv()).unwrap();
        let truth = tmp.path().join("truth.csv");
        std::fs::write(&truth, "entity_id,year\nAda,1842\n").unwrap();

        let err = cmd_eval(&curated, &truth, None, None, 0.05).unwrap_err();
        assert_eq!(err.exit_code(), 1);
        assert!(err.to_string().contains("Grace"));
    }

    #[test]
    fn curated_table_reload_keeps_cell_semantics() {
        let table = parse_curated_csv(&curated_csv()).unwrap();
        assert_eq!(table.rows[0].cells[0].status, CellStatus::Found);
        assert_eq!(table.rows[0].cells[0].provenance, CellProvenance::Model);
    }
}
