//! Terminal review loop for unresolved cells.
//!
//! Walks every cell whose status is `not_found` or whose provenance is
//! `failed`, in entity order, and asks for a value, `skip`, or
//! `confirm-not-found`. Accepted answers become override entries with
//! human provenance; the table files are recompiled on the way out.
//! `--from-file` feeds the same loop from a file, one answer per line,
//! with effects identical to typing them.

use std::io::{BufRead, Write};
use std::path::Path;

use dp_core::compile::{
    apply_overrides, compile_run, parse_overrides, serialize_overrides, CellProvenance,
    CellStatus, CuratedTable, OverrideEntry, OverrideSet,
};
use dp_core::engine::checkpoint::RunDir;
use dp_core::engine::AttrStatus;
use dp_core::util::atomic_write;

use crate::commands::write_table;
use crate::{read_file, CliError, EXIT_OK};

#[derive(Debug, Clone, PartialEq, Eq)]
enum Answer {
    Value(String),
    Skip,
    ConfirmNotFound,
}

fn parse_answer(line: &str) -> Answer {
    match line.trim() {
        "skip" => Answer::Skip,
        "confirm-not-found" => Answer::ConfirmNotFound,
        value => Answer::Value(value.to_string()),
    }
}

/// Cells needing a human look: model said not_found, or the engine
/// failed the entity. Row-major, so entity order then attribute order.
fn unresolved_cells(table: &CuratedTable) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for (row_idx, row) in table.rows.iter().enumerate() {
        for (attr_idx, cell) in row.cells.iter().enumerate() {
            if cell.status == CellStatus::NotFound
                || cell.provenance == CellProvenance::Failed
            {
                out.push((row_idx, attr_idx));
            }
        }
    }
    out
}

pub(crate) struct SessionOutcome {
    pub new_entries: Vec<OverrideEntry>,
    pub skipped: usize,
}

/// Prompt for every unresolved cell. Invalid values are rejected and
/// the same cell asked again; end of input skips whatever is left.
pub(crate) fn run_session(
    table: &CuratedTable,
    input: &mut dyn BufRead,
    out: &mut dyn Write,
) -> Result<SessionOutcome, CliError> {
    let unresolved = unresolved_cells(table);
    let mut outcome = SessionOutcome { new_entries: Vec::new(), skipped: 0 };

    'cells: for (pos, &(row_idx, attr_idx)) in unresolved.iter().enumerate() {
        let row = &table.rows[row_idx];
        let attr = &table.attributes[attr_idx];
        let cell = &row.cells[attr_idx];
        let io = |source| CliError::Io { path: "<terminal>".into(), source };

        writeln!(out, "[{}/{}] {}", pos + 1, unresolved.len(), row.entity_id).map_err(io)?;
        writeln!(
            out,
            "      attribute: {} ({})   current: {} ({})",
            attr.name,
            attr.value_kind.as_str(),
            cell.status.as_str(),
            cell.provenance.as_str(),
        )
        .map_err(io)?;

        loop {
            write!(out, "value, skip, or confirm-not-found> ").map_err(io)?;
            out.flush().map_err(io)?;
            let mut line = String::new();
            if input.read_line(&mut line).map_err(io)? == 0 {
                let left = unresolved.len() - pos;
                outcome.skipped += left;
                writeln!(out, "input ended; {left} cells left unreviewed").map_err(io)?;
                break 'cells;
            }
            match parse_answer(&line) {
                Answer::Skip => {
                    outcome.skipped += 1;
                    break;
                }
                Answer::ConfirmNotFound => {
                    outcome.new_entries.push(OverrideEntry {
                        entity_id: row.entity_id.clone(),
                        attribute: attr.name.clone(),
                        status: AttrStatus::NotFound,
                        value: String::new(),
                    });
                    break;
                }
                Answer::Value(value) => {
                    let entry = OverrideEntry {
                        entity_id: row.entity_id.clone(),
                        attribute: attr.name.clone(),
                        status: AttrStatus::Found,
                        value,
                    };
                    let probe = OverrideSet { entries: vec![entry.clone()] };
                    match apply_overrides(table, &probe) {
                        Ok(_) => {
                            outcome.new_entries.push(entry);
                            break;
                        }
                        Err(err) => {
                            writeln!(out, "      rejected: {err}").map_err(io)?;
                        }
                    }
                }
            }
        }
    }
    Ok(outcome)
}

/// Merge new answers over existing entries; a fresh answer for the same
/// cell replaces the old one.
fn merge_overrides(existing: OverrideSet, new_entries: Vec<OverrideEntry>) -> OverrideSet {
    let mut entries: Vec<OverrideEntry> = existing
        .entries
        .into_iter()
        .filter(|old| {
            !new_entries
                .iter()
                .any(|new| new.entity_id == old.entity_id && new.attribute == old.attribute)
        })
        .collect();
    entries.extend(new_entries);
    OverrideSet { entries }
}

pub fn cmd_review(run_dir: &Path, from_file: Option<&Path>) -> Result<i32, CliError> {
    let dir = RunDir::new(run_dir);
    if !dir.curated_csv_path().exists() {
        return Err(CliError::Usage(format!(
            "no compiled table at {}; run `dp compile` first",
            dir.curated_csv_path().display(),
        )));
    }

    let base = compile_run(run_dir)?;
    let existing = if dir.overrides_path().exists() {
        parse_overrides(&read_file(&dir.overrides_path())?)?
    } else {
        OverrideSet::default()
    };
    let working = apply_overrides(&base, &existing)?;

    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    let outcome = if unresolved_cells(&working).is_empty() {
        let io = |source| CliError::Io { path: "<terminal>".into(), source };
        writeln!(out, "nothing to review").map_err(io)?;
        SessionOutcome { new_entries: Vec::new(), skipped: 0 }
    } else {
        match from_file {
            Some(path) => {
                let mut input = std::io::BufReader::new(
                    std::fs::File::open(path).map_err(|source| CliError::Io {
                        path: path.to_path_buf(),
                        source,
                    })?,
                );
                run_session(&working, &mut input, &mut out)?
            }
            None => {
                let stdin = std::io::stdin();
                let mut input = stdin.lock();
                run_session(&working, &mut input, &mut out)?
            }
        }
    };

    let accepted = outcome.new_entries.len();
    let skipped = outcome.skipped;
    let merged = merge_overrides(existing, outcome.new_entries);
    if !merged.is_empty() {
        let path = dir.overrides_path();
        atomic_write(&path, serialize_overrides(&merged).as_bytes()).map_err(|source| {
            CliError::Io { path: path.clone(), source }
        })?;
    }

    // compile_run rewrote the base table above; put the overridden view
    // back on disk even when nothing new was accepted.
    let finished = apply_overrides(&base, &merged)?;
    write_table(&dir, &finished)?;

    let io = |source| CliError::Io { path: "<terminal>".into(), source };
    writeln!(out, "accepted {accepted} overrides, skipped {skipped}").map_err(io)?;
    writeln!(out, "curated: {}", dir.curated_csv_path().display()).map_err(io)?;
    Ok(EXIT_OK)
}
