//! Loading performances from disk.
//!
//! Each `--input` is a file (one performer), a directory of files (one
//! performer per file) or a directory of directories (one performer per
//! subdirectory, whose sorted files are consecutive movements).

use std::fs;
use std::path::{Path, PathBuf};

use pianist_core::alignment::{build_table, AlignedNoteTable, AlignmentReport, ReferencePolicy, TableOptions};
use pianist_core::midi_io::{from_note_table, parse_smf, Performance};

use crate::CliError;

/// One performer's movements, in order.
#[derive(Debug, Clone)]
pub struct PerformerInput {
    pub id: String,
    pub movements: Vec<Performance>,
}

fn is_supported(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("mid" | "midi" | "csv")
    )
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mut entries = fs::read_dir(dir)
        .map_err(|e| CliError::Usage(format!("cannot list {}: {e}", dir.display())))?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::Usage(format!("cannot list {}: {e}", dir.display())))?;
    entries.sort();
    Ok(entries)
}

/// Reads one `.mid`/`.midi`/`.csv` file. Parser warnings go to stderr.
pub fn read_performance(path: &Path, performer: &str, piece: &str) -> Result<Performance, CliError> {
    let input_error = |e: &dyn std::fmt::Display| CliError::Usage(format!("{}: {e}", path.display()));
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
    let performance = if ext == "csv" {
        let text = fs::read_to_string(path).map_err(|e| input_error(&e))?;
        from_note_table(&text, performer, piece).map_err(|e| input_error(&e))?
    } else {
        let bytes = fs::read(path).map_err(|e| input_error(&e))?;
        let parsed = parse_smf(&bytes).map_err(|e| input_error(&e))?;
        for w in &parsed.warnings {
            eprintln!("warning: {}: {w}", path.display());
        }
        parsed.into_performance(performer, piece)
    };
    if performance.is_empty() {
        return Err(CliError::Usage(format!("{}: no notes", path.display())));
    }
    Ok(performance)
}

fn movement_files(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let files: Vec<PathBuf> = sorted_entries(dir)?
        .into_iter()
        .filter(|p| p.is_file() && is_supported(p))
        .collect();
    if files.is_empty() {
        return Err(CliError::Usage(format!("{} contains no .mid or .csv files", dir.display())));
    }
    Ok(files)
}

fn read_movements(files: &[PathBuf], performer: &str) -> Result<Vec<Performance>, CliError> {
    files.iter().map(|f| read_performance(f, performer, &stem(f))).collect()
}

pub fn load_performers(inputs: &[PathBuf]) -> Result<Vec<PerformerInput>, CliError> {
    let mut performers = Vec::new();
    for input in inputs {
        if input.is_file() {
            let id = stem(input);
            performers.push(PerformerInput {
                movements: read_movements(std::slice::from_ref(input), &id)?,
                id,
            });
            continue;
        }
        let entries = sorted_entries(input)?;
        let dirs: Vec<&PathBuf> = entries.iter().filter(|p| p.is_dir()).collect();
        let files: Vec<&PathBuf> = entries.iter().filter(|p| p.is_file() && is_supported(p)).collect();
        if !dirs.is_empty() && !files.is_empty() {
            return Err(CliError::Usage(format!(
                "{} mixes performer files and performer directories",
                input.display()
            )));
        }
        for dir in dirs {
            let id = dir.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            performers.push(PerformerInput {
                movements: read_movements(&movement_files(dir)?, &id)?,
                id,
            });
        }
        for file in files {
            let id = stem(file);
            performers.push(PerformerInput {
                movements: read_movements(std::slice::from_ref(file), &id)?,
                id,
            });
        }
    }
    let mut ids: Vec<&str> = performers.iter().map(|p| p.id.as_str()).collect();
    ids.sort_unstable();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        return Err(CliError::Usage(format!("performer id `{}` appears twice", w[0])));
    }
    if performers.len() < 2 {
        return Err(CliError::Usage(format!("need at least 2 performers, found {}", performers.len())));
    }
    let n_movements = performers[0].movements.len();
    if let Some(p) = performers.iter().find(|p| p.movements.len() != n_movements) {
        return Err(CliError::Usage(format!(
            "performer {} has {} movements, expected {n_movements}",
            p.id,
            p.movements.len()
        )));
    }
    Ok(performers)
}

/// Per-movement reference choice resolved from `--reference`.
enum Reference {
    Median,
    Performer(usize),
    Score(Vec<Performance>),
}

fn resolve_reference(reference: Option<&str>, performers: &[PerformerInput]) -> Result<Reference, CliError> {
    let Some(reference) = reference else {
        return Ok(Reference::Median);
    };
    let path = Path::new(reference);
    let n_movements = performers[0].movements.len();
    if path.exists() {
        let files = if path.is_dir() { movement_files(path)? } else { vec![path.to_path_buf()] };
        if files.len() != n_movements {
            return Err(CliError::Usage(format!(
                "reference has {} movements, performers have {n_movements}",
                files.len()
            )));
        }
        return Ok(Reference::Score(read_movements(&files, "reference")?));
    }
    performers
        .iter()
        .position(|p| p.id == reference)
        .map(Reference::Performer)
        .ok_or_else(|| CliError::Usage(format!("reference `{reference}` is neither a file nor a performer id")))
}

/// Aligns each movement separately and stacks the tables.
pub fn align_performers(
    performers: &[PerformerInput],
    reference: Option<&str>,
) -> Result<(AlignedNoteTable, Vec<AlignmentReport>), CliError> {
    let reference = resolve_reference(reference, performers)?;
    let n_movements = performers[0].movements.len();
    let mut tables = Vec::with_capacity(n_movements);
    let mut reports = Vec::with_capacity(n_movements);
    for m in 0..n_movements {
        let movement: Vec<Performance> = performers.iter().map(|p| p.movements[m].clone()).collect();
        let policy = match &reference {
            Reference::Median => ReferencePolicy::MedianLength,
            Reference::Performer(i) => ReferencePolicy::Index(*i),
            Reference::Score(s) => ReferencePolicy::Explicit(s[m].clone()),
        };
        let options = TableOptions {
            reference: policy,
            ..TableOptions::default()
        };
        let built = build_table(&movement, &options).map_err(CliError::from_input)?;
        tables.push(built.table);
        reports.push(built.report);
    }
    let table = AlignedNoteTable::concat(tables).map_err(CliError::from_input)?;
    if table.n_positions() == 0 {
        return Err(CliError::Usage("no position is shared by two performers".into()));
    }
    Ok((table, reports))
}
