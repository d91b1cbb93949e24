use std::fs;
use std::path::Path;

use pianist_core::density::ModelFamily;
use pianist_core::evaluation::{feature_subsets, run_cv, sweep, EvaluationReport};
use pianist_core::features::{FeatureDataset, FeatureKind};
use pianist_core::midi_io::{to_note_table, write_smf, TickGrid};
use pianist_core::synth::{generate_score, render_performer, well_separated_profiles};
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::input::{align_performers, load_performers};
use crate::CliError;

fn write(dir: &Path, name: &str, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| CliError::Internal(format!("cannot write {}: {e}", path.display())))
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Internal(format!("cannot create {}: {e}", dir.display())))
}

fn to_json<T: serde::Serialize>(value: &T) -> Result<String, CliError> {
    serde_json::to_string_pretty(value).map_err(|e| CliError::Internal(e.to_string()))
}

fn dataset(config: &RunConfig) -> Result<FeatureDataset, CliError> {
    let performers = load_performers(&config.inputs()?)?;
    let (table, _) = align_performers(&performers, config.reference.as_deref())?;
    FeatureDataset::from_table(&table).map_err(CliError::from_input)
}

pub fn align(config: &RunConfig) -> Result<(), CliError> {
    let out = config.out_dir()?;
    let performers = load_performers(&config.inputs()?)?;
    let (table, reports) = align_performers(&performers, config.reference.as_deref())?;
    create_dir(&out)?;
    write(&out, "aligned_table.json", to_json(&table)?)?;
    write(&out, "alignment_report.json", to_json(&reports)?)?;
    println!("{} positions, {} performers", table.n_positions(), table.n_performers());
    for (m, report) in reports.iter().enumerate() {
        for p in &report.performers {
            println!(
                "movement {m} {}: {} matched, {} insertions, {} deletions, cost {}",
                p.performer_id, p.pairs, p.insertions, p.deletions, p.cost
            );
        }
    }
    Ok(())
}

pub fn features(config: &RunConfig) -> Result<(), CliError> {
    let out = config.out_dir()?;
    let kinds = config.feature_kinds(&FeatureKind::ALL)?;
    let dataset = dataset(config)?;
    create_dir(&out)?;
    let csv = dataset.to_csv(&kinds);
    write(&out, "features.csv", &csv)?;
    println!("{} rows written to {}", csv.lines().count() - 1, out.join("features.csv").display());
    Ok(())
}

fn write_report(dir: &Path, report: &EvaluationReport) -> Result<(), CliError> {
    create_dir(dir)?;
    write(dir, "report.json", report.to_json().map_err(|e| CliError::Internal(e.to_string()))?)?;
    write(dir, "confusion.csv", report.confusion_csv())?;
    write(dir, "normalized_confusion.csv", report.normalized_confusion_csv())?;
    write(dir, "metrics.csv", report.metrics_csv())
}

pub fn evaluate(config: &RunConfig) -> Result<(), CliError> {
    let out = config.out_dir()?;
    let default_features = [FeatureKind::Ioi, FeatureKind::Dl, FeatureKind::Nd];
    if config.sweep.unwrap_or(false) {
        let families = config.families(&ModelFamily::ALL)?;
        // Validate the knobs before any heavy lifting.
        let base = config.experiment(families[0], &config.feature_kinds(&FeatureKind::ALL)?)?;
        let subsets = feature_subsets(1);
        let dataset = dataset(config)?;
        let report = sweep(&dataset, &subsets, &families, &base).map_err(CliError::from_input)?;
        create_dir(&out)?;
        for &family in &families {
            write(&out, &format!("sweep_{family}.csv"), report.table_csv(family))?;
        }
        write(&out, "sweep.json", to_json(&report.rows)?)?;
        for best in &report.best {
            write_report(&out.join(format!("best_{}", best.config.family)), best)?;
            println!(
                "{}: best {} precision {:.3}",
                best.config.family,
                FeatureKind::join(&best.config.features),
                best.metrics.macro_precision
            );
        }
        return Ok(());
    }
    let families = config.families(&[ModelFamily::Histogram])?;
    let [family] = families[..] else {
        return Err(CliError::Usage("--model takes a single family unless --sweep is given".into()));
    };
    let experiment = config.experiment(family, &config.feature_kinds(&default_features)?)?;
    let dataset = dataset(config)?;
    let report = run_cv(&dataset, &experiment).map_err(CliError::from_input)?;
    write_report(&out, &report)?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    let m = &report.metrics;
    println!(
        "{} trials, precision {:.3}, recall {:.3}, F-score {:.3}",
        report.n_trials(),
        m.macro_precision,
        m.macro_recall,
        m.f_score
    );
    Ok(())
}

pub fn synth(config: &RunConfig) -> Result<(), CliError> {
    let out = config.out_dir()?;
    let n_performers = config.performers.unwrap_or(9);
    let n_notes = config.notes.unwrap_or(16980);
    let separation = config.separation.unwrap_or(1.0);
    let seed = config.seed.unwrap_or(0);
    let format = config.format.as_deref().unwrap_or("both");
    let (midi, csv) = match format {
        "mid" => (true, false),
        "csv" => (false, true),
        "both" => (true, true),
        other => return Err(CliError::Usage(format!("unknown format `{other}`; use mid, csv or both"))),
    };
    if n_performers < 2 {
        return Err(CliError::Usage("need at least 2 performers".into()));
    }
    if !(separation.is_finite() && separation >= 0.0) {
        return Err(CliError::Usage("separation must be non-negative".into()));
    }
    let score = generate_score(n_notes, seed).map_err(CliError::from_input)?;
    let profiles = well_separated_profiles(n_performers, separation, seed);
    let grid = TickGrid::default();
    // Written files hold the tick-quantised notes, so SMF and CSV agree.
    let rendered = profiles
        .par_iter()
        .map(|p| render_performer(&score, p).map(|r| grid.quantize(&r)))
        .collect::<Result<Vec<_>, _>>()
        .map_err(CliError::from_input)?;
    let score = grid.quantize(&score);

    create_dir(&out)?;
    write(&out, "profiles.json", to_json(&profiles)?)?;
    if midi {
        let dir = out.join("midi");
        create_dir(&dir)?;
        write(&out, "score.mid", write_smf(&score, &grid))?;
        for r in &rendered {
            write(&dir, &format!("{}.mid", r.performer_id), write_smf(r, &grid))?;
        }
    }
    if csv {
        let dir = out.join("csv");
        create_dir(&dir)?;
        write(&out, "score.csv", to_note_table(&score))?;
        for r in &rendered {
            write(&dir, &format!("{}.csv", r.performer_id), to_note_table(r))?;
        }
    }
    println!("{n_performers} performers x {n_notes} notes written to {}", out.display());
    Ok(())
}
