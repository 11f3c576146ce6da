//! Deterministic CSV emission for experiment results and JSON reports for the
//! verifier. Column order is fixed; floats print in Rust's shortest
//! round-trip form, so identical results produce byte-identical files.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

use placement_core::simulation::{CellResult, ExperimentResult, NoiseSpec};

pub const CELL_COLUMNS: &str = "month,mechanism,placements,cumulative_placements,waiting_cost,\
envy_share,waste,teen_placed_pct,high_needs_placed_pct,non_disruption_rate";

pub const SUMMARY_COLUMNS: &str = "noise,k,mechanism,avg_placements_per_month,avg_waiting_cost,\
avg_envy_share,avg_waste,avg_teen_placed_pct,avg_high_needs_placed_pct,avg_non_disruption_rate";

/// One CSV per noise cell (per-month rows for every mechanism) plus a summary
/// CSV with the per-cell aggregates. Returns the paths written.
pub fn write_experiment_csvs(result: &ExperimentResult, out_dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir)
        .with_context(|| format!("creating output directory {}", out_dir.display()))?;
    let mut written = Vec::new();

    let mut noises: Vec<NoiseSpec> = Vec::new();
    for cell in &result.cells {
        if !noises.contains(&cell.noise) {
            noises.push(cell.noise);
        }
    }

    for noise in &noises {
        let cells: Vec<&CellResult> = result
            .cells
            .iter()
            .filter(|c| c.noise == *noise)
            .collect();
        let path = out_dir.join(format!("cell-{}.csv", noise.label()));
        let mut text = String::new();
        text.push_str(CELL_COLUMNS);
        text.push('\n');
        let months = cells
            .first()
            .map(|c| c.averaged.months.len())
            .unwrap_or(0);
        for mi in 0..months {
            for cell in &cells {
                let m = &cell.averaged.months[mi];
                text.push_str(&format!(
                    "{},{},{},{},{},{},{},{},{},{}\n",
                    m.month,
                    cell.mechanism.name(),
                    m.placements,
                    m.cumulative_placements,
                    m.waiting_cost,
                    m.envy_share,
                    m.waste,
                    m.teen_placed_pct,
                    m.high_needs_placed_pct,
                    m.non_disruption_rate
                ));
            }
        }
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        written.push(path);
    }

    let path = out_dir.join("summary.csv");
    let mut text = String::new();
    text.push_str(SUMMARY_COLUMNS);
    text.push('\n');
    for cell in &result.cells {
        let a = &cell.averaged;
        text.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            cell.noise.kind_name(),
            cell.noise.k(),
            cell.mechanism.name(),
            a.avg_placements_per_month,
            a.avg_waiting_cost,
            a.avg_envy_share,
            a.avg_waste,
            a.avg_teen_placed_pct,
            a.avg_high_needs_placed_pct,
            a.avg_non_disruption_rate
        ));
    }
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    written.push(path);
    Ok(written)
}

/// Serialize any verifier outcome as pretty JSON, either to a file or stdout.
pub fn emit_report<T: serde::Serialize>(report: &T, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(report).context("serializing report")?;
    match out {
        Some(path) => {
            fs::write(path, text).with_context(|| format!("writing {}", path.display()))?
        }
        None => println!("{text}"),
    }
    Ok(())
}
