//! Result tables and their rendered artifacts: `results.csv`, `summary.md`,
//! and one plot per sweep variable.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::plot;
use crate::stats;

pub const CSV_HEADER: &str =
    "sweep_var,sweep_value,seed,user_id,leakage_mean,leakage_reps,perplexity,accuracy,manifest_id";

/// One (sweep value, seed, user) outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub sweep_var: String,
    pub sweep_value: String,
    pub seed: u64,
    pub user_id: String,
    pub leakage_mean: f64,
    pub leakage_reps: Vec<f64>,
    pub perplexity: f64,
    pub accuracy: f64,
    pub manifest_id: String,
}

/// A grid point that failed; kept out of results.csv, listed in summary.md.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowFailure {
    pub sweep_value: String,
    pub seed: u64,
    pub user_id: String,
    pub error: String,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ResultTable {
    pub name: String,
    pub rows: Vec<ResultRow>,
    pub failures: Vec<RowFailure>,
}

impl ResultTable {
    pub fn is_empty(&self) -> bool {
        self.rows.is_empty() && self.failures.is_empty()
    }

    /// Rows in deterministic emission order.
    fn sorted_rows(&self) -> Vec<&ResultRow> {
        let mut rows: Vec<&ResultRow> = self.rows.iter().collect();
        rows.sort_by(|a, b| {
            a.sweep_var
                .cmp(&b.sweep_var)
                .then(numeric_or_lex(&a.sweep_value, &b.sweep_value))
                .then(a.seed.cmp(&b.seed))
                .then(a.user_id.cmp(&b.user_id))
        });
        rows
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for row in self.sorted_rows() {
            let reps: Vec<String> = row.leakage_reps.iter().map(|r| r.to_string()).collect();
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                row.sweep_var,
                row.sweep_value,
                row.seed,
                row.user_id,
                row.leakage_mean,
                reps.join(";"),
                row.perplexity,
                row.accuracy,
                row.manifest_id,
            ));
        }
        out
    }

    /// Mean leakage per sweep value, averaged over seeds (and users).
    pub fn mean_by_value(&self) -> Vec<(String, f64)> {
        let mut grouped: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
        for row in &self.rows {
            grouped.entry(&row.sweep_value).or_default().push(row.leakage_mean);
        }
        let mut out: Vec<(String, f64)> =
            grouped.into_iter().map(|(k, v)| (k.to_string(), stats::mean(&v))).collect();
        out.sort_by(|a, b| numeric_or_lex(&a.0, &b.0));
        out
    }
}

fn numeric_or_lex(a: &str, b: &str) -> std::cmp::Ordering {
    match (a.parse::<f64>(), b.parse::<f64>()) {
        (Ok(x), Ok(y)) => x.partial_cmp(&y).unwrap_or(std::cmp::Ordering::Equal),
        _ => a.cmp(b),
    }
}

fn summary_markdown(table: &ResultTable) -> String {
    let mut out = format!("# {}\n\n", table.name);
    out.push_str("| sweep value | runs | leakage mean | leakage std | perplexity mean | accuracy mean |\n");
    out.push_str("|---|---|---|---|---|---|\n");
    let mut grouped: BTreeMap<&str, Vec<&ResultRow>> = BTreeMap::new();
    for row in &table.rows {
        grouped.entry(&row.sweep_value).or_default().push(row);
    }
    let mut keys: Vec<&str> = grouped.keys().copied().collect();
    keys.sort_by(|a, b| numeric_or_lex(a, b));
    for key in keys {
        let rows = &grouped[key];
        let leaks: Vec<f64> = rows.iter().map(|r| r.leakage_mean).collect();
        let ppls: Vec<f64> = rows.iter().map(|r| r.perplexity).collect();
        let accs: Vec<f64> = rows.iter().map(|r| r.accuracy).collect();
        out.push_str(&format!(
            "| {} | {} | {:.4} | {:.4} | {:.2} | {:.4} |\n",
            key,
            rows.len(),
            stats::mean(&leaks),
            stats::std_dev(&leaks),
            stats::mean(&ppls),
            stats::mean(&accs),
        ));
    }
    if !table.failures.is_empty() {
        out.push_str("\n## Failed grid points\n\n");
        for failure in &table.failures {
            out.push_str(&format!(
                "- value {} seed {} user {}: {}\n",
                failure.sweep_value, failure.seed, failure.user_id, failure.error
            ));
        }
    }
    out
}

fn plot_for(table: &ResultTable, sweep_var: &str) -> String {
    let rows: Vec<&ResultRow> =
        table.rows.iter().filter(|r| r.sweep_var == sweep_var).collect();
    let numeric = rows.iter().all(|r| r.sweep_value.parse::<f64>().is_ok());
    let title = format!("{}: leakage vs {}", table.name, sweep_var);
    if numeric {
        let mut grouped: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for row in &rows {
            grouped.entry(row.sweep_value.clone()).or_default().push(row.leakage_mean);
        }
        let mut points: Vec<(f64, f64)> = grouped
            .into_iter()
            .map(|(k, v)| (k.parse::<f64>().expect("checked numeric"), stats::mean(&v)))
            .collect();
        points.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));
        plot::line_plot(
            &title,
            sweep_var,
            "mean leakage",
            &[plot::Series { label: "mean over seeds", points }],
        )
    } else {
        let mut grouped: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for row in &rows {
            grouped.entry(row.sweep_value.clone()).or_default().push(row.leakage_mean);
        }
        let bars: Vec<(String, f64)> =
            grouped.into_iter().map(|(k, v)| (k, stats::mean(&v))).collect();
        plot::bar_plot(&title, sweep_var, "mean leakage", &bars)
    }
}

/// Write results.csv, summary.md, and one plot per sweep variable present.
/// Returns the created paths.
pub fn emit_report(table: &ResultTable, out_dir: &Path) -> Result<Vec<PathBuf>> {
    if table.is_empty() {
        return Err(LabError::Invalid("cannot emit a report for an empty table".into()));
    }
    fs::create_dir_all(out_dir).map_err(|e| LabError::io(out_dir, e))?;
    let mut written = Vec::new();

    let csv_path = out_dir.join("results.csv");
    fs::write(&csv_path, table.to_csv()).map_err(|e| LabError::io(&csv_path, e))?;
    written.push(csv_path);

    let md_path = out_dir.join("summary.md");
    fs::write(&md_path, summary_markdown(table)).map_err(|e| LabError::io(&md_path, e))?;
    written.push(md_path);

    let mut sweep_vars: Vec<&str> = table.rows.iter().map(|r| r.sweep_var.as_str()).collect();
    sweep_vars.sort_unstable();
    sweep_vars.dedup();
    for sweep_var in sweep_vars {
        let svg_path = out_dir.join(format!("leakage_vs_{sweep_var}.svg"));
        fs::write(&svg_path, plot_for(table, sweep_var)).map_err(|e| LabError::io(&svg_path, e))?;
        written.push(svg_path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(value: &str, seed: u64, leak: f64) -> ResultRow {
        ResultRow {
            sweep_var: "alpha_word".into(),
            sweep_value: value.into(),
            seed,
            user_id: "user-000".into(),
            leakage_mean: leak,
            leakage_reps: vec![leak, leak],
            perplexity: 10.0,
            accuracy: 0.5,
            manifest_id: "abc".into(),
        }
    }

    #[test]
    fn csv_has_header_and_one_line_per_row() {
        let table = ResultTable {
            name: "t".into(),
            rows: vec![row("0.2", 1, 0.5), row("0.1", 1, 0.25)],
            failures: vec![],
        };
        let csv = table.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0], CSV_HEADER);
        // Numeric ordering on the sweep value: 0.1 before 0.2.
        assert!(lines[1].starts_with("alpha_word,0.1,"));
        assert!(lines[2].starts_with("alpha_word,0.2,"));
        assert!(lines[1].contains("0.25;0.25"));
    }

    #[test]
    fn csv_is_deterministic_under_row_order() {
        let a = ResultTable {
            name: "t".into(),
            rows: vec![row("0.2", 2, 0.5), row("0.2", 1, 0.25), row("0.1", 1, 0.1)],
            failures: vec![],
        };
        let b = ResultTable {
            name: "t".into(),
            rows: vec![row("0.1", 1, 0.1), row("0.2", 1, 0.25), row("0.2", 2, 0.5)],
            failures: vec![],
        };
        assert_eq!(a.to_csv(), b.to_csv());
    }

    #[test]
    fn mean_column_recomputes_from_reps() {
        let table =
            ResultTable { name: "t".into(), rows: vec![row("0.2", 1, 0.5)], failures: vec![] };
        for row in &table.rows {
            let recomputed = stats::mean(&row.leakage_reps);
            assert_eq!(row.leakage_mean, recomputed);
        }
    }

    #[test]
    fn emit_writes_csv_summary_and_plot() {
        let dir = std::env::temp_dir().join("promptleak-report-test");
        let _ = fs::remove_dir_all(&dir);
        let table = ResultTable {
            name: "alpha sweep".into(),
            rows: vec![row("0.1", 1, 0.1), row("0.2", 1, 0.4)],
            failures: vec![RowFailure {
                sweep_value: "0.9".into(),
                seed: 1,
                user_id: "user-000".into(),
                error: "boom".into(),
            }],
        };
        let written = emit_report(&table, &dir).unwrap();
        assert_eq!(written.len(), 3);
        let csv = fs::read_to_string(dir.join("results.csv")).unwrap();
        assert_eq!(csv.lines().count(), 3);
        let md = fs::read_to_string(dir.join("summary.md")).unwrap();
        assert!(md.contains("boom"));
        assert!(dir.join("leakage_vs_alpha_word.svg").exists());
    }

    #[test]
    fn empty_table_is_an_error() {
        let dir = std::env::temp_dir().join("promptleak-report-empty");
        let table = ResultTable::default();
        assert!(emit_report(&table, &dir).is_err());
    }
}
