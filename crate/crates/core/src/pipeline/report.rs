//! Text rendering of a finished run as a metric-by-contrast grid.

use std::fmt::Write as _;
use std::path::Path;

use super::run::{Summary, Variant};
use crate::ensemble_eval::{Metric, MetricsReport};
use crate::error::{Error, Result};

/// Row labels of the grid, in display order.
pub const GRID_ROWS: [&str; 8] = ["Acc", "CK", "AUC", "Precision", "Recall / Sens.", "F1", "Specificity", "p-Value"];

fn cell(r: &MetricsReport, row: usize) -> String {
    let metric = [
        Metric::Accuracy,
        Metric::Kappa,
        Metric::Auc,
        Metric::Precision,
        Metric::Recall,
        Metric::F1,
        Metric::Specificity,
    ];
    match metric.get(row) {
        Some(&m) => r.get(m).map_or("n/a".to_string(), |v| format!("{v:.4}")),
        None => match r.p_value {
            Some(p) if p < 0.001 => "<0.001".to_string(),
            Some(p) => format!("{p:.3}"),
            None => "-".to_string(),
        },
    }
}

/// Tab-separated grid: one row per metric, one column per contrast, plus an
/// `Overall` column with the mean over contrasts.
pub fn render_grid(summary: &Summary) -> String {
    let mut out = String::new();
    let mut header = vec!["Metric".to_string()];
    header.extend(summary.contrasts.iter().map(|c| c.name.clone()));
    header.push("Overall".into());
    out.push_str(&header.join("\t"));
    out.push('\n');
    let overall = [
        Metric::Accuracy,
        Metric::Kappa,
        Metric::Auc,
        Metric::Precision,
        Metric::Recall,
        Metric::F1,
        Metric::Specificity,
    ];
    for (i, label) in GRID_ROWS.iter().enumerate() {
        let mut row = vec![label.to_string()];
        row.extend(summary.contrasts.iter().map(|c| cell(&c.final_metrics, i)));
        let mean = overall
            .get(i)
            .and_then(|m| summary.overall.get(m))
            .and_then(|s| s.mean)
            .map_or("-".to_string(), |v| format!("{v:.4}"));
        row.push(mean);
        out.push_str(&row.join("\t"));
        out.push('\n');
    }
    for f in &summary.failed {
        let _ = writeln!(out, "# failed: {}: {}", f.contrast, f.error);
    }
    out
}

pub fn load_summary(run_dir: &Path, variant: Variant) -> Result<Summary> {
    let path = variant.dir(run_dir).join("summary.json");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// The raw grid, followed by the residual grid when the run has one.
pub fn render_report(run_dir: &Path) -> Result<String> {
    let raw = load_summary(run_dir, Variant::Raw)?;
    let mut out = render_grid(&raw);
    if variant_exists(run_dir, Variant::Residual) {
        let resid = load_summary(run_dir, Variant::Residual)?;
        out.push_str("\n# residualized features\n");
        out.push_str(&render_grid(&resid));
    }
    Ok(out)
}

fn variant_exists(run_dir: &Path, v: Variant) -> bool {
    v.dir(run_dir).join("summary.json").is_file()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble_eval::{compute_metrics, summarize};
    use crate::pipeline::run::ContrastSummary;

    fn summary() -> Summary {
        let y = [true, true, false, false];
        let mut a = compute_metrics(&y, &[0.9, 0.4, 0.2, 0.1], &[true, false, false, false]).unwrap();
        a.p_value = Some(0.0004);
        let mut b = compute_metrics(&y, &[0.9, 0.8, 0.7, 0.1], &[true, true, true, false]).unwrap();
        b.p_value = Some(0.0213);
        Summary {
            variant: Variant::Raw,
            overall: summarize(&[a.clone(), b.clone()]),
            contrasts: vec![
                ContrastSummary {
                    name: "J1 vs J2".into(),
                    cv: Default::default(),
                    final_metrics: a,
                },
                ContrastSummary {
                    name: "J1 vs J6".into(),
                    cv: Default::default(),
                    final_metrics: b,
                },
            ],
            failed: vec![],
        }
    }

    #[test]
    fn grid_has_the_metric_rows_in_order() {
        let text = render_grid(&summary());
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "Metric\tJ1 vs J2\tJ1 vs J6\tOverall");
        let labels: Vec<&str> = lines[1..].iter().map(|l| l.split('\t').next().unwrap()).collect();
        assert_eq!(labels, GRID_ROWS);
        assert_eq!(lines[1], "Acc\t0.7500\t0.7500\t0.7500");
        assert_eq!(lines[8], "p-Value\t<0.001\t0.021\t-");
    }
}
