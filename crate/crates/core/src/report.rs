//! Markdown tables in the per-product layout: one row per product, the
//! "All category" row last, and either F1-score/MCC pairs per setting or a
//! single MCC column per shot plan.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use crate::metrics::{CategoryMetrics, MetricReport};
use crate::runner::RunReport;

pub const ALL_CATEGORY: &str = "All category";

/// Display name for a category directory, e.g. `metal_nut` -> `Metal Nut`,
/// `pcb1` -> `PCB1`.
pub fn display_product(category: &str) -> String {
    category
        .split(['_', ' '])
        .filter(|w| !w.is_empty())
        .map(|w| {
            if w.starts_with("pcb") {
                return w.to_uppercase();
            }
            let mut c = w.chars();
            match c.next() {
                Some(first) => first.to_uppercase().chain(c).collect(),
                None => String::new(),
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableCells {
    /// `F1-score | MCC` under every column header.
    F1AndMcc,
    /// One MCC value per column.
    MccOnly,
}

fn row(cells: &[String]) -> String {
    format!("| {} |", cells.join(" | "))
}

/// Render a table with one column group per `(header, report)` pair.
/// Products missing from a report show `-`.
pub fn render_table(columns: &[(String, &MetricReport)], cells: TableCells) -> String {
    let categories: BTreeSet<&String> = columns.iter().flat_map(|(_, r)| r.per_category.keys()).collect();
    let per_col = match cells {
        TableCells::F1AndMcc => 2,
        TableCells::MccOnly => 1,
    };
    let mut out = String::new();

    let mut header = vec!["Settings".to_string()];
    for (h, _) in columns {
        header.push(h.clone());
        header.extend(std::iter::repeat_n(String::new(), per_col - 1));
    }
    writeln!(out, "{}", row(&header)).unwrap();
    writeln!(out, "{}", row(&vec!["---".to_string(); header.len()])).unwrap();
    if cells == TableCells::F1AndMcc {
        let mut sub = vec!["Product Name".to_string()];
        for _ in columns {
            sub.push("F1-score".into());
            sub.push("MCC".into());
        }
        writeln!(out, "{}", row(&sub)).unwrap();
    }

    let fmt_cells = |m: Option<&CategoryMetrics>| -> Vec<String> {
        match (m, cells) {
            (Some(m), TableCells::F1AndMcc) => vec![m.f1.to_string(), m.mcc.to_string()],
            (Some(m), TableCells::MccOnly) => vec![m.mcc.to_string()],
            (None, _) => vec!["-".to_string(); per_col],
        }
    };
    for cat in &categories {
        let mut r = vec![display_product(cat)];
        for (_, rep) in columns {
            r.extend(fmt_cells(rep.per_category.get(*cat)));
        }
        writeln!(out, "{}", row(&r)).unwrap();
    }
    let mut r = vec![ALL_CATEGORY.to_string()];
    for (_, rep) in columns {
        r.extend(fmt_cells(Some(&rep.all_category)));
    }
    writeln!(out, "{}", row(&r)).unwrap();
    out
}

/// `report.md` for a single run: the table, then run details.
pub fn render_run_report(report: &RunReport) -> String {
    let mut out = render_table(&[(report.setting.label().to_string(), &report.metrics)], TableCells::F1AndMcc);
    let m = &report.metrics;
    out.push('\n');
    writeln!(out, "- Setting: {}", report.setting).unwrap();
    writeln!(out, "- Shot plan: {}", report.shot_plan).unwrap();
    writeln!(out, "- Model: {}", report.model).unwrap();
    writeln!(out, "- Error policy: {}", report.error_policy).unwrap();
    writeln!(out, "- Images: {} ({} failed)", report.images, report.failures).unwrap();
    writeln!(out, "- Format errors: {}", m.all_category.format_error_count).unwrap();
    writeln!(out, "- Macro F1-score: {}", m.macro_f1).unwrap();
    writeln!(out, "- Macro MCC: {}", m.macro_mcc).unwrap();
    if let Some(a) = m.all_category.pixel_auroc {
        writeln!(out, "- Pixel AUROC (all category): {a}").unwrap();
    }
    if report.degraded {
        writeln!(out, "- WARNING: more than 10% of images failed; this run is degraded").unwrap();
    }
    out
}

/// How report columns are keyed when several runs are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColumnKey {
    /// One `F1-score | MCC` pair per setting.
    Setting,
    /// One MCC column per shot plan.
    ShotPlan,
}

/// Combine runs into one table, columns in the given order.
pub fn render_comparison(reports: &[RunReport], key: ColumnKey) -> String {
    let (columns, cells): (Vec<(String, &MetricReport)>, _) = match key {
        ColumnKey::Setting => (
            reports.iter().map(|r| (r.setting.label().to_string(), &r.metrics)).collect(),
            TableCells::F1AndMcc,
        ),
        ColumnKey::ShotPlan => (
            reports.iter().map(|r| (r.shot_plan.to_string(), &r.metrics)).collect(),
            TableCells::MccOnly,
        ),
    };
    render_table(&columns, cells)
}
