//! Plain-text rendering of per-run and aggregate metrics in the
//! benchmark's column layout.

use crate::eval::{AggregateReport, MetricReport, Subcategory};

const COLUMNS: usize = 7;

fn percent(value: f64) -> String {
    format!("{:.2}", value * 100.0)
}

fn row(
    label: &str,
    subcategory: impl Fn(Subcategory) -> Option<f64>,
    avg: f64,
    rubrics: f64,
    crs: Option<f64>,
) -> String {
    let mut cells = vec![label.to_string()];
    for sc in Subcategory::ALL {
        cells.push(subcategory(sc).map_or_else(|| "-".into(), percent));
    }
    cells.push(percent(avg));
    cells.push(percent(rubrics));
    cells.push(crs.map_or_else(|| "-".into(), |v| format!("{v:.2}")));
    render_cells(&cells)
}

fn render_cells(cells: &[String]) -> String {
    let widths = column_widths();
    cells
        .iter()
        .zip(widths)
        .map(|(cell, width)| format!("{cell:<width$}"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn column_widths() -> [usize; COLUMNS + 4] {
    // Run label, 7 subcategories, Avg, Rubrics, CRS.
    [10, 7, 7, 7, 7, 7, 7, 7, 7, 8, 5]
}

/// Render per-run rows plus the middle-three aggregate row. Accuracy
/// and rubric columns are percentages; CRS is a 0-1 ratio.
pub fn render_table(aggregate: &AggregateReport) -> String {
    let mut header = vec!["Run".to_string()];
    header.extend(Subcategory::ALL.iter().map(|s| s.short_label().to_string()));
    header.extend(["Avg".to_string(), "Rubrics".to_string(), "CRS".to_string()]);
    let mut out = render_cells(&header);
    out.push('\n');
    for run in &aggregate.runs {
        out.push_str(&run_row(run));
        out.push('\n');
    }
    out.push_str(&row(
        "middle-3",
        |sc| aggregate.subcategory_avg.get(&sc).copied(),
        aggregate.avg,
        aggregate.rubrics,
        aggregate.crs,
    ));
    out.push('\n');
    out
}

fn run_row(report: &MetricReport) -> String {
    row(
        &report.run_id,
        |sc| report.subcategory_avg.get(&sc).copied(),
        report.avg,
        report.rubrics,
        report.crs,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use indexmap::IndexMap;

    fn report(run_id: &str, avg: f64) -> MetricReport {
        let mut subcategory_avg = IndexMap::new();
        subcategory_avg.insert(Subcategory::Sound, avg);
        MetricReport {
            run_id: run_id.into(),
            n: 10,
            correct_total: 5,
            satisfied_total: 10,
            avg,
            rubrics: avg / 2.0,
            crs: Some(0.5),
            subcategory_avg,
        }
    }

    #[test]
    fn table_has_header_runs_and_aggregate() {
        let runs: Vec<MetricReport> = (1..=5).map(|i| report(&format!("pass-{i}"), 0.5)).collect();
        let aggregate = crate::eval::aggregate_middle_three(&runs).unwrap();
        let table = render_table(&aggregate);
        let lines: Vec<&str> = table.lines().collect();
        assert_eq!(lines.len(), 7);
        assert!(lines[0].contains("S-M-S"));
        assert!(lines[0].contains("CRS"));
        assert!(lines[1].starts_with("pass-1"));
        assert!(lines[6].starts_with("middle-3"));
        assert!(lines[6].contains("50.00"));
        assert!(lines[6].contains("0.50"));
        // Missing subcategories render as "-".
        assert!(lines[1].contains("-"));
    }
}
