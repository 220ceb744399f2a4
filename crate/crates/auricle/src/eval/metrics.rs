//! Metric arithmetic: Avg, Rubrics, CRS, and middle-three aggregation.
//!
//! All three headline metrics are quotients of exact integer totals
//! (correct count, satisfied-criterion count), so every value is the
//! correctly rounded float of its underlying rational and independent
//! recomputations match bitwise.

use indexmap::IndexMap;

use crate::eval::{AggregateReport, EvalError, MetricReport, RunResult, Subcategory, RUBRIC_SIZE};

/// The CRS relation: reasoning score conditioned on correctness,
/// rubrics / avg. `None` when avg is zero.
pub fn crs_identity(avg: f64, rubrics: f64) -> Option<f64> {
    (avg > 0.0).then(|| rubrics / avg)
}

/// Compute Avg, Rubrics, CRS, and the per-subcategory accuracy map for
/// one run.
pub fn compute_metrics(run_id: &str, results: &[RunResult]) -> Result<MetricReport, EvalError> {
    if results.is_empty() {
        return Err(EvalError::EmptyResults);
    }
    let n = results.len();
    let correct_total: u64 = results.iter().map(RunResult::c).sum();
    let satisfied_total: u64 = results.iter().map(RunResult::satisfied).sum();

    let avg = correct_total as f64 / n as f64;
    let rubrics = satisfied_total as f64 / (RUBRIC_SIZE as u64 * n as u64) as f64;
    let crs = (correct_total > 0)
        .then(|| satisfied_total as f64 / (RUBRIC_SIZE as u64 * correct_total) as f64);

    let mut subcategory_avg = IndexMap::new();
    for subcategory in Subcategory::ALL {
        let group: Vec<&RunResult> = results
            .iter()
            .filter(|r| r.subcategory == subcategory)
            .collect();
        if group.is_empty() {
            continue;
        }
        let correct: u64 = group.iter().map(|r| r.c()).sum();
        subcategory_avg.insert(subcategory, correct as f64 / group.len() as f64);
    }

    Ok(MetricReport {
        run_id: run_id.to_string(),
        n,
        correct_total,
        satisfied_total,
        avg,
        rubrics,
        crs,
        subcategory_avg,
    })
}

/// Sort, drop one minimum and one maximum (one copy each under ties),
/// and average the rest. For fewer than three values this is a plain
/// mean. The exact mean lies within [min, max] of the kept values;
/// clamping there strips float summation drift, so constant inputs map
/// to themselves and the result respects the order statistics.
fn trimmed_mean(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("metric values are finite"));
    let kept: &[f64] = if sorted.len() >= 3 {
        &sorted[1..sorted.len() - 1]
    } else {
        &sorted
    };
    let mean = kept.iter().sum::<f64>() / kept.len() as f64;
    mean.clamp(kept[0], kept[kept.len() - 1])
}

/// Reduce exactly five runs to one report: per metric independently,
/// the mean of the middle three values. Absent CRS values are skipped;
/// the aggregate CRS is absent only when all five are.
pub fn aggregate_middle_three(reports: &[MetricReport]) -> Result<AggregateReport, EvalError> {
    if reports.len() != 5 {
        return Err(EvalError::WrongRunCount(reports.len()));
    }
    let avg = trimmed_mean(&reports.iter().map(|r| r.avg).collect::<Vec<_>>());
    let rubrics = trimmed_mean(&reports.iter().map(|r| r.rubrics).collect::<Vec<_>>());
    let crs_values: Vec<f64> = reports.iter().filter_map(|r| r.crs).collect();
    let crs = (!crs_values.is_empty()).then(|| trimmed_mean(&crs_values));

    let mut subcategory_avg = IndexMap::new();
    for subcategory in Subcategory::ALL {
        let values: Vec<f64> = reports
            .iter()
            .filter_map(|r| r.subcategory_avg.get(&subcategory).copied())
            .collect();
        if !values.is_empty() {
            subcategory_avg.insert(subcategory, trimmed_mean(&values));
        }
    }

    Ok(AggregateReport {
        runs: reports.to_vec(),
        avg,
        rubrics,
        crs,
        subcategory_avg,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn result(correct: bool, satisfied: usize, subcategory: Subcategory) -> RunResult {
        let mut verdicts = [false; RUBRIC_SIZE];
        for v in verdicts.iter_mut().take(satisfied) {
            *v = true;
        }
        RunResult::new("item", subcategory, None, correct, verdicts)
    }

    #[test]
    fn avg_arithmetic() {
        let results = vec![
            result(true, 0, Subcategory::Sound),
            result(false, 0, Subcategory::Sound),
            result(true, 0, Subcategory::Sound),
            result(true, 0, Subcategory::Sound),
        ];
        let report = compute_metrics("r", &results).unwrap();
        assert_eq!(report.avg, 0.75);
    }

    #[test]
    fn rubrics_and_crs_arithmetic() {
        // r = [0.8, 0.6, 0], c = [1, 1, 0]
        let results = vec![
            result(true, 4, Subcategory::Sound),
            result(true, 3, Subcategory::Music),
            result(false, 0, Subcategory::Speech),
        ];
        let report = compute_metrics("r", &results).unwrap();
        assert!((report.rubrics - 1.4 / 3.0).abs() < 1e-15);
        assert!((report.crs.unwrap() - 0.7).abs() < 1e-15);
        assert_eq!(report.subcategory_avg[&Subcategory::Sound], 1.0);
        assert_eq!(report.subcategory_avg[&Subcategory::Speech], 0.0);
    }

    #[test]
    fn all_incorrect_has_no_crs() {
        let results = vec![
            result(false, 0, Subcategory::Sound),
            result(false, 0, Subcategory::Sound),
        ];
        let report = compute_metrics("r", &results).unwrap();
        assert_eq!(report.avg, 0.0);
        assert_eq!(report.rubrics, 0.0);
        assert_eq!(report.crs, None);
    }

    #[test]
    fn empty_results_error() {
        assert!(matches!(
            compute_metrics("r", &[]),
            Err(EvalError::EmptyResults)
        ));
    }

    #[test]
    fn rubrics_never_exceeds_avg() {
        let results = vec![
            result(true, 5, Subcategory::Sound),
            result(true, 2, Subcategory::Sound),
            result(false, 0, Subcategory::Sound),
        ];
        let report = compute_metrics("r", &results).unwrap();
        assert!(report.rubrics <= report.avg);
    }

    fn report_with(avg: f64, rubrics: f64, crs: Option<f64>) -> MetricReport {
        MetricReport {
            run_id: "r".into(),
            n: 1,
            correct_total: 0,
            satisfied_total: 0,
            avg,
            rubrics,
            crs,
            subcategory_avg: IndexMap::new(),
        }
    }

    #[test]
    fn middle_three_textbook_case() {
        let reports: Vec<MetricReport> = [70.0, 74.0, 71.0, 73.0, 72.0]
            .iter()
            .map(|&v| report_with(v, v, Some(v)))
            .collect();
        let aggregate = aggregate_middle_three(&reports).unwrap();
        assert_eq!(aggregate.avg, 72.0);
        assert_eq!(aggregate.rubrics, 72.0);
        assert_eq!(aggregate.crs, Some(72.0));
    }

    #[test]
    fn constant_runs_aggregate_to_constant() {
        let reports: Vec<MetricReport> =
            (0..5).map(|_| report_with(0.5, 0.5, Some(0.5))).collect();
        let aggregate = aggregate_middle_three(&reports).unwrap();
        assert_eq!(aggregate.avg, 0.5);
    }

    #[test]
    fn duplicate_extremes_drop_one_copy_each() {
        let reports: Vec<MetricReport> = [1.0, 1.0, 1.0, 1.0, 0.0]
            .iter()
            .map(|&v| report_with(v, v, None))
            .collect();
        let aggregate = aggregate_middle_three(&reports).unwrap();
        assert_eq!(aggregate.avg, 1.0);
        assert_eq!(aggregate.crs, None);
    }

    #[test]
    fn wrong_run_count_is_an_error() {
        let reports: Vec<MetricReport> = (0..4).map(|_| report_with(0.5, 0.5, None)).collect();
        assert!(matches!(
            aggregate_middle_three(&reports),
            Err(EvalError::WrongRunCount(4))
        ));
    }

    #[test]
    fn crs_skips_absent_values() {
        let mut reports: Vec<MetricReport> =
            (0..5).map(|_| report_with(0.5, 0.25, Some(0.5))).collect();
        reports[2].crs = None;
        let aggregate = aggregate_middle_three(&reports).unwrap();
        // Four present values: drop min and max, mean of middle two.
        assert_eq!(aggregate.crs, Some(0.5));
    }

    #[test]
    fn crs_identity_matches_reported_values() {
        let crs = crs_identity(71.70, 62.22).unwrap();
        assert!((crs - 0.87).abs() <= 0.005, "{crs}");
    }
}
