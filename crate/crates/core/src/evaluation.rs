//! Comparison of predicted per-row counts against manual ground truth.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Read;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::layout::{CountReport, RowCount};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("actual and predicted lengths differ ({actual} vs {predicted})")]
    LengthMismatch { actual: usize, predicted: usize },
    #[error("at least 2 rows are needed, got {0}")]
    TooFewRows(usize),
    #[error("all ground-truth counts are equal; R^2 is undefined")]
    DegenerateGroundTruth,
    #[error("only {matched} row(s) match between predictions and ground truth")]
    InsufficientOverlap { matched: usize },
    #[error("duplicate key range {range}, row {row}")]
    DuplicateKey { range: usize, row: usize },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// Coefficient of determination `1 - SS_res / SS_tot` about the mean of
/// `actual`. Negative when predictions are worse than the mean.
pub fn r_squared(actual: &[f64], predicted: &[f64]) -> Result<f64, EvalError> {
    if actual.len() != predicted.len() {
        return Err(EvalError::LengthMismatch {
            actual: actual.len(),
            predicted: predicted.len(),
        });
    }
    if actual.len() < 2 {
        return Err(EvalError::TooFewRows(actual.len()));
    }
    let n = actual.len() as f64;
    let mean = actual.iter().sum::<f64>() / n;
    let ss_tot: f64 = actual.iter().map(|y| (y - mean) * (y - mean)).sum();
    if ss_tot == 0.0 {
        return Err(EvalError::DegenerateGroundTruth);
    }
    let ss_res: f64 = actual.iter().zip(predicted).map(|(y, p)| (y - p) * (y - p)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// One `range,row,count` record, the shared CSV shape of ground truth and
/// predicted counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruthRow {
    #[serde(rename = "range")]
    pub range_idx: usize,
    #[serde(rename = "row")]
    pub row_idx: usize,
    #[serde(rename = "count")]
    pub manual_count: u64,
}

/// Reads `range,row,count` records; keys must be unique.
pub fn read_counts_csv<R: Read>(reader: R) -> Result<Vec<GroundTruthRow>, EvalError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut out = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for rec in rdr.deserialize() {
        let r: GroundTruthRow = rec?;
        if !seen.insert((r.range_idx, r.row_idx)) {
            return Err(EvalError::DuplicateKey {
                range: r.range_idx,
                row: r.row_idx,
            });
        }
        out.push(r);
    }
    Ok(out)
}

pub fn format_counts_csv(rows: &[GroundTruthRow]) -> String {
    let mut s = String::from("range,row,count\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{}", r.range_idx, r.row_idx, r.manual_count);
    }
    s
}

impl CountReport {
    /// Count-only report, e.g. from a `counts.csv`.
    pub fn from_records(rows: &[GroundTruthRow]) -> Self {
        CountReport {
            rows: rows
                .iter()
                .map(|r| RowCount {
                    range_idx: r.range_idx,
                    row_idx: r.row_idx,
                    count: r.manual_count,
                    detections: Vec::new(),
                })
                .collect(),
            unassigned: Vec::new(),
        }
    }

    pub fn records(&self) -> Vec<GroundTruthRow> {
        self.rows
            .iter()
            .map(|r| GroundTruthRow {
                range_idx: r.range_idx,
                row_idx: r.row_idx,
                manual_count: r.count,
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JoinedRow {
    pub range_idx: usize,
    pub row_idx: usize,
    pub predicted: u64,
    pub actual: u64,
}

impl JoinedRow {
    pub fn residual(&self) -> f64 {
        self.predicted as f64 - self.actual as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub r2: f64,
    pub n: usize,
    /// Matched rows in key order; `residual()` is predicted minus actual.
    pub rows: Vec<JoinedRow>,
    pub mean_actual: f64,
    /// Keys predicted but absent from the ground truth.
    pub unmatched_predicted: Vec<(usize, usize)>,
    /// Keys in the ground truth with no prediction.
    pub unmatched_truth: Vec<(usize, usize)>,
}

impl EvalResult {
    pub fn residuals(&self) -> Vec<f64> {
        self.rows.iter().map(JoinedRow::residual).collect()
    }

    /// `range,row,predicted,actual,residual`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("range,row,predicted,actual,residual\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                r.range_idx,
                r.row_idx,
                r.predicted,
                r.actual,
                r.residual()
            );
        }
        s
    }

    pub fn summary(&self) -> String {
        let keys = |v: &[(usize, usize)]| v.iter().map(|(a, b)| format!("{a}:{b}")).collect::<Vec<_>>().join(" ");
        format!(
            "r2={:.6}\nn={}\nmean_actual={:.6}\nunmatched_predicted={}\nunmatched_truth={}\n",
            self.r2,
            self.n,
            self.mean_actual,
            keys(&self.unmatched_predicted),
            keys(&self.unmatched_truth)
        )
    }
}

/// Inner join on `(range, row)` followed by [`r_squared`].
pub fn join_and_eval(report: &CountReport, truth: &[GroundTruthRow]) -> Result<EvalResult, EvalError> {
    let mut predicted = BTreeMap::new();
    for r in &report.rows {
        if predicted.insert((r.range_idx, r.row_idx), r.count).is_some() {
            return Err(EvalError::DuplicateKey {
                range: r.range_idx,
                row: r.row_idx,
            });
        }
    }
    let mut actual = BTreeMap::new();
    for t in truth {
        if actual.insert((t.range_idx, t.row_idx), t.manual_count).is_some() {
            return Err(EvalError::DuplicateKey {
                range: t.range_idx,
                row: t.row_idx,
            });
        }
    }
    let rows: Vec<JoinedRow> = actual
        .iter()
        .filter_map(|(&(ra, ro), &a)| {
            predicted.get(&(ra, ro)).map(|&p| JoinedRow {
                range_idx: ra,
                row_idx: ro,
                predicted: p,
                actual: a,
            })
        })
        .collect();
    let unmatched_truth = actual.keys().filter(|k| !predicted.contains_key(k)).copied().collect();
    let unmatched_predicted = predicted.keys().filter(|k| !actual.contains_key(k)).copied().collect();
    if rows.len() < 2 {
        return Err(EvalError::InsufficientOverlap { matched: rows.len() });
    }
    let ys: Vec<f64> = rows.iter().map(|r| r.actual as f64).collect();
    let ps: Vec<f64> = rows.iter().map(|r| r.predicted as f64).collect();
    let r2 = r_squared(&ys, &ps)?;
    Ok(EvalResult {
        r2,
        n: rows.len(),
        mean_actual: ys.iter().sum::<f64>() / ys.len() as f64,
        rows,
        unmatched_predicted,
        unmatched_truth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gt(range: usize, row: usize, count: u64) -> GroundTruthRow {
        GroundTruthRow {
            range_idx: range,
            row_idx: row,
            manual_count: count,
        }
    }

    #[test]
    fn r2_examples() {
        let y = [10.0, 20.0, 30.0];
        assert_eq!(r_squared(&y, &y).unwrap(), 1.0);
        assert_eq!(r_squared(&y, &[20.0, 20.0, 20.0]).unwrap(), 0.0);
        let r = r_squared(&y, &[12.0, 18.0, 33.0]).unwrap();
        assert!((r - 0.915).abs() < 1e-12);
        assert!(r_squared(&y, &[40.0, 0.0, 0.0]).unwrap() < 0.0);
    }

    #[test]
    fn r2_errors() {
        assert!(matches!(
            r_squared(&[5.0, 5.0], &[4.0, 6.0]),
            Err(EvalError::DegenerateGroundTruth)
        ));
        assert!(matches!(r_squared(&[5.0], &[5.0]), Err(EvalError::TooFewRows(1))));
        assert!(matches!(
            r_squared(&[1.0, 2.0], &[1.0]),
            Err(EvalError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn join_reports_unmatched() {
        let report = CountReport::from_records(&[gt(0, 0, 10), gt(0, 1, 20), gt(0, 2, 30), gt(1, 0, 4)]);
        let truth = [gt(0, 0, 10), gt(0, 1, 20), gt(0, 2, 30), gt(2, 0, 9)];
        let res = join_and_eval(&report, &truth).unwrap();
        assert_eq!(res.n, 3);
        assert_eq!(res.r2, 1.0);
        assert_eq!(res.unmatched_predicted, vec![(1, 0)]);
        assert_eq!(res.unmatched_truth, vec![(2, 0)]);
        assert!(res.summary().starts_with("r2=1.000000\n"));
    }

    #[test]
    fn join_needs_overlap() {
        let report = CountReport::from_records(&[gt(0, 0, 1), gt(0, 1, 2)]);
        let truth = [gt(5, 0, 1), gt(5, 1, 2)];
        assert!(matches!(
            join_and_eval(&report, &truth),
            Err(EvalError::InsufficientOverlap { matched: 0 })
        ));
    }

    #[test]
    fn csv_round_trip_and_duplicates() {
        let rows = vec![gt(0, 0, 3), gt(0, 1, 7)];
        let text = format_counts_csv(&rows);
        assert_eq!(text, "range,row,count\n0,0,3\n0,1,7\n");
        assert_eq!(read_counts_csv(text.as_bytes()).unwrap(), rows);
        let dup = "range,row,count\n0,0,1\n0,0,2\n";
        assert!(matches!(
            read_counts_csv(dup.as_bytes()),
            Err(EvalError::DuplicateKey { .. })
        ));
        assert!(read_counts_csv("range,row,count\n0,x,1\n".as_bytes()).is_err());
    }
}
