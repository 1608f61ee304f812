// SPDX-License-Identifier: MIT OR Apache-2.0

//! Detection metrics against a known segmentation.

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::{ChangePointSet, Partition};

/// `|K_hat - K|`.
pub fn count_error(truth: &ChangePointSet, detected: &ChangePointSet) -> usize {
    truth.len().abs_diff(detected.len())
}

/// `max_{c in of} min_{c_hat in by} |c_hat - c|`.
///
/// With `by` empty the distance is `+inf`; otherwise an empty `of` gives
/// `-inf` (maximum over nothing). `hausdorff_one_sided(detected, truth)` is
/// `d(C_hat | C)`.
pub fn hausdorff_one_sided(by: &ChangePointSet, of: &ChangePointSet) -> f64 {
    if by.is_empty() {
        return f64::INFINITY;
    }
    of.points()
        .iter()
        .map(|&c| {
            by.points()
                .iter()
                .map(|&h| h.abs_diff(c))
                .min()
                .expect("non-empty") as f64
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

/// `(1/T) sum_{A in truth} |A| max_{A' in detected} |A n A'| / |A u A'|`.
pub fn coverage(truth: &Partition, detected: &Partition) -> Result<f64> {
    let t_len = truth.t_len();
    if detected.t_len() != t_len {
        return Err(Error::DimensionMismatch {
            expected: t_len,
            got: detected.t_len(),
        });
    }
    let mut total = 0.0;
    for a in truth.intervals() {
        let best = detected
            .intervals()
            .iter()
            .map(|b| {
                let lo = (*a.start()).max(*b.start());
                let hi = (*a.end()).min(*b.end());
                let inter = if hi >= lo { hi - lo + 1 } else { 0 };
                let union = (a.end() - a.start() + 1) + (b.end() - b.start() + 1) - inter;
                inter as f64 / union as f64
            })
            .fold(0.0, f64::max);
        total += (a.end() - a.start() + 1) as f64 * best;
    }
    Ok(total / t_len as f64)
}

/// One row of the metric report.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Metrics {
    pub count_error: usize,
    /// `d(C_hat | C)`.
    pub hausdorff_detected: f64,
    /// `d(C | C_hat)`.
    pub hausdorff_truth: f64,
    pub coverage: f64,
}

pub fn evaluate(truth: &ChangePointSet, detected: &ChangePointSet, t_len: usize) -> Result<Metrics> {
    let pt = Partition::from_change_points(t_len, truth)?;
    let pd = Partition::from_change_points(t_len, detected)?;
    Ok(Metrics {
        count_error: count_error(truth, detected),
        hausdorff_detected: hausdorff_one_sided(detected, truth),
        hausdorff_truth: hausdorff_one_sided(truth, detected),
        coverage: coverage(&pt, &pd)?,
    })
}

pub fn write_metrics_csv<W: Write>(rows: &[Metrics], mut out: W) -> Result<()> {
    let io = |e| Error::io("metrics", e);
    writeln!(out, "count_error,hausdorff_detected,hausdorff_truth,coverage").map_err(io)?;
    for m in rows {
        writeln!(
            out,
            "{},{},{},{:.6}",
            m.count_error, m.hausdorff_detected, m.hausdorff_truth, m.coverage
        )
        .map_err(io)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cps(p: &[usize]) -> ChangePointSet {
        ChangePointSet::new(p.to_vec()).unwrap()
    }

    #[test]
    fn worked_example() {
        let truth = cps(&[26, 51, 76]);
        let det = cps(&[25, 53]);
        assert_eq!(count_error(&truth, &det), 1);
        assert_eq!(hausdorff_one_sided(&det, &truth), 23.0);
        assert_eq!(hausdorff_one_sided(&truth, &det), 2.0);
        let m = evaluate(&truth, &det, 100).unwrap();
        assert_eq!((m.count_error, m.hausdorff_detected, m.hausdorff_truth), (1, 23.0, 2.0));
    }

    #[test]
    fn empty_detection_convention() {
        let truth = cps(&[26, 51, 76]);
        let none = ChangePointSet::empty();
        assert_eq!(count_error(&truth, &none), 3);
        assert_eq!(hausdorff_one_sided(&none, &truth), f64::INFINITY);
        assert_eq!(hausdorff_one_sided(&truth, &none), f64::NEG_INFINITY);
        assert_eq!(hausdorff_one_sided(&truth, &truth), 0.0);
    }

    #[test]
    fn coverage_cases() {
        let p = Partition::new(4, vec![1..=2, 3..=4]).unwrap();
        let whole = Partition::new(4, vec![1..=4]).unwrap();
        assert_eq!(coverage(&p, &whole).unwrap(), 0.5);
        assert_eq!(coverage(&p, &p).unwrap(), 1.0);
        let other = Partition::new(5, vec![1..=5]).unwrap();
        assert!(coverage(&p, &other).is_err());
    }

    #[test]
    fn csv_report() {
        let m = evaluate(&cps(&[26, 51, 76]), &ChangePointSet::empty(), 100).unwrap();
        let mut out = Vec::new();
        write_metrics_csv(&[m], &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().nth(1).unwrap(), "3,inf,-inf,0.250000");
    }
}
