use serde::{Deserialize, Serialize};

use super::{check_records, ScoreRecord};
use crate::error::{input_err, Result};

/// Ordered `(x, y)` points and the area under them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub points: Vec<(f64, f64)>,
    pub area: f64,
}

impl Curve {
    /// Two-column CSV with a header row.
    pub fn to_csv(&self, x_name: &str, y_name: &str) -> String {
        let mut out = format!("{x_name},{y_name}\n");
        for (x, y) in &self.points {
            out.push_str(&format!("{x},{y}\n"));
        }
        out
    }
}

/// Tie groups in descending oriented score: `(positives, negatives)` each.
fn tie_groups(records: &[ScoreRecord]) -> Result<(Vec<(u64, u64)>, u64, u64)> {
    check_records(records)?;
    let mut sorted: Vec<(f64, bool)> = records.iter().map(|r| (r.oriented(), r.positive)).collect();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    let pos = sorted.iter().filter(|r| r.1).count() as u64;
    let neg = sorted.len() as u64 - pos;
    if pos == 0 || neg == 0 {
        return input_err(format!("need both classes, got {pos} positive and {neg} negative"));
    }
    let mut groups: Vec<(u64, u64)> = Vec::new();
    let mut last = f64::NAN;
    for (s, p) in sorted {
        if s != last {
            groups.push((0, 0));
            last = s;
        }
        let g = groups.last_mut().expect("group pushed");
        if p {
            g.0 += 1;
        } else {
            g.1 += 1;
        }
    }
    Ok((groups, pos, neg))
}

/// ROC curve over every distinct threshold, tied scores moved together;
/// area by the trapezoid rule.
pub fn auroc(records: &[ScoreRecord]) -> Result<Curve> {
    let (groups, pos, neg) = tie_groups(records)?;
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut twice_area = 0u128;
    for (gp, gn) in groups {
        // Trapezoid in count units: gn * (tp + tp + gp).
        twice_area += u128::from(gn) * u128::from(2 * tp + gp);
        tp += gp;
        fp += gn;
        points.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
    }
    let area = twice_area as f64 / (2.0 * pos as f64 * neg as f64);
    Ok(Curve { points, area })
}

/// Precision-recall curve with average-precision area:
/// `sum over thresholds of (R_i - R_{i-1}) * P_i`.
pub fn aupr(records: &[ScoreRecord]) -> Result<Curve> {
    let (groups, pos, _) = tie_groups(records)?;
    let mut points = vec![(0.0, 1.0)];
    let (mut tp, mut seen) = (0u64, 0u64);
    let mut area = 0.0;
    for (gp, gn) in groups {
        tp += gp;
        seen += gp + gn;
        let precision = tp as f64 / seen as f64;
        area += gp as f64 / pos as f64 * precision;
        points.push((tp as f64 / pos as f64, precision));
    }
    Ok(Curve { points, area: area.clamp(0.0, 1.0) })
}
