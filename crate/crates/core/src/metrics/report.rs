use serde::{Deserialize, Serialize};

use super::{confusion_stats, ConfusionCounts};

/// One metrics-table row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub config_id: String,
    pub counts: ConfusionCounts,
    pub aupr: Option<f64>,
    pub auroc: Option<f64>,
    pub epsilon: Option<f64>,
}

/// `NA` for undefined values, shortest round-trip decimal otherwise.
pub fn fmt_metric(v: Option<f64>) -> String {
    match v {
        Some(x) if x.is_finite() => format!("{x}"),
        Some(x) if x.is_infinite() => if x > 0.0 { "inf" } else { "-inf" }.to_string(),
        _ => "NA".to_string(),
    }
}

impl MetricRow {
    pub const CSV_HEADER: &'static str = "config_id,fp,fn,precision,recall,f_measure,aupr,auroc,epsilon";

    pub fn to_csv(&self) -> String {
        let s = confusion_stats(&self.counts);
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.config_id,
            self.counts.fp,
            self.counts.fn_,
            fmt_metric(s.precision),
            fmt_metric(s.recall),
            fmt_metric(s.f_measure),
            fmt_metric(self.aupr),
            fmt_metric(self.auroc),
            fmt_metric(self.epsilon),
        )
    }

    pub fn table_csv(rows: &[MetricRow]) -> String {
        let mut out = format!("{}\n", Self::CSV_HEADER);
        for r in rows {
            out.push_str(&r.to_csv());
            out.push('\n');
        }
        out
    }
}
