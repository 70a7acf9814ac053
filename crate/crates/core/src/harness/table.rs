use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::metrics::fmt_metric;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunStatus {
    Ok,
    Diverged { epoch: usize, step: usize },
    Error { message: String },
}

impl RunStatus {
    pub fn label(&self) -> String {
        match self {
            RunStatus::Ok => "ok".into(),
            RunStatus::Diverged { epoch, step } => format!("diverged@{epoch}:{step}"),
            RunStatus::Error { .. } => "error".into(),
        }
    }

    pub fn is_error(&self) -> bool {
        matches!(self, RunStatus::Error { .. })
    }
}

/// Quotes a CSV field when it holds a separator, quote or newline.
fn csv_cell(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// One grid cell evaluated under one seed.
#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub key: Vec<String>,
    pub seed: u64,
    pub status: RunStatus,
    pub values: Vec<Option<f64>>,
}

/// Per-seed result rows plus mean/min/max rows per cell.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub key_columns: Vec<String>,
    pub value_columns: Vec<String>,
    pub rows: Vec<Row>,
}

impl Table {
    pub fn new(key_columns: &[&str], value_columns: &[&str]) -> Self {
        Self {
            key_columns: key_columns.iter().map(|s| s.to_string()).collect(),
            value_columns: value_columns.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, key: Vec<String>, seed: u64, status: RunStatus, values: Vec<Option<f64>>) {
        debug_assert_eq!(key.len(), self.key_columns.len());
        debug_assert_eq!(values.len(), self.value_columns.len());
        self.rows.push(Row { key, seed, status, values });
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.value_columns.iter().position(|c| c == name)
    }

    /// Cells in first-appearance order with their rows.
    pub fn cells(&self) -> Vec<(Vec<String>, Vec<&Row>)> {
        let mut order: Vec<Vec<String>> = Vec::new();
        let mut groups: BTreeMap<Vec<String>, Vec<&Row>> = BTreeMap::new();
        for r in &self.rows {
            if !groups.contains_key(&r.key) {
                order.push(r.key.clone());
            }
            groups.entry(r.key.clone()).or_default().push(r);
        }
        order.into_iter().map(|k| (k.clone(), groups.remove(&k).unwrap_or_default())).collect()
    }

    /// Mean over seeds of a value column for the cell whose key matches
    /// every `(column, value)` filter. Undefined values are skipped.
    pub fn mean(&self, column: &str, filter: &[(&str, &str)]) -> Option<f64> {
        let c = self.column(column)?;
        let idx: Vec<(usize, &str)> = filter
            .iter()
            .map(|(k, v)| self.key_columns.iter().position(|x| x == k).map(|i| (i, *v)))
            .collect::<Option<_>>()?;
        let vals: Vec<f64> =
            self.rows.iter().filter(|r| idx.iter().all(|(i, v)| r.key[*i] == *v)).filter_map(|r| r.values[c]).collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let header: Vec<&str> = self
            .key_columns
            .iter()
            .map(String::as_str)
            .chain(["seed", "status"])
            .chain(self.value_columns.iter().map(String::as_str))
            .collect();
        out.push_str(&header.join(","));
        out.push('\n');
        let line = |key: &[String], seed: &str, status: &str, values: &[Option<f64>]| {
            let mut cells: Vec<String> = key.iter().map(|k| csv_cell(k)).collect();
            cells.push(seed.to_string());
            cells.push(status.to_string());
            cells.extend(values.iter().map(|v| fmt_metric(*v)));
            cells.join(",") + "\n"
        };
        for r in &self.rows {
            out.push_str(&line(&r.key, &r.seed.to_string(), &r.status.label(), &r.values));
        }
        for (key, rows) in self.cells() {
            let usable: Vec<&&Row> = rows.iter().filter(|r| !r.status.is_error()).collect();
            let status = if usable.len() == rows.len() && rows.iter().all(|r| r.status == RunStatus::Ok) {
                "ok".to_string()
            } else {
                format!("partial({}/{})", rows.iter().filter(|r| r.status == RunStatus::Ok).count(), rows.len())
            };
            let stat = |f: &dyn Fn(&[f64]) -> f64| -> Vec<Option<f64>> {
                (0..self.value_columns.len())
                    .map(|c| {
                        let v: Vec<f64> = usable.iter().filter_map(|r| r.values[c]).collect();
                        (!v.is_empty()).then(|| f(&v))
                    })
                    .collect()
            };
            out.push_str(&line(&key, "mean", &status, &stat(&|v| v.iter().sum::<f64>() / v.len() as f64)));
            out.push_str(&line(&key, "min", &status, &stat(&|v| v.iter().copied().fold(f64::INFINITY, f64::min))));
            out.push_str(&line(&key, "max", &status, &stat(&|v| v.iter().copied().fold(f64::NEG_INFINITY, f64::max))));
        }
        out
    }
}

/// Per-run record written as one JSON line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub experiment: String,
    pub config_id: String,
    pub seed: u64,
    pub status: RunStatus,
    pub epsilon: Option<f64>,
    pub metrics: BTreeMap<String, Option<f64>>,
    pub epoch_losses: Vec<f64>,
    pub checkpoint: Option<String>,
    pub wall_seconds: f64,
}
