//! Per-example gradient storage.
//!
//! Dense layers keep their per-example gradients in factored form (the
//! output delta and the layer input), since the weight gradient of example
//! `i` is the outer product `delta_i * input_i^T`. Its squared norm is then
//! `|delta_i|^2 * (|input_i|^2 + 1)` (the `+1` is the bias) and a weighted
//! sum over the batch is a single matrix product. Layers whose gradients are
//! small or not rank-one per example store explicit rows.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{dot, gemm, sq_norm};

#[derive(Debug, Clone)]
pub(crate) enum GradPart {
    Factored { delta: Vec<f64>, input: Vec<f64>, n_out: usize, n_in: usize, w_offset: usize, b_offset: usize },
    Rows { rows: Vec<f64>, len: usize, offset: usize },
}

/// Per-example losses and gradients for one mini-batch, as produced by a
/// single batched backward pass.
#[derive(Debug, Clone)]
pub struct BatchGrads {
    pub(crate) losses: Vec<f64>,
    pub(crate) parts: Vec<GradPart>,
    pub(crate) param_count: usize,
}

impl BatchGrads {
    pub fn batch_size(&self) -> usize {
        self.losses.len()
    }

    pub fn losses(&self) -> &[f64] {
        &self.losses
    }

    pub fn param_count(&self) -> usize {
        self.param_count
    }

    /// Squared L2 norm of every example's full gradient vector.
    pub fn sq_norms(&self) -> Vec<f64> {
        let b = self.batch_size();
        let mut out = vec![0.0; b];
        for part in &self.parts {
            match part {
                GradPart::Factored { delta, input, n_out, n_in, .. } => {
                    for (i, acc) in out.iter_mut().enumerate() {
                        let d = sq_norm(&delta[i * n_out..(i + 1) * n_out]);
                        let a = sq_norm(&input[i * n_in..(i + 1) * n_in]);
                        *acc += d * (a + 1.0);
                    }
                }
                GradPart::Rows { rows, len, .. } => {
                    for (i, acc) in out.iter_mut().enumerate() {
                        *acc += sq_norm(&rows[i * len..(i + 1) * len]);
                    }
                }
            }
        }
        out
    }

    /// Writes `sum_i weights[i] * g_i` into `out` (overwritten).
    pub fn weighted_sum(&self, weights: &[f64], out: &mut [f64]) {
        let b = self.batch_size();
        assert_eq!(weights.len(), b);
        assert_eq!(out.len(), self.param_count);
        out.iter_mut().for_each(|v| *v = 0.0);
        for part in &self.parts {
            match part {
                GradPart::Factored { delta, input, n_out, n_in, w_offset, b_offset } => {
                    let (n_out, n_in) = (*n_out, *n_in);
                    let scaled: Vec<f64> = delta
                        .chunks_exact(n_out)
                        .zip(weights)
                        .flat_map(|(row, &w)| row.iter().map(move |d| d * w))
                        .collect();
                    gemm(
                        n_out,
                        b,
                        n_in,
                        1.0,
                        &scaled,
                        true,
                        input,
                        false,
                        0.0,
                        &mut out[*w_offset..*w_offset + n_out * n_in],
                    );
                    let bias = &mut out[*b_offset..*b_offset + n_out];
                    for row in scaled.chunks_exact(n_out) {
                        for (acc, v) in bias.iter_mut().zip(row) {
                            *acc += v;
                        }
                    }
                }
                GradPart::Rows { rows, len, offset } => {
                    let dst = &mut out[*offset..*offset + len];
                    for (row, &w) in rows.chunks_exact(*len).zip(weights) {
                        for (acc, v) in dst.iter_mut().zip(row) {
                            *acc += w * v;
                        }
                    }
                }
            }
        }
    }

    /// Materializes the full flattened gradient of example `i` into `out`.
    pub fn write_row(&self, i: usize, out: &mut [f64]) {
        assert_eq!(out.len(), self.param_count);
        for part in &self.parts {
            match part {
                GradPart::Factored { delta, input, n_out, n_in, w_offset, b_offset } => {
                    let d = &delta[i * n_out..(i + 1) * n_out];
                    let a = &input[i * n_in..(i + 1) * n_in];
                    for (r, &dr) in d.iter().enumerate() {
                        let dst = &mut out[w_offset + r * n_in..w_offset + (r + 1) * n_in];
                        for (o, &ac) in dst.iter_mut().zip(a) {
                            *o = dr * ac;
                        }
                    }
                    out[*b_offset..*b_offset + n_out].copy_from_slice(d);
                }
                GradPart::Rows { rows, len, offset } => {
                    out[*offset..*offset + len].copy_from_slice(&rows[i * len..(i + 1) * len]);
                }
            }
        }
    }

    pub fn to_gradient_batch(&self) -> GradientBatch {
        let p = self.param_count;
        let mut rows = vec![0.0; p * self.batch_size()];
        for (i, row) in rows.chunks_exact_mut(p).enumerate() {
            self.write_row(i, row);
        }
        GradientBatch { dim: p, rows }
    }
}

/// Flattened per-example gradients for one mini-batch, one row per example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientBatch {
    dim: usize,
    rows: Vec<f64>,
}

impl GradientBatch {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let dim = rows.first().map(Vec::len).ok_or_else(|| Error::Input("empty gradient batch".into()))?;
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Input("gradient rows differ in length".into()));
        }
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Input("gradient batch has non-finite entries".into()));
        }
        Ok(Self { dim, rows: rows.into_iter().flatten().collect() })
    }

    pub fn batch_size(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.rows.len() / self.dim
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.rows.chunks_exact(self.dim.max(1))
    }

    pub fn norms(&self) -> Vec<f64> {
        self.rows().map(|r| dot(r, r).sqrt()).collect()
    }
}
