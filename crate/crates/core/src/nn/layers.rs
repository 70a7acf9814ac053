//! Feed-forward layer stack used by the image models. Activations travel as
//! row-major `batch x features` buffers; image layers read a feature row as
//! `channels x height x width`.

use serde::{Deserialize, Serialize};

use super::grad::GradPart;
use crate::tensor::gemm;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    #[default]
    Relu,
    Sigmoid,
    Identity,
}

#[derive(Debug, Clone, Copy)]
pub(crate) enum Layer {
    Dense {
        n_in: usize,
        n_out: usize,
        w: usize,
        b: usize,
    },
    /// Stride-1 convolution with zero "same" padding and an odd square kernel.
    Conv {
        c_in: usize,
        c_out: usize,
        h: usize,
        w: usize,
        k: usize,
        wo: usize,
        bo: usize,
    },
    /// 2x2 max pooling, stride 2; odd sides round up (the overhang is ignored).
    MaxPool {
        c: usize,
        h: usize,
        w: usize,
    },
    /// Nearest-neighbour 2x upsampling.
    Upsample {
        c: usize,
        h: usize,
        w: usize,
    },
    Crop {
        c: usize,
        h: usize,
        w: usize,
        top: usize,
        left: usize,
        out_h: usize,
        out_w: usize,
    },
    Act {
        kind: Activation,
        dim: usize,
    },
}

pub(crate) enum Cache {
    Input(Vec<f64>),
    Cols(Vec<f64>),
    Argmax(Vec<u32>),
    Output(Vec<f64>),
    Nothing,
}

impl Layer {
    pub(crate) fn in_dim(&self) -> usize {
        match *self {
            Layer::Dense { n_in, .. } => n_in,
            Layer::Conv { c_in, h, w, .. } => c_in * h * w,
            Layer::MaxPool { c, h, w } | Layer::Upsample { c, h, w } | Layer::Crop { c, h, w, .. } => c * h * w,
            Layer::Act { dim, .. } => dim,
        }
    }

    pub(crate) fn out_dim(&self) -> usize {
        match *self {
            Layer::Dense { n_out, .. } => n_out,
            Layer::Conv { c_out, h, w, .. } => c_out * h * w,
            Layer::MaxPool { c, h, w } => c * h.div_ceil(2) * w.div_ceil(2),
            Layer::Upsample { c, h, w } => c * 4 * h * w,
            Layer::Crop { c, out_h, out_w, .. } => c * out_h * out_w,
            Layer::Act { dim, .. } => dim,
        }
    }

    pub(crate) fn forward(&self, params: &[f64], x: &[f64], batch: usize, keep: bool) -> (Vec<f64>, Cache) {
        let n_in = self.in_dim();
        let n_out = self.out_dim();
        debug_assert_eq!(x.len(), batch * n_in);
        let mut y = vec![0.0; batch * n_out];
        let cache = match *self {
            Layer::Dense { w, b, .. } => {
                gemm(batch, n_in, n_out, 1.0, x, false, &params[w..w + n_in * n_out], true, 0.0, &mut y);
                let bias = &params[b..b + n_out];
                for row in y.chunks_exact_mut(n_out) {
                    for (v, bb) in row.iter_mut().zip(bias) {
                        *v += bb;
                    }
                }
                if keep {
                    Cache::Input(x.to_vec())
                } else {
                    Cache::Nothing
                }
            }
            Layer::Conv { c_in, c_out, h, w, k, wo, bo } => {
                let hw = h * w;
                let ck = c_in * k * k;
                let weights = &params[wo..wo + c_out * ck];
                let bias = &params[bo..bo + c_out];
                let mut all_cols = if keep { vec![0.0; batch * ck * hw] } else { Vec::new() };
                let mut cols = vec![0.0; ck * hw];
                for i in 0..batch {
                    im2col(&x[i * n_in..(i + 1) * n_in], c_in, h, w, k, &mut cols);
                    let out = &mut y[i * n_out..(i + 1) * n_out];
                    gemm(c_out, ck, hw, 1.0, weights, false, &cols, false, 0.0, out);
                    for (ch, plane) in out.chunks_exact_mut(hw).enumerate() {
                        plane.iter_mut().for_each(|v| *v += bias[ch]);
                    }
                    if keep {
                        all_cols[i * ck * hw..(i + 1) * ck * hw].copy_from_slice(&cols);
                    }
                }
                if keep {
                    Cache::Cols(all_cols)
                } else {
                    Cache::Nothing
                }
            }
            Layer::MaxPool { c, h, w } => {
                let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
                let mut arg = if keep { vec![0u32; batch * n_out] } else { Vec::new() };
                for i in 0..batch {
                    let xi = &x[i * n_in..(i + 1) * n_in];
                    for ch in 0..c {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let mut best = f64::NEG_INFINITY;
                                let mut best_idx = 0;
                                for dy in 0..2 {
                                    for dx in 0..2 {
                                        let (yy, xx) = (2 * oy + dy, 2 * ox + dx);
                                        if yy < h && xx < w {
                                            let idx = ch * h * w + yy * w + xx;
                                            if xi[idx] > best {
                                                best = xi[idx];
                                                best_idx = idx;
                                            }
                                        }
                                    }
                                }
                                let o = i * n_out + ch * oh * ow + oy * ow + ox;
                                y[o] = best;
                                if keep {
                                    arg[o] = best_idx as u32;
                                }
                            }
                        }
                    }
                }
                if keep {
                    Cache::Argmax(arg)
                } else {
                    Cache::Nothing
                }
            }
            Layer::Upsample { c, h, w } => {
                let (oh, ow) = (2 * h, 2 * w);
                for i in 0..batch {
                    for ch in 0..c {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                y[i * n_out + ch * oh * ow + oy * ow + ox] =
                                    x[i * n_in + ch * h * w + (oy / 2) * w + ox / 2];
                            }
                        }
                    }
                }
                Cache::Nothing
            }
            Layer::Crop { c, h, w, top, left, out_h, out_w } => {
                for i in 0..batch {
                    for ch in 0..c {
                        for oy in 0..out_h {
                            let src = i * n_in + ch * h * w + (oy + top) * w + left;
                            let dst = i * n_out + ch * out_h * out_w + oy * out_w;
                            y[dst..dst + out_w].copy_from_slice(&x[src..src + out_w]);
                        }
                    }
                }
                Cache::Nothing
            }
            Layer::Act { kind, .. } => {
                match kind {
                    Activation::Relu => {
                        for (o, &v) in y.iter_mut().zip(x) {
                            *o = v.max(0.0);
                        }
                    }
                    Activation::Sigmoid => {
                        for (o, &v) in y.iter_mut().zip(x) {
                            *o = sigmoid(v);
                        }
                    }
                    Activation::Identity => y.copy_from_slice(x),
                }
                if keep && kind != Activation::Identity {
                    Cache::Output(y.clone())
                } else {
                    Cache::Nothing
                }
            }
        };
        (y, cache)
    }

    /// Back-propagates `dy` through the layer. Returns the input gradient
    /// (skipped when `need_dx` is false) and the per-example parameter
    /// gradients, if the layer has parameters.
    pub(crate) fn backward(
        &self,
        params: &[f64],
        cache: Cache,
        dy: Vec<f64>,
        batch: usize,
        need_dx: bool,
    ) -> (Vec<f64>, Option<GradPart>) {
        let n_in = self.in_dim();
        let n_out = self.out_dim();
        match (*self, cache) {
            (Layer::Dense { w, b, .. }, Cache::Input(input)) => {
                let mut dx = Vec::new();
                if need_dx {
                    dx = vec![0.0; batch * n_in];
                    gemm(batch, n_out, n_in, 1.0, &dy, false, &params[w..w + n_in * n_out], false, 0.0, &mut dx);
                }
                let part = GradPart::Factored { delta: dy, input, n_out, n_in, w_offset: w, b_offset: b };
                (dx, Some(part))
            }
            (Layer::Conv { c_in, c_out, h, w, k, wo, .. }, Cache::Cols(cols)) => {
                let hw = h * w;
                let ck = c_in * k * k;
                let len = c_out * ck + c_out;
                let weights = &params[wo..wo + c_out * ck];
                let mut rows = vec![0.0; batch * len];
                let mut dx = if need_dx { vec![0.0; batch * n_in] } else { Vec::new() };
                let mut dcols = vec![0.0; ck * hw];
                for i in 0..batch {
                    let dyi = &dy[i * n_out..(i + 1) * n_out];
                    let colsi = &cols[i * ck * hw..(i + 1) * ck * hw];
                    let row = &mut rows[i * len..(i + 1) * len];
                    let (dw, db) = row.split_at_mut(c_out * ck);
                    gemm(c_out, hw, ck, 1.0, dyi, false, colsi, true, 0.0, dw);
                    for (ch, plane) in dyi.chunks_exact(hw).enumerate() {
                        db[ch] = plane.iter().sum();
                    }
                    if need_dx {
                        gemm(ck, c_out, hw, 1.0, weights, true, dyi, false, 0.0, &mut dcols);
                        col2im(&dcols, c_in, h, w, k, &mut dx[i * n_in..(i + 1) * n_in]);
                    }
                }
                (dx, Some(GradPart::Rows { rows, len, offset: wo }))
            }
            (Layer::MaxPool { .. }, Cache::Argmax(arg)) => {
                let mut dx = vec![0.0; batch * n_in];
                for i in 0..batch {
                    for o in 0..n_out {
                        dx[i * n_in + arg[i * n_out + o] as usize] += dy[i * n_out + o];
                    }
                }
                (dx, None)
            }
            (Layer::Upsample { c, h, w }, _) => {
                let (oh, ow) = (2 * h, 2 * w);
                let mut dx = vec![0.0; batch * n_in];
                for i in 0..batch {
                    for ch in 0..c {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                dx[i * n_in + ch * h * w + (oy / 2) * w + ox / 2] +=
                                    dy[i * n_out + ch * oh * ow + oy * ow + ox];
                            }
                        }
                    }
                }
                (dx, None)
            }
            (Layer::Crop { c, h, w, top, left, out_h, out_w }, _) => {
                let mut dx = vec![0.0; batch * n_in];
                for i in 0..batch {
                    for ch in 0..c {
                        for oy in 0..out_h {
                            let src = i * n_in + ch * h * w + (oy + top) * w + left;
                            let dst = i * n_out + ch * out_h * out_w + oy * out_w;
                            dx[src..src + out_w].copy_from_slice(&dy[dst..dst + out_w]);
                        }
                    }
                }
                (dx, None)
            }
            (Layer::Act { kind, .. }, cache) => {
                let mut dx = dy;
                match (kind, cache) {
                    (Activation::Relu, Cache::Output(y)) => {
                        for (d, &v) in dx.iter_mut().zip(&y) {
                            if v <= 0.0 {
                                *d = 0.0;
                            }
                        }
                    }
                    (Activation::Sigmoid, Cache::Output(y)) => {
                        for (d, &v) in dx.iter_mut().zip(&y) {
                            *d *= v * (1.0 - v);
                        }
                    }
                    (Activation::Identity, _) => {}
                    _ => unreachable!("activation cache missing"),
                }
                (dx, None)
            }
            _ => unreachable!("layer cache does not match layer kind"),
        }
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn im2col(x: &[f64], c: usize, h: usize, w: usize, k: usize, cols: &mut [f64]) {
    let pad = (k / 2) as isize;
    let hw = h * w;
    for ch in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = ((ch * k + ky) * k + kx) * hw;
                for y in 0..h {
                    let sy = y as isize + ky as isize - pad;
                    let dst = &mut cols[row + y * w..row + (y + 1) * w];
                    if sy < 0 || sy >= h as isize {
                        dst.iter_mut().for_each(|v| *v = 0.0);
                        continue;
                    }
                    for (xx, d) in dst.iter_mut().enumerate() {
                        let sx = xx as isize + kx as isize - pad;
                        *d = if sx < 0 || sx >= w as isize { 0.0 } else { x[ch * hw + sy as usize * w + sx as usize] };
                    }
                }
            }
        }
    }
}

fn col2im(cols: &[f64], c: usize, h: usize, w: usize, k: usize, dx: &mut [f64]) {
    let pad = (k / 2) as isize;
    let hw = h * w;
    for ch in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = ((ch * k + ky) * k + kx) * hw;
                for y in 0..h {
                    let sy = y as isize + ky as isize - pad;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for xx in 0..w {
                        let sx = xx as isize + kx as isize - pad;
                        if sx >= 0 && sx < w as isize {
                            dx[ch * hw + sy as usize * w + sx as usize] += cols[row + y * w + xx];
                        }
                    }
                }
            }
        }
    }
}
