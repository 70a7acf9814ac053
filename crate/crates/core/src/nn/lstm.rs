//! Stacked LSTM next-token model over one-hot token inputs. Only the final
//! time step is scored: the model reads `history` tokens and predicts the
//! next one.

use super::grad::GradPart;
use super::layers::sigmoid;
use crate::tensor::gemm;

#[derive(Debug, Clone)]
pub(crate) struct LstmShape {
    pub vocab: usize,
    pub steps: usize,
    pub hidden: usize,
    /// Offset of (weights, bias) per layer; weights are `4H x (in + H)`
    /// with gate blocks ordered input, forget, cell, output.
    pub layers: Vec<(usize, usize)>,
    pub out_w: usize,
    pub out_b: usize,
}

impl LstmShape {
    fn layer_in(&self, l: usize) -> usize {
        if l == 0 {
            self.vocab
        } else {
            self.hidden
        }
    }
}

struct StepCache {
    z: Vec<f64>,
    gates: Vec<f64>,
    c_prev: Vec<f64>,
    tanh_c: Vec<f64>,
}

pub(crate) struct Forward {
    pub logits: Vec<f64>,
    top_h: Vec<f64>,
    cache: Vec<Vec<StepCache>>,
}

/// Runs the network on `batch` histories laid out row-major (`batch x steps`).
pub(crate) fn forward(shape: &LstmShape, params: &[f64], tokens: &[usize], batch: usize, keep: bool) -> Forward {
    let hdim = shape.hidden;
    let n_layers = shape.layers.len();
    let mut h = vec![vec![0.0; batch * hdim]; n_layers];
    let mut c = vec![vec![0.0; batch * hdim]; n_layers];
    let mut cache: Vec<Vec<StepCache>> = (0..shape.steps).map(|_| Vec::with_capacity(n_layers)).collect();
    for t in 0..shape.steps {
        for l in 0..n_layers {
            let n_in = shape.layer_in(l);
            let zdim = n_in + hdim;
            let mut z = vec![0.0; batch * zdim];
            for i in 0..batch {
                let row = &mut z[i * zdim..(i + 1) * zdim];
                if l == 0 {
                    row[tokens[i * shape.steps + t]] = 1.0;
                } else {
                    row[..n_in].copy_from_slice(&h[l - 1][i * hdim..(i + 1) * hdim]);
                }
                row[n_in..].copy_from_slice(&h[l][i * hdim..(i + 1) * hdim]);
            }
            let (wo, bo) = shape.layers[l];
            let g4 = 4 * hdim;
            let mut gates = vec![0.0; batch * g4];
            gemm(batch, zdim, g4, 1.0, &z, false, &params[wo..wo + g4 * zdim], true, 0.0, &mut gates);
            let bias = &params[bo..bo + g4];
            let c_prev = std::mem::take(&mut c[l]);
            let mut c_new = vec![0.0; batch * hdim];
            let mut h_new = vec![0.0; batch * hdim];
            let mut tanh_c = vec![0.0; batch * hdim];
            for i in 0..batch {
                let g = &mut gates[i * g4..(i + 1) * g4];
                for (v, b) in g.iter_mut().zip(bias) {
                    *v += b;
                }
                for j in 0..hdim {
                    let ig = sigmoid(g[j]);
                    let fg = sigmoid(g[hdim + j]);
                    let cg = g[2 * hdim + j].tanh();
                    let og = sigmoid(g[3 * hdim + j]);
                    g[j] = ig;
                    g[hdim + j] = fg;
                    g[2 * hdim + j] = cg;
                    g[3 * hdim + j] = og;
                    let cn = fg * c_prev[i * hdim + j] + ig * cg;
                    let tc = cn.tanh();
                    c_new[i * hdim + j] = cn;
                    tanh_c[i * hdim + j] = tc;
                    h_new[i * hdim + j] = og * tc;
                }
            }
            if keep {
                cache[t].push(StepCache { z, gates, c_prev, tanh_c });
            }
            c[l] = c_new;
            h[l] = h_new;
        }
    }
    let top_h = h.pop().unwrap_or_default();
    let v = shape.vocab;
    let mut logits = vec![0.0; batch * v];
    gemm(batch, hdim, v, 1.0, &top_h, false, &params[shape.out_w..shape.out_w + v * hdim], true, 0.0, &mut logits);
    let ob = &params[shape.out_b..shape.out_b + v];
    for row in logits.chunks_exact_mut(v) {
        for (x, b) in row.iter_mut().zip(ob) {
            *x += b;
        }
    }
    Forward { logits, top_h, cache }
}

/// Back-propagation through time from the logit gradient.
pub(crate) fn backward(
    shape: &LstmShape,
    params: &[f64],
    fwd: Forward,
    dlogits: Vec<f64>,
    batch: usize,
) -> Vec<GradPart> {
    let hdim = shape.hidden;
    let v = shape.vocab;
    let n_layers = shape.layers.len();
    let g4 = 4 * hdim;

    let mut dh_top = vec![0.0; batch * hdim];
    gemm(batch, v, hdim, 1.0, &dlogits, false, &params[shape.out_w..shape.out_w + v * hdim], false, 0.0, &mut dh_top);

    let mut rows: Vec<Vec<f64>> =
        (0..n_layers).map(|l| vec![0.0; batch * (g4 * (shape.layer_in(l) + hdim) + g4)]).collect();
    let mut dh_rec = vec![vec![0.0; batch * hdim]; n_layers];
    let mut dc_rec = vec![vec![0.0; batch * hdim]; n_layers];
    dh_rec[n_layers - 1] = dh_top;

    let mut cache = fwd.cache;
    for t in (0..shape.steps).rev() {
        let mut step = std::mem::take(&mut cache[t]);
        let mut dh_from_above: Option<Vec<f64>> = None;
        for l in (0..n_layers).rev() {
            let StepCache { z, gates, c_prev, tanh_c } = step.pop().expect("cache per layer");
            let n_in = shape.layer_in(l);
            let zdim = n_in + hdim;
            let mut dh = std::mem::take(&mut dh_rec[l]);
            if let Some(above) = dh_from_above.take() {
                for (a, b) in dh.iter_mut().zip(&above) {
                    *a += b;
                }
            }
            let dc_in = std::mem::take(&mut dc_rec[l]);
            let mut dgates = vec![0.0; batch * g4];
            let mut dc_prev = vec![0.0; batch * hdim];
            for i in 0..batch {
                let g = &gates[i * g4..(i + 1) * g4];
                let dg = &mut dgates[i * g4..(i + 1) * g4];
                for j in 0..hdim {
                    let k = i * hdim + j;
                    let (ig, fg, cg, og) = (g[j], g[hdim + j], g[2 * hdim + j], g[3 * hdim + j]);
                    let tc = tanh_c[k];
                    let d_o = dh[k] * tc;
                    let dc = dc_in[k] + dh[k] * og * (1.0 - tc * tc);
                    dg[j] = dc * cg * ig * (1.0 - ig);
                    dg[hdim + j] = dc * c_prev[k] * fg * (1.0 - fg);
                    dg[2 * hdim + j] = dc * ig * (1.0 - cg * cg);
                    dg[3 * hdim + j] = d_o * og * (1.0 - og);
                    dc_prev[k] = dc * fg;
                }
            }
            let wlen = g4 * zdim;
            let len = wlen + g4;
            for i in 0..batch {
                let row = &mut rows[l][i * len..(i + 1) * len];
                let dg = &dgates[i * g4..(i + 1) * g4];
                let zi = &z[i * zdim..(i + 1) * zdim];
                if l == 0 {
                    // One-hot input: only one input column is non-zero.
                    let tok = zi[..n_in].iter().position(|&x| x == 1.0).expect("one-hot row");
                    for (r, &d) in dg.iter().enumerate() {
                        let wr = &mut row[r * zdim..(r + 1) * zdim];
                        wr[tok] += d;
                        for (w, &hv) in wr[n_in..].iter_mut().zip(&zi[n_in..]) {
                            *w += d * hv;
                        }
                    }
                } else {
                    for (r, &d) in dg.iter().enumerate() {
                        for (w, &zv) in row[r * zdim..(r + 1) * zdim].iter_mut().zip(zi) {
                            *w += d * zv;
                        }
                    }
                }
                for (b, &d) in row[wlen..].iter_mut().zip(dg) {
                    *b += d;
                }
            }
            let (wo, _) = shape.layers[l];
            let mut dz = vec![0.0; batch * zdim];
            gemm(batch, g4, zdim, 1.0, &dgates, false, &params[wo..wo + wlen], false, 0.0, &mut dz);
            let mut dh_prev = vec![0.0; batch * hdim];
            let mut dx = if l > 0 { vec![0.0; batch * n_in] } else { Vec::new() };
            for i in 0..batch {
                let dzi = &dz[i * zdim..(i + 1) * zdim];
                if l > 0 {
                    dx[i * n_in..(i + 1) * n_in].copy_from_slice(&dzi[..n_in]);
                }
                dh_prev[i * hdim..(i + 1) * hdim].copy_from_slice(&dzi[n_in..]);
            }
            dh_rec[l] = dh_prev;
            dc_rec[l] = dc_prev;
            if l > 0 {
                dh_from_above = Some(dx);
            }
        }
    }

    let mut parts: Vec<GradPart> = rows
        .into_iter()
        .enumerate()
        .map(|(l, rows)| {
            let zdim = shape.layer_in(l) + hdim;
            GradPart::Rows { rows, len: g4 * zdim + g4, offset: shape.layers[l].0 }
        })
        .collect();
    parts.push(GradPart::Factored {
        delta: dlogits,
        input: fwd.top_h,
        n_out: v,
        n_in: hdim,
        w_offset: shape.out_w,
        b_offset: shape.out_b,
    });
    parts
}
