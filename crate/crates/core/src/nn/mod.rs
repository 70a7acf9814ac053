//! Minimal neural-network kernel: dense and convolutional autoencoders, a
//! small convolutional classifier and a stacked LSTM next-token model, all
//! with exact per-example gradients.

mod checkpoint;
mod grad;
mod layers;
mod lstm;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use grad::{BatchGrads, GradientBatch};
pub use layers::Activation;

use crate::error::{input_err, Error, Result};
use crate::tensor::Tensor;
use layers::{Cache, Layer};
use lstm::LstmShape;

/// Side length of the square single-channel images the image models take.
pub const IMAGE_SIDE: usize = 28;
pub const IMAGE_PIXELS: usize = IMAGE_SIDE * IMAGE_SIDE;

/// Chunk size for forward-only evaluation over large sample sets.
const EVAL_CHUNK: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ModelArch {
    /// Fully connected autoencoder; `widths` runs input to output and must
    /// read the same in both directions.
    DenseAutoencoder {
        widths: Vec<usize>,
        #[serde(default)]
        hidden_activation: Activation,
        #[serde(default = "default_output_activation")]
        output_activation: Activation,
    },
    /// Three conv + max-pool encoder stages (28 -> 14 -> 7 -> 4) mirrored
    /// by three upsample + conv decoder stages, cropped back to 28x28.
    ConvAutoencoder { channels: [usize; 3], kernel: usize },
    /// Next-token model over a vocabulary, reading `history` tokens.
    LstmLm { vocab: usize, history: usize, hidden: usize, layers: usize },
    /// Two conv + max-pool stages, an optional ReLU dense layer of width
    /// `hidden` (0 = none), then a softmax layer.
    Classifier {
        channels: [usize; 2],
        kernel: usize,
        #[serde(default)]
        hidden: usize,
        classes: usize,
    },
}

fn default_output_activation() -> Activation {
    Activation::Sigmoid
}

impl ModelArch {
    /// Desk-scale default autoencoder: 784-128-32-128-784.
    pub fn default_dense_autoencoder() -> Self {
        ModelArch::DenseAutoencoder {
            widths: vec![IMAGE_PIXELS, 128, 32, 128, IMAGE_PIXELS],
            hidden_activation: Activation::Relu,
            output_activation: Activation::Sigmoid,
        }
    }

    pub fn default_conv_autoencoder() -> Self {
        ModelArch::ConvAutoencoder { channels: [16, 8, 8], kernel: 3 }
    }

    pub fn default_classifier() -> Self {
        ModelArch::Classifier { channels: [8, 16], kernel: 3, hidden: 64, classes: 10 }
    }

    pub fn default_lstm(vocab: usize, history: usize) -> Self {
        ModelArch::LstmLm { vocab, history, hidden: 32, layers: 2 }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ModelArch::DenseAutoencoder { .. } => "dense-autoencoder",
            ModelArch::ConvAutoencoder { .. } => "conv-autoencoder",
            ModelArch::LstmLm { .. } => "lstm-lm",
            ModelArch::Classifier { .. } => "classifier",
        }
    }

    /// Number of real inputs an image model takes (`None` for the LSTM).
    pub fn input_width(&self) -> Option<usize> {
        match self {
            ModelArch::DenseAutoencoder { widths, .. } => widths.first().copied(),
            ModelArch::ConvAutoencoder { .. } | ModelArch::Classifier { .. } => Some(IMAGE_PIXELS),
            ModelArch::LstmLm { .. } => None,
        }
    }

    pub fn output_width(&self) -> usize {
        match self {
            ModelArch::DenseAutoencoder { widths, .. } => *widths.last().unwrap_or(&0),
            ModelArch::ConvAutoencoder { .. } => IMAGE_PIXELS,
            ModelArch::LstmLm { vocab, .. } => *vocab,
            ModelArch::Classifier { classes, .. } => *classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Arch(m));
        match self {
            ModelArch::DenseAutoencoder { widths, .. } => {
                if widths.len() < 2 {
                    return bad("autoencoder needs at least an input and an output width".into());
                }
                if widths.contains(&0) {
                    return bad("zero layer width".into());
                }
                if widths.iter().ne(widths.iter().rev()) {
                    return bad(format!("encoder/decoder widths do not mirror: {widths:?}"));
                }
            }
            ModelArch::ConvAutoencoder { channels, kernel } => {
                if channels.contains(&0) {
                    return bad("zero channel count".into());
                }
                if kernel % 2 == 0 {
                    return bad(format!("kernel size must be odd, got {kernel}"));
                }
            }
            ModelArch::Classifier { channels, kernel, classes, .. } => {
                if channels.contains(&0) {
                    return bad("zero channel count".into());
                }
                if kernel % 2 == 0 {
                    return bad(format!("kernel size must be odd, got {kernel}"));
                }
                if *classes < 2 {
                    return bad("classifier needs at least two classes".into());
                }
            }
            ModelArch::LstmLm { vocab, history, hidden, layers } => {
                if *vocab < 2 || *history == 0 || *hidden == 0 || *layers == 0 {
                    return bad("lstm-lm needs vocab >= 2 and positive history, hidden and layer counts".into());
                }
            }
        }
        Ok(())
    }

    pub fn loss_kind(&self) -> LossKind {
        match self {
            ModelArch::DenseAutoencoder { .. } | ModelArch::ConvAutoencoder { .. } => LossKind::ReconstructionMse,
            ModelArch::LstmLm { .. } | ModelArch::Classifier { .. } => LossKind::CrossEntropy,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    /// Mean over output units of the squared error.
    ReconstructionMse,
    CrossEntropy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Features {
    Real(Vec<f64>),
    Tokens(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Target {
    /// Reconstruct the input features.
    Input,
    Real(Vec<f64>),
    Class(usize),
}

/// One labeled example `z` for the loss `l(h, z)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub features: Features,
    pub target: Target,
}

impl Sample {
    pub fn image(pixels: Vec<f64>) -> Self {
        Self { features: Features::Real(pixels), target: Target::Input }
    }

    pub fn labeled_image(pixels: Vec<f64>, label: usize) -> Self {
        Self { features: Features::Real(pixels), target: Target::Class(label) }
    }

    pub fn regression(input: Vec<f64>, target: Vec<f64>) -> Self {
        Self { features: Features::Real(input), target: Target::Real(target) }
    }

    pub fn next_token(history: Vec<usize>, next: usize) -> Self {
        Self { features: Features::Tokens(history), target: Target::Class(next) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl ParamSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone)]
enum Network {
    Stack(Vec<Layer>),
    Lstm(LstmShape),
}

/// A network architecture together with its parameters, stored as one
/// flat vector addressed through named slices.
#[derive(Debug, Clone)]
pub struct Model {
    arch: ModelArch,
    params: Vec<f64>,
    layout: Vec<ParamSpec>,
    net: Network,
}

struct LayoutBuilder {
    layout: Vec<ParamSpec>,
    next: usize,
}

impl LayoutBuilder {
    fn push(&mut self, name: String, shape: Vec<usize>) -> usize {
        let offset = self.next;
        self.next += shape.iter().product::<usize>();
        self.layout.push(ParamSpec { name, shape, offset });
        offset
    }
}

fn compile(arch: &ModelArch) -> Result<(Network, Vec<ParamSpec>)> {
    arch.validate()?;
    let mut lb = LayoutBuilder { layout: Vec::new(), next: 0 };
    let act = |kind, dim| Layer::Act { kind, dim };
    let net = match arch {
        ModelArch::DenseAutoencoder { widths, hidden_activation, output_activation } => {
            let mut stack = Vec::new();
            let last = widths.len() - 2;
            for (i, pair) in widths.windows(2).enumerate() {
                let (n_in, n_out) = (pair[0], pair[1]);
                let w = lb.push(format!("dense{i}.weight"), vec![n_out, n_in]);
                let b = lb.push(format!("dense{i}.bias"), vec![n_out]);
                stack.push(Layer::Dense { n_in, n_out, w, b });
                let kind = if i == last { *output_activation } else { *hidden_activation };
                stack.push(act(kind, n_out));
            }
            Network::Stack(stack)
        }
        ModelArch::ConvAutoencoder { channels, kernel } => {
            let k = *kernel;
            let mut stack = Vec::new();
            let conv = |lb: &mut LayoutBuilder, name: &str, c_in: usize, c_out: usize, side: usize| {
                let wo = lb.push(format!("{name}.weight"), vec![c_out, c_in, k, k]);
                let bo = lb.push(format!("{name}.bias"), vec![c_out]);
                Layer::Conv { c_in, c_out, h: side, w: side, k, wo, bo }
            };
            let [c1, c2, c3] = *channels;
            let mut side = IMAGE_SIDE;
            for (i, (c_in, c_out)) in [(1, c1), (c1, c2), (c2, c3)].into_iter().enumerate() {
                stack.push(conv(&mut lb, &format!("enc{i}"), c_in, c_out, side));
                stack.push(act(Activation::Relu, c_out * side * side));
                stack.push(Layer::MaxPool { c: c_out, h: side, w: side });
                side = side.div_ceil(2);
            }
            // 4 -> 8 -> 16 -> 32, cropped to 28.
            for (i, (c_in, c_out)) in [(c3, c2), (c2, c1)].into_iter().enumerate() {
                stack.push(Layer::Upsample { c: c_in, h: side, w: side });
                side *= 2;
                stack.push(conv(&mut lb, &format!("dec{i}"), c_in, c_out, side));
                stack.push(act(Activation::Relu, c_out * side * side));
            }
            stack.push(Layer::Upsample { c: c1, h: side, w: side });
            side *= 2;
            let margin = (side - IMAGE_SIDE) / 2;
            stack.push(Layer::Crop {
                c: c1,
                h: side,
                w: side,
                top: margin,
                left: margin,
                out_h: IMAGE_SIDE,
                out_w: IMAGE_SIDE,
            });
            stack.push(conv(&mut lb, "dec2", c1, 1, IMAGE_SIDE));
            stack.push(act(Activation::Sigmoid, IMAGE_PIXELS));
            Network::Stack(stack)
        }
        ModelArch::Classifier { channels, kernel, hidden, classes } => {
            let k = *kernel;
            let mut stack = Vec::new();
            let mut side = IMAGE_SIDE;
            let mut c_in = 1;
            for (i, &c_out) in channels.iter().enumerate() {
                let wo = lb.push(format!("conv{i}.weight"), vec![c_out, c_in, k, k]);
                let bo = lb.push(format!("conv{i}.bias"), vec![c_out]);
                stack.push(Layer::Conv { c_in, c_out, h: side, w: side, k, wo, bo });
                stack.push(act(Activation::Relu, c_out * side * side));
                stack.push(Layer::MaxPool { c: c_out, h: side, w: side });
                side = side.div_ceil(2);
                c_in = c_out;
            }
            let mut n_in = c_in * side * side;
            if *hidden > 0 {
                let w = lb.push("fc.weight".into(), vec![*hidden, n_in]);
                let b = lb.push("fc.bias".into(), vec![*hidden]);
                stack.push(Layer::Dense { n_in, n_out: *hidden, w, b });
                stack.push(act(Activation::Relu, *hidden));
                n_in = *hidden;
            }
            let w = lb.push("out.weight".into(), vec![*classes, n_in]);
            let b = lb.push("out.bias".into(), vec![*classes]);
            stack.push(Layer::Dense { n_in, n_out: *classes, w, b });
            Network::Stack(stack)
        }
        ModelArch::LstmLm { vocab, history, hidden, layers } => {
            let mut offsets = Vec::new();
            for l in 0..*layers {
                let n_in = if l == 0 { *vocab } else { *hidden };
                let w = lb.push(format!("lstm{l}.weight"), vec![4 * hidden, n_in + hidden]);
                let b = lb.push(format!("lstm{l}.bias"), vec![4 * hidden]);
                offsets.push((w, b));
            }
            let out_w = lb.push("out.weight".into(), vec![*vocab, *hidden]);
            let out_b = lb.push("out.bias".into(), vec![*vocab]);
            Network::Lstm(LstmShape { vocab: *vocab, steps: *history, hidden: *hidden, layers: offsets, out_w, out_b })
        }
    };
    Ok((net, lb.layout))
}

/// Builds a model with seeded Glorot-uniform weights,
/// `U(-b, b)` with `b = sqrt(6 / (fan_in + fan_out))`, and zero biases
/// (LSTM forget-gate biases one).
pub fn build_model(arch: &ModelArch, seed: u64) -> Result<Model> {
    let (net, layout) = compile(arch)?;
    let total = layout.iter().map(ParamSpec::len).sum();
    let mut params = vec![0.0; total];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for spec in &layout {
        let slot = &mut params[spec.offset..spec.offset + spec.len()];
        if spec.name.ends_with(".weight") {
            let receptive: usize = spec.shape[2..].iter().product();
            let fan_in = spec.shape[1] * receptive;
            let fan_out = spec.shape[0] * receptive;
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            slot.iter_mut().for_each(|v| *v = rng.gen_range(-bound..bound));
        } else if spec.name.starts_with("lstm") {
            let hidden = spec.len() / 4;
            slot[hidden..2 * hidden].iter_mut().for_each(|v| *v = 1.0);
        }
    }
    Ok(Model { arch: arch.clone(), params, layout, net })
}

impl Model {
    pub(crate) fn from_parts(arch: ModelArch, params: Vec<f64>) -> Result<Self> {
        let (net, layout) = compile(&arch)?;
        let total: usize = layout.iter().map(ParamSpec::len).sum();
        if params.len() != total {
            return Err(Error::Arch(format!("architecture needs {total} parameters, payload has {}", params.len())));
        }
        Ok(Model { arch, params, layout, net })
    }

    pub fn arch(&self) -> &ModelArch {
        &self.arch
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Flattened parameter vector, in layout order.
    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn layout(&self) -> &[ParamSpec] {
        &self.layout
    }

    pub fn param(&self, name: &str) -> Option<Tensor> {
        let spec = self.layout.iter().find(|s| s.name == name)?;
        Tensor::new(spec.shape.clone(), self.params[spec.offset..spec.offset + spec.len()].to_vec()).ok()
    }

    pub fn set_param(&mut self, name: &str, values: &[f64]) -> Result<()> {
        let spec = self
            .layout
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| Error::Input(format!("no parameter named {name}")))?;
        if values.len() != spec.len() {
            return input_err(format!("parameter {name} has {} values, got {}", spec.len(), values.len()));
        }
        self.params[spec.offset..spec.offset + spec.len()].copy_from_slice(values);
        Ok(())
    }

    fn check_sample(&self, s: &Sample, kind: LossKind) -> Result<()> {
        match (&self.net, &s.features) {
            (Network::Stack(_), Features::Real(x)) => {
                let want = self.arch.input_width().unwrap_or(0);
                if x.len() != want {
                    return input_err(format!("model takes {want} inputs, sample has {}", x.len()));
                }
                if x.iter().any(|v| !v.is_finite()) {
                    return input_err("sample features are not finite");
                }
            }
            (Network::Lstm(shape), Features::Tokens(t)) => {
                if t.len() != shape.steps {
                    return input_err(format!("history length {} differs from model history {}", t.len(), shape.steps));
                }
                if let Some(&bad) = t.iter().find(|&&tok| tok >= shape.vocab) {
                    return input_err(format!("token {bad} outside vocabulary of {}", shape.vocab));
                }
            }
            _ => return input_err(format!("sample features do not fit a {} model", self.arch.name())),
        }
        let out = self.arch.output_width();
        match (kind, &s.target) {
            (LossKind::ReconstructionMse, Target::Input) => {
                if self.arch.input_width() != Some(out) {
                    return input_err("reconstruction target needs equal input and output widths");
                }
            }
            (LossKind::ReconstructionMse, Target::Real(t)) => {
                if t.len() != out {
                    return input_err(format!("target has {} values, model outputs {out}", t.len()));
                }
            }
            (LossKind::CrossEntropy, Target::Class(c)) => {
                if *c >= out {
                    return input_err(format!("class {c} outside {out} outputs"));
                }
            }
            _ => return input_err(format!("target does not fit {kind:?} loss")),
        }
        Ok(())
    }

    /// Forward pass with loss head. Returns per-example losses, the output
    /// gradient (when `with_grad`), and the per-layer caches.
    fn run(
        &self,
        samples: &[&Sample],
        kind: LossKind,
        with_grad: bool,
    ) -> Result<(Vec<f64>, Option<Vec<f64>>, RunCache)> {
        for s in samples {
            self.check_sample(s, kind)?;
        }
        let b = samples.len();
        let (out, cache) = match &self.net {
            Network::Stack(stack) => {
                let n_in = stack[0].in_dim();
                let mut x = Vec::with_capacity(b * n_in);
                for s in samples {
                    if let Features::Real(v) = &s.features {
                        x.extend_from_slice(v);
                    }
                }
                let mut caches = Vec::with_capacity(stack.len());
                for layer in stack {
                    let (y, c) = layer.forward(&self.params, &x, b, with_grad);
                    caches.push(c);
                    x = y;
                }
                (x, RunCache::Stack(caches))
            }
            Network::Lstm(shape) => {
                let mut tokens = Vec::with_capacity(b * shape.steps);
                for s in samples {
                    if let Features::Tokens(t) = &s.features {
                        tokens.extend_from_slice(t);
                    }
                }
                let mut fwd = lstm::forward(shape, &self.params, &tokens, b, with_grad);
                let logits = std::mem::take(&mut fwd.logits);
                (logits, RunCache::Lstm(fwd))
            }
        };
        let width = self.arch.output_width();
        let mut losses = Vec::with_capacity(b);
        let mut grad = if with_grad { Some(vec![0.0; b * width]) } else { None };
        for (i, s) in samples.iter().enumerate() {
            let y = &out[i * width..(i + 1) * width];
            let g = grad.as_mut().map(|g| &mut g[i * width..(i + 1) * width]);
            let loss = match (kind, &s.target) {
                (LossKind::ReconstructionMse, Target::Input) => match &s.features {
                    Features::Real(x) => mse(y, x, g),
                    Features::Tokens(_) => unreachable!("checked"),
                },
                (LossKind::ReconstructionMse, Target::Real(t)) => mse(y, t, g),
                (LossKind::CrossEntropy, Target::Class(c)) => cross_entropy(y, *c, g),
                _ => unreachable!("checked"),
            };
            losses.push(loss);
        }
        Ok((losses, grad, cache))
    }

    /// Loss of every sample, evaluated in chunks.
    pub fn losses(&self, samples: &[Sample], kind: LossKind) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(samples.len());
        for chunk in samples.chunks(EVAL_CHUNK) {
            let refs: Vec<&Sample> = chunk.iter().collect();
            out.extend(self.run(&refs, kind, false)?.0);
        }
        Ok(out)
    }

    /// Raw network outputs (reconstruction, or logits for the
    /// cross-entropy models) for a batch of samples.
    pub fn outputs(&self, samples: &[&Sample]) -> Result<Vec<Vec<f64>>> {
        let kind = self.arch.loss_kind();
        let width = self.arch.output_width();
        let mut all = Vec::with_capacity(samples.len());
        for chunk in samples.chunks(EVAL_CHUNK) {
            for s in chunk {
                self.check_sample(s, kind)?;
            }
            let out = match &self.net {
                Network::Stack(stack) => {
                    let mut x = Vec::with_capacity(chunk.len() * stack[0].in_dim());
                    for s in chunk {
                        if let Features::Real(v) = &s.features {
                            x.extend_from_slice(v);
                        }
                    }
                    for layer in stack {
                        x = layer.forward(&self.params, &x, chunk.len(), false).0;
                    }
                    x
                }
                Network::Lstm(shape) => {
                    let tokens: Vec<usize> = chunk
                        .iter()
                        .flat_map(|s| match &s.features {
                            Features::Tokens(t) => t.clone(),
                            Features::Real(_) => Vec::new(),
                        })
                        .collect();
                    lstm::forward(shape, &self.params, &tokens, chunk.len(), false).logits
                }
            };
            all.extend(out.chunks_exact(width).map(<[f64]>::to_vec));
        }
        Ok(all)
    }

    /// Arg-max class for each sample of a cross-entropy model.
    pub fn classify(&self, samples: &[&Sample]) -> Result<Vec<usize>> {
        if self.arch.loss_kind() != LossKind::CrossEntropy {
            return input_err("classify needs a cross-entropy model");
        }
        Ok(self.outputs(samples)?.iter().map(|logits| argmax(logits)).collect())
    }

    /// One batched forward/backward pass producing per-example gradients.
    pub fn batch_gradients(&self, samples: &[&Sample], kind: LossKind) -> Result<BatchGrads> {
        if samples.is_empty() {
            return input_err("empty batch");
        }
        let b = samples.len();
        let (losses, grad, cache) = self.run(samples, kind, true)?;
        let mut dy = grad.expect("gradient requested");
        let parts = match (&self.net, cache) {
            (Network::Stack(stack), RunCache::Stack(mut caches)) => {
                let mut parts = Vec::new();
                for (idx, layer) in stack.iter().enumerate().rev() {
                    let cache = caches.pop().unwrap_or(Cache::Nothing);
                    let need_dx = idx > 0;
                    let (dx, part) = layer.backward(&self.params, cache, dy, b, need_dx);
                    if let Some(p) = part {
                        parts.push(p);
                    }
                    dy = dx;
                }
                parts
            }
            (Network::Lstm(shape), RunCache::Lstm(fwd)) => lstm::backward(shape, &self.params, fwd, dy, b),
            _ => unreachable!("cache matches network"),
        };
        Ok(BatchGrads { losses, parts, param_count: self.params.len() })
    }
}

enum RunCache {
    Stack(Vec<Cache>),
    Lstm(lstm::Forward),
}

fn mse(y: &[f64], t: &[f64], grad: Option<&mut [f64]>) -> f64 {
    let d = y.len() as f64;
    let loss = y.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / d;
    if let Some(g) = grad {
        for ((gi, a), b) in g.iter_mut().zip(y).zip(t) {
            *gi = 2.0 * (a - b) / d;
        }
    }
    loss
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    logits.iter().map(|v| v - lse).collect()
}

fn cross_entropy(logits: &[f64], class: usize, grad: Option<&mut [f64]>) -> f64 {
    let lp = log_softmax(logits);
    if let Some(g) = grad {
        for (i, (gi, l)) in g.iter_mut().zip(&lp).enumerate() {
            *gi = l.exp() - if i == class { 1.0 } else { 0.0 };
        }
    }
    // -log p is never negative; clamp the -0.0 / rounding case.
    (-lp[class]).max(0.0)
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let p: Vec<f64> = log_softmax(logits).into_iter().map(f64::exp).collect();
    let s: f64 = p.iter().sum();
    p.into_iter().map(|v| v / s).collect()
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Loss `l(h, z)` of one sample.
pub fn forward_loss(model: &Model, sample: &Sample, kind: LossKind) -> Result<f64> {
    Ok(model.run(&[sample], kind, false)?.0[0])
}

/// One flattened gradient row per sample. Row `i` depends only on sample `i`.
pub fn per_example_gradients(model: &Model, batch: &[Sample], kind: LossKind) -> Result<GradientBatch> {
    let refs: Vec<&Sample> = batch.iter().collect();
    Ok(model.batch_gradients(&refs, kind)?.to_gradient_batch())
}

/// Next-token distribution of an LSTM model given a full-length history.
pub fn predict_distribution(model: &Model, history: &[usize]) -> Result<Vec<f64>> {
    Ok(predict_distributions(model, &[history.to_vec()])?.remove(0))
}

/// Batched form of [`predict_distribution`].
pub fn predict_distributions(model: &Model, histories: &[Vec<usize>]) -> Result<Vec<Vec<f64>>> {
    if !matches!(model.net, Network::Lstm(_)) {
        return input_err("next-token prediction needs an lstm-lm model");
    }
    let samples: Vec<Sample> = histories.iter().map(|h| Sample::next_token(h.clone(), 0)).collect();
    let refs: Vec<&Sample> = samples.iter().collect();
    Ok(model.outputs(&refs)?.iter().map(|l| softmax(l)).collect())
}
