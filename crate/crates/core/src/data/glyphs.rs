//! Procedural stand-ins for handwritten digits and font-rendered letters.
//!
//! Digits are thin strokes in a centred 20x20 box; letters A-J are heavier,
//! fill most of the frame and come in solid, inverted and textured styles.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::images::{DatasetMeta, ImageDataset};

const SIDE: usize = 28;

type Stroke = Vec<(f64, f64)>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SyntheticSplit {
    Train,
    Test,
}

impl SyntheticSplit {
    fn code(self) -> u64 {
        match self {
            SyntheticSplit::Train => 0,
            SyntheticSplit::Test => 1,
        }
    }

    fn name(self) -> &'static str {
        match self {
            SyntheticSplit::Train => "train",
            SyntheticSplit::Test => "test",
        }
    }
}

fn ellipse(cx: f64, cy: f64, rx: f64, ry: f64, from: f64, to: f64, n: usize) -> Stroke {
    (0..=n)
        .map(|i| {
            let t = from + (to - from) * i as f64 / n as f64;
            (cx + rx * t.cos(), cy + ry * t.sin())
        })
        .collect()
}

fn digit_strokes(d: u8) -> Vec<Stroke> {
    use std::f64::consts::PI;
    match d {
        0 => vec![ellipse(0.5, 0.5, 0.3, 0.42, 0.0, 2.0 * PI, 20)],
        1 => vec![vec![(0.38, 0.22), (0.52, 0.08), (0.52, 0.92)]],
        2 => vec![vec![
            (0.25, 0.3),
            (0.35, 0.13),
            (0.55, 0.08),
            (0.72, 0.2),
            (0.72, 0.38),
            (0.5, 0.6),
            (0.25, 0.9),
            (0.8, 0.9),
        ]],
        3 => vec![
            vec![(0.25, 0.15), (0.6, 0.08), (0.76, 0.25), (0.6, 0.45), (0.42, 0.48)],
            vec![(0.42, 0.48), (0.62, 0.52), (0.78, 0.7), (0.62, 0.9), (0.24, 0.86)],
        ],
        4 => vec![vec![(0.62, 0.92), (0.62, 0.08), (0.2, 0.64), (0.82, 0.64)]],
        5 => vec![vec![
            (0.76, 0.1),
            (0.32, 0.1),
            (0.28, 0.46),
            (0.55, 0.4),
            (0.76, 0.55),
            (0.73, 0.8),
            (0.5, 0.92),
            (0.25, 0.84),
        ]],
        6 => vec![vec![
            (0.7, 0.1),
            (0.45, 0.2),
            (0.3, 0.45),
            (0.28, 0.72),
            (0.4, 0.9),
            (0.62, 0.9),
            (0.73, 0.72),
            (0.6, 0.53),
            (0.4, 0.53),
            (0.29, 0.66),
        ]],
        7 => vec![vec![(0.22, 0.1), (0.8, 0.1), (0.45, 0.92)]],
        8 => vec![ellipse(0.5, 0.29, 0.2, 0.19, 0.0, 2.0 * PI, 16), ellipse(0.5, 0.7, 0.25, 0.22, 0.0, 2.0 * PI, 16)],
        _ => vec![ellipse(0.5, 0.32, 0.22, 0.21, 0.0, 2.0 * PI, 16), vec![(0.72, 0.32), (0.66, 0.92)]],
    }
}

fn letter_strokes(l: u8) -> Vec<Stroke> {
    use std::f64::consts::PI;
    let c_arc = ellipse(0.55, 0.5, 0.38, 0.45, 0.25 * PI, 1.75 * PI, 18);
    match l {
        0 => vec![vec![(0.08, 0.95), (0.5, 0.05), (0.92, 0.95)], vec![(0.27, 0.62), (0.73, 0.62)]],
        1 => vec![
            vec![(0.2, 0.05), (0.2, 0.95)],
            vec![(0.2, 0.05), (0.65, 0.05), (0.8, 0.2), (0.66, 0.45), (0.2, 0.48)],
            vec![(0.2, 0.48), (0.7, 0.5), (0.84, 0.72), (0.7, 0.94), (0.2, 0.95)],
        ],
        2 => vec![c_arc],
        3 => vec![
            vec![(0.2, 0.05), (0.2, 0.95)],
            vec![(0.2, 0.05), (0.6, 0.08), (0.84, 0.3), (0.84, 0.7), (0.6, 0.92), (0.2, 0.95)],
        ],
        4 => vec![vec![(0.82, 0.05), (0.2, 0.05), (0.2, 0.95), (0.82, 0.95)], vec![(0.2, 0.5), (0.68, 0.5)]],
        5 => vec![vec![(0.82, 0.05), (0.2, 0.05), (0.2, 0.95)], vec![(0.2, 0.5), (0.68, 0.5)]],
        6 => vec![c_arc, vec![(0.82, 0.82), (0.82, 0.56), (0.55, 0.56)]],
        7 => vec![vec![(0.18, 0.05), (0.18, 0.95)], vec![(0.82, 0.05), (0.82, 0.95)], vec![(0.18, 0.5), (0.82, 0.5)]],
        8 => vec![vec![(0.5, 0.05), (0.5, 0.95)], vec![(0.28, 0.05), (0.72, 0.05)], vec![(0.28, 0.95), (0.72, 0.95)]],
        _ => vec![
            vec![(0.35, 0.05), (0.82, 0.05)],
            vec![(0.66, 0.05), (0.66, 0.75), (0.5, 0.94), (0.3, 0.9), (0.18, 0.74)],
        ],
    }
}

struct Affine {
    m: [[f64; 2]; 2],
    centre: (f64, f64),
    scale: f64,
}

impl Affine {
    fn random(rng: &mut ChaCha8Rng, scale: f64, rot: f64, shear: f64, shift: f64) -> Self {
        let a: f64 = rng.gen_range(-rot..=rot);
        let sh: f64 = rng.gen_range(-shear..=shear);
        let sx: f64 = rng.gen_range(0.9..=1.08);
        let sy: f64 = rng.gen_range(0.92..=1.06);
        let (s, c) = a.sin_cos();
        let m = [[c * sx, (c * sh - s) * sy], [s * sx, (s * sh + c) * sy]];
        let centre =
            (SIDE as f64 / 2.0 + rng.gen_range(-shift..=shift), SIDE as f64 / 2.0 + rng.gen_range(-shift..=shift));
        Self { m, centre, scale }
    }

    fn apply(&self, (x, y): (f64, f64)) -> (f64, f64) {
        let (u, v) = ((x - 0.5) * self.scale, (y - 0.5) * self.scale);
        (self.centre.0 + self.m[0][0] * u + self.m[0][1] * v, self.centre.1 + self.m[1][0] * u + self.m[1][1] * v)
    }
}

fn seg_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 { 0.0 } else { (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0) };
    let (qx, qy) = (a.0 + t * dx - p.0, a.1 + t * dy - p.1);
    (qx * qx + qy * qy).sqrt()
}

/// Anti-aliased coverage in `[0, 1]` for each pixel centre.
fn rasterize(strokes: &[Stroke], tf: &Affine, thickness: f64, jitter: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let segs: Vec<((f64, f64), (f64, f64))> = strokes
        .iter()
        .flat_map(|s| {
            let pts: Vec<(f64, f64)> = s
                .iter()
                .map(|&(x, y)| tf.apply((x + rng.gen_range(-jitter..=jitter), y + rng.gen_range(-jitter..=jitter))))
                .collect();
            pts.windows(2).map(|w| (w[0], w[1])).collect::<Vec<_>>()
        })
        .collect();
    let half = thickness / 2.0;
    let mut out = vec![0.0; SIDE * SIDE];
    for r in 0..SIDE {
        for c in 0..SIDE {
            let p = (c as f64 + 0.5, r as f64 + 0.5);
            let d = segs.iter().map(|&(a, b)| seg_distance(p, a, b)).fold(f64::INFINITY, f64::min);
            out[r * SIDE + c] = (half + 0.5 - d).clamp(0.0, 1.0);
        }
    }
    out
}

fn to_bytes(cov: &[f64], peak: f64) -> Vec<u8> {
    cov.iter().map(|&v| (v * peak).round().clamp(0.0, 255.0) as u8).collect()
}

/// One 28x28 digit image of class `digit % 10`, deterministic in `seed`.
pub fn render_digit(digit: u8, seed: u64) -> Vec<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xD161_7000);
    let tf = Affine::random(&mut rng, 20.0, 0.2, 0.25, 1.5);
    let thickness = rng.gen_range(1.6..=2.8);
    let cov = rasterize(&digit_strokes(digit % 10), &tf, thickness, 0.03, &mut rng);
    let peak = rng.gen_range(220.0..=255.0);
    to_bytes(&cov, peak)
}

/// One 28x28 image of letter `A + letter % 10`, deterministic in `seed`.
pub fn render_letter(letter: u8, seed: u64) -> Vec<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1E77_E500);
    let tf = Affine::random(&mut rng, 25.0, 0.08, 0.3, 1.0);
    let style: f64 = rng.gen();
    let thickness = if style < 0.2 { rng.gen_range(1.5..=2.5) } else { rng.gen_range(3.5..=6.0) };
    let cov = rasterize(&letter_strokes(letter % 10), &tf, thickness, 0.01, &mut rng);
    if style < 0.2 {
        // Thin strokes over a grey gradient.
        let base: f64 = rng.gen_range(40.0..=110.0);
        let slope: f64 = rng.gen_range(-2.0..=2.0);
        cov.iter()
            .enumerate()
            .map(|(i, &v)| {
                let bg = (base + slope * (i / SIDE) as f64).clamp(0.0, 255.0);
                (bg + v * (255.0 - bg)).round() as u8
            })
            .collect()
    } else if style < 0.4 {
        // Dark glyph on a bright block.
        let background = rng.gen_range(170.0..=255.0);
        cov.iter().map(|&v| ((1.0 - v) * background).round() as u8).collect()
    } else {
        to_bytes(&cov, rng.gen_range(200.0..=255.0))
    }
}

fn synthetic(n: usize, split: SyntheticSplit, seed: u64, source: u64, letters: bool) -> ImageDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (source << 8) ^ split.code());
    let mut images = Vec::with_capacity(n * SIDE * SIDE);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let label: u8 = rng.gen_range(0..10);
        let s: u64 = rng.gen();
        images.extend(if letters { render_letter(label, s) } else { render_digit(label, s) });
        labels.push(label);
    }
    let mut ds = ImageDataset::new(SIDE, SIDE, images, labels).expect("consistent sizes");
    let tag = (source << 56) | (split.code() << 48) | ((seed & 0xFFFF) << 32);
    ds.ids = (0..n as u64).map(|i| tag | i).collect();
    let kind = if letters { "synthetic-letters" } else { "synthetic-digits" };
    ds.meta = DatasetMeta { sources: vec![format!("{kind}:{}:{seed}", split.name())], ratio: None, seed: Some(seed) };
    ds
}

/// `n` digit images with uniformly drawn classes.
pub fn synthetic_digits(n: usize, split: SyntheticSplit, seed: u64) -> ImageDataset {
    synthetic(n, split, seed, 1, false)
}

/// `n` letter images (labels 0-9 for A-J).
pub fn synthetic_letters(n: usize, split: SyntheticSplit, seed: u64) -> ImageDataset {
    synthetic(n, split, seed, 2, true)
}
