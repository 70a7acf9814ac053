use std::collections::HashSet;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{input_err, Error, Result};
use crate::nn::Sample;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Normal,
    Outlier,
    Poisoned,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub sources: Vec<String>,
    /// Declared outlier or poisoning ratio.
    pub ratio: Option<f64>,
    pub seed: Option<u64>,
}

/// 8-bit grayscale images with aligned labels, provenance flags and
/// sample ids.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageDataset {
    pub rows: usize,
    pub cols: usize,
    pub images: Vec<u8>,
    pub labels: Vec<u8>,
    pub flags: Vec<Provenance>,
    pub ids: Vec<u64>,
    pub meta: DatasetMeta,
}

impl ImageDataset {
    pub fn new(rows: usize, cols: usize, images: Vec<u8>, labels: Vec<u8>) -> Result<Self> {
        let n = labels.len();
        if images.len() != n * rows * cols {
            return input_err(format!("{} pixel bytes do not make {n} images of {rows}x{cols}", images.len()));
        }
        Ok(Self {
            rows,
            cols,
            images,
            labels,
            flags: vec![Provenance::Normal; n],
            ids: (0..n as u64).collect(),
            meta: DatasetMeta::default(),
        })
    }

    pub fn empty(rows: usize, cols: usize) -> Self {
        Self::new(rows, cols, Vec::new(), Vec::new()).expect("empty dataset is consistent")
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn pixels_per_image(&self) -> usize {
        self.rows * self.cols
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let p = self.pixels_per_image();
        &self.images[i * p..(i + 1) * p]
    }

    pub fn count(&self, flag: Provenance) -> usize {
        self.flags.iter().filter(|&&f| f == flag).count()
    }

    /// Pixels scaled to `[0, 1]`.
    pub fn normalized(&self, i: usize) -> Vec<f64> {
        self.image(i).iter().map(|&v| f64::from(v) / 255.0).collect()
    }

    /// Reconstruction samples (autoencoder input = target).
    pub fn to_autoencoder_samples(&self) -> Vec<Sample> {
        (0..self.len()).map(|i| Sample::image(self.normalized(i))).collect()
    }

    /// Classification samples using the stored labels.
    pub fn to_classifier_samples(&self) -> Vec<Sample> {
        (0..self.len()).map(|i| Sample::labeled_image(self.normalized(i), usize::from(self.labels[i]))).collect()
    }

    pub(crate) fn push_from(&mut self, other: &ImageDataset, i: usize, flag: Provenance) {
        self.images.extend_from_slice(other.image(i));
        self.labels.push(other.labels[i]);
        self.flags.push(flag);
        self.ids.push(other.ids[i]);
    }

    pub fn select(&self, indices: &[usize]) -> ImageDataset {
        let mut out = ImageDataset::empty(self.rows, self.cols);
        out.meta = self.meta.clone();
        for &i in indices {
            out.push_from(self, i, self.flags[i]);
        }
        out
    }

    fn check_same_geometry(&self, other: &ImageDataset) -> Result<()> {
        if (self.rows, self.cols) != (other.rows, other.cols) {
            return input_err(format!(
                "image sizes differ: {}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            ));
        }
        Ok(())
    }
}

/// `round(total * ratio)`, ties rounded up.
pub fn ratio_count(total: usize, ratio: f64) -> usize {
    (total as f64 * ratio + 0.5).floor() as usize
}

/// Mixes `total - round(total * r_o)` normal images with `round(total * r_o)`
/// outlier-flagged images, both drawn without replacement, in seeded order.
pub fn build_outlier_mix(
    normal: &ImageDataset,
    outlier_src: &ImageDataset,
    r_o: f64,
    total: usize,
    seed: u64,
) -> Result<ImageDataset> {
    if !(0.0..=1.0).contains(&r_o) {
        return input_err(format!("outlier ratio {r_o} outside [0, 1]"));
    }
    normal.check_same_geometry(outlier_src)?;
    let n_out = ratio_count(total, r_o);
    let n_norm = total - n_out;
    if normal.len() < n_norm || outlier_src.len() < n_out {
        return input_err(format!(
            "need {n_norm} normal and {n_out} outlier images, sources have {} and {}",
            normal.len(),
            outlier_src.len()
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks_norm = sample(&mut rng, normal.len(), n_norm).into_vec();
    let picks_out = sample(&mut rng, outlier_src.len(), n_out).into_vec();
    let mut order: Vec<(bool, usize)> =
        picks_norm.into_iter().map(|i| (false, i)).chain(picks_out.into_iter().map(|i| (true, i))).collect();
    order.shuffle(&mut rng);
    let mut out = ImageDataset::empty(normal.rows, normal.cols);
    for (is_out, i) in order {
        if is_out {
            out.push_from(outlier_src, i, Provenance::Outlier);
        } else {
            out.push_from(normal, i, Provenance::Normal);
        }
    }
    out.meta = DatasetMeta {
        sources: normal.meta.sources.iter().chain(&outlier_src.meta.sources).cloned().collect(),
        ratio: Some(r_o),
        seed: Some(seed),
    };
    Ok(out)
}

/// Concatenates a normal test set with novelty-flagged outliers. Fails if
/// any test id also appears in `train_ids`.
pub fn build_nd_test(
    normal_test: &ImageDataset,
    outlier_test: &ImageDataset,
    train_ids: Option<&[u64]>,
) -> Result<ImageDataset> {
    if !outlier_test.is_empty() {
        normal_test.check_same_geometry(outlier_test)?;
    }
    if let Some(ids) = train_ids {
        let train: HashSet<u64> = ids.iter().copied().collect();
        if let Some(id) = normal_test.ids.iter().chain(&outlier_test.ids).find(|id| train.contains(id)) {
            return input_err(format!("test sample id {id:#x} also appears in training data"));
        }
    }
    let mut out = ImageDataset::empty(normal_test.rows, normal_test.cols);
    for i in 0..normal_test.len() {
        out.push_from(normal_test, i, Provenance::Normal);
    }
    for i in 0..outlier_test.len() {
        out.push_from(outlier_test, i, Provenance::Outlier);
    }
    out.meta.sources = normal_test.meta.sources.iter().chain(&outlier_test.meta.sources).cloned().collect();
    Ok(out)
}

/// Backdoor trigger: invert (`v -> 255 - v`) four pixels in the bottom-right
/// corner and relabel `i -> (i + shift) mod 10`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoisonSpec {
    pub coords: Vec<(usize, usize)>,
    #[serde(default = "default_shift")]
    pub label_shift: u8,
}

fn default_shift() -> u8 {
    1
}

impl Default for PoisonSpec {
    fn default() -> Self {
        Self { coords: vec![(24, 24), (24, 26), (26, 24), (26, 26)], label_shift: 1 }
    }
}

impl PoisonSpec {
    pub fn validate(&self, rows: usize, cols: usize) -> Result<()> {
        if self.coords.len() != 4 {
            return Err(Error::Input(format!("trigger needs exactly 4 pixels, got {}", self.coords.len())));
        }
        let mut seen = HashSet::new();
        for &(r, c) in &self.coords {
            if r >= rows || c >= cols || r + 6 < rows || c + 6 < cols {
                return Err(Error::Input(format!("trigger pixel ({r}, {c}) outside the bottom-right 6x6 corner")));
            }
            if !seen.insert((r, c)) {
                return Err(Error::Input(format!("trigger pixel ({r}, {c}) repeated")));
            }
        }
        Ok(())
    }

    pub fn backdoor_label(&self, label: u8) -> u8 {
        (label + self.label_shift) % 10
    }
}

/// Returns a copy of `image` (`rows x cols`) with the trigger applied.
pub fn apply_trigger(image: &[u8], rows: usize, cols: usize, spec: &PoisonSpec) -> Result<Vec<u8>> {
    if image.len() != rows * cols {
        return input_err(format!("image has {} pixels, expected {}", image.len(), rows * cols));
    }
    spec.validate(rows, cols)?;
    let mut out = image.to_vec();
    for &(r, c) in &spec.coords {
        out[r * cols + c] = 255 - out[r * cols + c];
    }
    Ok(out)
}

/// Triggers and relabels `round(N * r_p)` seeded-random images, flagging
/// them poisoned. `r_p = 1` poisons every image.
pub fn poison(dataset: &ImageDataset, r_p: f64, spec: &PoisonSpec, seed: u64) -> Result<ImageDataset> {
    if !(0.0..=1.0).contains(&r_p) {
        return input_err(format!("poisoning ratio {r_p} outside [0, 1]"));
    }
    spec.validate(dataset.rows, dataset.cols)?;
    let k = ratio_count(dataset.len(), r_p);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = sample(&mut rng, dataset.len(), k).into_vec();
    let mut out = dataset.clone();
    let p = dataset.pixels_per_image();
    for i in picks {
        let triggered = apply_trigger(dataset.image(i), dataset.rows, dataset.cols, spec)?;
        out.images[i * p..(i + 1) * p].copy_from_slice(&triggered);
        out.labels[i] = spec.backdoor_label(dataset.labels[i]);
        out.flags[i] = Provenance::Poisoned;
    }
    out.meta.ratio = Some(r_p);
    out.meta.seed = Some(seed);
    Ok(out)
}

/// Seeded class-stratified subsample of `n` images (per-class quotas
/// proportional to class frequency, remainders to the largest fractions).
pub fn stratified_subsample(dataset: &ImageDataset, n: usize, seed: u64) -> Result<ImageDataset> {
    if n > dataset.len() {
        return input_err(format!("cannot take {n} images from {}", dataset.len()));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); 256];
    for (i, &l) in dataset.labels.iter().enumerate() {
        by_class[usize::from(l)].push(i);
    }
    let total = dataset.len() as f64;
    let mut quotas: Vec<(usize, usize, f64)> = by_class
        .iter()
        .enumerate()
        .filter(|(_, v)| !v.is_empty())
        .map(|(c, v)| {
            let exact = n as f64 * v.len() as f64 / total;
            (c, exact.floor() as usize, exact - exact.floor())
        })
        .collect();
    let mut short = n - quotas.iter().map(|q| q.1).sum::<usize>();
    let mut by_frac: Vec<usize> = (0..quotas.len()).collect();
    by_frac.sort_by(|&a, &b| quotas[b].2.total_cmp(&quotas[a].2).then(a.cmp(&b)));
    for idx in by_frac {
        if short == 0 {
            break;
        }
        quotas[idx].1 += 1;
        short -= 1;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = Vec::with_capacity(n);
    for (c, q, _) in quotas {
        let pool = &by_class[c];
        picked.extend(sample(&mut rng, pool.len(), q).into_iter().map(|j| pool[j]));
    }
    picked.shuffle(&mut rng);
    Ok(dataset.select(&picked))
}
