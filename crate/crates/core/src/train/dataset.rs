use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{DsmError, Result};
use crate::model::TokenTensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Images in `[0, 1]` with integer labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: TokenTensor,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub split: Split,
}

impl Dataset {
    pub fn new(
        images: TokenTensor,
        labels: Vec<usize>,
        num_classes: usize,
        split: Split,
    ) -> Result<Self> {
        if labels.is_empty() || labels.len() != images.batch {
            return Err(DsmError::Consistency(format!(
                "{} images but {} labels",
                images.batch,
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(DsmError::Consistency(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        Ok(Dataset {
            images,
            labels,
            num_classes,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Images and labels for the listed indices.
    pub fn batch(&self, indices: &[usize]) -> Result<(TokenTensor, Vec<usize>)> {
        let images = self.images.select(indices)?;
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Ok((images, labels))
    }

    /// Zero-pads every image symmetrically to `height x width` (extra
    /// row/column at the bottom/right when the margin is odd).
    pub fn pad_to(&self, height: usize, width: usize) -> Result<Dataset> {
        let (n, h, w, c) = self.images.dims();
        if height < h || width < w {
            return Err(DsmError::Shape(format!(
                "cannot pad {h}x{w} images down to {height}x{width}"
            )));
        }
        if (height, width) == (h, w) {
            return Ok(self.clone());
        }
        let (top, left) = ((height - h) / 2, (width - w) / 2);
        let mut data = vec![0.0; n * height * width * c];
        for b in 0..n {
            for i in 0..h {
                let src = ((b * h + i) * w) * c;
                let dst = ((b * height + top + i) * width + left) * c;
                data[dst..dst + w * c].copy_from_slice(&self.images.data[src..src + w * c]);
            }
        }
        Dataset::new(
            TokenTensor::new(n, height, width, c, data)?,
            self.labels.clone(),
            self.num_classes,
            self.split,
        )
    }

    /// First `n` items, e.g. for quick evaluation.
    pub fn take(&self, n: usize) -> Result<Dataset> {
        let n = n.min(self.len());
        let idx: Vec<usize> = (0..n).collect();
        let (images, labels) = self.batch(&idx)?;
        Dataset::new(images, labels, self.num_classes, self.split)
    }
}

const IDX_IMAGES: u32 = 0x0000_0803;
const IDX_LABELS: u32 = 0x0000_0801;

fn be_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| DsmError::Format(format!("{what}: truncated header")))
}

/// Parses IDX image bytes into `(count, rows, cols, pixels / 255)`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, usize, Vec<f64>)> {
    let magic = be_u32(bytes, 0, "images")?;
    if magic != IDX_IMAGES {
        return Err(DsmError::Format(format!(
            "bad IDX image magic {magic:#010x}, expected {IDX_IMAGES:#010x}"
        )));
    }
    let n = be_u32(bytes, 4, "images")? as usize;
    let rows = be_u32(bytes, 8, "images")? as usize;
    let cols = be_u32(bytes, 12, "images")? as usize;
    let len = n
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .ok_or_else(|| DsmError::Format("IDX image dimensions overflow".into()))?;
    let body = &bytes[16..];
    if body.len() != len {
        return Err(DsmError::Format(format!(
            "IDX image body has {} bytes, header declares {len}",
            body.len()
        )));
    }
    Ok((n, rows, cols, body.iter().map(|&b| b as f64 / 255.0).collect()))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let magic = be_u32(bytes, 0, "labels")?;
    if magic != IDX_LABELS {
        return Err(DsmError::Format(format!(
            "bad IDX label magic {magic:#010x}, expected {IDX_LABELS:#010x}"
        )));
    }
    let n = be_u32(bytes, 4, "labels")? as usize;
    let body = &bytes[8..];
    if body.len() != n {
        return Err(DsmError::Format(format!(
            "IDX label body has {} bytes, header declares {n}",
            body.len()
        )));
    }
    Ok(body.to_vec())
}

/// Loads an IDX image/label pair (the MNIST layout).
pub fn load_idx_dataset(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
    split: Split,
) -> Result<Dataset> {
    let (n, rows, cols, pixels) = parse_idx_images(&fs::read(images_path)?)?;
    let labels = parse_idx_labels(&fs::read(labels_path)?)?;
    if labels.len() != n {
        return Err(DsmError::Consistency(format!(
            "{n} images but {} labels",
            labels.len()
        )));
    }
    let num_classes = labels.iter().copied().max().map_or(0, |m| m as usize + 1).max(10);
    let images = TokenTensor::new(n, rows, cols, 1, pixels)?;
    Dataset::new(
        images,
        labels.into_iter().map(usize::from).collect(),
        num_classes,
        split,
    )
}

/// Frequency band `k` of a synthetic task: a range of anti-diagonal indices
/// `u + v` of the DCT spectrum.
pub fn synth_band(k: usize, num_classes: usize, height: usize, width: usize) -> std::ops::Range<usize> {
    let top = height + width - 1;
    let span = top - 1;
    let lo = 1 + k * span / num_classes;
    let hi = 1 + (k + 1) * span / num_classes;
    lo..hi
}

/// Number of cosine gratings summed per image.
const GRATINGS: usize = 3;
const NOISE_SIGMA: f64 = 0.1;

/// Noise-free image for class `label`, drawn from `rng`.
pub fn synth_prototype<R: Rng>(
    rng: &mut R,
    label: usize,
    num_classes: usize,
    height: usize,
    width: usize,
) -> Vec<f64> {
    let band = synth_band(label, num_classes, height, width);
    let mut img = vec![0.0; height * width];
    for g in 0..GRATINGS {
        // pick (u, v) with u + v inside the band and inside the grid
        let (u, v) = loop {
            let d = rng.gen_range(band.clone());
            let lo = d.saturating_sub(width - 1);
            let hi = d.min(height - 1);
            if lo <= hi {
                let u = rng.gen_range(lo..=hi);
                break (u, d - u);
            }
        };
        // the first grating dominates so the class band holds the peak
        let amp = if g == 0 { 1.0 } else { rng.gen_range(0.3..0.6) };
        let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
        for i in 0..height {
            let cu = (PI * u as f64 * (i as f64 + 0.5) / height as f64).cos();
            for j in 0..width {
                let cv = (PI * v as f64 * (j as f64 + 0.5) / width as f64).cos();
                img[i * width + j] += sign * amp * cu * cv;
            }
        }
    }
    let scale = 0.5 / (1.0 + 0.6 * (GRATINGS - 1) as f64);
    img.iter_mut().for_each(|p| *p = 0.5 + scale * *p);
    img
}

/// Deterministic frequency-band classification task.
///
/// Class `k` images are sums of DCT-basis gratings whose anti-diagonal index
/// lies in band `k`, plus Gaussian noise (sigma 0.1), clamped to `[0, 1]`.
/// Labels cycle through the classes, so the histogram is balanced within one.
pub fn synth_dataset(
    seed: u64,
    n: usize,
    num_classes: usize,
    height: usize,
    width: usize,
    split: Split,
) -> Result<Dataset> {
    if num_classes == 0 || n < num_classes {
        return Err(DsmError::InvalidArgument(format!(
            "need at least one image per class ({n} images, {num_classes} classes)"
        )));
    }
    if height == 0 || width == 0 || height + width - 2 < num_classes {
        return Err(DsmError::InvalidArgument(format!(
            "{height}x{width} images cannot hold {num_classes} frequency bands"
        )));
    }
    let stream = match split {
        Split::Train => 0,
        Split::Test => 1,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let noise = Normal::new(0.0, NOISE_SIGMA).expect("valid sigma");
    let mut labels: Vec<usize> = (0..n).map(|i| i % num_classes).collect();
    labels.shuffle(&mut rng);
    let mut data = Vec::with_capacity(n * height * width);
    for &label in &labels {
        let img = synth_prototype(&mut rng, label, num_classes, height, width);
        data.extend(img.into_iter().map(|p| (p + noise.sample(&mut rng)).clamp(0.0, 1.0)));
    }
    Dataset::new(
        TokenTensor::new(n, height, width, 1, data)?,
        labels,
        num_classes,
        split,
    )
}
