//! Run configuration: `key = value` files plus overrides.
//!
//! Every key has a default, so an empty file is a valid configuration.
//! `#` starts a comment. Overrides win over the file. `variant` is applied
//! first because it resets every model key to the preset's values.

use std::collections::HashMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{DsmError, Result};
use crate::model::{MaskMode, ModelConfig, SpectrumLength};
use crate::train::{load_idx_dataset, synth_dataset, Dataset, Split, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    /// Generated frequency-band classification task.
    Synthetic,
    /// IDX files (the MNIST layout) under `idx_dir`.
    Idx,
}

impl DatasetKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DatasetKind::Synthetic => "synthetic",
            DatasetKind::Idx => "idx",
        }
    }
}

/// Every key with a one-line description, in canonical order.
pub const KEYS: &[(&str, &str)] = &[
    ("variant", "model preset: dsm-s-desk, dsm-m-desk or dsm-l-desk"),
    ("image_height", "input height in pixels"),
    ("image_width", "input width in pixels"),
    ("in_channels", "input channels"),
    ("patch_size", "patch embedding stride"),
    ("depths", "blocks per stage, comma separated"),
    ("widths", "channels per stage, comma separated"),
    ("spectrum_length", "pooled spectrum bands l, or `all`"),
    ("dswg_hidden", "hidden width K of the weights generator"),
    ("mask_gain", "scale applied to the expanded band weights"),
    ("truncate_to", "zero zigzag positions from this index on, or `none`"),
    ("mlp_ratio", "channel MLP expansion ratio"),
    ("num_classes", "output classes"),
    ("mask_mode", "dynamic, allpass or random"),
    ("input_mean", "subtracted from every pixel before patch embedding"),
    ("input_std", "pixels are divided by this after centring"),
    ("epochs", "training epochs"),
    ("batch_size", "minibatch size"),
    ("peak_lr", "learning rate after warmup"),
    ("final_lr", "learning rate at the end of the cosine decay"),
    ("warmup_epochs", "linear warmup length in epochs"),
    ("weight_decay", "decoupled weight decay on matrix weights"),
    ("beta1", "AdamW first-moment decay"),
    ("beta2", "AdamW second-moment decay"),
    ("eps", "AdamW denominator epsilon"),
    ("seed", "seed for initialization, shuffling and synthetic data"),
    ("label_smoothing", "target mass spread over all classes"),
    ("dataset", "synthetic or idx"),
    ("train_size", "training images; caps the IDX training file"),
    ("test_size", "test images; caps the IDX test file"),
    ("idx_dir", "directory holding the four MNIST-named IDX files"),
    ("out_dir", "directory for checkpoints, logs and reports"),
    ("checkpoint_every", "epochs between checkpoints; 0 writes only the final one"),
    ("modes", "mask modes compared by `ablate`"),
    ("seeds", "seeds used by `ablate` and `sweep`"),
    ("spectrum_lengths", "l values visited by `sweep`"),
    ("bench_sizes", "square grid sides timed by `bench`"),
    ("bench_repeats", "timed repetitions per size (median reported)"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub dataset: DatasetKind,
    pub train_size: usize,
    pub test_size: usize,
    pub idx_dir: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub checkpoint_every: usize,
    pub modes: Vec<MaskMode>,
    pub seeds: Vec<u64>,
    pub spectrum_lengths: Vec<usize>,
    pub bench_sizes: Vec<usize>,
    pub bench_repeats: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::preset("dsm-s-desk").expect("built-in preset"),
            train: TrainConfig::default(),
            dataset: DatasetKind::Synthetic,
            train_size: 2000,
            test_size: 1000,
            idx_dir: None,
            out_dir: PathBuf::from("runs"),
            checkpoint_every: 1,
            modes: MaskMode::ALL.to_vec(),
            seeds: vec![0, 1, 2],
            spectrum_lengths: vec![4, 8, 16, 32, 64],
            bench_sizes: vec![64, 128, 256],
            bench_repeats: 9,
        }
    }
}

fn parse_value<T: FromStr>(v: &str) -> std::result::Result<T, String>
where
    T::Err: Display,
{
    v.parse::<T>().map_err(|e| format!("cannot parse `{v}`: {e}"))
}

fn parse_list<T: FromStr>(v: &str) -> std::result::Result<Vec<T>, String>
where
    T::Err: Display,
{
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|p| parse_value(p.trim())).collect()
}

fn join<T: Display>(items: &[T]) -> String {
    items.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Applies one key. Errors carry only the cause; callers add the origin.
    fn set(&mut self, key: &str, v: &str) -> std::result::Result<(), String> {
        let m = &mut self.model;
        let t = &mut self.train;
        match key {
            "variant" => {
                let preset = ModelConfig::preset(v).map_err(|e| e.to_string())?;
                *m = ModelConfig {
                    mask_mode: m.mask_mode,
                    ..preset
                };
            }
            "image_height" => m.image_height = parse_value(v)?,
            "image_width" => m.image_width = parse_value(v)?,
            "in_channels" => m.in_channels = parse_value(v)?,
            "patch_size" => m.patch_size = parse_value(v)?,
            "depths" => m.depths = parse_list(v)?,
            "widths" => m.widths = parse_list(v)?,
            "spectrum_length" => m.spectrum_length = v.parse().map_err(|e: DsmError| e.to_string())?,
            "dswg_hidden" => m.dswg_hidden = parse_value(v)?,
            "mask_gain" => m.mask_gain = parse_value(v)?,
            "truncate_to" => {
                m.truncate_to = if v.eq_ignore_ascii_case("none") {
                    None
                } else {
                    Some(parse_value(v)?)
                }
            }
            "mlp_ratio" => m.mlp_ratio = parse_value(v)?,
            "num_classes" => m.num_classes = parse_value(v)?,
            "mask_mode" => m.mask_mode = v.parse().map_err(|e: DsmError| e.to_string())?,
            "input_mean" => m.input_mean = parse_value(v)?,
            "input_std" => m.input_std = parse_value(v)?,
            "epochs" => t.epochs = parse_value(v)?,
            "batch_size" => t.batch_size = parse_value(v)?,
            "peak_lr" => t.peak_lr = parse_value(v)?,
            "final_lr" => t.final_lr = parse_value(v)?,
            "warmup_epochs" => t.warmup_epochs = parse_value(v)?,
            "weight_decay" => t.weight_decay = parse_value(v)?,
            "beta1" => t.beta1 = parse_value(v)?,
            "beta2" => t.beta2 = parse_value(v)?,
            "eps" => t.eps = parse_value(v)?,
            "seed" => t.seed = parse_value(v)?,
            "label_smoothing" => t.label_smoothing = parse_value(v)?,
            "dataset" => {
                self.dataset = match v {
                    "synthetic" => DatasetKind::Synthetic,
                    "idx" | "mnist" => DatasetKind::Idx,
                    other => return Err(format!("unknown dataset `{other}`")),
                }
            }
            "train_size" => self.train_size = parse_value(v)?,
            "test_size" => self.test_size = parse_value(v)?,
            "idx_dir" => {
                self.idx_dir = if v.is_empty() || v.eq_ignore_ascii_case("none") {
                    None
                } else {
                    Some(PathBuf::from(v))
                }
            }
            "out_dir" => self.out_dir = PathBuf::from(v),
            "checkpoint_every" => self.checkpoint_every = parse_value(v)?,
            "modes" => {
                self.modes = v
                    .split(',')
                    .map(|p| p.parse::<MaskMode>().map_err(|e| e.to_string()))
                    .collect::<std::result::Result<_, _>>()?
            }
            "seeds" => self.seeds = parse_list(v)?,
            "spectrum_lengths" => self.spectrum_lengths = parse_list(v)?,
            "bench_sizes" => self.bench_sizes = parse_list(v)?,
            "bench_repeats" => self.bench_repeats = parse_value(v)?,
            other => return Err(format!("unknown key `{other}`")),
        }
        Ok(())
    }

    fn get(&self, key: &str) -> String {
        let m = &self.model;
        let t = &self.train;
        match key {
            "variant" => m.variant.clone(),
            "image_height" => m.image_height.to_string(),
            "image_width" => m.image_width.to_string(),
            "in_channels" => m.in_channels.to_string(),
            "patch_size" => m.patch_size.to_string(),
            "depths" => join(&m.depths),
            "widths" => join(&m.widths),
            "spectrum_length" => m.spectrum_length.to_string(),
            "dswg_hidden" => m.dswg_hidden.to_string(),
            "mask_gain" => m.mask_gain.to_string(),
            "truncate_to" => m.truncate_to.map_or("none".into(), |v| v.to_string()),
            "mlp_ratio" => m.mlp_ratio.to_string(),
            "num_classes" => m.num_classes.to_string(),
            "mask_mode" => m.mask_mode.to_string(),
            "input_mean" => m.input_mean.to_string(),
            "input_std" => m.input_std.to_string(),
            "epochs" => t.epochs.to_string(),
            "batch_size" => t.batch_size.to_string(),
            "peak_lr" => t.peak_lr.to_string(),
            "final_lr" => t.final_lr.to_string(),
            "warmup_epochs" => t.warmup_epochs.to_string(),
            "weight_decay" => t.weight_decay.to_string(),
            "beta1" => t.beta1.to_string(),
            "beta2" => t.beta2.to_string(),
            "eps" => t.eps.to_string(),
            "seed" => t.seed.to_string(),
            "label_smoothing" => t.label_smoothing.to_string(),
            "dataset" => self.dataset.as_str().into(),
            "train_size" => self.train_size.to_string(),
            "test_size" => self.test_size.to_string(),
            "idx_dir" => self
                .idx_dir
                .as_ref()
                .map_or("none".into(), |p| p.display().to_string()),
            "out_dir" => self.out_dir.display().to_string(),
            "checkpoint_every" => self.checkpoint_every.to_string(),
            "modes" => join(&self.modes),
            "seeds" => join(&self.seeds),
            "spectrum_lengths" => join(&self.spectrum_lengths),
            "bench_sizes" => join(&self.bench_sizes),
            "bench_repeats" => self.bench_repeats.to_string(),
            _ => unreachable!("every key in KEYS is handled"),
        }
    }

    /// Canonical listing of every key; parsing it yields `self` again.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (key, _) in KEYS {
            out.push_str(key);
            out.push_str(" = ");
            out.push_str(&self.get(key));
            out.push('\n');
        }
        out
    }

    /// Parses file text, then applies `overrides` (`key=value` strings).
    pub fn parse(text: &str, overrides: &[String]) -> Result<Self> {
        let mut entries: Vec<(String, String, String)> = Vec::new();
        let mut seen: HashMap<String, usize> = HashMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let origin = format!("line {}", n + 1);
            let (key, value) = line.split_once('=').ok_or_else(|| {
                DsmError::Config(format!("{origin}: expected `key = value`, found `{line}`"))
            })?;
            let key = key.trim().to_string();
            if let Some(prev) = seen.insert(key.clone(), n + 1) {
                return Err(DsmError::Config(format!(
                    "{origin}: `{key}` already set on line {prev}"
                )));
            }
            entries.push((key, value.trim().to_string(), origin));
        }
        for o in overrides {
            let (key, value) = o.split_once('=').ok_or_else(|| {
                DsmError::Config(format!("override `{o}`: expected `key=value`"))
            })?;
            entries.push((
                key.trim().to_string(),
                value.trim().to_string(),
                "override".to_string(),
            ));
        }

        let mut cfg = RunConfig::default();
        let mut origins: HashMap<String, String> = HashMap::new();
        let apply = |cfg: &mut RunConfig, (key, value, origin): &(String, String, String)| {
            cfg.set(key, value)
                .map_err(|e| DsmError::Config(format!("{origin}: `{key}`: {e}")))
        };
        // the last `variant` wins and is applied before any other key
        if let Some(v) = entries.iter().rev().find(|e| e.0 == "variant") {
            apply(&mut cfg, v)?;
        }
        for e in entries.iter().filter(|e| e.0 != "variant") {
            apply(&mut cfg, e)?;
        }
        for (key, _, origin) in &entries {
            origins.insert(key.clone(), origin.clone());
        }
        cfg.validate_with(&origins)?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            DsmError::Config(format!("cannot read config `{}`: {e}", path.display()))
        })?;
        Self::parse(&text, overrides)
    }

    /// Training and test sets for this configuration. Synthetic data is
    /// generated from `seed`; IDX files are truncated to the configured sizes
    /// and zero-padded to the model input.
    pub fn datasets(&self) -> Result<(Dataset, Dataset)> {
        let m = &self.model;
        match self.dataset {
            DatasetKind::Synthetic => {
                let make = |n, split| {
                    synth_dataset(self.train.seed, n, m.num_classes, m.image_height, m.image_width, split)
                };
                Ok((make(self.train_size, Split::Train)?, make(self.test_size, Split::Test)?))
            }
            DatasetKind::Idx => {
                let dir = self
                    .idx_dir
                    .as_ref()
                    .ok_or_else(|| DsmError::Config("`idx_dir`: required when dataset = idx".into()))?;
                let load = |stem: &str, split| -> Result<Dataset> {
                    let data = load_idx_dataset(
                        dir.join(format!("{stem}-images-idx3-ubyte")),
                        dir.join(format!("{stem}-labels-idx1-ubyte")),
                        split,
                    )?;
                    if data.num_classes > m.num_classes {
                        return Err(DsmError::Consistency(format!(
                            "{stem} labels need {} classes, model has {}",
                            data.num_classes, m.num_classes
                        )));
                    }
                    let mut data = data.pad_to(m.image_height, m.image_width)?;
                    data.num_classes = m.num_classes;
                    Ok(data)
                };
                Ok((
                    load("train", Split::Train)?.take(self.train_size)?,
                    load("t10k", Split::Test)?.take(self.test_size)?,
                ))
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_with(&HashMap::new())
    }

    fn validate_with(&self, origins: &HashMap<String, String>) -> Result<()> {
        let fail = |key: &str, msg: String| {
            let origin = origins.get(key).map_or("default", String::as_str);
            Err(DsmError::Config(format!("{origin}: `{key}`: {msg}")))
        };
        let m = &self.model;
        let t = &self.train;
        let positive = [
            ("image_height", m.image_height),
            ("image_width", m.image_width),
            ("in_channels", m.in_channels),
            ("patch_size", m.patch_size),
            ("dswg_hidden", m.dswg_hidden),
            ("mlp_ratio", m.mlp_ratio),
            ("epochs", t.epochs),
            ("batch_size", t.batch_size),
            ("train_size", self.train_size),
            ("test_size", self.test_size),
            ("bench_repeats", self.bench_repeats),
        ];
        for (key, v) in positive {
            if v == 0 {
                return fail(key, "must be at least 1".into());
            }
        }
        if m.num_classes < 2 {
            return fail("num_classes", "must be at least 2".into());
        }
        if !m.image_height.is_multiple_of(m.patch_size) || !m.image_width.is_multiple_of(m.patch_size) {
            return fail(
                "patch_size",
                format!(
                    "{} does not divide the {}x{} image",
                    m.patch_size, m.image_height, m.image_width
                ),
            );
        }
        if m.depths.is_empty() || m.depths.contains(&0) {
            return fail("depths", "needs at least one stage, each with depth >= 1".into());
        }
        if m.widths.len() != m.depths.len() {
            return fail("widths", format!("needs {} entries, one per stage", m.depths.len()));
        }
        if m.widths.contains(&0) {
            return fail("widths", "every width must be >= 1".into());
        }
        if !(m.mask_gain.is_finite() && m.mask_gain > 0.0) {
            return fail("mask_gain", "must be a positive finite number".into());
        }
        if !m.input_mean.is_finite() {
            return fail("input_mean", "must be finite".into());
        }
        if !(m.input_std.is_finite() && m.input_std > 0.0) {
            return fail("input_std", "must be positive".into());
        }
        if m.truncate_to == Some(0) {
            return fail("truncate_to", "must be >= 1 or `none`".into());
        }
        let first = (m.image_height / m.patch_size) * (m.image_width / m.patch_size);
        match m.spectrum_length {
            SpectrumLength::Bands(0) => {
                return fail("spectrum_length", "violates l >= 1".into());
            }
            SpectrumLength::Bands(l) if l > first => {
                return fail(
                    "spectrum_length",
                    format!("l = {l} exceeds the {first} spectrum positions (HW) of stage 0"),
                );
            }
            _ => {}
        }
        if let Err(e) = m.stages() {
            return fail("depths", e.to_string());
        }
        if !(t.final_lr > 0.0 && t.final_lr.is_finite()) {
            return fail("final_lr", "violates final_lr > 0".into());
        }
        if !(t.peak_lr > t.final_lr && t.peak_lr.is_finite()) {
            return fail("peak_lr", "violates peak_lr > final_lr".into());
        }
        if t.warmup_epochs >= t.epochs {
            return fail("warmup_epochs", "violates warmup_epochs < epochs".into());
        }
        if !(0.0..1.0).contains(&t.weight_decay) {
            return fail("weight_decay", "must be in [0, 1)".into());
        }
        if !(0.0..1.0).contains(&t.beta1) {
            return fail("beta1", "must be in [0, 1)".into());
        }
        if !(0.0..1.0).contains(&t.beta2) {
            return fail("beta2", "must be in [0, 1)".into());
        }
        if !(t.eps > 0.0 && t.eps.is_finite()) {
            return fail("eps", "must be positive".into());
        }
        if !(0.0..1.0).contains(&t.label_smoothing) {
            return fail("label_smoothing", "must be in [0, 1)".into());
        }
        t.validate()?;
        match self.dataset {
            DatasetKind::Synthetic => {
                if m.in_channels != 1 {
                    return fail("in_channels", "the synthetic dataset is single-channel".into());
                }
                if m.image_height + m.image_width < m.num_classes + 2 {
                    return fail(
                        "num_classes",
                        "too many classes for the synthetic frequency bands".into(),
                    );
                }
                if self.train_size < m.num_classes {
                    return fail("train_size", "needs at least one image per class".into());
                }
                if self.test_size < m.num_classes {
                    return fail("test_size", "needs at least one image per class".into());
                }
            }
            DatasetKind::Idx => {
                if self.idx_dir.is_none() {
                    return fail("idx_dir", "required when dataset = idx".into());
                }
                if m.in_channels != 1 {
                    return fail("in_channels", "IDX images are single-channel".into());
                }
            }
        }
        if self.modes.is_empty() {
            return fail("modes", "needs at least one mode".into());
        }
        if self.seeds.is_empty() {
            return fail("seeds", "needs at least one seed".into());
        }
        if self.spectrum_lengths.is_empty()
            || self.spectrum_lengths.contains(&0)
            || self.spectrum_lengths.windows(2).any(|w| w[1] <= w[0])
        {
            return fail("spectrum_lengths", "must be non-empty, positive and increasing".into());
        }
        if self.bench_sizes.is_empty()
            || self.bench_sizes.contains(&0)
            || self.bench_sizes.windows(2).any(|w| w[1] <= w[0])
        {
            return fail("bench_sizes", "must be non-empty, positive and increasing".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = RunConfig::parse("", &[]).unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.model.variant, "dsm-s-desk");
        assert_eq!(cfg.dataset, DatasetKind::Synthetic);
        assert_eq!(cfg.train.seed, 0);
    }

    #[test]
    fn spectrum_length_is_read() {
        let cfg = RunConfig::parse("spectrum_length = 16\n", &[]).unwrap();
        assert_eq!(cfg.model.spectrum_length, SpectrumLength::Bands(16));
    }

    #[test]
    fn zero_spectrum_length_names_key_line_and_constraint() {
        let e = RunConfig::parse("# header\nspectrum_length = 0\n", &[]).unwrap_err();
        let msg = e.to_string();
        assert!(msg.contains("line 2"), "{msg}");
        assert!(msg.contains("spectrum_length"), "{msg}");
        assert!(msg.contains("l >= 1"), "{msg}");
    }

    #[test]
    fn oversized_spectrum_length_is_rejected() {
        let e = RunConfig::parse("spectrum_length = 65\n", &[]).unwrap_err();
        assert!(e.to_string().contains("exceeds"));
    }

    #[test]
    fn unknown_key_is_rejected_with_line() {
        let e = RunConfig::parse("seed = 1\nlearning_rate = 3\n", &[]).unwrap_err();
        let msg = e.to_string();
        assert!(msg.contains("line 2") && msg.contains("learning_rate"), "{msg}");
    }

    #[test]
    fn type_mismatch_and_syntax_errors() {
        assert!(RunConfig::parse("epochs = many\n", &[]).is_err());
        assert!(RunConfig::parse("epochs 3\n", &[]).is_err());
        assert!(RunConfig::parse("seed = 1\nseed = 2\n", &[]).is_err());
    }

    #[test]
    fn overrides_win_and_variant_applies_first() {
        let text = "widths = 8,16,32,64\nvariant = dsm-l-desk\nseed = 4\n";
        let cfg = RunConfig::parse(text, &["seed=9".into(), "epochs = 5".into()]).unwrap();
        assert_eq!(cfg.model.variant, "dsm-l-desk");
        assert_eq!(cfg.model.widths, vec![8, 16, 32, 64]);
        assert_eq!(cfg.train.seed, 9);
        assert_eq!(cfg.train.epochs, 5);
        let e = RunConfig::parse("", &["bogus=1".into()]).unwrap_err();
        assert!(e.to_string().contains("override"));
    }

    #[test]
    fn comments_and_blank_lines() {
        let cfg = RunConfig::parse("\n  # all comment\nepochs = 7 # trailing\n\n", &[]).unwrap();
        assert_eq!(cfg.train.epochs, 7);
    }

    #[test]
    fn canonical_text_round_trips() {
        let text = "variant = dsm-m-desk\nmask_mode = random\npeak_lr = 0.0031\n\
                    truncate_to = 40\nspectrum_length = all\nseeds = 5,6\nidx_dir = /data/mnist\n";
        let cfg = RunConfig::parse(text, &[]).unwrap();
        let again = RunConfig::parse(&cfg.to_text(), &[]).unwrap();
        assert_eq!(again, cfg);
        assert_eq!(again.to_text(), cfg.to_text());
        assert_eq!(cfg.to_text().lines().count(), KEYS.len());
    }

    #[test]
    fn training_constraints_name_their_key() {
        let e = RunConfig::parse("warmup_epochs = 30\n", &[]).unwrap_err();
        assert!(e.to_string().contains("`warmup_epochs`"), "{e}");
        let e = RunConfig::parse("final_lr = 0.1\n", &[]).unwrap_err();
        assert!(e.to_string().contains("`peak_lr`"), "{e}");
    }

    #[test]
    fn idx_requires_directory() {
        let e = RunConfig::parse("dataset = idx\n", &[]).unwrap_err();
        assert!(e.to_string().contains("idx_dir"));
    }
}
