use rand::Rng;

use super::config::{ModelConfig, StageShape};
use crate::dswg::DswgParams;
use crate::error::{DsmError, Result};

/// How the optimizer treats a tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    /// Matrix weights: weight decay applies.
    Weight,
    Bias,
    /// LayerNorm scale/shift.
    Norm,
    /// Frozen state saved with the model but never updated.
    Buffer,
}

impl ParamKind {
    pub fn trainable(self) -> bool {
        self != ParamKind::Buffer
    }

    pub fn decays(self) -> bool {
        self == ParamKind::Weight
    }
}

/// Dense layer with `w` stored `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub inputs: usize,
    pub outputs: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Linear {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Linear {
            inputs,
            outputs,
            w: vec![0.0; inputs * outputs],
            b: vec![0.0; outputs],
        }
    }

    pub fn init<R: Rng>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let mut l = Self::zeros(inputs, outputs);
        let a = 1.0 / (inputs as f64).sqrt();
        l.w.iter_mut().for_each(|w| *w = rng.gen_range(-a..a));
        l
    }

    pub fn identity(n: usize) -> Self {
        let mut l = Self::zeros(n, n);
        for i in 0..n {
            l.w[i * n + i] = 1.0;
        }
        l
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNormParams {
    pub scale: Vec<f64>,
    pub shift: Vec<f64>,
}

impl LayerNormParams {
    pub fn new(n: usize) -> Self {
        LayerNormParams {
            scale: vec![1.0; n],
            shift: vec![0.0; n],
        }
    }

    fn zeros(n: usize) -> Self {
        LayerNormParams {
            scale: vec![0.0; n],
            shift: vec![0.0; n],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams {
    pub ln1: LayerNormParams,
    pub dswg: DswgParams,
    /// Frozen mask for [`MaskMode::Random`](super::MaskMode::Random), row-major H x W.
    pub random_mask: Vec<f64>,
    pub ln2: LayerNormParams,
    pub fc1: Linear,
    pub fc2: Linear,
}

impl BlockParams {
    pub fn init<R: Rng>(shape: &StageShape, cfg: &ModelConfig, rng: &mut R) -> Result<Self> {
        let c = shape.channels;
        let hidden = c * cfg.mlp_ratio;
        let mut dswg = DswgParams::init(shape.bands, cfg.dswg_hidden, rng)?;
        dswg.mask_gain = cfg.mask_gain;
        dswg.truncate_to = cfg.truncate_to;
        // 1 - [0, 1) keeps the frozen mask strictly positive
        let random_mask = (0..shape.positions())
            .map(|_| 1.0 - rng.gen::<f64>())
            .collect();
        Ok(BlockParams {
            ln1: LayerNormParams::new(c),
            dswg,
            random_mask,
            ln2: LayerNormParams::new(c),
            fc1: Linear::init(c, hidden, rng),
            fc2: Linear::init(hidden, c, rng),
        })
    }

    pub fn zeros_like(&self) -> Self {
        BlockParams {
            ln1: LayerNormParams::zeros(self.ln1.scale.len()),
            dswg: self.dswg.zeros_like(),
            random_mask: vec![0.0; self.random_mask.len()],
            ln2: LayerNormParams::zeros(self.ln2.scale.len()),
            fc1: Linear::zeros(self.fc1.inputs, self.fc1.outputs),
            fc2: Linear::zeros(self.fc2.inputs, self.fc2.outputs),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageParams {
    /// 2x2 patch merge into this stage; absent for the first stage.
    pub merge: Option<Linear>,
    pub blocks: Vec<BlockParams>,
}

/// Every tensor of a model. The same type doubles as a gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub embed: Linear,
    pub stages: Vec<StageParams>,
    pub norm: LayerNormParams,
    pub head: Linear,
    version: u64,
}

/// Borrowed view of one named tensor.
pub struct ParamRef<'a> {
    pub name: String,
    pub kind: ParamKind,
    pub data: &'a Vec<f64>,
}

pub struct ParamMut<'a> {
    pub name: String,
    pub kind: ParamKind,
    pub data: &'a mut Vec<f64>,
}

macro_rules! visit_params {
    ($self:expr, $f:expr, $($mutability:tt)*) => {{
        let mut f = $f;
        f("embed.w".to_string(), ParamKind::Weight, & $($mutability)* $self.embed.w);
        f("embed.b".to_string(), ParamKind::Bias, & $($mutability)* $self.embed.b);
        for (s, stage) in (& $($mutability)* $self.stages).iter_mut_or_ref() {
            if let Some(merge) = (& $($mutability)* stage.merge).as_opt() {
                f(format!("stage{s}.merge.w"), ParamKind::Weight, & $($mutability)* merge.w);
                f(format!("stage{s}.merge.b"), ParamKind::Bias, & $($mutability)* merge.b);
            }
            for (k, block) in (& $($mutability)* stage.blocks).iter_mut_or_ref() {
                let p = format!("stage{s}.block{k}");
                f(format!("{p}.ln1.scale"), ParamKind::Norm, & $($mutability)* block.ln1.scale);
                f(format!("{p}.ln1.shift"), ParamKind::Norm, & $($mutability)* block.ln1.shift);
                f(format!("{p}.dswg.ln_scale"), ParamKind::Norm, & $($mutability)* block.dswg.ln_scale);
                f(format!("{p}.dswg.ln_shift"), ParamKind::Norm, & $($mutability)* block.dswg.ln_shift);
                f(format!("{p}.dswg.w1"), ParamKind::Weight, & $($mutability)* block.dswg.w1);
                f(format!("{p}.dswg.b1"), ParamKind::Bias, & $($mutability)* block.dswg.b1);
                f(format!("{p}.dswg.w2"), ParamKind::Weight, & $($mutability)* block.dswg.w2);
                f(format!("{p}.dswg.b2"), ParamKind::Bias, & $($mutability)* block.dswg.b2);
                f(format!("{p}.random_mask"), ParamKind::Buffer, & $($mutability)* block.random_mask);
                f(format!("{p}.ln2.scale"), ParamKind::Norm, & $($mutability)* block.ln2.scale);
                f(format!("{p}.ln2.shift"), ParamKind::Norm, & $($mutability)* block.ln2.shift);
                f(format!("{p}.fc1.w"), ParamKind::Weight, & $($mutability)* block.fc1.w);
                f(format!("{p}.fc1.b"), ParamKind::Bias, & $($mutability)* block.fc1.b);
                f(format!("{p}.fc2.w"), ParamKind::Weight, & $($mutability)* block.fc2.w);
                f(format!("{p}.fc2.b"), ParamKind::Bias, & $($mutability)* block.fc2.b);
            }
        }
        f("norm.scale".to_string(), ParamKind::Norm, & $($mutability)* $self.norm.scale);
        f("norm.shift".to_string(), ParamKind::Norm, & $($mutability)* $self.norm.shift);
        f("head.w".to_string(), ParamKind::Weight, & $($mutability)* $self.head.w);
        f("head.b".to_string(), ParamKind::Bias, & $($mutability)* $self.head.b);
    }};
}

// Small adapters so one macro body serves both the shared and mutable walk.
trait IterEither<'a, T: 'a> {
    type Iter: Iterator<Item = (usize, T)>;
    fn iter_mut_or_ref(self) -> Self::Iter;
}

impl<'a, T: 'a> IterEither<'a, &'a T> for &'a Vec<T> {
    type Iter = std::iter::Enumerate<std::slice::Iter<'a, T>>;
    fn iter_mut_or_ref(self) -> Self::Iter {
        self.iter().enumerate()
    }
}

impl<'a, T: 'a> IterEither<'a, &'a mut T> for &'a mut Vec<T> {
    type Iter = std::iter::Enumerate<std::slice::IterMut<'a, T>>;
    fn iter_mut_or_ref(self) -> Self::Iter {
        self.iter_mut().enumerate()
    }
}

trait OptEither<T> {
    fn as_opt(self) -> Option<T>;
}

impl<'a, T> OptEither<&'a T> for &'a Option<T> {
    fn as_opt(self) -> Option<&'a T> {
        self.as_ref()
    }
}

impl<'a, T> OptEither<&'a mut T> for &'a mut Option<T> {
    fn as_opt(self) -> Option<&'a mut T> {
        self.as_mut()
    }
}

impl ModelParams {
    /// Initializes every tensor from `rng` in a fixed order. The random-mode
    /// mask buffers are always drawn, so models that differ only in mask mode
    /// start from identical parameters.
    pub fn init<R: Rng>(cfg: &ModelConfig, rng: &mut R) -> Result<Self> {
        let stages = cfg.stages()?;
        let patch_len = cfg.in_channels * cfg.patch_size * cfg.patch_size;
        let embed = Linear::init(patch_len, stages[0].channels, rng);
        let mut out = Vec::with_capacity(stages.len());
        let mut prev = stages[0].channels;
        for (s, shape) in stages.iter().enumerate() {
            let merge = (s > 0).then(|| Linear::init(4 * prev, shape.channels, rng));
            let blocks = (0..shape.depth)
                .map(|_| BlockParams::init(shape, cfg, rng))
                .collect::<Result<Vec<_>>>()?;
            out.push(StageParams { merge, blocks });
            prev = shape.channels;
        }
        Ok(ModelParams {
            embed,
            stages: out,
            norm: LayerNormParams::new(prev),
            head: Linear::init(prev, cfg.num_classes, rng),
            version: 0,
        })
    }

    pub fn zeros_like(&self) -> Self {
        ModelParams {
            embed: Linear::zeros(self.embed.inputs, self.embed.outputs),
            stages: self
                .stages
                .iter()
                .map(|s| StageParams {
                    merge: s.merge.as_ref().map(|m| Linear::zeros(m.inputs, m.outputs)),
                    blocks: s.blocks.iter().map(BlockParams::zeros_like).collect(),
                })
                .collect(),
            norm: LayerNormParams::zeros(self.norm.scale.len()),
            head: Linear::zeros(self.head.inputs, self.head.outputs),
            version: 0,
        }
    }

    /// Bumped on every mutable access; activation tapes record it.
    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn named(&self) -> Vec<ParamRef<'_>> {
        let mut out = Vec::new();
        visit_params!(
            self,
            |name, kind, data| out.push(ParamRef { name, kind, data }),
        );
        out
    }

    pub fn named_mut(&mut self) -> Vec<ParamMut<'_>> {
        self.version += 1;
        let mut out = Vec::new();
        visit_params!(
            self,
            |name, kind, data| out.push(ParamMut { name, kind, data }),
            mut
        );
        out
    }

    /// Count of trainable scalars.
    pub fn num_trainable(&self) -> usize {
        self.named()
            .iter()
            .filter(|p| p.kind.trainable())
            .map(|p| p.data.len())
            .sum()
    }

    /// Overwrite tensors by name; every tensor must be present with its
    /// current length.
    pub fn load_named(&mut self, tensors: &[(String, Vec<f64>)]) -> Result<()> {
        let mut slots = self.named_mut();
        if slots.len() != tensors.len() {
            return Err(DsmError::Shape(format!(
                "expected {} tensors, got {}",
                slots.len(),
                tensors.len()
            )));
        }
        for (slot, (name, data)) in slots.iter_mut().zip(tensors) {
            if &slot.name != name || slot.data.len() != data.len() {
                return Err(DsmError::Shape(format!(
                    "tensor `{name}` ({}) does not match `{}` ({})",
                    data.len(),
                    slot.name,
                    slot.data.len()
                )));
            }
            slot.data.copy_from_slice(data);
        }
        Ok(())
    }

    /// Elementwise `self += other`, for gradient accumulation.
    pub fn accumulate(&mut self, other: &ModelParams) -> Result<()> {
        let src = other.named();
        let mut dst = self.named_mut();
        if src.len() != dst.len() {
            return Err(DsmError::Shape("gradient structures differ".into()));
        }
        for (d, s) in dst.iter_mut().zip(src) {
            if d.data.len() != s.data.len() {
                return Err(DsmError::Shape(format!("tensor `{}` differs in size", d.name)));
            }
            for (a, b) in d.data.iter_mut().zip(s.data.iter()) {
                *a += b;
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for p in self.named_mut() {
            p.data.iter_mut().for_each(|v| *v *= factor);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn init_is_deterministic_and_mode_independent() {
        let mut cfg = ModelConfig::tiny();
        let a = ModelParams::init(&cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        cfg.mask_mode = super::super::MaskMode::AllPass;
        let b = ModelParams::init(&cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn names_are_unique_and_ordered() {
        let cfg = ModelConfig::tiny();
        let p = ModelParams::init(&cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let names: Vec<String> = p.named().into_iter().map(|r| r.name).collect();
        let mut sorted = names.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), names.len());
        assert_eq!(names.first().map(String::as_str), Some("embed.w"));
        assert_eq!(names.last().map(String::as_str), Some("head.b"));
        assert!(names.contains(&"stage1.merge.w".to_string()));
        assert!(!names.contains(&"stage0.merge.w".to_string()));
    }

    #[test]
    fn random_mask_is_strictly_positive() {
        let cfg = ModelConfig::tiny();
        let p = ModelParams::init(&cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        for stage in &p.stages {
            for block in &stage.blocks {
                assert!(block.random_mask.iter().all(|&v| v > 0.0 && v <= 1.0));
            }
        }
    }

    #[test]
    fn mutable_access_bumps_version() {
        let cfg = ModelConfig::tiny();
        let mut p = ModelParams::init(&cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let v = p.version();
        let _ = p.named_mut();
        assert!(p.version() > v);
    }

    #[test]
    fn load_named_rejects_mismatch() {
        let cfg = ModelConfig::tiny();
        let mut p = ModelParams::init(&cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let mut tensors: Vec<(String, Vec<f64>)> = p
            .named()
            .into_iter()
            .map(|r| (r.name, r.data.clone()))
            .collect();
        tensors[0].1.pop();
        assert!(p.load_named(&tensors).is_err());
    }
}
