use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::block::{
    block_backward, block_forward, norm_tokens, norm_tokens_backward, BlockCache, NormCache,
    SpectralContext,
};
use super::config::{ModelConfig, StageShape};
use super::params::{Linear, ModelParams};
use super::tensor::TokenTensor;
use crate::error::{check_finite, DsmError, Result};
use crate::nn;

/// Rearranges non-overlapping `patch x patch` windows into rows of
/// `patch * patch * C` values, ordered (row, col, channel) within the patch.
fn patchify(image: &TokenTensor, patch: usize) -> Vec<f64> {
    let (b, h, w, c) = image.dims();
    let (th, tw) = (h / patch, w / patch);
    let mut out = Vec::with_capacity(image.data.len());
    for bi in 0..b {
        for ti in 0..th {
            for tj in 0..tw {
                for pi in 0..patch {
                    let row = image.index(bi, ti * patch + pi, tj * patch, 0);
                    out.extend_from_slice(&image.data[row..row + patch * c]);
                }
            }
        }
    }
    out
}

/// Splits each image into non-overlapping patches and projects them with `embed`.
pub fn patch_embed(image: &TokenTensor, patch: usize, embed: &Linear) -> Result<TokenTensor> {
    patch_embed_inner(image, patch, embed).map(|(t, _)| t)
}

fn patch_embed_inner(
    image: &TokenTensor,
    patch: usize,
    embed: &Linear,
) -> Result<(TokenTensor, Vec<f64>)> {
    if patch == 0 || !image.height.is_multiple_of(patch) || !image.width.is_multiple_of(patch) {
        return Err(DsmError::Shape(format!(
            "{}x{} image is not divisible into {patch}x{patch} patches",
            image.height, image.width
        )));
    }
    if embed.inputs != patch * patch * image.channels {
        return Err(DsmError::Shape(format!(
            "embedding expects {} inputs per patch, patches have {}",
            embed.inputs,
            patch * patch * image.channels
        )));
    }
    let patches = patchify(image, patch);
    let (th, tw) = (image.height / patch, image.width / patch);
    let rows = image.batch * th * tw;
    let mut tokens = TokenTensor::zeros(image.batch, th, tw, embed.outputs);
    nn::linear(&patches, rows, &embed.w, &embed.b, &mut tokens.data);
    Ok((tokens, patches))
}

fn gather_2x2(x: &TokenTensor) -> Vec<f64> {
    let (b, h, w, c) = x.dims();
    let mut out = Vec::with_capacity(x.data.len());
    for bi in 0..b {
        for i in 0..h / 2 {
            for j in 0..w / 2 {
                for (di, dj) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    let at = x.index(bi, 2 * i + di, 2 * j + dj, 0);
                    out.extend_from_slice(&x.data[at..at + c]);
                }
            }
        }
    }
    out
}

fn scatter_2x2(grad: &[f64], into: &mut TokenTensor) {
    let (b, h, w, c) = into.dims();
    let mut k = 0;
    for bi in 0..b {
        for i in 0..h / 2 {
            for j in 0..w / 2 {
                for (di, dj) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    let at = into.index(bi, 2 * i + di, 2 * j + dj, 0);
                    into.data[at..at + c].copy_from_slice(&grad[k..k + c]);
                    k += c;
                }
            }
        }
    }
}

/// Concatenates each 2x2 token neighbourhood (4C values) and projects it,
/// halving the grid.
pub fn patch_merge(x: &TokenTensor, proj: &Linear) -> Result<TokenTensor> {
    patch_merge_inner(x, proj).map(|(t, _)| t)
}

fn patch_merge_inner(x: &TokenTensor, proj: &Linear) -> Result<(TokenTensor, Vec<f64>)> {
    if !x.height.is_multiple_of(2) || !x.width.is_multiple_of(2) {
        return Err(DsmError::Shape(format!(
            "cannot merge an odd {}x{} token grid",
            x.height, x.width
        )));
    }
    if proj.inputs != 4 * x.channels {
        return Err(DsmError::Shape(format!(
            "merge projection expects {} inputs, got {}",
            proj.inputs,
            4 * x.channels
        )));
    }
    let concat = gather_2x2(x);
    let mut out = TokenTensor::zeros(x.batch, x.height / 2, x.width / 2, proj.outputs);
    nn::linear(&concat, out.tokens(), &proj.w, &proj.b, &mut out.data);
    Ok((out, concat))
}

struct StageTape {
    /// Concatenated 2x2 neighbourhoods fed to the merge projection.
    merge_input: Option<Vec<f64>>,
    input_dims: (usize, usize, usize, usize),
    blocks: Vec<BlockCache>,
}

/// Activations from [`Model::forward`], consumed by [`Model::backward`].
pub struct Tape {
    version: u64,
    batch: usize,
    patches: Vec<f64>,
    stages: Vec<StageTape>,
    final_dims: (usize, usize, usize, usize),
    norm: NormCache,
    norm_out: Vec<f64>,
}

impl Tape {
    pub fn batch(&self) -> usize {
        self.batch
    }

    /// Captured block caches, stage by stage.
    pub fn block_caches(&self) -> impl Iterator<Item = &BlockCache> {
        self.stages.iter().flat_map(|s| s.blocks.iter())
    }
}

/// A configured model: stage geometry plus immutable spectral contexts.
/// Parameters live separately in [`ModelParams`].
#[derive(Debug)]
pub struct Model {
    config: ModelConfig,
    stages: Vec<StageShape>,
    contexts: Vec<SpectralContext>,
}

impl Model {
    pub fn new(config: ModelConfig) -> Result<Self> {
        let stages = config.stages()?;
        let contexts = stages
            .iter()
            .map(SpectralContext::for_stage)
            .collect::<Result<Vec<_>>>()?;
        Ok(Model {
            config,
            stages,
            contexts,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn stages(&self) -> &[StageShape] {
        &self.stages
    }

    pub fn context(&self, stage: usize) -> &SpectralContext {
        &self.contexts[stage]
    }

    pub fn init_params(&self, seed: u64) -> Result<ModelParams> {
        ModelParams::init(&self.config, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    fn check_params(&self, params: &ModelParams) -> Result<()> {
        let ok = params.stages.len() == self.stages.len()
            && params
                .stages
                .iter()
                .zip(&self.stages)
                .all(|(p, s)| p.blocks.len() == s.depth)
            && params.head.outputs == self.config.num_classes;
        if ok {
            Ok(())
        } else {
            Err(DsmError::Shape("parameters do not match the model configuration".into()))
        }
    }

    /// Returns row-major `batch x num_classes` logits and the activation tape.
    pub fn forward(&self, params: &ModelParams, images: &TokenTensor) -> Result<(Vec<f64>, Tape)> {
        self.check_params(params)?;
        let cfg = &self.config;
        if images.height != cfg.image_height
            || images.width != cfg.image_width
            || images.channels != cfg.in_channels
        {
            return Err(DsmError::Shape(format!(
                "images are {}x{}x{}, model expects {}x{}x{}",
                images.height,
                images.width,
                images.channels,
                cfg.image_height,
                cfg.image_width,
                cfg.in_channels
            )));
        }
        let standardized;
        let images = if (cfg.input_mean, cfg.input_std) == (0.0, 1.0) {
            images
        } else {
            let mut t = images.clone();
            let inv = 1.0 / cfg.input_std;
            t.data.iter_mut().for_each(|v| *v = (*v - cfg.input_mean) * inv);
            standardized = t;
            &standardized
        };
        let (mut x, patches) = patch_embed_inner(images, cfg.patch_size, &params.embed)?;
        let mut stage_tapes = Vec::with_capacity(self.stages.len());
        for (s, stage) in params.stages.iter().enumerate() {
            let input_dims = x.dims();
            let merge_input = match &stage.merge {
                Some(proj) => {
                    let (merged, concat) = patch_merge_inner(&x, proj)?;
                    x = merged;
                    Some(concat)
                }
                None => None,
            };
            let mut blocks = Vec::with_capacity(stage.blocks.len());
            for block in &stage.blocks {
                let (y, cache) = block_forward(&x, block, cfg.mask_mode, &self.contexts[s])?;
                x = y;
                blocks.push(cache);
            }
            stage_tapes.push(StageTape {
                merge_input,
                input_dims,
                blocks,
            });
        }

        let (b, h, w, c) = x.dims();
        let tokens = (h * w) as f64;
        let mut pooled = vec![0.0; b * c];
        for bi in 0..b {
            let out = &mut pooled[bi * c..(bi + 1) * c];
            for t in 0..h * w {
                let row = &x.data[(bi * h * w + t) * c..(bi * h * w + t + 1) * c];
                for (o, v) in out.iter_mut().zip(row) {
                    *o += v;
                }
            }
            out.iter_mut().for_each(|o| *o /= tokens);
        }
        let mut norm_out = vec![0.0; b * c];
        let norm = norm_tokens(&pooled, c, &params.norm, &mut norm_out);
        let mut logits = vec![0.0; b * cfg.num_classes];
        nn::linear(&norm_out, b, &params.head.w, &params.head.b, &mut logits);
        check_finite(&logits, "logits")?;
        Ok((
            logits,
            Tape {
                version: params.version(),
                batch: b,
                patches,
                stages: stage_tapes,
                final_dims: x.dims(),
                norm,
                norm_out,
            },
        ))
    }

    pub fn logits(&self, params: &ModelParams, images: &TokenTensor) -> Result<Vec<f64>> {
        Ok(self.forward(params, images)?.0)
    }

    /// Gradients of every parameter given `d loss / d logits`.
    pub fn backward(
        &self,
        params: &ModelParams,
        tape: &Tape,
        grad_logits: &[f64],
    ) -> Result<ModelParams> {
        if tape.version != params.version() {
            return Err(DsmError::InvalidState(
                "tape was recorded against different parameter values".into(),
            ));
        }
        let classes = self.config.num_classes;
        if grad_logits.len() != tape.batch * classes {
            return Err(DsmError::Shape(format!(
                "expected {} logit gradients, got {}",
                tape.batch * classes,
                grad_logits.len()
            )));
        }
        let mut grads = params.zeros_like();
        let (b, h, w, c) = tape.final_dims;

        let mut grad_norm_out = vec![0.0; b * c];
        nn::linear_backward(
            &tape.norm_out,
            b,
            &params.head.w,
            grad_logits,
            Some(&mut grad_norm_out),
            &mut grads.head.w,
            &mut grads.head.b,
        );
        let mut grad_pooled = vec![0.0; b * c];
        norm_tokens_backward(
            &tape.norm,
            c,
            &params.norm,
            &grad_norm_out,
            &mut grad_pooled,
            &mut grads.norm,
        );
        let mut grad = TokenTensor::zeros(b, h, w, c);
        let inv = 1.0 / (h * w) as f64;
        for bi in 0..b {
            let src = &grad_pooled[bi * c..(bi + 1) * c];
            for t in 0..h * w {
                let dst = &mut grad.data[(bi * h * w + t) * c..(bi * h * w + t + 1) * c];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d = s * inv;
                }
            }
        }

        for (s, stage_tape) in tape.stages.iter().enumerate().rev() {
            let stage = &params.stages[s];
            let stage_grads = &mut grads.stages[s];
            for (k, cache) in stage_tape.blocks.iter().enumerate().rev() {
                grad = block_backward(
                    cache,
                    &grad,
                    &stage.blocks[k],
                    &self.contexts[s],
                    &mut stage_grads.blocks[k],
                )?;
            }
            if let (Some(proj), Some(concat)) = (&stage.merge, &stage_tape.merge_input) {
                let proj_grads = stage_grads.merge.as_mut().expect("gradient mirrors params");
                let mut grad_concat = vec![0.0; concat.len()];
                nn::linear_backward(
                    concat,
                    grad.tokens(),
                    &proj.w,
                    &grad.data,
                    Some(&mut grad_concat),
                    &mut proj_grads.w,
                    &mut proj_grads.b,
                );
                let (ib, ih, iw, ic) = stage_tape.input_dims;
                let mut prev = TokenTensor::zeros(ib, ih, iw, ic);
                scatter_2x2(&grad_concat, &mut prev);
                grad = prev;
            }
        }

        nn::linear_backward(
            &tape.patches,
            grad.tokens(),
            &params.embed.w,
            &grad.data,
            None,
            &mut grads.embed.w,
            &mut grads.embed.b,
        );
        Ok(grads)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_images(cfg: &ModelConfig, batch: usize, seed: u64) -> TokenTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = batch * cfg.image_height * cfg.image_width * cfg.in_channels;
        TokenTensor::new(
            batch,
            cfg.image_height,
            cfg.image_width,
            cfg.in_channels,
            (0..n).map(|_| rng.gen::<f64>()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn patch_embed_shapes_and_zero_input() {
        let img = TokenTensor::zeros(2, 28, 28, 1);
        let embed = Linear::zeros(16, 8);
        let t = patch_embed(&img, 4, &embed).unwrap();
        assert_eq!(t.dims(), (2, 7, 7, 8));
        assert!(t.data.iter().all(|&v| v == 0.0));
        assert!(patch_embed(&TokenTensor::zeros(1, 30, 28, 1), 4, &embed).is_err());
    }

    #[test]
    fn identity_patch_embed_reorders_pixels() {
        let data: Vec<f64> = (0..4 * 4 * 2).map(|v| v as f64).collect();
        let img = TokenTensor::new(1, 4, 4, 2, data).unwrap();
        let t = patch_embed(&img, 2, &Linear::identity(8)).unwrap();
        assert_eq!(t.dims(), (1, 2, 2, 8));
        for ti in 0..2 {
            for tj in 0..2 {
                for pi in 0..2 {
                    for pj in 0..2 {
                        for c in 0..2 {
                            let k = (pi * 2 + pj) * 2 + c;
                            assert_eq!(t.at(0, ti, tj, k), img.at(0, 2 * ti + pi, 2 * tj + pj, c));
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn patch_merge_contract() {
        let x = TokenTensor::new(1, 8, 8, 3, (0..192).map(|v| v as f64).collect()).unwrap();
        let y = patch_merge(&x, &Linear::zeros(12, 5)).unwrap();
        assert_eq!(y.dims(), (1, 4, 4, 5));

        let y = patch_merge(&x, &Linear::identity(12)).unwrap();
        let mut a = x.data.clone();
        let mut b = y.data.clone();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        assert_eq!(a, b);
        assert_eq!(y.at(0, 1, 2, 3), x.at(0, 2, 5, 0));

        let z = patch_merge(&TokenTensor::zeros(1, 4, 4, 3), &Linear::init(12, 6, &mut ChaCha8Rng::seed_from_u64(0)))
            .unwrap();
        assert!(z.data.iter().all(|&v| v == 0.0));
        assert!(patch_merge(&TokenTensor::zeros(1, 3, 4, 3), &Linear::identity(12)).is_err());
    }

    #[test]
    fn logits_shape_for_small_preset() {
        let cfg = ModelConfig::preset("dsm-s-desk").unwrap();
        let model = Model::new(cfg.clone()).unwrap();
        let params = model.init_params(0).unwrap();
        let logits = model.logits(&params, &random_images(&cfg, 2, 1)).unwrap();
        assert_eq!(logits.len(), 2 * cfg.num_classes);
    }

    #[test]
    fn batch_items_are_independent() {
        let cfg = ModelConfig::tiny();
        let model = Model::new(cfg.clone()).unwrap();
        let params = model.init_params(4).unwrap();
        let images = random_images(&cfg, 3, 2);
        let logits = model.logits(&params, &images).unwrap();
        let permuted = images.select(&[2, 0, 1]).unwrap();
        let plogits = model.logits(&params, &permuted).unwrap();
        let k = cfg.num_classes;
        for (dst, src) in [(0, 2), (1, 0), (2, 1)] {
            assert_eq!(&plogits[dst * k..(dst + 1) * k], &logits[src * k..(src + 1) * k]);
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let cfg = ModelConfig::tiny();
        let model = Model::new(cfg.clone()).unwrap();
        let params = model.init_params(4).unwrap();
        let images = random_images(&cfg, 2, 9);
        let a = model.logits(&params, &images).unwrap();
        let b = model.logits(&params, &images).unwrap();
        assert_eq!(
            a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn zero_logit_gradient_gives_zero_gradients() {
        let cfg = ModelConfig::tiny();
        let model = Model::new(cfg.clone()).unwrap();
        let params = model.init_params(1).unwrap();
        let (logits, tape) = model.forward(&params, &random_images(&cfg, 2, 3)).unwrap();
        let grads = model.backward(&params, &tape, &vec![0.0; logits.len()]).unwrap();
        assert!(grads.named().iter().all(|p| p.data.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn stale_tape_is_rejected() {
        let cfg = ModelConfig::tiny();
        let model = Model::new(cfg.clone()).unwrap();
        let mut params = model.init_params(1).unwrap();
        let (logits, tape) = model.forward(&params, &random_images(&cfg, 1, 3)).unwrap();
        params.named_mut()[0].data[0] += 1.0;
        assert!(matches!(
            model.backward(&params, &tape, &vec![1.0; logits.len()]),
            Err(DsmError::InvalidState(_))
        ));
    }
}
