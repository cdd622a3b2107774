//! The spectral mixing block.
//!
//! `y = x + IDCT(DCT(LN1(x)) * M)` followed by `z = y + FC2(GELU(FC1(LN2(y))))`,
//! with the mask `M` chosen per [`MaskMode`]. Layer norms act over channels.

use super::config::{MaskMode, StageShape};
use super::params::{BlockParams, LayerNormParams};
use super::tensor::TokenTensor;
use crate::dswg::{self, BandWindows, DswgBatch};
use crate::error::{check_finite, DsmError, Result};
use crate::nn;
use crate::spectral::{zigzag_order, DctPlan, ZigzagOrder};

/// Immutable per-stage transform context.
#[derive(Debug)]
pub struct SpectralContext {
    pub plan: DctPlan,
    pub order: ZigzagOrder,
    pub windows: BandWindows,
}

impl SpectralContext {
    pub fn new(height: usize, width: usize, bands: usize) -> Result<Self> {
        let plan = DctPlan::new(height, width)?;
        let order = zigzag_order(height, width)?;
        let windows = BandWindows::new(height * width, bands).map_err(|_| {
            DsmError::Config(format!(
                "spectrum length {bands} exceeds the {} positions of a {height}x{width} grid",
                height * width
            ))
        })?;
        Ok(SpectralContext {
            plan,
            order,
            windows,
        })
    }

    pub fn for_stage(shape: &StageShape) -> Result<Self> {
        Self::new(shape.height, shape.width, shape.bands)
    }

    pub fn positions(&self) -> usize {
        self.plan.len()
    }
}

/// Spectra and masks from one mixing pass.
#[derive(Debug, Clone)]
pub struct MixCache {
    mode: MaskMode,
    channels: usize,
    positions: usize,
    /// `[b][c]` row-major spectra laid end to end; dynamic mode only.
    spectra: Vec<f64>,
    /// Same layout as `spectra`, or a single grid shared by every plane.
    masks: Vec<f64>,
    dswg: Option<DswgBatch>,
}

impl MixCache {
    pub fn mode(&self) -> MaskMode {
        self.mode
    }

    pub fn mask(&self, b: usize, c: usize) -> &[f64] {
        let hw = self.positions;
        if self.masks.len() == hw {
            &self.masks
        } else {
            let i = b * self.channels + c;
            &self.masks[i * hw..(i + 1) * hw]
        }
    }

    /// Input spectrum of one plane, retained in dynamic mode.
    pub fn spectrum(&self, b: usize, c: usize) -> Option<&[f64]> {
        let hw = self.positions;
        let i = b * self.channels + c;
        self.spectra.get(i * hw..(i + 1) * hw)
    }

    pub fn dswg(&self) -> Option<&DswgBatch> {
        self.dswg.as_ref()
    }
}

fn check_spatial(x: &TokenTensor, ctx: &SpectralContext) -> Result<()> {
    if x.height != ctx.plan.height() || x.width != ctx.plan.width() {
        return Err(DsmError::Shape(format!(
            "tokens are {}x{}, spectral context is {}x{}",
            x.height,
            x.width,
            ctx.plan.height(),
            ctx.plan.width()
        )));
    }
    Ok(())
}

/// Forward transforms of every `(b, c)` plane, laid end to end.
fn plane_spectra(x: &TokenTensor, ctx: &SpectralContext) -> Vec<f64> {
    let hw = ctx.positions();
    let mut out = vec![0.0; x.batch * x.channels * hw];
    for b in 0..x.batch {
        for c in 0..x.channels {
            let plane = &mut out[(b * x.channels + c) * hw..][..hw];
            x.read_plane(b, c, plane);
            ctx.plan.forward_in_place(plane);
        }
    }
    out
}

/// Spectral token mixing: per item and channel, `IDCT(DCT(x_c) * M_c)`.
pub fn dsm_mix(
    x: &TokenTensor,
    p: &BlockParams,
    mode: MaskMode,
    ctx: &SpectralContext,
) -> Result<(TokenTensor, MixCache)> {
    check_spatial(x, ctx)?;
    if mode == MaskMode::Dynamic && p.dswg.bands != ctx.windows.bands() {
        return Err(DsmError::Config(format!(
            "block has {} spectrum bands, stage context has {}",
            p.dswg.bands,
            ctx.windows.bands()
        )));
    }
    if p.random_mask.len() != ctx.positions() {
        return Err(DsmError::Shape("random mask does not match the stage grid".into()));
    }
    let hw = ctx.positions();
    let rows = x.batch * x.channels;
    let spectra = plane_spectra(x, ctx);
    let (masks, dswg) = match mode {
        MaskMode::Dynamic => {
            let mut masks = vec![0.0; rows * hw];
            let act = dswg::forward_batch(&spectra, rows, &ctx.order, &ctx.windows, &p.dswg, &mut masks)?;
            (masks, Some(act))
        }
        MaskMode::AllPass => (vec![1.0; hw], None),
        MaskMode::Random => (p.random_mask.clone(), None),
    };
    let cache = MixCache {
        mode,
        channels: x.channels,
        positions: hw,
        spectra,
        masks,
        dswg,
    };
    let out = modulate(x, &cache.spectra, &cache, ctx);
    let cache = if mode == MaskMode::Dynamic {
        cache
    } else {
        MixCache {
            spectra: Vec::new(),
            ..cache
        }
    };
    Ok((out, cache))
}

/// `IDCT(spectrum * mask)` for every plane.
fn modulate(like: &TokenTensor, spectra: &[f64], cache: &MixCache, ctx: &SpectralContext) -> TokenTensor {
    let hw = ctx.positions();
    let mut out = like.zeros_like();
    let mut plane = vec![0.0; hw];
    for b in 0..like.batch {
        for c in 0..like.channels {
            let spec = &spectra[(b * like.channels + c) * hw..][..hw];
            for ((v, s), m) in plane.iter_mut().zip(spec).zip(cache.mask(b, c)) {
                *v = s * m;
            }
            ctx.plan.inverse_in_place(&mut plane);
            out.write_plane(b, c, &plane);
        }
    }
    out
}

/// Replays previously captured masks as constants.
pub fn apply_masks(x: &TokenTensor, masks: &MixCache, ctx: &SpectralContext) -> Result<TokenTensor> {
    check_spatial(x, ctx)?;
    let shared = masks.masks.len() == ctx.positions();
    if masks.positions != ctx.positions()
        || (!shared && masks.masks.len() != x.batch * x.channels * ctx.positions())
        || masks.channels != x.channels
    {
        return Err(DsmError::Shape("captured masks do not match tensor".into()));
    }
    let spectra = plane_spectra(x, ctx);
    Ok(modulate(x, &spectra, masks, ctx))
}

/// Backward through [`dsm_mix`]. Returns the input gradient; DSWG parameter
/// gradients accumulate into `grads` (dynamic mode only).
pub fn dsm_mix_backward(
    cache: &MixCache,
    grad_out: &TokenTensor,
    p: &BlockParams,
    ctx: &SpectralContext,
    grads: &mut BlockParams,
) -> Result<TokenTensor> {
    check_spatial(grad_out, ctx)?;
    if cache.channels != grad_out.channels || cache.positions != ctx.positions() {
        return Err(DsmError::Shape("gradient does not match the mixing cache".into()));
    }
    let hw = ctx.positions();
    let rows = grad_out.batch * grad_out.channels;
    // adjoint of the inverse transform is the forward transform
    let g = plane_spectra(grad_out, ctx);
    let mut grad_spec = vec![0.0; rows * hw];
    for b in 0..grad_out.batch {
        for c in 0..grad_out.channels {
            let i = (b * grad_out.channels + c) * hw;
            for ((d, gv), m) in grad_spec[i..i + hw].iter_mut().zip(&g[i..i + hw]).zip(cache.mask(b, c)) {
                *d = gv * m;
            }
        }
    }
    if let Some(act) = &cache.dswg {
        if act.rows != rows {
            return Err(DsmError::Shape("gradient does not match the mixing cache".into()));
        }
        let grad_mask: Vec<f64> = g.iter().zip(&cache.spectra).map(|(a, s)| a * s).collect();
        let mut extra = vec![0.0; rows * hw];
        dswg::backward_batch(act, &grad_mask, &ctx.order, &ctx.windows, &p.dswg, &mut grads.dswg, &mut extra);
        for (d, e) in grad_spec.iter_mut().zip(&extra) {
            *d += e;
        }
    }
    let mut grad_in = grad_out.zeros_like();
    for b in 0..grad_out.batch {
        for c in 0..grad_out.channels {
            let plane = &mut grad_spec[(b * grad_out.channels + c) * hw..][..hw];
            ctx.plan.inverse_in_place(plane);
            grad_in.write_plane(b, c, plane);
        }
    }
    Ok(grad_in)
}

/// Per-token LayerNorm over channels.
pub(crate) struct NormCache {
    normalized: Vec<f64>,
    rstd: Vec<f64>,
}

pub(crate) fn norm_tokens(
    x: &[f64],
    channels: usize,
    p: &LayerNormParams,
    out: &mut [f64],
) -> NormCache {
    let tokens = x.len() / channels;
    let mut normalized = vec![0.0; x.len()];
    let mut rstd = Vec::with_capacity(tokens);
    for ((xi, ni), oi) in x
        .chunks_exact(channels)
        .zip(normalized.chunks_exact_mut(channels))
        .zip(out.chunks_exact_mut(channels))
    {
        rstd.push(nn::layer_norm(xi, &p.scale, &p.shift, ni, oi));
    }
    NormCache { normalized, rstd }
}

/// Adds the input gradient into `grad_x`.
pub(crate) fn norm_tokens_backward(
    cache: &NormCache,
    channels: usize,
    p: &LayerNormParams,
    grad_out: &[f64],
    grad_x: &mut [f64],
    grads: &mut LayerNormParams,
) {
    let mut tmp = vec![0.0; channels];
    for (t, (go, gx)) in grad_out
        .chunks_exact(channels)
        .zip(grad_x.chunks_exact_mut(channels))
        .enumerate()
    {
        nn::layer_norm_backward(
            &cache.normalized[t * channels..(t + 1) * channels],
            cache.rstd[t],
            &p.scale,
            go,
            &mut tmp,
            &mut grads.scale,
            &mut grads.shift,
        );
        for (a, b) in gx.iter_mut().zip(&tmp) {
            *a += b;
        }
    }
}

/// Activations retained by [`block_forward`].
pub struct BlockCache {
    ln1: NormCache,
    mix: MixCache,
    ln2: NormCache,
    ln2_out: Vec<f64>,
    hidden_pre: Vec<f64>,
    hidden: Vec<f64>,
}

impl BlockCache {
    pub fn mix(&self) -> &MixCache {
        &self.mix
    }
}

pub fn block_forward(
    x: &TokenTensor,
    p: &BlockParams,
    mode: MaskMode,
    ctx: &SpectralContext,
) -> Result<(TokenTensor, BlockCache)> {
    let c = x.channels;
    if p.ln1.scale.len() != c || p.fc1.inputs != c || p.fc2.outputs != c {
        return Err(DsmError::Shape(format!(
            "block parameters do not match {c} channels"
        )));
    }
    let n = x.tokens();
    let mut normed = x.zeros_like();
    let ln1 = norm_tokens(&x.data, c, &p.ln1, &mut normed.data);
    let (mixed, mix) = dsm_mix(&normed, p, mode, ctx)?;
    let mut y = x.clone();
    for (a, m) in y.data.iter_mut().zip(&mixed.data) {
        *a += m;
    }

    let mut ln2_out = vec![0.0; n * c];
    let ln2 = norm_tokens(&y.data, c, &p.ln2, &mut ln2_out);
    let rc = p.fc1.outputs;
    let mut hidden_pre = vec![0.0; n * rc];
    nn::linear(&ln2_out, n, &p.fc1.w, &p.fc1.b, &mut hidden_pre);
    let hidden: Vec<f64> = hidden_pre.iter().map(|&v| nn::gelu(v)).collect();
    let mut mlp = vec![0.0; n * c];
    nn::linear(&hidden, n, &p.fc2.w, &p.fc2.b, &mut mlp);
    for (a, m) in y.data.iter_mut().zip(&mlp) {
        *a += m;
    }
    check_finite(&y.data, "block output")?;
    Ok((
        y,
        BlockCache {
            ln1,
            mix,
            ln2,
            ln2_out,
            hidden_pre,
            hidden,
        },
    ))
}

/// Returns the input gradient; parameter gradients accumulate into `grads`.
pub fn block_backward(
    cache: &BlockCache,
    grad_out: &TokenTensor,
    p: &BlockParams,
    ctx: &SpectralContext,
    grads: &mut BlockParams,
) -> Result<TokenTensor> {
    let c = grad_out.channels;
    let n = grad_out.tokens();
    let rc = p.fc1.outputs;

    let mut grad_hidden = vec![0.0; n * rc];
    nn::linear_backward(
        &cache.hidden,
        n,
        &p.fc2.w,
        &grad_out.data,
        Some(&mut grad_hidden),
        &mut grads.fc2.w,
        &mut grads.fc2.b,
    );
    for (g, &h) in grad_hidden.iter_mut().zip(&cache.hidden_pre) {
        *g *= nn::gelu_grad(h);
    }
    let mut grad_ln2 = vec![0.0; n * c];
    nn::linear_backward(
        &cache.ln2_out,
        n,
        &p.fc1.w,
        &grad_hidden,
        Some(&mut grad_ln2),
        &mut grads.fc1.w,
        &mut grads.fc1.b,
    );
    // dy = dz + LN2 backward
    let mut grad_y = grad_out.clone();
    norm_tokens_backward(&cache.ln2, c, &p.ln2, &grad_ln2, &mut grad_y.data, &mut grads.ln2);

    let grad_normed = dsm_mix_backward(&cache.mix, &grad_y, p, ctx, grads)?;
    let mut grad_x = grad_y;
    norm_tokens_backward(
        &cache.ln1,
        c,
        &p.ln1,
        &grad_normed.data,
        &mut grad_x.data,
        &mut grads.ln1,
    );
    Ok(grad_x)
}
