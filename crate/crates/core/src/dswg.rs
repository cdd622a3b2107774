//! Dynamic spectrum weights generator.
//!
//! For each channel spectrum: zigzag scan, average-pool to `l` bands,
//! LayerNorm, FC (l -> K), GELU, FC (K -> l), softmax, replicate each band
//! weight back over its pooling window and inverse-zigzag into a mask. One
//! parameter set serves every channel of a block.

use rand::Rng;

use crate::error::{check_finite, DsmError, Result};
use crate::nn::{self, gelu, gelu_grad};
use crate::spectral::{zigzag_unflatten, Domain, SpectrumGrid, SpectrumMask, ZigzagOrder};

#[derive(Debug, Clone, PartialEq)]
pub struct DswgParams {
    /// Pooled spectrum length `l`.
    pub bands: usize,
    /// Hidden width `K`.
    pub hidden: usize,
    pub mask_gain: f64,
    /// Zero zigzag positions at or beyond this index before pooling.
    pub truncate_to: Option<usize>,
    pub ln_scale: Vec<f64>,
    pub ln_shift: Vec<f64>,
    /// `K x l`, row-major.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// `l x K`, row-major.
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl DswgParams {
    /// All-zero tensors of the right shapes; also used as a gradient buffer.
    pub fn zeros(bands: usize, hidden: usize) -> Self {
        DswgParams {
            bands,
            hidden,
            mask_gain: 1.0,
            truncate_to: None,
            ln_scale: vec![0.0; bands],
            ln_shift: vec![0.0; bands],
            w1: vec![0.0; hidden * bands],
            b1: vec![0.0; hidden],
            w2: vec![0.0; bands * hidden],
            b2: vec![0.0; bands],
        }
    }

    /// Uniform `+-1/sqrt(fan_in)` weights, zero biases, identity LayerNorm.
    pub fn init<R: Rng>(bands: usize, hidden: usize, rng: &mut R) -> Result<Self> {
        if bands == 0 || hidden == 0 {
            return Err(DsmError::InvalidArgument(
                "spectrum length and hidden width must be positive".into(),
            ));
        }
        let mut p = Self::zeros(bands, hidden);
        p.ln_scale.fill(1.0);
        let a1 = 1.0 / (bands as f64).sqrt();
        p.w1.iter_mut().for_each(|w| *w = rng.gen_range(-a1..a1));
        let a2 = 1.0 / (hidden as f64).sqrt();
        p.w2.iter_mut().for_each(|w| *w = rng.gen_range(-a2..a2));
        Ok(p)
    }

    pub fn zeros_like(&self) -> Self {
        DswgParams {
            mask_gain: self.mask_gain,
            truncate_to: self.truncate_to,
            ..Self::zeros(self.bands, self.hidden)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (l, k) = (self.bands, self.hidden);
        if l == 0 || k == 0 {
            return Err(DsmError::InvalidArgument(
                "spectrum length and hidden width must be positive".into(),
            ));
        }
        let shapes = [
            (self.ln_scale.len(), l),
            (self.ln_shift.len(), l),
            (self.w1.len(), k * l),
            (self.b1.len(), k),
            (self.w2.len(), l * k),
            (self.b2.len(), l),
        ];
        if shapes.iter().any(|(have, want)| have != want) {
            return Err(DsmError::Shape(format!(
                "DSWG tensors do not match l={l}, K={k}"
            )));
        }
        if !(self.mask_gain.is_finite() && self.mask_gain > 0.0) {
            return Err(DsmError::InvalidArgument("mask gain must be positive".into()));
        }
        for t in self.tensors() {
            check_finite(t, "DSWG parameters")?;
        }
        Ok(())
    }

    /// Tensors in a fixed order: ln_scale, ln_shift, w1, b1, w2, b2.
    pub fn tensors(&self) -> [&Vec<f64>; 6] {
        [
            &self.ln_scale,
            &self.ln_shift,
            &self.w1,
            &self.b1,
            &self.w2,
            &self.b2,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Vec<f64>; 6] {
        [
            &mut self.ln_scale,
            &mut self.ln_shift,
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
        ]
    }
}

/// Contiguous average-pooling windows tiling `len` positions into `bands`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BandWindows {
    starts: Vec<usize>,
    band_of: Vec<usize>,
}

impl BandWindows {
    pub fn new(len: usize, bands: usize) -> Result<Self> {
        if bands == 0 {
            return Err(DsmError::InvalidArgument("spectrum length must be >= 1".into()));
        }
        if bands > len {
            return Err(DsmError::InvalidArgument(format!(
                "spectrum length {bands} exceeds {len} spectrum positions"
            )));
        }
        let starts: Vec<usize> = (0..=bands).map(|k| k * len / bands).collect();
        let mut band_of = vec![0; len];
        for k in 0..bands {
            band_of[starts[k]..starts[k + 1]].fill(k);
        }
        Ok(BandWindows { starts, band_of })
    }

    pub fn bands(&self) -> usize {
        self.starts.len() - 1
    }

    pub fn len(&self) -> usize {
        self.band_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.band_of.is_empty()
    }

    pub fn window(&self, band: usize) -> std::ops::Range<usize> {
        self.starts[band]..self.starts[band + 1]
    }

    /// Band index that pools position `i`.
    pub fn band_of(&self, i: usize) -> usize {
        self.band_of[i]
    }

    fn pool(&self, e: &[f64], out: &mut [f64]) {
        for (k, o) in out.iter_mut().enumerate() {
            let w = &e[self.window(k)];
            *o = w.iter().sum::<f64>() / w.len() as f64;
        }
    }
}

/// Adaptive average pooling of a scanned spectrum down to `bands` values.
pub fn pool_spectrum(e: &[f64], bands: usize) -> Result<Vec<f64>> {
    let windows = BandWindows::new(e.len(), bands)?;
    let mut out = vec![0.0; bands];
    windows.pool(e, &mut out);
    Ok(out)
}

/// Intermediate values of one band-attention evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionTrace {
    pub normalized: Vec<f64>,
    pub rstd: f64,
    pub ln_out: Vec<f64>,
    pub hidden_pre: Vec<f64>,
    pub hidden: Vec<f64>,
    pub logits: Vec<f64>,
    /// Multiply-adds spent in the two FC layers, bias adds included.
    pub fc_ops: u64,
    /// Elementwise ops spent normalizing and applying the LayerNorm affine.
    pub norm_ops: u64,
}

/// `s = W2 GELU(W1 LayerNorm(e) + b1) + b2`, returning every intermediate.
pub fn band_attention_traced(pooled: &[f64], p: &DswgParams) -> Result<AttentionTrace> {
    let (l, k) = (p.bands, p.hidden);
    if pooled.len() != l {
        return Err(DsmError::Shape(format!(
            "pooled spectrum has {} entries, parameters expect {l}",
            pooled.len()
        )));
    }
    let mut normalized = vec![0.0; l];
    let mut ln_out = vec![0.0; l];
    let rstd = nn::layer_norm(pooled, &p.ln_scale, &p.ln_shift, &mut normalized, &mut ln_out);
    let mut ops = 0u64;
    let mut hidden_pre = p.b1.clone();
    for (j, h) in hidden_pre.iter_mut().enumerate() {
        let row = &p.w1[j * l..(j + 1) * l];
        for (w, x) in row.iter().zip(&ln_out) {
            *h += w * x;
            ops += 1;
        }
        ops += 1;
    }
    let hidden: Vec<f64> = hidden_pre.iter().map(|&x| gelu(x)).collect();
    let mut logits = p.b2.clone();
    for (i, s) in logits.iter_mut().enumerate() {
        let row = &p.w2[i * k..(i + 1) * k];
        for (w, g) in row.iter().zip(&hidden) {
            *s += w * g;
            ops += 1;
        }
        ops += 1;
    }
    check_finite(&logits, "band attention")?;
    Ok(AttentionTrace {
        normalized,
        rstd,
        ln_out,
        hidden_pre,
        hidden,
        logits,
        fc_ops: ops,
        norm_ops: 4 * l as u64,
    })
}

pub fn band_attention(pooled: &[f64], p: &DswgParams) -> Result<Vec<f64>> {
    Ok(band_attention_traced(pooled, p)?.logits)
}

pub fn normalize_weights(logits: &[f64]) -> Result<Vec<f64>> {
    check_finite(logits, "band logits")?;
    let mut out = vec![0.0; logits.len()];
    nn::softmax(logits, &mut out);
    Ok(out)
}

/// Replicate each band weight over its pooling window, scale by `mask_gain`
/// and inverse-zigzag onto the grid.
pub fn expand_weights(weights: &[f64], order: &ZigzagOrder, mask_gain: f64) -> Result<SpectrumMask> {
    let windows = BandWindows::new(order.len(), weights.len())?;
    let scanned = expand_scanned(weights, &windows, mask_gain);
    zigzag_unflatten(order, &scanned)
}

fn expand_scanned(weights: &[f64], windows: &BandWindows, mask_gain: f64) -> Vec<f64> {
    (0..windows.len())
        .map(|i| mask_gain * weights[windows.band_of(i)])
        .collect()
}

/// Everything the backward pass needs from one mask evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct DswgActivation {
    pub height: usize,
    pub width: usize,
    /// Zigzag-scanned spectrum after optional truncation.
    pub scanned: Vec<f64>,
    pub pooled: Vec<f64>,
    pub trace: AttentionTrace,
    pub weights: Vec<f64>,
    pub mask: SpectrumMask,
}

impl DswgActivation {
    pub fn logits(&self) -> &[f64] {
        &self.trace.logits
    }
}

/// Mask generation against precomputed windows; the model's hot path.
pub(crate) fn generate_mask_with(
    spectrum: &[f64],
    order: &ZigzagOrder,
    windows: &BandWindows,
    p: &DswgParams,
) -> Result<DswgActivation> {
    let mut scanned = vec![0.0; order.len()];
    order.gather(spectrum, &mut scanned);
    if let Some(cut) = p.truncate_to {
        for v in scanned.iter_mut().skip(cut) {
            *v = 0.0;
        }
    }
    let mut pooled = vec![0.0; p.bands];
    windows.pool(&scanned, &mut pooled);
    let trace = band_attention_traced(&pooled, p)?;
    let mut weights = vec![0.0; p.bands];
    nn::softmax(&trace.logits, &mut weights);
    let expanded = expand_scanned(&weights, windows, p.mask_gain);
    let mask = zigzag_unflatten(order, &expanded)?;
    Ok(DswgActivation {
        height: order.height(),
        width: order.width(),
        scanned,
        pooled,
        trace,
        weights,
        mask,
    })
}

pub fn generate_mask(
    spectrum: &SpectrumGrid,
    order: &ZigzagOrder,
    p: &DswgParams,
) -> Result<(SpectrumMask, DswgActivation)> {
    if spectrum.height() != order.height() || spectrum.width() != order.width() {
        return Err(DsmError::Shape(format!(
            "spectrum is {}x{}, zigzag order is {}x{}",
            spectrum.height(),
            spectrum.width(),
            order.height(),
            order.width()
        )));
    }
    p.validate()?;
    check_finite(spectrum.data(), "spectrum")?;
    let windows = BandWindows::new(order.len(), p.bands)?;
    let act = generate_mask_with(spectrum.data(), order, &windows, p)?;
    Ok((act.mask.clone(), act))
}

/// Backward pass into preallocated buffers. `grad_spectrum` is overwritten
/// (row-major); parameter gradients accumulate into `grads`.
pub(crate) fn backward_with(
    act: &DswgActivation,
    grad_mask: &[f64],
    order: &ZigzagOrder,
    windows: &BandWindows,
    p: &DswgParams,
    grads: &mut DswgParams,
    grad_spectrum: &mut [f64],
) {
    let (l, k) = (p.bands, p.hidden);
    let t = &act.trace;

    // transpose of inverse-zigzag + window replication
    let mut grad_weights = vec![0.0; l];
    for (i, &idx) in order.indices().iter().enumerate() {
        grad_weights[windows.band_of(i)] += grad_mask[idx];
    }
    grad_weights.iter_mut().for_each(|g| *g *= p.mask_gain);

    let mut grad_logits = vec![0.0; l];
    nn::softmax_backward(&act.weights, &grad_weights, &mut grad_logits);

    // second FC
    let mut grad_hidden = vec![0.0; k];
    for i in 0..l {
        let g = grad_logits[i];
        grads.b2[i] += g;
        for j in 0..k {
            grads.w2[i * k + j] += g * t.hidden[j];
            grad_hidden[j] += g * p.w2[i * k + j];
        }
    }
    // GELU, first FC
    let mut grad_ln_out = vec![0.0; l];
    for j in 0..k {
        let g = grad_hidden[j] * gelu_grad(t.hidden_pre[j]);
        grads.b1[j] += g;
        for i in 0..l {
            grads.w1[j * l + i] += g * t.ln_out[i];
            grad_ln_out[i] += g * p.w1[j * l + i];
        }
    }
    let mut grad_pooled = vec![0.0; l];
    nn::layer_norm_backward(
        &t.normalized,
        t.rstd,
        &p.ln_scale,
        &grad_ln_out,
        &mut grad_pooled,
        &mut grads.ln_scale,
        &mut grads.ln_shift,
    );

    // pooling transpose, then zigzag transpose
    let cut = p.truncate_to.unwrap_or(usize::MAX);
    for (i, &idx) in order.indices().iter().enumerate() {
        grad_spectrum[idx] = if i < cut {
            let band = windows.band_of(i);
            grad_pooled[band] / windows.window(band).len() as f64
        } else {
            0.0
        };
    }
}

/// Reverse-mode gradients of the mask with respect to the input spectrum and
/// every DSWG parameter.
pub fn dswg_backward(
    act: &DswgActivation,
    grad_mask: &SpectrumMask,
    p: &DswgParams,
) -> Result<(SpectrumGrid, DswgParams)> {
    if act.pooled.len() != p.bands || act.trace.hidden.len() != p.hidden {
        return Err(DsmError::InvalidState(
            "activation was not produced with these parameters".into(),
        ));
    }
    if grad_mask.height() != act.height || grad_mask.width() != act.width {
        return Err(DsmError::Shape("mask gradient does not match activation".into()));
    }
    let order = crate::spectral::zigzag_order(act.height, act.width)?;
    let windows = BandWindows::new(order.len(), p.bands)?;
    let mut grads = p.zeros_like();
    let mut grad_spectrum = vec![0.0; order.len()];
    backward_with(
        act,
        grad_mask.data(),
        &order,
        &windows,
        p,
        &mut grads,
        &mut grad_spectrum,
    );
    let grid = SpectrumGrid::new(act.height, act.width, grad_spectrum, Domain::Frequency)?;
    Ok((grid, grads))
}

/// Activations of one mask evaluation over many spectra at once, each
/// buffer holding `rows` consecutive per-spectrum vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct DswgBatch {
    pub rows: usize,
    pub normalized: Vec<f64>,
    pub rstd: Vec<f64>,
    pub ln_out: Vec<f64>,
    pub hidden_pre: Vec<f64>,
    pub hidden: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Masks for `rows` row-major spectra laid end to end; writes them to
/// `masks` in the same layout.
pub(crate) fn forward_batch(
    spectra: &[f64],
    rows: usize,
    order: &ZigzagOrder,
    windows: &BandWindows,
    p: &DswgParams,
    masks: &mut [f64],
) -> Result<DswgBatch> {
    let (l, k, hw) = (p.bands, p.hidden, order.len());
    debug_assert_eq!(spectra.len(), rows * hw);
    debug_assert_eq!(masks.len(), rows * hw);
    let cut = p.truncate_to.unwrap_or(usize::MAX).min(hw);
    let idx = order.indices();
    let mut pooled = vec![0.0; rows * l];
    for (spec, pool) in spectra.chunks_exact(hw).zip(pooled.chunks_exact_mut(l)) {
        for (band, out) in pool.iter_mut().enumerate() {
            let w = windows.window(band);
            let n = w.len() as f64;
            let mut sum = 0.0;
            for i in w.start..w.end.min(cut) {
                sum += spec[idx[i]];
            }
            *out = sum / n;
        }
    }
    let mut normalized = vec![0.0; rows * l];
    let mut ln_out = vec![0.0; rows * l];
    let rstd = pooled
        .chunks_exact(l)
        .zip(normalized.chunks_exact_mut(l))
        .zip(ln_out.chunks_exact_mut(l))
        .map(|((x, n), o)| nn::layer_norm(x, &p.ln_scale, &p.ln_shift, n, o))
        .collect();
    let mut hidden_pre = vec![0.0; rows * k];
    nn::linear(&ln_out, rows, &p.w1, &p.b1, &mut hidden_pre);
    let hidden: Vec<f64> = hidden_pre.iter().map(|&v| gelu(v)).collect();
    let mut logits = vec![0.0; rows * l];
    nn::linear(&hidden, rows, &p.w2, &p.b2, &mut logits);
    check_finite(&logits, "band attention")?;
    let mut weights = vec![0.0; rows * l];
    for ((s, w), mask) in logits
        .chunks_exact(l)
        .zip(weights.chunks_exact_mut(l))
        .zip(masks.chunks_exact_mut(hw))
    {
        nn::softmax(s, w);
        for (i, &pos) in idx.iter().enumerate() {
            mask[pos] = p.mask_gain * w[windows.band_of(i)];
        }
    }
    Ok(DswgBatch {
        rows,
        normalized,
        rstd,
        ln_out,
        hidden_pre,
        hidden,
        weights,
    })
}

/// Batched counterpart of [`backward_with`]; `grad_spectra` is overwritten.
pub(crate) fn backward_batch(
    act: &DswgBatch,
    grad_masks: &[f64],
    order: &ZigzagOrder,
    windows: &BandWindows,
    p: &DswgParams,
    grads: &mut DswgParams,
    grad_spectra: &mut [f64],
) {
    let (l, k, hw, rows) = (p.bands, p.hidden, order.len(), act.rows);
    let idx = order.indices();
    let mut grad_logits = vec![0.0; rows * l];
    let mut grad_weights = vec![0.0; l];
    for ((gm, w), gl) in grad_masks
        .chunks_exact(hw)
        .zip(act.weights.chunks_exact(l))
        .zip(grad_logits.chunks_exact_mut(l))
    {
        grad_weights.fill(0.0);
        for (i, &pos) in idx.iter().enumerate() {
            grad_weights[windows.band_of(i)] += gm[pos];
        }
        grad_weights.iter_mut().for_each(|g| *g *= p.mask_gain);
        nn::softmax_backward(w, &grad_weights, gl);
    }
    let mut grad_hidden = vec![0.0; rows * k];
    nn::linear_backward(
        &act.hidden,
        rows,
        &p.w2,
        &grad_logits,
        Some(&mut grad_hidden),
        &mut grads.w2,
        &mut grads.b2,
    );
    for (g, &h) in grad_hidden.iter_mut().zip(&act.hidden_pre) {
        *g *= gelu_grad(h);
    }
    let mut grad_ln_out = vec![0.0; rows * l];
    nn::linear_backward(
        &act.ln_out,
        rows,
        &p.w1,
        &grad_hidden,
        Some(&mut grad_ln_out),
        &mut grads.w1,
        &mut grads.b1,
    );
    let cut = p.truncate_to.unwrap_or(usize::MAX);
    let mut grad_pooled = vec![0.0; l];
    for r in 0..rows {
        nn::layer_norm_backward(
            &act.normalized[r * l..(r + 1) * l],
            act.rstd[r],
            &p.ln_scale,
            &grad_ln_out[r * l..(r + 1) * l],
            &mut grad_pooled,
            &mut grads.ln_scale,
            &mut grads.ln_shift,
        );
        let gs = &mut grad_spectra[r * hw..(r + 1) * hw];
        for (i, &pos) in idx.iter().enumerate() {
            gs[pos] = if i < cut {
                let band = windows.band_of(i);
                grad_pooled[band] / windows.window(band).len() as f64
            } else {
                0.0
            };
        }
    }
}

/// FC multiply-adds per channel, bias adds included: `2Kl + K + l`.
pub fn fc_mul_adds(bands: usize, hidden: usize) -> u64 {
    (2 * hidden * bands + hidden + bands) as u64
}

/// Per-channel cost including the `4l` LayerNorm ops.
pub fn dswg_mul_adds(bands: usize, hidden: usize) -> u64 {
    fc_mul_adds(bands, hidden) + 4 * bands as u64
}
