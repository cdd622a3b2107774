//! Small dense building blocks with hand-written backward passes.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

pub const LN_EPS: f64 = 1e-5;

/// Exact GELU, `x * Phi(x)`.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * FRAC_1_SQRT_2))
}

pub fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x * FRAC_1_SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * PI).sqrt();
    cdf + x * pdf
}

/// Softmax with max subtraction.
pub fn softmax(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &s) in out.iter_mut().zip(logits) {
        *o = (s - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// Backward through softmax: `ds = p * (dp - <dp, p>)`.
pub fn softmax_backward(probs: &[f64], grad_probs: &[f64], grad_logits: &mut [f64]) {
    let dot: f64 = probs.iter().zip(grad_probs).map(|(p, g)| p * g).sum();
    for ((d, &p), &g) in grad_logits.iter_mut().zip(probs).zip(grad_probs) {
        *d = p * (g - dot);
    }
}

/// Layer normalization over one vector with population variance.
///
/// Writes the standardized input to `normalized` and the affine output to
/// `out`; returns `1 / sqrt(var + eps)`.
pub fn layer_norm(
    x: &[f64],
    scale: &[f64],
    shift: &[f64],
    normalized: &mut [f64],
    out: &mut [f64],
) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let rstd = 1.0 / (var + LN_EPS).sqrt();
    for i in 0..x.len() {
        normalized[i] = (x[i] - mean) * rstd;
        out[i] = normalized[i] * scale[i] + shift[i];
    }
    rstd
}

/// Accumulates scale/shift gradients and overwrites `grad_x`.
pub fn layer_norm_backward(
    normalized: &[f64],
    rstd: f64,
    scale: &[f64],
    grad_out: &[f64],
    grad_x: &mut [f64],
    grad_scale: &mut [f64],
    grad_shift: &mut [f64],
) {
    let n = normalized.len() as f64;
    let mut mean_g = 0.0;
    let mut mean_gx = 0.0;
    for i in 0..normalized.len() {
        grad_scale[i] += grad_out[i] * normalized[i];
        grad_shift[i] += grad_out[i];
        let g = grad_out[i] * scale[i];
        mean_g += g;
        mean_gx += g * normalized[i];
    }
    mean_g /= n;
    mean_gx /= n;
    for i in 0..normalized.len() {
        let g = grad_out[i] * scale[i];
        grad_x[i] = rstd * (g - mean_g - normalized[i] * mean_gx);
    }
}

/// `y[rows x out] = x[rows x in] * w^T + b`, with `w` stored `out x in`.
pub fn linear(x: &[f64], rows: usize, w: &[f64], b: &[f64], y: &mut [f64]) {
    let out = b.len();
    let inp = w.len() / out;
    debug_assert_eq!(x.len(), rows * inp);
    debug_assert_eq!(y.len(), rows * out);
    for row in y.chunks_exact_mut(out) {
        row.copy_from_slice(b);
    }
    if rows == 0 {
        return;
    }
    // SAFETY: slice lengths checked above; strides describe row-major views.
    unsafe {
        matrixmultiply::dgemm(
            rows,
            inp,
            out,
            1.0,
            x.as_ptr(),
            inp as isize,
            1,
            w.as_ptr(),
            1,
            inp as isize,
            1.0,
            y.as_mut_ptr(),
            out as isize,
            1,
        );
    }
}

/// Accumulates `dw += dy^T x`, `db += sum(dy)`; writes `dx = dy w` when given.
pub fn linear_backward(
    x: &[f64],
    rows: usize,
    w: &[f64],
    grad_y: &[f64],
    grad_x: Option<&mut [f64]>,
    grad_w: &mut [f64],
    grad_b: &mut [f64],
) {
    let out = grad_b.len();
    let inp = w.len() / out;
    debug_assert_eq!(grad_y.len(), rows * out);
    if rows == 0 {
        return;
    }
    for row in grad_y.chunks_exact(out) {
        for (gb, g) in grad_b.iter_mut().zip(row) {
            *gb += g;
        }
    }
    // SAFETY: as in `linear`.
    unsafe {
        matrixmultiply::dgemm(
            out,
            rows,
            inp,
            1.0,
            grad_y.as_ptr(),
            1,
            out as isize,
            x.as_ptr(),
            inp as isize,
            1,
            1.0,
            grad_w.as_mut_ptr(),
            inp as isize,
            1,
        );
    }
    if let Some(grad_x) = grad_x {
        debug_assert_eq!(grad_x.len(), rows * inp);
        unsafe {
            matrixmultiply::dgemm(
                rows,
                out,
                inp,
                1.0,
                grad_y.as_ptr(),
                out as isize,
                1,
                w.as_ptr(),
                inp as isize,
                1,
                0.0,
                grad_x.as_mut_ptr(),
                inp as isize,
                1,
            );
        }
    }
}
