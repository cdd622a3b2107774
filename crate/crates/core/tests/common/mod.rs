#![allow(dead_code)]

use dsm_core::dswg::{dswg_backward, generate_mask, DswgParams};
use dsm_core::model::{BlockParams, MaskMode, Model, ModelConfig, TokenTensor};
use dsm_core::spectral::{zigzag_order, Domain, SpectrumGrid};
use dsm_core::train::cross_entropy;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(n: usize, lo: f64, hi: f64, seed: u64) -> Vec<f64> {
    let mut r = rng(seed);
    (0..n).map(|_| r.gen_range(lo..hi)).collect()
}

pub fn tokens(b: usize, h: usize, w: usize, c: usize, seed: u64) -> TokenTensor {
    TokenTensor::new(b, h, w, c, uniform(b * h * w * c, -1.0, 1.0, seed)).unwrap()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Norm-wise relative error `|a - n| / max(|a|, |n|)`, 0 when both vanish.
pub fn rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n) * (a - n))
        .sum::<f64>()
        .sqrt();
    let scale = dot(analytic, analytic).sqrt().max(dot(numeric, numeric).sqrt());
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// Central difference of `f` with respect to every entry of `x`.
pub fn central_diff(x: &mut [f64], eps: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + eps;
            let up = f(x);
            x[i] = orig - eps;
            let down = f(x);
            x[i] = orig;
            (up - down) / (2.0 * eps)
        })
        .collect()
}

pub fn dswg_tensor_names() -> [&'static str; 6] {
    ["ln_scale", "ln_shift", "w1", "b1", "w2", "b2"]
}

/// DSWG parameters with perturbed norms and biases so every path carries
/// signal.
pub fn busy_dswg(l: usize, k: usize, seed: u64) -> DswgParams {
    let mut r = rng(seed);
    let mut p = DswgParams::init(l, k, &mut r).unwrap();
    for t in [&mut p.ln_scale, &mut p.ln_shift, &mut p.b1, &mut p.b2] {
        t.iter_mut().for_each(|v| *v += r.gen_range(-0.5..0.5));
    }
    p
}

pub fn block_tensors(p: &BlockParams) -> Vec<(&'static str, &Vec<f64>)> {
    vec![
        ("ln1.scale", &p.ln1.scale),
        ("ln1.shift", &p.ln1.shift),
        ("dswg.ln_scale", &p.dswg.ln_scale),
        ("dswg.ln_shift", &p.dswg.ln_shift),
        ("dswg.w1", &p.dswg.w1),
        ("dswg.b1", &p.dswg.b1),
        ("dswg.w2", &p.dswg.w2),
        ("dswg.b2", &p.dswg.b2),
        ("ln2.scale", &p.ln2.scale),
        ("ln2.shift", &p.ln2.shift),
        ("fc1.w", &p.fc1.w),
        ("fc1.b", &p.fc1.b),
        ("fc2.w", &p.fc2.w),
        ("fc2.b", &p.fc2.b),
    ]
}

pub fn block_tensors_mut(p: &mut BlockParams) -> Vec<&mut Vec<f64>> {
    vec![
        &mut p.ln1.scale,
        &mut p.ln1.shift,
        &mut p.dswg.ln_scale,
        &mut p.dswg.ln_shift,
        &mut p.dswg.w1,
        &mut p.dswg.b1,
        &mut p.dswg.w2,
        &mut p.dswg.b2,
        &mut p.ln2.scale,
        &mut p.ln2.shift,
        &mut p.fc1.w,
        &mut p.fc1.b,
        &mut p.fc2.w,
        &mut p.fc2.b,
    ]
}

pub const FD_EPS: f64 = 1e-5;

/// Relative errors of the analytic weights-generator gradients (spectrum,
/// then each parameter tensor) against central differences of
/// `<mask, probe>`.
pub fn dswg_gradient_errors(h: usize, w: usize, l: usize, k: usize, seed: u64) -> Vec<(&'static str, f64)> {
    let order = zigzag_order(h, w).unwrap();
    let p = busy_dswg(l, k, seed);
    let spectrum = uniform(h * w, -2.0, 2.0, seed + 1);
    let probe = uniform(h * w, -1.0, 1.0, seed + 2);
    let loss = |s: &[f64], p: &DswgParams| {
        let g = SpectrumGrid::new(h, w, s.to_vec(), Domain::Frequency).unwrap();
        dot(generate_mask(&g, &order, p).unwrap().0.data(), &probe)
    };

    let grid = SpectrumGrid::new(h, w, spectrum.clone(), Domain::Frequency).unwrap();
    let (_, act) = generate_mask(&grid, &order, &p).unwrap();
    let gm = SpectrumGrid::new(h, w, probe.clone(), Domain::Frequency).unwrap();
    let (g_spec, g_params) = dswg_backward(&act, &gm, &p).unwrap();

    let mut out = Vec::new();
    let mut s = spectrum.clone();
    let numeric = central_diff(&mut s, FD_EPS, |s| loss(s, &p));
    out.push(("spectrum", rel_error(g_spec.data(), &numeric)));
    for (t, name) in dswg_tensor_names().iter().enumerate() {
        let mut q = p.clone();
        let mut values = q.tensors()[t].clone();
        let numeric = central_diff(&mut values, FD_EPS, |v| {
            *q.tensors_mut()[t] = v.to_vec();
            loss(&spectrum, &q)
        });
        out.push((*name, rel_error(g_params.tensors()[t], &numeric)));
    }
    out
}

/// Sampled-coordinate check of the whole network through the loss.
pub fn model_gradient_error(mode: MaskMode, coords: usize, seed: u64) -> (f64, usize) {
    let mut cfg = ModelConfig::tiny();
    cfg.mask_mode = mode;
    let model = Model::new(cfg.clone()).unwrap();
    let mut params = model.init_params(seed).unwrap();
    {
        let mut r = rng(seed + 1);
        for p in params.named_mut() {
            p.data.iter_mut().for_each(|v| *v += r.gen_range(-0.1..0.1));
        }
    }
    let images = tokens(3, 16, 16, 1, seed + 2);
    let labels = vec![0, 3, 1];
    let (logits, tape) = model.forward(&params, &images).unwrap();
    let (_, grad) = cross_entropy(&logits, cfg.num_classes, &labels, 0.0).unwrap();
    let grads = model.backward(&params, &tape, &grad).unwrap();

    let named = params.named();
    let mut all: Vec<(usize, usize)> = named
        .iter()
        .enumerate()
        .filter(|(_, p)| p.kind.trainable())
        .flat_map(|(t, p)| (0..p.data.len()).map(move |i| (t, i)))
        .collect();
    drop(named);
    all.shuffle(&mut rng(seed + 3));
    all.truncate(coords);

    let analytic: Vec<f64> = {
        let g = grads.named();
        all.iter().map(|&(t, i)| g[t].data[i]).collect()
    };
    let mut numeric = Vec::with_capacity(all.len());
    for &(t, i) in &all {
        let eval = |delta: f64| {
            let mut q = params.clone();
            q.named_mut()[t].data[i] += delta;
            let logits = model.logits(&q, &images).unwrap();
            cross_entropy(&logits, cfg.num_classes, &labels, 0.0).unwrap().0
        };
        numeric.push((eval(FD_EPS) - eval(-FD_EPS)) / (2.0 * FD_EPS));
    }
    (rel_error(&analytic, &numeric), all.len())
}
