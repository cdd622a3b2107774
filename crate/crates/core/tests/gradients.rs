mod common;

use common::*;
use dsm_core::model::{
    block_backward, block_forward, BlockParams, MaskMode, ModelConfig, SpectralContext, StageShape,
};
use dsm_core::train::cross_entropy;
use rand::Rng;

const EPS: f64 = FD_EPS;

#[test]
fn dswg_gradients_match_central_differences() {
    for (name, e) in dswg_gradient_errors(6, 6, 8, 16, 21) {
        assert!(e < 1e-4, "{name}: {e:e}");
    }
}

fn block_setup(mode: MaskMode) -> (BlockParams, SpectralContext) {
    let shape = StageShape {
        height: 6,
        width: 6,
        channels: 4,
        depth: 1,
        bands: 8,
    };
    let mut cfg = ModelConfig::tiny();
    cfg.dswg_hidden = 16;
    cfg.mlp_ratio = 2;
    cfg.mask_mode = mode;
    let mut r = rng(31);
    let mut p = BlockParams::init(&shape, &cfg, &mut r).unwrap();
    for t in block_tensors_mut(&mut p) {
        t.iter_mut().for_each(|v| *v += r.gen_range(-0.2..0.2));
    }
    (p, SpectralContext::for_stage(&shape).unwrap())
}

#[test]
fn block_gradients_match_central_differences() {
    for mode in MaskMode::ALL {
        let (p, ctx) = block_setup(mode);
        let x = tokens(2, 6, 6, 4, 32);
        let probe = uniform(x.data.len(), -1.0, 1.0, 33);
        let loss = |x: &dsm_core::model::TokenTensor, p: &BlockParams| {
            dot(&block_forward(x, p, mode, &ctx).unwrap().0.data, &probe)
        };
        let (_, cache) = block_forward(&x, &p, mode, &ctx).unwrap();
        let grad_out = dsm_core::model::TokenTensor::new(2, 6, 6, 4, probe.clone()).unwrap();
        let mut grads = p.zeros_like();
        let gx = block_backward(&cache, &grad_out, &p, &ctx, &mut grads).unwrap();

        let mut xs = x.data.clone();
        let numeric = central_diff(&mut xs, EPS, |v| {
            let t = dsm_core::model::TokenTensor::new(2, 6, 6, 4, v.to_vec()).unwrap();
            loss(&t, &p)
        });
        let e = rel_error(&gx.data, &numeric);
        assert!(e < 1e-4, "{mode} input: {e:e}");

        let analytic: Vec<Vec<f64>> = block_tensors(&grads).into_iter().map(|(_, t)| t.clone()).collect();
        let names: Vec<&str> = block_tensors(&p).into_iter().map(|(n, _)| n).collect();
        for (t, name) in names.iter().enumerate() {
            let mut q = p.clone();
            let mut values = block_tensors(&q)[t].1.clone();
            let numeric = central_diff(&mut values, EPS, |v| {
                *block_tensors_mut(&mut q)[t] = v.to_vec();
                loss(&x, &q)
            });
            if mode != MaskMode::Dynamic && name.starts_with("dswg") {
                assert!(analytic[t].iter().all(|&g| g == 0.0), "{mode} {name}");
                assert!(numeric.iter().all(|&g| g == 0.0), "{mode} {name}");
                continue;
            }
            let e = rel_error(&analytic[t], &numeric);
            assert!(e < 1e-4, "{mode} {name}: {e:e}");
        }
    }
}

#[test]
fn model_gradients_match_central_differences() {
    for mode in MaskMode::ALL {
        let (e, n) = model_gradient_error(mode, 240, 5);
        assert!(n >= 200);
        assert!(e < 1e-3, "{mode}: {e:e}");
    }
}

#[test]
fn cross_entropy_gradient_matches_central_differences() {
    let logits = uniform(24, -3.0, 3.0, 41);
    let labels = [2, 5, 0, 3];
    for smoothing in [0.0, 0.1] {
        let (_, grad) = cross_entropy(&logits, 6, &labels, smoothing).unwrap();
        let mut z = logits.clone();
        let numeric = central_diff(&mut z, EPS, |z| cross_entropy(z, 6, &labels, smoothing).unwrap().0);
        for (a, n) in grad.iter().zip(&numeric) {
            assert!((a - n).abs() < 1e-6, "{a} vs {n}");
        }
    }
}
