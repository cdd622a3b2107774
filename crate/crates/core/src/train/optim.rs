use super::TrainConfig;
use crate::error::{DsmError, Result};
use crate::model::ModelParams;

/// First and second moments for every trainable tensor, in
/// [`ModelParams::named`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub first: Vec<Vec<f64>>,
    pub second: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(params: &ModelParams) -> Self {
        let sizes: Vec<usize> = params
            .named()
            .iter()
            .filter(|p| p.kind.trainable())
            .map(|p| p.data.len())
            .collect();
        OptimizerState {
            step: 0,
            first: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            second: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }
}

/// Hyperparameters of one AdamW update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl From<&TrainConfig> for AdamW {
    fn from(cfg: &TrainConfig) -> Self {
        AdamW {
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            weight_decay: cfg.weight_decay,
        }
    }
}

impl AdamW {
    /// Updates one tensor in place. `step` is the 1-based update count.
    pub fn update(
        &self,
        param: &mut [f64],
        grad: &[f64],
        first: &mut [f64],
        second: &mut [f64],
        step: u64,
        lr: f64,
        decay: bool,
    ) {
        let bc1 = 1.0 - self.beta1.powi(step as i32);
        let bc2 = 1.0 - self.beta2.powi(step as i32);
        let shrink = if decay { 1.0 - lr * self.weight_decay } else { 1.0 };
        let step_size = lr / bc1;
        let bc2_sqrt = bc2.sqrt();
        for i in 0..param.len() {
            let g = grad[i];
            first[i] = self.beta1 * first[i] + (1.0 - self.beta1) * g;
            second[i] = self.beta2 * second[i] + (1.0 - self.beta2) * g * g;
            let denom = second[i].sqrt() / bc2_sqrt + self.eps;
            param[i] = param[i] * shrink - step_size * first[i] / denom;
        }
    }
}

/// One decoupled-weight-decay Adam step over every trainable tensor.
/// Weight decay applies only to matrix weights, not to biases or norms.
pub fn adamw_step(
    params: &mut ModelParams,
    grads: &ModelParams,
    state: &mut OptimizerState,
    cfg: &TrainConfig,
    lr: f64,
) -> Result<()> {
    let opt = AdamW::from(cfg);
    let grad_views = grads.named();
    let mut slots = params.named_mut();
    if grad_views.len() != slots.len() {
        return Err(DsmError::Shape("gradients do not mirror parameters".into()));
    }
    let trainable = slots.iter().filter(|p| p.kind.trainable()).count();
    if trainable != state.first.len() {
        return Err(DsmError::Shape("optimizer state does not mirror parameters".into()));
    }
    for (slot, g) in slots.iter().zip(&grad_views) {
        if slot.data.len() != g.data.len() {
            return Err(DsmError::Shape(format!("gradient for `{}` has wrong size", slot.name)));
        }
    }
    state.step += 1;
    let mut k = 0;
    for (slot, g) in slots.iter_mut().zip(&grad_views) {
        if !slot.kind.trainable() {
            continue;
        }
        if state.first[k].len() != slot.data.len() {
            return Err(DsmError::Shape(format!("moments for `{}` have wrong size", slot.name)));
        }
        opt.update(
            slot.data,
            g.data,
            &mut state.first[k],
            &mut state.second[k],
            state.step,
            lr,
            slot.kind.decays(),
        );
        k += 1;
    }
    Ok(())
}
