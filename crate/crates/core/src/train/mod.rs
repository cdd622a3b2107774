//! Desk-scale supervised training: data, loss, AdamW, schedule, checkpoints.

mod checkpoint;
mod dataset;
mod loss;
mod optim;
mod schedule;
mod trainer;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint,
    NamedTensor, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use dataset::{
    load_idx_dataset, parse_idx_images, parse_idx_labels, synth_band, synth_dataset,
    synth_prototype, Dataset, Split,
};
pub use loss::{accuracy, argmax, cross_entropy};
pub use optim::{adamw_step, AdamW, OptimizerState};
pub use schedule::{lr_at, LrSchedule};
pub use trainer::{evaluate, load_params, EpochStats, EvalStats, FitOptions, FitOutcome, StepStats, Trainer};

use crate::error::{DsmError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub peak_lr: f64,
    pub final_lr: f64,
    pub warmup_epochs: usize,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    pub label_smoothing: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 64,
            peak_lr: 2e-3,
            final_lr: 1e-6,
            warmup_epochs: 2,
            weight_decay: 0.05,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            label_smoothing: 0.0,
        }
    }
}

impl TrainConfig {
    /// Full-scale ImageNet recipe, kept for reference.
    pub fn imagenet() -> Self {
        TrainConfig {
            epochs: 300,
            batch_size: 1024,
            warmup_epochs: 10,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(DsmError::Config(msg.to_string()));
        if self.epochs == 0 {
            return fail("epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1");
        }
        if !(self.final_lr > 0.0 && self.peak_lr > self.final_lr && self.peak_lr.is_finite()) {
            return fail("learning rates must satisfy peak_lr > final_lr > 0");
        }
        if self.warmup_epochs >= self.epochs {
            return fail("warmup_epochs must be below epochs");
        }
        if !(0.0..1.0).contains(&self.weight_decay) {
            return fail("weight_decay must be in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return fail("betas must be in [0, 1)");
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return fail("eps must be positive");
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return fail("label_smoothing must be in [0, 1)");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        TrainConfig::default().validate().unwrap();
        TrainConfig::imagenet().validate().unwrap();
    }

    #[test]
    fn rejects_inverted_rates_and_long_warmup() {
        let mut c = TrainConfig::default();
        c.final_lr = 1.0;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::default();
        c.warmup_epochs = c.epochs;
        assert!(c.validate().is_err());
    }
}
