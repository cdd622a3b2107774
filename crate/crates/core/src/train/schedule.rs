use std::f64::consts::PI;

use super::TrainConfig;

/// Linear warmup from 0 to `peak`, then cosine decay to `floor`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub peak: f64,
    pub floor: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
}

impl LrSchedule {
    pub fn new(cfg: &TrainConfig, steps_per_epoch: u64) -> Self {
        LrSchedule {
            peak: cfg.peak_lr,
            floor: cfg.final_lr,
            warmup_steps: cfg.warmup_epochs as u64 * steps_per_epoch,
            total_steps: cfg.epochs as u64 * steps_per_epoch,
        }
    }

    /// Learning rate at `step` in `[0, total_steps]`; clamps beyond the end.
    pub fn at(&self, step: u64) -> f64 {
        let step = step.min(self.total_steps);
        if step < self.warmup_steps {
            return self.peak * step as f64 / self.warmup_steps as f64;
        }
        let span = self.total_steps.saturating_sub(self.warmup_steps);
        if span == 0 {
            return self.peak;
        }
        let t = (step - self.warmup_steps) as f64 / span as f64;
        self.floor + 0.5 * (self.peak - self.floor) * (1.0 + (PI * t).cos())
    }
}

pub fn lr_at(step: u64, total_steps: u64, warmup_steps: u64, cfg: &TrainConfig) -> f64 {
    LrSchedule {
        peak: cfg.peak_lr,
        floor: cfg.final_lr,
        warmup_steps,
        total_steps,
    }
    .at(step)
}
