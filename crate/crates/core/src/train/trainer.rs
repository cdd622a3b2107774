use std::io::Write;
use std::sync::atomic::{AtomicBool, Ordering};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::checkpoint::{Checkpoint, NamedTensor};
use super::dataset::Dataset;
use super::loss::{accuracy, cross_entropy};
use super::optim::{adamw_step, OptimizerState};
use super::schedule::LrSchedule;
use super::TrainConfig;
use crate::error::{DsmError, Result};
use crate::model::{Model, ModelConfig, ModelParams};

/// Stream of the shuffling generator; stream 0 of the same seed initializes
/// the parameters.
const SHUFFLE_STREAM: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    /// Optimizer steps completed, including this one.
    pub step: u64,
    pub lr: f64,
    pub loss: f64,
    /// Batch accuracy in percent.
    pub acc: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalStats {
    pub loss: f64,
    /// Accuracy in percent.
    pub acc: f64,
    pub correct: usize,
    pub total: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    /// 1-based index of the finished epoch.
    pub epoch: u64,
    pub step: u64,
    pub lr: f64,
    /// Mean training batch loss over the epoch.
    pub train_loss: f64,
    pub test: EvalStats,
}

impl EpochStats {
    /// The metrics log line: step, learning rate, mean train loss and test
    /// accuracy in percent.
    pub fn log_line(&self) -> String {
        format!(
            "step={} lr={:e} loss={:.6} acc={:.4}",
            self.step, self.lr, self.train_loss, self.test.acc
        )
    }
}

#[derive(Default)]
pub struct FitOptions<'a> {
    /// Receives one metrics line per finished epoch.
    pub log: Option<&'a mut dyn Write>,
    /// Checked before every step; when set, training stops early.
    pub stop: Option<&'a AtomicBool>,
    /// Stop once this many optimizer steps have completed.
    pub until_step: Option<u64>,
    pub on_epoch: Option<&'a mut dyn FnMut(&Trainer, &EpochStats) -> Result<()>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOutcome {
    pub steps_run: u64,
    pub interrupted: bool,
    pub last_epoch: Option<EpochStats>,
    /// Loss of every step run by this call, in order.
    pub losses: Vec<f64>,
}

/// Mean loss and accuracy over `data`, evaluated in batches.
pub fn evaluate(
    model: &Model,
    params: &ModelParams,
    data: &Dataset,
    batch_size: usize,
) -> Result<EvalStats> {
    if batch_size == 0 {
        return Err(DsmError::InvalidArgument("batch size must be at least 1".into()));
    }
    let classes = model.config().num_classes;
    let mut loss_sum = 0.0;
    let mut correct = 0usize;
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(batch_size) {
        let (images, labels) = data.batch(chunk)?;
        let logits = model.logits(params, &images)?;
        let (loss, _) = cross_entropy(&logits, classes, &labels, 0.0)?;
        loss_sum += loss * chunk.len() as f64;
        correct += (accuracy(&logits, classes, &labels) * chunk.len() as f64).round() as usize;
    }
    let total = data.len();
    Ok(EvalStats {
        loss: loss_sum / total as f64,
        acc: 100.0 * correct as f64 / total as f64,
        correct,
        total,
    })
}

fn words_to_f64(words: &[u32]) -> Vec<f64> {
    words.iter().map(|&w| w as f64).collect()
}

fn f64_to_words(values: &[f64]) -> Result<Vec<u32>> {
    values
        .iter()
        .map(|&v| {
            if v >= 0.0 && v <= u32::MAX as f64 && v.fract() == 0.0 {
                Ok(v as u32)
            } else {
                Err(DsmError::Format("generator state is not a word sequence".into()))
            }
        })
        .collect()
}

/// Generator state as 14 exact integers: seed, stream and word position,
/// split into 32-bit words.
fn rng_state(rng: &ChaCha8Rng) -> Vec<f64> {
    let mut words = Vec::with_capacity(14);
    for c in rng.get_seed().chunks_exact(4) {
        words.push(u32::from_le_bytes(c.try_into().unwrap()));
    }
    let stream = rng.get_stream();
    words.extend([stream as u32, (stream >> 32) as u32]);
    let pos = rng.get_word_pos();
    words.extend((0..4).map(|i| (pos >> (32 * i)) as u32));
    words_to_f64(&words)
}

fn restore_rng(values: &[f64]) -> Result<ChaCha8Rng> {
    let words = f64_to_words(values)?;
    if words.len() != 14 {
        return Err(DsmError::Format("generator state has the wrong length".into()));
    }
    let mut seed = [0u8; 32];
    for (c, w) in seed.chunks_exact_mut(4).zip(&words[..8]) {
        c.copy_from_slice(&w.to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(words[8] as u64 | (words[9] as u64) << 32);
    let pos = (0..4).fold(0u128, |acc, i| acc | (words[10 + i] as u128) << (32 * i));
    rng.set_word_pos(pos);
    Ok(rng)
}

fn scalar(ck: &Checkpoint, name: &str) -> Result<f64> {
    match ck.require(name)?.data.as_slice() {
        [v] => Ok(*v),
        _ => Err(DsmError::Format(format!("`{name}` must hold one value"))),
    }
}

/// Owns the parameters, optimizer state and data order of one run.
pub struct Trainer {
    model: Model,
    cfg: TrainConfig,
    params: ModelParams,
    optimizer: OptimizerState,
    schedule: LrSchedule,
    train_len: usize,
    steps_per_epoch: u64,
    rng: ChaCha8Rng,
    order: Vec<usize>,
    epoch_loss: f64,
    epoch_batches: u64,
}

impl Trainer {
    /// Fresh run: parameters drawn from `cfg.seed`, zero optimizer state.
    pub fn new(model_cfg: ModelConfig, cfg: TrainConfig, train_len: usize) -> Result<Self> {
        cfg.validate()?;
        if train_len == 0 {
            return Err(DsmError::InvalidArgument("training set is empty".into()));
        }
        let model = Model::new(model_cfg)?;
        let params = model.init_params(cfg.seed)?;
        let optimizer = OptimizerState::new(&params);
        let steps_per_epoch = train_len.div_ceil(cfg.batch_size) as u64;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(SHUFFLE_STREAM);
        Ok(Trainer {
            schedule: LrSchedule::new(&cfg, steps_per_epoch),
            model,
            cfg,
            params,
            optimizer,
            train_len,
            steps_per_epoch,
            rng,
            order: (0..train_len).collect(),
            epoch_loss: 0.0,
            epoch_batches: 0,
        })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn optimizer(&self) -> &OptimizerState {
        &self.optimizer
    }

    pub fn schedule(&self) -> &LrSchedule {
        &self.schedule
    }

    pub fn step(&self) -> u64 {
        self.optimizer.step
    }

    pub fn steps_per_epoch(&self) -> u64 {
        self.steps_per_epoch
    }

    pub fn total_steps(&self) -> u64 {
        self.schedule.total_steps
    }

    pub fn finished(&self) -> bool {
        self.step() >= self.total_steps()
    }

    /// One optimizer step on the next batch of the current epoch's order.
    pub fn train_step(&mut self, data: &Dataset) -> Result<StepStats> {
        if data.len() != self.train_len {
            return Err(DsmError::Consistency(format!(
                "trainer expects {} training items, dataset has {}",
                self.train_len,
                data.len()
            )));
        }
        if self.finished() {
            return Err(DsmError::InvalidState("training has already finished".into()));
        }
        let pos = (self.step() % self.steps_per_epoch) as usize;
        if pos == 0 {
            self.order = (0..self.train_len).collect();
            self.order.shuffle(&mut self.rng);
            self.epoch_loss = 0.0;
            self.epoch_batches = 0;
        }
        let b = self.cfg.batch_size;
        let indices = &self.order[pos * b..((pos + 1) * b).min(self.train_len)];
        let (images, labels) = data.batch(indices)?;
        let classes = self.model.config().num_classes;
        let (logits, tape) = self.model.forward(&self.params, &images)?;
        let (loss, grad) = cross_entropy(&logits, classes, &labels, self.cfg.label_smoothing)?;
        let acc = 100.0 * accuracy(&logits, classes, &labels);
        let grads = self.model.backward(&self.params, &tape, &grad)?;
        let lr = self.schedule.at(self.step() + 1);
        adamw_step(&mut self.params, &grads, &mut self.optimizer, &self.cfg, lr)?;
        self.epoch_loss += loss;
        self.epoch_batches += 1;
        Ok(StepStats {
            step: self.step(),
            lr,
            loss,
            acc,
        })
    }

    /// Runs steps until the schedule ends, `until_step` is reached or `stop`
    /// is raised, evaluating on `test` after every epoch.
    pub fn fit(
        &mut self,
        train: &Dataset,
        test: &Dataset,
        mut opts: FitOptions<'_>,
    ) -> Result<FitOutcome> {
        let target = opts
            .until_step
            .map_or(self.total_steps(), |s| s.min(self.total_steps()));
        let mut out = FitOutcome {
            steps_run: 0,
            interrupted: false,
            last_epoch: None,
            losses: Vec::new(),
        };
        while self.step() < target {
            if opts.stop.is_some_and(|s| s.load(Ordering::SeqCst)) {
                out.interrupted = true;
                break;
            }
            let stats = self.train_step(train)?;
            out.steps_run += 1;
            out.losses.push(stats.loss);
            if stats.step % self.steps_per_epoch == 0 {
                let epoch = EpochStats {
                    epoch: stats.step / self.steps_per_epoch,
                    step: stats.step,
                    lr: stats.lr,
                    train_loss: self.epoch_loss / self.epoch_batches as f64,
                    test: evaluate(&self.model, &self.params, test, self.cfg.batch_size)?,
                };
                if let Some(log) = opts.log.as_mut() {
                    writeln!(log, "{}", epoch.log_line())?;
                    log.flush()?;
                }
                if let Some(cb) = opts.on_epoch.as_mut() {
                    cb(self, &epoch)?;
                }
                out.last_epoch = Some(epoch);
            }
        }
        Ok(out)
    }

    pub fn evaluate(&self, data: &Dataset) -> Result<EvalStats> {
        evaluate(&self.model, &self.params, data, self.cfg.batch_size)
    }

    /// Everything needed to continue bit-exactly: parameters, moments, step,
    /// generator state and the current epoch's order.
    pub fn to_checkpoint(&self, config_text: &str) -> Checkpoint {
        let named = self.params.named();
        let mut tensors: Vec<NamedTensor> = named
            .iter()
            .map(|p| NamedTensor::vector(format!("param/{}", p.name), p.data.clone()))
            .collect();
        let trainable: Vec<_> = named.iter().filter(|p| p.kind.trainable()).collect();
        for (prefix, moments) in [("adam.m/", &self.optimizer.first), ("adam.v/", &self.optimizer.second)] {
            for (p, m) in trainable.iter().zip(moments) {
                tensors.push(NamedTensor::vector(format!("{prefix}{}", p.name), m.clone()));
            }
        }
        tensors.push(NamedTensor::vector("train/step", vec![self.step() as f64]));
        tensors.push(NamedTensor::vector("train/rng", rng_state(&self.rng)));
        tensors.push(NamedTensor::vector(
            "train/order",
            self.order.iter().map(|&i| i as f64).collect(),
        ));
        tensors.push(NamedTensor::vector(
            "train/epoch_loss",
            vec![self.epoch_loss, self.epoch_batches as f64],
        ));
        Checkpoint {
            config_text: config_text.to_string(),
            tensors,
        }
    }

    /// Rebuilds a trainer from [`Trainer::to_checkpoint`] output. The
    /// configurations must be the ones the checkpoint was written under.
    pub fn from_checkpoint(
        model_cfg: ModelConfig,
        cfg: TrainConfig,
        train_len: usize,
        ck: &Checkpoint,
    ) -> Result<Self> {
        let mut t = Trainer::new(model_cfg, cfg, train_len)?;
        t.params = load_params(&t.model, ck)?;
        let names: Vec<String> = t
            .params
            .named()
            .iter()
            .filter(|p| p.kind.trainable())
            .map(|p| p.name.clone())
            .collect();
        for (prefix, moments) in [("adam.m/", &mut t.optimizer.first), ("adam.v/", &mut t.optimizer.second)] {
            for (name, m) in names.iter().zip(moments.iter_mut()) {
                let src = &ck.require(&format!("{prefix}{name}"))?.data;
                if src.len() != m.len() {
                    return Err(DsmError::Shape(format!("moment `{prefix}{name}` has wrong size")));
                }
                m.copy_from_slice(src);
            }
        }
        let step = scalar(ck, "train/step")?;
        if !(step >= 0.0 && step.fract() == 0.0) {
            return Err(DsmError::Format("step counter is not a whole number".into()));
        }
        t.optimizer.step = step as u64;
        t.rng = restore_rng(&ck.require("train/rng")?.data)?;
        let order = &ck.require("train/order")?.data;
        let mut seen = vec![false; train_len];
        t.order = Vec::with_capacity(order.len());
        for &v in order {
            let i = v as usize;
            if v.fract() != 0.0 || v < 0.0 || i >= train_len || seen[i] {
                return Err(DsmError::Consistency(
                    "stored data order does not match the training set".into(),
                ));
            }
            seen[i] = true;
            t.order.push(i);
        }
        if t.order.len() != train_len {
            return Err(DsmError::Consistency(
                "stored data order does not match the training set".into(),
            ));
        }
        match ck.require("train/epoch_loss")?.data.as_slice() {
            [sum, n] => {
                t.epoch_loss = *sum;
                t.epoch_batches = *n as u64;
            }
            _ => return Err(DsmError::Format("`train/epoch_loss` must hold two values".into())),
        }
        Ok(t)
    }
}

/// Parameters stored under `param/` in a checkpoint, checked against `model`.
pub fn load_params(model: &Model, ck: &Checkpoint) -> Result<ModelParams> {
    let mut params = model.init_params(0)?;
    params.load_named(&ck.with_prefix("param/"))?;
    Ok(params)
}
