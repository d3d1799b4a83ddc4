use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::{Checkpoint, CheckpointMeta, Progress};
use super::optim::{adam_step, cosine_lr, AdamConfig, AdamState};
use super::TrainError;
use crate::datapipe::{assemble_input, Component, InputConfig, Sample};
use crate::models::Model;
use crate::tensorgrad::{Tape, Tensor};

pub const HUBER_DELTA: f64 = 0.5;
pub const BEST_CHECKPOINT: &str = "best.sfck";
pub const LAST_CHECKPOINT: &str = "last.sfck";
pub const METRICS_FILE: &str = "metrics.csv";
pub const METRICS_HEADER: &str = "epoch,step,lr,train_huber,val_huber,wall_ms";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub component: Component,
    pub inputs: InputConfig,
    pub lr0: f64,
    pub lr_min: f64,
    pub epochs: usize,
    pub delta: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub adam: AdamConfig,
}

impl TrainConfig {
    pub fn new(component: Component) -> Self {
        TrainConfig {
            component,
            inputs: InputConfig::default(),
            lr0: 1e-3,
            lr_min: 0.0,
            epochs: 100,
            delta: HUBER_DELTA,
            batch_size: 4,
            seed: 0,
            adam: AdamConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Invalid(m));
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return bad(format!("lr0 {} must be positive", self.lr0));
        }
        if !(self.lr_min >= 0.0 && self.lr_min <= self.lr0) {
            return bad(format!("lr_min {} must lie in [0, lr0]", self.lr_min));
        }
        if !(self.delta > 0.0) {
            return bad(format!("Huber delta {} must be positive", self.delta));
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1".into());
        }
        Ok(())
    }
}

/// A sample ready for the network: `input [C, D, H, W]`, `target [1, D, H, W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainSample {
    pub input: Tensor<f32>,
    pub target: Tensor<f32>,
    pub v_in: f32,
    pub run_id: String,
}

pub fn prepare(samples: &[Sample], d: Component, inputs: InputConfig) -> Result<Vec<TrainSample>, TrainError> {
    samples
        .iter()
        .map(|s| {
            let (input, target) = assemble_input(s, d, inputs)?;
            Ok(TrainSample { input, target, v_in: s.v_in as f32, run_id: s.run_id.clone() })
        })
        .collect()
}

/// Stacks samples into `[B, C, D, H, W]` input, matching target and `[B]`
/// inflow speeds.
pub fn stack(batch: &[&TrainSample]) -> Result<(Tensor<f32>, Tensor<f32>, Tensor<f32>), TrainError> {
    let first = batch.first().ok_or_else(|| TrainError::Invalid("empty batch".into()))?;
    let mut ishape = vec![batch.len()];
    ishape.extend_from_slice(first.input.shape());
    let mut tshape = vec![batch.len()];
    tshape.extend_from_slice(first.target.shape());
    let mut input = Vec::with_capacity(ishape.iter().product());
    let mut target = Vec::with_capacity(tshape.iter().product());
    for s in batch {
        if s.input.shape() != first.input.shape() || s.target.shape() != first.target.shape() {
            return Err(TrainError::Invalid(format!("{} does not match the batch shape", s.run_id)));
        }
        input.extend_from_slice(s.input.data());
        target.extend_from_slice(s.target.data());
    }
    let v = batch.iter().map(|s| s.v_in).collect();
    Ok((Tensor::new(&ishape, input)?, Tensor::new(&tshape, target)?, Tensor::new(&[batch.len()], v)?))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    /// Zero-based index of this step.
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub epoch_done: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    /// One-based epoch number.
    pub epoch: usize,
    /// Steps taken by the end of the epoch.
    pub step: usize,
    pub lr: f64,
    pub train_huber: f64,
    pub val_huber: Option<f64>,
    pub wall_ms: u128,
}

impl EpochRecord {
    pub fn csv_row(&self) -> String {
        let val = self.val_huber.map_or("nan".to_string(), |v| format!("{v:e}"));
        format!("{},{},{:e},{:e},{},{}", self.epoch, self.step, self.lr, self.train_huber, val, self.wall_ms)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
}

pub struct Trainer {
    model: Model,
    adam: AdamState,
    cfg: TrainConfig,
    progress: Progress,
}

impl Trainer {
    pub fn new(model: Model, cfg: TrainConfig) -> Result<Self, TrainError> {
        cfg.validate()?;
        check_channels(&model, &cfg)?;
        let adam = AdamState::new(model.params().tensors());
        let progress = Progress {
            step: 0,
            epoch: 0,
            order: Vec::new(),
            cursor: 0,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            best_val: None,
            epoch_loss: 0.0,
            epoch_samples: 0,
        };
        Ok(Trainer { model, adam, cfg, progress })
    }

    /// Continues from a checkpoint. `epochs` may extend the original run;
    /// every other setting comes from the checkpoint.
    pub fn resume(ckpt: Checkpoint, epochs: Option<usize>) -> Result<Self, TrainError> {
        let model = ckpt.model()?;
        let mut cfg = ckpt.meta.train;
        if let Some(e) = epochs {
            cfg.epochs = e;
        }
        cfg.validate()?;
        check_channels(&model, &cfg)?;
        Ok(Trainer { model, adam: ckpt.adam, cfg, progress: ckpt.meta.progress })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn into_model(self) -> Model {
        self.model
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn progress(&self) -> &Progress {
        &self.progress
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            meta: CheckpointMeta {
                model: self.model.config().clone(),
                train: self.cfg.clone(),
                progress: self.progress.clone(),
            },
            params: self.model.params().clone(),
            adam: self.adam.clone(),
        }
    }

    pub fn steps_per_epoch(&self, n_train: usize) -> usize {
        n_train.div_ceil(self.cfg.batch_size)
    }

    pub fn total_steps(&self, n_train: usize) -> usize {
        self.cfg.epochs * self.steps_per_epoch(n_train)
    }

    /// Takes the next mini-batch of the current epoch and applies one Adam
    /// update. On a non-finite loss or gradient nothing changes.
    pub fn step(&mut self, train: &[TrainSample]) -> Result<StepRecord, TrainError> {
        if train.is_empty() {
            return Err(TrainError::Invalid("training set is empty".into()));
        }
        let n = train.len();
        if self.progress.order.is_empty() {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut self.progress.rng);
            self.progress.order = order;
            self.progress.cursor = 0;
        } else if self.progress.order.len() != n {
            return Err(TrainError::Invalid(format!(
                "training set has {n} samples, the epoch in progress was drawn for {}",
                self.progress.order.len()
            )));
        }
        let bs = self.cfg.batch_size;
        let lo = self.progress.cursor * bs;
        let hi = (lo + bs).min(n);
        let batch: Vec<&TrainSample> = self.progress.order[lo..hi].iter().map(|&i| &train[i]).collect();
        let lr = cosine_lr(self.progress.step, self.total_steps(n), self.cfg.lr0, self.cfg.lr_min);

        let (x, y, v) = stack(&batch)?;
        let mut tape = Tape::<f32>::new();
        let params = self.model.bind(&mut tape, true);
        let xv = tape.constant(x);
        let yv = tape.constant(y);
        let vv = tape.constant(v);
        let out = self.model.forward(&mut tape, &params, xv, vv)?;
        let loss_var = tape.huber_loss(out.prediction, yv, self.cfg.delta)?;
        let loss = tape.value(loss_var).data()[0] as f64;
        if !loss.is_finite() {
            return Err(TrainError::NonFinite(format!("loss at step {}", self.progress.step)));
        }
        let mut grads = tape.backward(loss_var)?;
        let g: Vec<Tensor<f32>> = params
            .iter()
            .zip(self.model.params().tensors())
            .map(|(&p, t)| grads.take(p).unwrap_or_else(|| Tensor::zeros(t.shape())))
            .collect();
        drop(tape);
        adam_step(self.model.params_mut().tensors_mut(), &g, &mut self.adam, lr, &self.cfg.adam)?;

        let rec_epoch = self.progress.epoch;
        self.progress.step += 1;
        self.progress.cursor += 1;
        self.progress.epoch_loss += loss * batch.len() as f64;
        self.progress.epoch_samples += batch.len();
        let epoch_done = hi == n;
        if epoch_done {
            self.progress.epoch += 1;
            self.progress.order.clear();
            self.progress.cursor = 0;
        }
        Ok(StepRecord { step: self.progress.step - 1, epoch: rec_epoch, lr, loss, epoch_done })
    }

    /// Mean Huber loss over `samples` without updating anything.
    pub fn evaluate_loss(&self, samples: &[TrainSample]) -> Result<f64, TrainError> {
        huber_over(&self.model, samples, self.cfg.batch_size, self.cfg.delta)
    }

    /// Runs the remaining epochs. With `out`, writes the per-epoch metrics
    /// log and the last and best (by validation Huber, or training Huber
    /// without a validation set) checkpoints into that directory.
    pub fn fit(&mut self, train: &[TrainSample], val: &[TrainSample], out: Option<&Path>) -> Result<TrainReport, TrainError> {
        let mut report = TrainReport::default();
        let mut log = match out {
            Some(dir) => Some(MetricsLog::open(dir, self.progress.step == 0)?),
            None => None,
        };
        let mut clock = Instant::now();
        while self.progress.epoch < self.cfg.epochs {
            let rec = match self.step(train) {
                Ok(r) => r,
                Err(TrainError::NonFinite(what)) => {
                    if let Some(dir) = out {
                        self.checkpoint().save(&dir.join(LAST_CHECKPOINT))?;
                    }
                    return Err(TrainError::Diverged { step: self.progress.step, what });
                }
                Err(e) => return Err(e),
            };
            report.steps.push(rec);
            if !rec.epoch_done {
                continue;
            }
            let train_huber = self.progress.epoch_loss / self.progress.epoch_samples as f64;
            self.progress.epoch_loss = 0.0;
            self.progress.epoch_samples = 0;
            let val_huber = if val.is_empty() { None } else { Some(self.evaluate_loss(val)?) };
            let score = val_huber.unwrap_or(train_huber);
            let improved = self.progress.best_val.is_none_or(|b| score < b);
            if improved {
                self.progress.best_val = Some(score);
            }
            let e = EpochRecord {
                epoch: self.progress.epoch,
                step: self.progress.step,
                lr: rec.lr,
                train_huber,
                val_huber,
                wall_ms: clock.elapsed().as_millis(),
            };
            log::info!(
                "epoch {} step {} lr {:.3e} train {:.4e} val {}",
                e.epoch,
                e.step,
                e.lr,
                e.train_huber,
                val_huber.map_or("-".into(), |v| format!("{v:.4e}"))
            );
            if let Some(dir) = out {
                let ck = self.checkpoint();
                if improved {
                    ck.save(&dir.join(BEST_CHECKPOINT))?;
                }
                ck.save(&dir.join(LAST_CHECKPOINT))?;
            }
            if let Some(log) = log.as_mut() {
                log.append(&e)?;
            }
            report.epochs.push(e);
            clock = Instant::now();
        }
        Ok(report)
    }
}

fn check_channels(model: &Model, cfg: &TrainConfig) -> Result<(), TrainError> {
    if model.config().in_channels != cfg.inputs.channels() {
        return Err(TrainError::Invalid(format!(
            "model takes {} data channels, the input configuration provides {}",
            model.config().in_channels,
            cfg.inputs.channels()
        )));
    }
    Ok(())
}

/// Mean Huber loss of `model` over `samples`, in batches.
pub fn huber_over(model: &Model, samples: &[TrainSample], batch_size: usize, delta: f64) -> Result<f64, TrainError> {
    if samples.is_empty() {
        return Err(TrainError::Invalid("no samples to evaluate".into()));
    }
    let mut total = 0.0;
    for chunk in samples.chunks(batch_size.max(1)) {
        let refs: Vec<&TrainSample> = chunk.iter().collect();
        let (x, y, v) = stack(&refs)?;
        let pred = model.predict(&x, v.data())?;
        let mut tape = Tape::<f32>::new();
        let p = tape.constant(pred);
        let t = tape.constant(y);
        let l = tape.huber_loss(p, t, delta)?;
        total += tape.value(l).data()[0] as f64 * chunk.len() as f64;
    }
    Ok(total / samples.len() as f64)
}

struct MetricsLog {
    path: PathBuf,
}

impl MetricsLog {
    fn open(dir: &Path, fresh: bool) -> Result<Self, TrainError> {
        std::fs::create_dir_all(dir).map_err(|e| TrainError::io(dir, e))?;
        let path = dir.join(METRICS_FILE);
        if fresh || !path.exists() {
            std::fs::write(&path, format!("{METRICS_HEADER}\n")).map_err(|e| TrainError::io(&path, e))?;
        }
        Ok(MetricsLog { path })
    }

    fn append(&mut self, e: &EpochRecord) -> Result<(), TrainError> {
        let mut f = OpenOptions::new().append(true).open(&self.path).map_err(|err| TrainError::io(&self.path, err))?;
        writeln!(f, "{}", e.csv_row()).map_err(|err| TrainError::io(&self.path, err))
    }
}
