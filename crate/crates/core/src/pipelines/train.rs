//! Minibatch training with optional early stopping.

use std::fmt::Write as _;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::metrics::fmt6;
use crate::nn::{loss_eval, LossKind, Mode, ModelGraph, Optimizer};
use crate::rng::SeedStream;
use crate::tensor::Tensor;

pub const DEFAULT_PATIENCE: usize = 5;

/// What the network is asked to output.
#[derive(Debug, Clone)]
pub enum Targets {
    /// Autoencoder: the target is the input itself.
    Reconstruct,
    /// One target tensor row per input sample.
    Given(Tensor<f32>),
}

#[derive(Debug, Clone)]
pub struct TrainData {
    pub inputs: Tensor<f32>,
    pub targets: Targets,
}

impl TrainData {
    pub fn autoencoder(inputs: Tensor<f32>) -> Self {
        Self {
            inputs,
            targets: Targets::Reconstruct,
        }
    }

    pub fn supervised(inputs: Tensor<f32>, targets: Tensor<f32>) -> Result<Self> {
        if targets.batch() != inputs.batch() {
            return Err(Error::shape("train", "target count", inputs.batch(), targets.batch()));
        }
        Ok(Self {
            inputs,
            targets: Targets::Given(targets),
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.batch()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn batch(&self, idx: &[usize]) -> (Tensor<f32>, Option<Tensor<f32>>) {
        let x = gather(&self.inputs, idx);
        let t = match &self.targets {
            Targets::Reconstruct => None,
            Targets::Given(t) => Some(gather(t, idx)),
        };
        (x, t)
    }
}

/// Copies the listed samples into a new batch, in the listed order.
pub fn gather(t: &Tensor<f32>, idx: &[usize]) -> Tensor<f32> {
    let [_, c, h, w] = t.shape();
    let mut data = Vec::with_capacity(idx.len() * t.sample_len());
    for &i in idx {
        data.extend_from_slice(t.sample(i));
    }
    Tensor::from_vec([idx.len(), c, h, w], data).expect("gathered extents")
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub loss: LossKind,
    /// `None` disables early stopping.
    pub patience: Option<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 16,
            learning_rate: crate::nn::optim::RMSPROP_DEFAULT_LR,
            loss: LossKind::Mse,
            patience: Some(DEFAULT_PATIENCE),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ModelGraph,
    pub history: Vec<EpochRecord>,
    /// 1-based epoch of the returned snapshot (0 when no epoch ran).
    pub best_epoch: usize,
    /// Epoch after which patience ran out, if it did.
    pub stopped_after: Option<usize>,
}

impl TrainOutcome {
    pub fn history_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss\n");
        for r in &self.history {
            let val = r.val_loss.map(fmt6).unwrap_or_default();
            let _ = writeln!(out, "{},{},{val}", r.epoch, fmt6(r.train_loss));
        }
        if let Some(e) = self.stopped_after {
            let _ = writeln!(out, "# early stop after epoch {e}, best epoch {}", self.best_epoch);
        }
        out
    }
}

/// Patience bookkeeping: an epoch improves only if its loss is strictly
/// below the best so far.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    stale: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopSignal {
    Improved,
    Continue,
    Stop,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            stale: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, loss: f64) -> StopSignal {
        if loss < self.best {
            self.best = loss;
            self.best_epoch = epoch;
            self.stale = 0;
            return StopSignal::Improved;
        }
        self.stale += 1;
        if self.stale >= self.patience {
            StopSignal::Stop
        } else {
            StopSignal::Continue
        }
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best_loss(&self) -> f64 {
        self.best
    }
}

const EVAL_CHUNK: usize = 32;

/// Mean loss over a whole set in eval mode.
pub fn evaluate_loss(model: &ModelGraph, data: &TrainData, loss: LossKind) -> Result<f64> {
    let mut total = 0.0;
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(EVAL_CHUNK) {
        let (x, t) = data.batch(chunk);
        let y = model.predict(&x)?;
        let (l, _) = loss_eval(&y, t.as_ref().unwrap_or(&x), loss)?;
        total += l * chunk.len() as f64;
    }
    Ok(total / data.len().max(1) as f64)
}

/// Trains with RMSprop. With early stopping the monitored loss is the
/// validation loss (training loss when no validation set is given) and the
/// best snapshot is returned.
pub fn train(model: ModelGraph, train_set: &TrainData, val_set: Option<&TrainData>, config: &TrainConfig) -> Result<TrainOutcome> {
    train_with(model, train_set, val_set, config, Optimizer::rmsprop(config.learning_rate)?)
}

pub fn train_with(
    mut model: ModelGraph,
    train_set: &TrainData,
    val_set: Option<&TrainData>,
    config: &TrainConfig,
    mut optimizer: Optimizer,
) -> Result<TrainOutcome> {
    if train_set.is_empty() {
        return Err(Error::Data("empty training set".into()));
    }
    if config.batch_size == 0 {
        return Err(Error::invalid("train", "batch size must be positive"));
    }
    let stream = SeedStream::new(config.seed).child("train");
    let mut history = Vec::with_capacity(config.epochs);
    let mut stopper = config.patience.map(EarlyStopping::new);
    let mut best: Option<ModelGraph> = None;
    let mut stopped_after = None;
    for epoch in 1..=config.epochs {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut stream.indexed("epoch", epoch as u64).rng("shuffle"));
        let mut total = 0.0;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let (x, t) = train_set.batch(chunk);
            let cache = model.forward(&x, Mode::Train)?;
            let (l, grad) = loss_eval(cache.output(), t.as_ref().unwrap_or(&x), config.loss)?;
            if !l.is_finite() {
                return Err(Error::Numeric(format!("training diverged: loss {l} at epoch {epoch}, batch {}", b + 1)));
            }
            let grads = model.backward(&cache, &grad)?;
            optimizer.step_model(&mut model, &grads)?;
            model.update_running_stats(&cache);
            total += l * chunk.len() as f64;
        }
        if !model.all_finite() {
            return Err(Error::Numeric(format!("training diverged: non-finite parameters after epoch {epoch}")));
        }
        let train_loss = total / train_set.len() as f64;
        let val_loss = val_set.map(|v| evaluate_loss(&model, v, config.loss)).transpose()?;
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
        });
        log::debug!("epoch {epoch}: train {train_loss:.6} val {val_loss:?}");
        if let Some(s) = stopper.as_mut() {
            match s.observe(epoch, val_loss.unwrap_or(train_loss)) {
                StopSignal::Improved => best = Some(model.clone()),
                StopSignal::Continue => {}
                StopSignal::Stop => {
                    stopped_after = Some(epoch);
                    break;
                }
            }
        }
    }
    let best_epoch = match &stopper {
        Some(s) => s.best_epoch(),
        None => history.len(),
    };
    Ok(TrainOutcome {
        model: best.unwrap_or(model),
        history,
        best_epoch,
        stopped_after,
    })
}
