//! Mini-batch Adam training, evaluation, and per-epoch metrics.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::BackwardMode;
use crate::error::{Error, Result};
use crate::gat::{argmax, forward, predict, GatModel, GradTargets};
use crate::matrix::Matrix;
use crate::par::par_map;
use crate::superpixel::SpGraph;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// How the learning rate moves over a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Half cosine from the base rate at the first step towards zero at the
    /// end of the last epoch.
    Cosine,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Graphs per optimizer step.
    pub batch_size: usize,
    pub seed: u64,
    pub adam: AdamConfig,
    pub schedule: LrSchedule,
    /// Epochs over which the rate ramps up linearly from near zero before
    /// the schedule applies in full.
    pub warmup_epochs: usize,
    /// Invoke the epoch callback's checkpoint flag every this many epochs.
    pub checkpoint_every: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 32,
            seed: 0,
            adam: AdamConfig::default(),
            schedule: LrSchedule::Constant,
            warmup_epochs: 0,
            checkpoint_every: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let a = &self.adam;
        if self.batch_size == 0 {
            return Err(Error::Param("batch size must be positive".into()));
        }
        if !(a.learning_rate > 0.0 && a.eps > 0.0) {
            return Err(Error::Param("learning rate and epsilon must be positive".into()));
        }
        if !(a.beta1 > 0.0 && a.beta1 < 1.0 && a.beta2 > 0.0 && a.beta2 < 1.0) {
            return Err(Error::Param("Adam betas must lie in (0, 1)".into()));
        }
        if self.checkpoint_every == Some(0) {
            return Err(Error::Param("checkpoint cadence must be positive".into()));
        }
        Ok(())
    }

    /// Learning rate of optimizer step `step` (0-based, counted over the
    /// whole run) when each epoch has `steps_per_epoch` steps.
    pub fn learning_rate_at(&self, step: u64, steps_per_epoch: usize) -> f64 {
        let base = self.adam.learning_rate;
        let warmup = (self.warmup_epochs * steps_per_epoch) as f64;
        let ramp = if (step as f64) < warmup {
            (step + 1) as f64 / warmup
        } else {
            1.0
        };
        ramp * match self.schedule {
            LrSchedule::Constant => base,
            LrSchedule::Cosine => {
                let total = (self.epochs * steps_per_epoch).max(1) as f64;
                let progress = (step as f64 / total).min(1.0);
                0.5 * base * (1.0 + (std::f64::consts::PI * progress).cos())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
    pub seconds: f64,
}

pub const METRICS_HEADER: &str = "epoch,loss,train_acc,val_acc,seconds";

pub fn metrics_to_csv(history: &[EpochMetrics]) -> String {
    let mut out = format!("{METRICS_HEADER}\n");
    for m in history {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            m.epoch, m.loss, m.train_acc, m.val_acc, m.seconds
        ));
    }
    out
}

/// First and second moment estimates plus the step count.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Matrix>,
    pub v: Vec<Matrix>,
    pub step: u64,
}

impl AdamState {
    pub fn for_model(model: &GatModel) -> Self {
        let zeros: Vec<Matrix> = model
            .params()
            .iter()
            .map(|p| Matrix::zeros(p.rows(), p.cols()))
            .collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }
}

/// One bias-corrected Adam update of every parameter.
pub fn adam_step(params: &mut [&mut Matrix], grads: &[Matrix], state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() || params.len() != state.v.len() {
        return Err(Error::Shape(format!(
            "{} params, {} grads, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for ((p, g), m) in params.iter().zip(grads).zip(&state.m) {
        if p.shape() != g.shape() || p.shape() != m.shape() {
            return Err(Error::Shape(format!("param {:?} vs grad {:?}", p.shape(), g.shape())));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        for (((pv, &gv), mv), vv) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *mv = cfg.beta1 * *mv + (1.0 - cfg.beta1) * gv;
            *vv = cfg.beta2 * *vv + (1.0 - cfg.beta2) * gv * gv;
            let m_hat = *mv / bc1;
            let v_hat = *vv / bc2;
            *pv -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

/// Fraction of `dataset` whose predicted class equals its label.
pub fn evaluate(model: &GatModel, dataset: &[SpGraph]) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::Empty("evaluation set is empty".into()));
    }
    let hits = par_map(dataset, |g| -> Result<bool> {
        let label = g.label.ok_or_else(|| Error::Contract("graph has no label".into()))?;
        Ok(predict(model, g)? == label)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(hits.iter().filter(|&&h| h).count() as f64 / dataset.len() as f64)
}

/// Cross-entropy loss, parameter gradients, and correctness for one graph.
pub fn graph_gradients(model: &GatModel, g: &SpGraph) -> Result<(f64, Vec<Matrix>, bool)> {
    let label = g
        .label
        .ok_or_else(|| Error::Contract("training graph has no label".into()))?;
    let mut fwd = forward(model, g, GradTargets::PARAMS)?;
    let correct = argmax(fwd.logits()) == label;
    let loss = fwd.tape.cross_entropy(fwd.logits, label)?;
    let loss_value = fwd.tape.value(loss).data()[0];
    fwd.tape.backward(loss, BackwardMode::Standard)?;
    let grads = fwd.params.iter().map(|&p| fwd.tape.grad(p)).collect();
    Ok((loss_value, grads, correct))
}

/// Model, optimizer state, and metric history; everything needed to resume.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub model: GatModel,
    pub adam: AdamState,
    pub history: Vec<EpochMetrics>,
}

impl TrainState {
    pub fn new(model: GatModel) -> Self {
        let adam = AdamState::for_model(&model);
        Self {
            model,
            adam,
            history: Vec::new(),
        }
    }

    pub fn epochs_done(&self) -> usize {
        self.history.len()
    }
}

fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    order.shuffle(&mut rng);
    order
}

/// Runs one epoch (index `state.epochs_done()`) and appends its metrics.
pub fn run_epoch(
    state: &mut TrainState,
    train_set: &[SpGraph],
    val_set: &[SpGraph],
    cfg: &TrainConfig,
) -> Result<EpochMetrics> {
    let start = Instant::now();
    let epoch = state.epochs_done();
    let order = epoch_order(train_set.len(), cfg.seed, epoch);
    let steps_per_epoch = train_set.len().div_ceil(cfg.batch_size);
    let mut loss_sum = 0.0;
    let mut correct = 0usize;
    for (batch_idx, batch) in order.chunks(cfg.batch_size).enumerate() {
        let graphs: Vec<&SpGraph> = batch.iter().map(|&i| &train_set[i]).collect();
        let results = par_map(&graphs, |g| graph_gradients(&state.model, g));
        let scale = 1.0 / batch.len() as f64;
        let mut total: Vec<Matrix> = state
            .model
            .params()
            .iter()
            .map(|p| Matrix::zeros(p.rows(), p.cols()))
            .collect();
        for r in results {
            let (loss, grads, hit) = r?;
            if !loss.is_finite() {
                return Err(Error::NonFinite {
                    epoch,
                    batch: batch_idx,
                    loss,
                });
            }
            loss_sum += loss;
            correct += usize::from(hit);
            for (acc, g) in total.iter_mut().zip(grads) {
                for (a, v) in acc.data_mut().iter_mut().zip(g.data()) {
                    *a += v * scale;
                }
            }
        }
        let adam = AdamConfig {
            learning_rate: cfg.learning_rate_at(state.adam.step, steps_per_epoch),
            ..cfg.adam
        };
        let mut params = state.model.params_mut();
        adam_step(&mut params, &total, &mut state.adam, &adam)?;
    }
    let n = train_set.len() as f64;
    let metrics = EpochMetrics {
        epoch: epoch + 1,
        loss: loss_sum / n,
        train_acc: correct as f64 / n,
        val_acc: evaluate(&state.model, val_set)?,
        seconds: start.elapsed().as_secs_f64(),
    };
    state.history.push(metrics);
    Ok(metrics)
}

/// Trains until `cfg.epochs` epochs are recorded in `state`, calling
/// `on_epoch(state, checkpoint_due)` after each one.
pub fn train_from(
    mut state: TrainState,
    train_set: &[SpGraph],
    val_set: &[SpGraph],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&TrainState, bool) -> Result<()>,
) -> Result<TrainState> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Empty("training set is empty".into()));
    }
    if val_set.is_empty() {
        return Err(Error::Empty("validation set is empty".into()));
    }
    while state.epochs_done() < cfg.epochs {
        run_epoch(&mut state, train_set, val_set, cfg)?;
        let due = cfg
            .checkpoint_every
            .is_some_and(|k| state.epochs_done().is_multiple_of(k));
        on_epoch(&state, due)?;
    }
    Ok(state)
}

pub fn train(model: GatModel, train_set: &[SpGraph], val_set: &[SpGraph], cfg: &TrainConfig) -> Result<TrainState> {
    train_from(TrainState::new(model), train_set, val_set, cfg, |_, _| Ok(()))
}
