//! Mini-batch Adam training with staged learning rates and per-stage freezing.

use std::collections::BTreeSet;
use std::io::Write;
use std::ops::Range;
use std::time::Instant;

use crate::data::WindowedDataset;
use crate::models::{ModelError, ModelState};
use crate::tensor::{NodeId, NumArray, ParamSet, Tape, TensorError};

pub const DEFAULT_BATCH: usize = 16;
pub const DEFAULT_CLIP_NORM: f64 = 5.0;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("training dataset is empty")]
    EmptyDataset,
    #[error("epoch {epoch}, step {step}: {source}")]
    Step {
        epoch: usize,
        step: usize,
        source: ModelError,
    },
    #[error("epoch {epoch}, step {step}: non-finite loss or gradient")]
    NonFinite { epoch: usize, step: usize },
}

/// A contiguous block of epochs sharing a learning rate and a frozen set.
#[derive(Debug, Clone, PartialEq)]
pub struct Stage {
    pub epochs: Range<usize>,
    pub lr: f64,
    pub frozen: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Must partition `0..epochs` in order.
    pub stages: Vec<Stage>,
    /// Carried for provenance; training itself draws no random numbers.
    pub seed: u64,
    pub clip_norm: Option<f64>,
}

impl TrainConfig {
    /// One stage, nothing frozen.
    pub fn constant_lr(epochs: usize, batch_size: usize, lr: f64, seed: u64) -> Self {
        Self {
            epochs,
            batch_size,
            stages: vec![Stage {
                epochs: 0..epochs,
                lr,
                frozen: BTreeSet::new(),
            }],
            seed,
            clip_norm: Some(DEFAULT_CLIP_NORM),
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1".into());
        }
        let mut next = 0;
        for s in &self.stages {
            if s.epochs.start != next || s.epochs.end <= s.epochs.start {
                return bad(format!(
                    "stage {:?} does not continue the partition at epoch {next}",
                    s.epochs
                ));
            }
            if !(s.lr > 0.0) || !s.lr.is_finite() {
                return bad(format!("learning rate {} must be positive", s.lr));
            }
            next = s.epochs.end;
        }
        if next != self.epochs {
            return bad(format!(
                "stages cover 0..{next} but training runs 0..{}",
                self.epochs
            ));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return bad(format!("clip norm {c} must be positive"));
            }
        }
        Ok(())
    }

    pub fn stage_at(&self, epoch: usize) -> &Stage {
        self.stages
            .iter()
            .find(|s| s.epochs.contains(&epoch))
            .expect("validated stages cover every epoch")
    }
}

#[derive(Debug, Clone)]
pub struct TrainHistory {
    pub per_epoch_loss: Vec<f64>,
    pub per_epoch_lr: Vec<f64>,
    pub wall_time_seconds: f64,
    /// Optimizer steps whose gradient was rescaled by the norm clip.
    pub clipped_steps: usize,
    pub final_params: ParamSet,
}

impl TrainHistory {
    pub fn final_loss(&self) -> f64 {
        *self.per_epoch_loss.last().expect("at least one epoch")
    }

    /// 1-based count of epochs until the per-epoch loss first reaches `target`.
    pub fn epochs_to_reach(&self, target: f64) -> Option<usize> {
        self.per_epoch_loss
            .iter()
            .position(|&l| l <= target)
            .map(|i| i + 1)
    }

    /// `epoch,loss`
    pub fn write_loss_csv<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "epoch,loss")?;
        for (i, l) in self.per_epoch_loss.iter().enumerate() {
            writeln!(out, "{},{}", i + 1, l)?;
        }
        Ok(())
    }
}

/// Mean squared error over a batch.
pub fn mse_loss(tape: &mut Tape, pred: NodeId, target: NodeId) -> Result<NodeId, TensorError> {
    if tape.value(pred).is_empty() {
        return Err(TensorError::EmptyAxis { op: "mse_loss" });
    }
    let diff = tape.sub(pred, target)?;
    let sq = tape.mul(diff, diff)?;
    tape.mean(sq)
}

/// Adam with per-parameter step counts so a parameter thawed mid-run starts
/// its bias correction from its own first update.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<NumArray>,
    v: Vec<NumArray>,
    t: Vec<u64>,
}

impl Adam {
    pub fn new(params: &ParamSet) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: params.iter().map(|p| NumArray::zeros(p.value.shape())).collect(),
            v: params.iter().map(|p| NumArray::zeros(p.value.shape())).collect(),
            t: vec![0; params.len()],
        }
    }

    pub fn steps_taken(&self, idx: usize) -> u64 {
        self.t[idx]
    }

    pub fn moments(&self, idx: usize) -> (&NumArray, &NumArray) {
        (&self.m[idx], &self.v[idx])
    }

    /// Updates every non-frozen parameter from its gradient.
    pub fn step(&mut self, params: &mut ParamSet, lr: f64) {
        for idx in 0..params.len() {
            let p = params.by_index_mut(idx);
            if p.frozen {
                continue;
            }
            self.t[idx] += 1;
            let t = self.t[idx] as i32;
            let c1 = 1.0 - self.beta1.powi(t);
            let c2 = 1.0 - self.beta2.powi(t);
            let (m, v) = (self.m[idx].data_mut(), self.v[idx].data_mut());
            let grad = p.grad.data();
            for (k, theta) in p.value.data_mut().iter_mut().enumerate() {
                let g = grad[k];
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g * g;
                let m_hat = m[k] / c1;
                let v_hat = v[k] / c2;
                *theta -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

/// Rescales trainable gradients to `max_norm` when their global L2 norm exceeds it.
/// Returns the pre-clip norm and whether clipping happened.
pub fn clip_grad_norm(params: &mut ParamSet, max_norm: f64) -> (f64, bool) {
    let norm = params
        .iter()
        .filter(|p| !p.frozen)
        .flat_map(|p| p.grad.data().iter())
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let k = max_norm / norm;
        for p in params.iter_mut().filter(|p| !p.frozen) {
            p.grad.data_mut().iter_mut().for_each(|g| *g *= k);
        }
        (norm, true)
    } else {
        (norm, false)
    }
}

/// Anything with parameters and a batched forward map.
pub trait Trainable {
    fn params(&self) -> &ParamSet;
    fn params_mut(&mut self) -> &mut ParamSet;
    fn window(&self) -> usize;
    fn forward(&self, tape: &mut Tape, windows: &NumArray) -> Result<NodeId, ModelError>;
}

impl Trainable for ModelState {
    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn window(&self) -> usize {
        self.spec.window
    }

    fn forward(&self, tape: &mut Tape, windows: &NumArray) -> Result<NodeId, ModelError> {
        ModelState::forward(self, tape, windows)
    }
}

/// Snapshot handed to an observer after each epoch.
pub struct EpochEnd<'a> {
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
    pub params: &'a ParamSet,
}

pub fn train<M: Trainable>(
    model: &mut M,
    data: &WindowedDataset,
    cfg: &TrainConfig,
) -> Result<TrainHistory, TrainError> {
    train_observed(model, data, cfg, |_| {})
}

/// Trains in row order (no shuffling), calling `observe` after every epoch.
/// Wall time covers the epoch loop only; observer time is excluded.
pub fn train_observed<M: Trainable>(
    model: &mut M,
    data: &WindowedDataset,
    cfg: &TrainConfig,
    mut observe: impl FnMut(&EpochEnd<'_>),
) -> Result<TrainHistory, TrainError> {
    cfg.validate()?;
    let n = data.rows();
    if n == 0 {
        return Err(TrainError::EmptyDataset);
    }
    if data.window != model.window() {
        return Err(TrainError::Step {
            epoch: 0,
            step: 0,
            source: ModelError::WindowLength {
                expected: model.window(),
                got: data.window,
            },
        });
    }
    let batches: Vec<(NumArray, NumArray)> = (0..n)
        .step_by(cfg.batch_size)
        .map(|s| {
            let e = (s + cfg.batch_size).min(n);
            let y = NumArray::matrix(e - s, 1, data.y.data()[s..e].to_vec())
                .expect("column of targets");
            (data.x.slice_rows(s, e), y)
        })
        .collect();

    let mut adam = Adam::new(model.params());
    let mut per_epoch_loss = Vec::with_capacity(cfg.epochs);
    let mut per_epoch_lr = Vec::with_capacity(cfg.epochs);
    let mut clipped_steps = 0;
    let mut elapsed = 0.0;

    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let stage = cfg.stage_at(epoch);
        if epoch == stage.epochs.start {
            model.params_mut().set_frozen_where(|name| stage.frozen.contains(name));
        }
        let mut weighted = 0.0;
        for (step, (x, y)) in batches.iter().enumerate() {
            let wrap = |e: ModelError| TrainError::Step {
                epoch,
                step,
                source: e,
            };
            model.params_mut().zero_grads();
            let mut tape = Tape::new();
            let pred = model.forward(&mut tape, x).map_err(wrap)?;
            let target = tape.constant(y.clone()).map_err(|e| wrap(e.into()))?;
            let loss = mse_loss(&mut tape, pred, target).map_err(|e| wrap(e.into()))?;
            let loss_value = tape.value(loss).data()[0];
            tape.backward(loss, model.params_mut())
                .map_err(|e| wrap(e.into()))?;
            if let Some(max_norm) = cfg.clip_norm {
                let (norm, clipped) = clip_grad_norm(model.params_mut(), max_norm);
                if !norm.is_finite() {
                    return Err(TrainError::NonFinite { epoch, step });
                }
                clipped_steps += usize::from(clipped);
            }
            adam.step(model.params_mut(), stage.lr);
            weighted += loss_value * y.len() as f64;
        }
        let epoch_loss = weighted / n as f64;
        if !epoch_loss.is_finite() {
            return Err(TrainError::NonFinite {
                epoch,
                step: batches.len(),
            });
        }
        elapsed += started.elapsed().as_secs_f64();
        per_epoch_loss.push(epoch_loss);
        per_epoch_lr.push(stage.lr);
        observe(&EpochEnd {
            epoch,
            loss: epoch_loss,
            lr: stage.lr,
            params: model.params(),
        });
    }
    Ok(TrainHistory {
        per_epoch_loss,
        per_epoch_lr,
        wall_time_seconds: elapsed,
        clipped_steps,
        final_params: model.params().clone(),
    })
}
