//! SGD with classical momentum, Adam, global-norm clipping, early stopping,
//! and the halve-and-restart NaN rollback protocol.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::params::Parameters;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    SgdMomentum,
    Adam,
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "sgd_momentum" => Ok(OptimizerKind::SgdMomentum),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(Error::param(format!("unknown optimizer `{other}`"))),
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::SgdMomentum => "sgd_momentum",
            OptimizerKind::Adam => "adam",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Threshold on the global L2 norm of all gradients.
    pub clip_threshold: f64,
    pub max_epochs: usize,
    /// Epochs without a strictly better dev metric before stopping.
    pub patience: usize,
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            optimizer: OptimizerKind::SgdMomentum,
            learning_rate: 0.002,
            momentum: 0.99,
            clip_threshold: 1.0,
            max_epochs: 1000,
            patience: 25,
            seed: 0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::param(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if !(self.clip_threshold > 0.0) {
            return Err(Error::param(format!(
                "clip_threshold must be > 0, got {}",
                self.clip_threshold
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::param(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::param("adam betas must be in [0, 1)"));
        }
        Ok(())
    }
}

pub fn global_norm(grads: &[&Tensor]) -> f64 {
    let all: Vec<f64> = grads.iter().flat_map(|g| g.data().iter().copied()).collect();
    crate::tensor::l2_norm(&all)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ClipOutcome {
    Unchanged { norm: f64 },
    Scaled { norm: f64 },
    /// The norm was NaN or infinite; gradients have been zeroed.
    NonFinite,
}

/// Rescale all gradients jointly so their global L2 norm is at most
/// `threshold`.
pub fn clip_gradients(grads: &mut [&mut Tensor], threshold: f64) -> Result<ClipOutcome> {
    if !(threshold > 0.0) {
        return Err(Error::param(format!(
            "clip threshold must be > 0, got {threshold}"
        )));
    }
    let norm = {
        let views: Vec<&Tensor> = grads.iter().map(|g| &**g).collect();
        global_norm(&views)
    };
    if !norm.is_finite() {
        grads.iter_mut().for_each(|g| g.fill(0.0));
        return Ok(ClipOutcome::NonFinite);
    }
    if norm <= threshold {
        return Ok(ClipOutcome::Unchanged { norm });
    }
    let scale = threshold / norm;
    grads.iter_mut().for_each(|g| g.scale(scale));
    Ok(ClipOutcome::Scaled { norm })
}

fn check_shapes(params: &[&mut Tensor], grads: &[&Tensor], slots: &[Tensor]) -> Result<()> {
    if params.len() != grads.len() || params.len() != slots.len() {
        return Err(Error::Structural(format!(
            "optimizer got {} params, {} grads, {} state tensors",
            params.len(),
            grads.len(),
            slots.len()
        )));
    }
    for ((p, g), s) in params.iter().zip(grads).zip(slots) {
        if p.shape() != g.shape() || p.shape() != s.shape() {
            return Err(Error::Dimension {
                op: "optimizer step",
                left: p.shape().to_vec(),
                right: g.shape().to_vec(),
            });
        }
    }
    Ok(())
}

/// Classical momentum: `v ← μ·v − lr·g`, `θ ← θ + v`.
pub fn sgd_momentum_step(
    params: &mut [&mut Tensor],
    grads: &[&Tensor],
    velocity: &mut [Tensor],
    lr: f64,
    mu: f64,
) -> Result<()> {
    check_shapes(params, grads, velocity)?;
    for ((p, g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        for ((pv, &gv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
            *vv = mu * *vv - lr * gv;
            *pv += *vv;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

/// Adam with bias correction; `t` is the 1-based step count.
pub fn adam_step(
    params: &mut [&mut Tensor],
    grads: &[&Tensor],
    first: &mut [Tensor],
    second: &mut [Tensor],
    hyper: AdamHyper,
    t: u64,
) -> Result<()> {
    if t == 0 {
        return Err(Error::param("adam step count starts at 1"));
    }
    check_shapes(params, grads, first)?;
    check_shapes(params, grads, second)?;
    let AdamHyper {
        lr,
        beta1,
        beta2,
        eps,
    } = hyper;
    let c1 = 1.0 - beta1.powi(t as i32);
    let c2 = 1.0 - beta2.powi(t as i32);
    for (((p, g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(first.iter_mut())
        .zip(second.iter_mut())
    {
        for (((pv, &gv), mv), vv) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *mv = beta1 * *mv + (1.0 - beta1) * gv;
            *vv = beta2 * *vv + (1.0 - beta2) * gv * gv;
            let m_hat = *mv / c1;
            let v_hat = *vv / c2;
            *pv -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Per-parameter optimizer memory: velocity for SGD, first and second
/// moments for Adam.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub step: u64,
    pub first: Vec<Tensor>,
    pub second: Vec<Tensor>,
}

impl OptimizerState {
    pub fn new<P: Parameters + ?Sized>(kind: OptimizerKind, params: &P) -> Self {
        let zeros: Vec<Tensor> = params.tensors().into_iter().map(Tensor::zeros_like).collect();
        OptimizerState {
            kind,
            step: 0,
            second: match kind {
                OptimizerKind::Adam => zeros.clone(),
                OptimizerKind::SgdMomentum => Vec::new(),
            },
            first: zeros,
        }
    }

    /// Apply one update with learning rate `lr` using `config`'s remaining
    /// hyperparameters.
    pub fn apply<P: Parameters + ?Sized>(
        &mut self,
        params: &mut P,
        grads: &P,
        lr: f64,
        config: &TrainConfig,
    ) -> Result<()> {
        let grads = grads.tensors();
        let mut params = params.tensors_mut();
        self.step += 1;
        match self.kind {
            OptimizerKind::SgdMomentum => {
                sgd_momentum_step(&mut params, &grads, &mut self.first, lr, config.momentum)
            }
            OptimizerKind::Adam => adam_step(
                &mut params,
                &grads,
                &mut self.first,
                &mut self.second,
                AdamHyper {
                    lr,
                    beta1: config.adam_beta1,
                    beta2: config.adam_beta2,
                    eps: config.adam_eps,
                },
                self.step,
            ),
        }
    }

    /// Named tensors for checkpointing (`opt.first.<k>` / `opt.second.<k>`).
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let first = self
            .first
            .iter()
            .enumerate()
            .map(|(k, t)| (format!("opt.first.{k}"), t));
        let second = self
            .second
            .iter()
            .enumerate()
            .map(|(k, t)| (format!("opt.second.{k}"), t));
        first.chain(second).collect()
    }
}

/// Parameters and optimizer memory at an epoch boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot<P> {
    pub params: P,
    pub optimizer: OptimizerState,
    pub completed_epochs: usize,
}

/// Live training state plus the last epoch-boundary snapshot.
#[derive(Debug, Clone)]
pub struct TrainerState<P> {
    pub params: P,
    pub optimizer: OptimizerState,
    pub learning_rate: f64,
    pub completed_epochs: usize,
    pub rollbacks: usize,
    pub checkpoint: Snapshot<P>,
}

impl<P: Parameters + Clone> TrainerState<P> {
    /// The initial parameters act as the checkpoint for the first epoch.
    pub fn new(params: P, kind: OptimizerKind, learning_rate: f64) -> Self {
        let optimizer = OptimizerState::new(kind, &params);
        let checkpoint = Snapshot {
            params: params.clone(),
            optimizer: optimizer.clone(),
            completed_epochs: 0,
        };
        TrainerState {
            params,
            optimizer,
            learning_rate,
            completed_epochs: 0,
            rollbacks: 0,
            checkpoint,
        }
    }

    /// Mark the current epoch finished and snapshot it.
    pub fn commit_epoch(&mut self) {
        self.completed_epochs += 1;
        self.checkpoint = Snapshot {
            params: self.params.clone(),
            optimizer: self.optimizer.clone(),
            completed_epochs: self.completed_epochs,
        };
    }
}

/// NaN recovery: halve the learning rate and restart the interrupted epoch
/// from the previous epoch's parameters and optimizer memory.
pub fn nan_rollback<P: Clone>(state: &mut TrainerState<P>) {
    state.learning_rate /= 2.0;
    state.params = state.checkpoint.params.clone();
    state.optimizer = state.checkpoint.optimizer.clone();
    state.completed_epochs = state.checkpoint.completed_epochs;
    state.rollbacks += 1;
}

/// True iff the best (strictly lowest) dev metric is more than `patience`
/// epochs behind the latest entry. Non-finite entries never count as best.
pub fn early_stop(dev_history: &[f64], patience: usize) -> bool {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in dev_history.iter().enumerate() {
        if !v.is_finite() {
            continue;
        }
        if best.map_or(true, |(_, b)| v < b) {
            best = Some((i, v));
        }
    }
    let Some(last) = dev_history.len().checked_sub(1) else {
        return false;
    };
    let best_idx = best.map_or(0, |(i, _)| i);
    last - best_idx > patience
}
