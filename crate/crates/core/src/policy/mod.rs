//! Actor-critic policy: network, losses, gradients and parameter updates.

mod checkpoint;
mod loss;
mod net;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint, CheckpointError};
pub use loss::{backward, compute_losses, losses_and_gradients, LossReport, StepRecord, Trajectory};
pub use net::{
    block_of, forward, forward_batch, forward_batch_refs, layout, param_count, sigmoid, softplus, Activations, Block, ForwardOutput,
    Gradients, PolicyParams,
};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::world::{Action, ActionMask};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("non-finite gradient in block {block}")]
    NonFinite { block: String },
    #[error("parameter layout mismatch: expected {expected} values, got {got}")]
    LayoutMismatch { expected: usize, got: usize },
    #[error("empty trajectory")]
    EmptyTrajectory,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyper {
    pub gamma: f64,
    pub entropy_weight: f64,
    pub learning_rate: f64,
    pub grad_clip: f64,
    pub value_weight: f64,
    pub blocking_weight: f64,
    pub on_goal_weight: f64,
    pub bc_weight: f64,
    pub optimizer: Optimizer,
}

impl Default for Hyper {
    fn default() -> Self {
        Hyper {
            gamma: 0.95,
            entropy_weight: 0.01,
            learning_rate: 2e-4,
            grad_clip: 40.0,
            value_weight: 0.5,
            blocking_weight: 0.5,
            on_goal_weight: 0.5,
            bc_weight: 1.0,
            optimizer: Optimizer::Sgd,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    /// Plain gradient descent after clipping.
    #[default]
    Sgd,
    /// Adam (beta1 0.9, beta2 0.999, eps 1e-8) on the clipped gradient.
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ActMode {
    Sample,
    Greedy,
}

/// Softmax restricted to the actions in `mask`; masked actions get zero.
pub fn masked_probabilities(logits: &[f64; 5], mask: &ActionMask) -> [f64; 5] {
    let max = Action::ALL.iter().filter(|a| mask.contains(**a)).map(|a| logits[a.index()]).fold(f64::NEG_INFINITY, f64::max);
    let mut p = [0.0; 5];
    for a in mask.iter() {
        p[a.index()] = (logits[a.index()] - max).exp();
    }
    let s: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= s);
    p
}

/// Picks an action from the masked policy. Greedy ties go to the lowest index.
pub fn act<R: Rng + ?Sized>(out: &ForwardOutput, mask: &ActionMask, rng: &mut R, mode: ActMode) -> Action {
    let p = masked_probabilities(&out.logits, mask);
    match mode {
        ActMode::Greedy => {
            let mut best = Action::Stay;
            let mut best_p = -1.0;
            for a in mask.iter() {
                if p[a.index()] > best_p {
                    best_p = p[a.index()];
                    best = a;
                }
            }
            best
        }
        ActMode::Sample => {
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut last = Action::Stay;
            for a in mask.iter() {
                acc += p[a.index()];
                last = a;
                if u < acc {
                    return a;
                }
            }
            last
        }
    }
}

/// `R_t = r_t + gamma * R_{t+1}`, seeded with `bootstrap` after the last step.
pub fn discounted_returns(rewards: &[f64], gamma: f64, bootstrap: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = bootstrap;
    for (o, r) in out.iter_mut().zip(rewards).rev() {
        acc = r + gamma * acc;
        *o = acc;
    }
    out
}

/// k-step advantage estimate over the remaining horizon:
/// `sum_i gamma^i r_{t+i} + gamma^k V_end - V(o_t)` with `V_end = bootstrap`.
pub fn advantage(rewards: &[f64], values: &[f64], gamma: f64, bootstrap: f64) -> Vec<f64> {
    assert_eq!(rewards.len(), values.len());
    discounted_returns(rewards, gamma, bootstrap).iter().zip(values).map(|(r, v)| r - v).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClipReport {
    pub norm: f64,
    pub scale: f64,
}

/// Clips the gradient to `grad_clip` global norm and takes one gradient
/// descent step.
pub fn apply_gradients(params: &mut PolicyParams, grads: &Gradients, hyper: &Hyper) -> Result<ClipReport, PolicyError> {
    if params.values.len() != grads.values.len() {
        return Err(PolicyError::LayoutMismatch { expected: params.values.len(), got: grads.values.len() });
    }
    if let Some(block) = grads.first_non_finite_block() {
        return Err(PolicyError::NonFinite { block });
    }
    let norm = grads.norm();
    let scale = if norm > hyper.grad_clip { hyper.grad_clip / norm } else { 1.0 };
    let step = hyper.learning_rate * scale;
    for (p, g) in params.values.iter_mut().zip(&grads.values) {
        *p -= step * g;
    }
    Ok(ClipReport { norm, scale })
}

/// Optimizer memory carried between updates.
#[derive(Debug, Clone, PartialEq)]
pub enum OptimizerState {
    Sgd,
    Adam { m: Vec<f64>, v: Vec<f64>, t: u64 },
}

impl OptimizerState {
    pub fn new(kind: Optimizer) -> Self {
        match kind {
            Optimizer::Sgd => OptimizerState::Sgd,
            Optimizer::Adam => OptimizerState::Adam { m: vec![0.0; param_count()], v: vec![0.0; param_count()], t: 0 },
        }
    }

    pub fn apply(&mut self, params: &mut PolicyParams, grads: &Gradients, hyper: &Hyper) -> Result<ClipReport, PolicyError> {
        let (m, v, t) = match self {
            OptimizerState::Sgd => return apply_gradients(params, grads, hyper),
            OptimizerState::Adam { m, v, t } => (m, v, t),
        };
        if params.values.len() != grads.values.len() || m.len() != grads.values.len() {
            return Err(PolicyError::LayoutMismatch { expected: params.values.len(), got: grads.values.len() });
        }
        if let Some(block) = grads.first_non_finite_block() {
            return Err(PolicyError::NonFinite { block });
        }
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        let norm = grads.norm();
        let scale = if norm > hyper.grad_clip { hyper.grad_clip / norm } else { 1.0 };
        *t += 1;
        let c1 = 1.0 - B1.powf(*t as f64);
        let c2 = 1.0 - B2.powf(*t as f64);
        for i in 0..params.values.len() {
            let g = grads.values[i] * scale;
            m[i] = B1 * m[i] + (1.0 - B1) * g;
            v[i] = B2 * v[i] + (1.0 - B2) * g * g;
            params.values[i] -= hyper.learning_rate * (m[i] / c1) / ((v[i] / c2).sqrt() + 1e-8);
        }
        Ok(ClipReport { norm, scale })
    }
}
