//! Trajectory losses and their exact gradients.
//!
//! For a trajectory of `T` steps (summed, not averaged):
//!
//! * `value_loss   = Σ (V(o_t) - R_t)²` over exploration steps
//! * `policy_loss  = -Σ log π(a_t|o_t) Â_t - ε H` over exploration steps,
//!   where `H` is the summed entropy and `Â_t = R_t - V_rollout(o_t)` is a
//!   constant taken from the values recorded during the rollout
//! * `blocking_loss`, `on_goal_loss`: binary cross-entropy on every step
//! * `bc_loss      = -Σ log π(a*_t|o_t)` over demonstration steps
//!
//! `total = value_weight·value + policy + blocking_weight·blocking
//!        + on_goal_weight·on_goal + bc_weight·bc`.
//!
//! Policy probabilities are the softmax restricted to each step's valid
//! actions, matching how actions are drawn.

use serde::{Deserialize, Serialize};

use super::net::{
    backward_batch, forward_batch_refs, sigmoid, softplus, Gradients, PolicyParams, HEADS, HEAD_BLOCK, HEAD_ON_GOAL, HEAD_VALUE,
};
use super::{advantage, discounted_returns, masked_probabilities, Hyper, PolicyError};
use crate::world::{Action, ActionMask, Observation};

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub obs: Observation,
    pub action: Action,
    pub reward: f64,
    /// Value estimate recorded when the action was chosen.
    pub value: f64,
    pub mask: ActionMask,
    pub blocking: bool,
    pub on_goal: bool,
    pub demo: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub steps: Vec<StepRecord>,
    /// Value of the state after the last step; zero for terminal episodes.
    pub bootstrap: f64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.reward).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossReport {
    pub value_loss: f64,
    pub policy_loss: f64,
    pub entropy: f64,
    pub blocking_loss: f64,
    pub on_goal_loss: f64,
    pub bc_loss: f64,
    pub total: f64,
}

pub fn compute_losses(params: &PolicyParams, traj: &Trajectory, hyper: &Hyper) -> Result<LossReport, PolicyError> {
    losses_and_gradients(params, traj, hyper, false).map(|(r, _)| r)
}

/// Exact gradient of `LossReport::total` with respect to every parameter.
pub fn backward(params: &PolicyParams, traj: &Trajectory, hyper: &Hyper) -> Result<Gradients, PolicyError> {
    losses_and_gradients(params, traj, hyper, true).map(|(_, g)| g.expect("gradients requested"))
}

pub fn losses_and_gradients(
    params: &PolicyParams,
    traj: &Trajectory,
    hyper: &Hyper,
    with_grad: bool,
) -> Result<(LossReport, Option<Gradients>), PolicyError> {
    if traj.is_empty() {
        return Err(PolicyError::EmptyTrajectory);
    }
    if params.len() != super::param_count() {
        return Err(PolicyError::LayoutMismatch { expected: super::param_count(), got: params.len() });
    }
    let obs: Vec<&Observation> = traj.steps.iter().map(|s| &s.obs).collect();
    let acts = forward_batch_refs(params, &obs);

    let rewards = traj.rewards();
    let recorded: Vec<f64> = traj.steps.iter().map(|s| s.value).collect();
    let returns = discounted_returns(&rewards, hyper.gamma, traj.bootstrap);
    let adv = advantage(&rewards, &recorded, hyper.gamma, traj.bootstrap);

    let mut r = LossReport::default();
    let mut pg = 0.0;
    let mut d_heads = vec![0.0; traj.len() * HEADS];
    for (t, s) in traj.steps.iter().enumerate() {
        let out = acts.output(t);
        let d = &mut d_heads[t * HEADS..(t + 1) * HEADS];
        let p = masked_probabilities(&out.logits, &s.mask);
        let logp = |i: usize| p[i].ln();
        let a = s.action.index();

        if s.demo {
            r.bc_loss -= logp(a);
            for j in s.mask.iter().map(Action::index) {
                d[j] += hyper.bc_weight * (p[j] - f64::from(j == a));
            }
        } else {
            let diff = out.value - returns[t];
            r.value_loss += diff * diff;
            d[HEAD_VALUE] = hyper.value_weight * 2.0 * diff;

            pg -= logp(a) * adv[t];
            let h: f64 = -s.mask.iter().map(|b| p[b.index()] * logp(b.index())).sum::<f64>();
            r.entropy += h;
            for j in s.mask.iter().map(Action::index) {
                d[j] += -adv[t] * (f64::from(j == a) - p[j]) + hyper.entropy_weight * p[j] * (logp(j) + h);
            }
        }

        let yb = f64::from(u8::from(s.blocking));
        r.blocking_loss += softplus(out.block_logit) - yb * out.block_logit;
        d[HEAD_BLOCK] = hyper.blocking_weight * (sigmoid(out.block_logit) - yb);
        let yg = f64::from(u8::from(s.on_goal));
        r.on_goal_loss += softplus(out.on_goal_logit) - yg * out.on_goal_logit;
        d[HEAD_ON_GOAL] = hyper.on_goal_weight * (sigmoid(out.on_goal_logit) - yg);
    }
    r.policy_loss = pg - hyper.entropy_weight * r.entropy;
    r.total = hyper.value_weight * r.value_loss
        + r.policy_loss
        + hyper.blocking_weight * r.blocking_loss
        + hyper.on_goal_weight * r.on_goal_loss
        + hyper.bc_weight * r.bc_loss;

    if !with_grad {
        return Ok((r, None));
    }
    let mut grads = Gradients::zeros();
    backward_batch(params, &acts, &d_heads, &mut grads);
    if let Some(block) = grads.first_non_finite_block() {
        return Err(PolicyError::NonFinite { block });
    }
    Ok((r, Some(grads)))
}
