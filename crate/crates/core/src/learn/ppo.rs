//! Advantage estimation, the rollout buffer and the clipped policy-gradient update.

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::mlp::Scalar;
use super::model::{ActorCritic, LossStats, MiniBatch};
use super::TrainConfig;

/// Generalized advantage estimation over one environment's sequence.
/// `dones[t]` cuts the recursion after step `t`; `bootstrap` is the value of
/// the state reached after the last step.
pub fn gae(
    rewards: &[f64],
    values: &[f64],
    bootstrap: f64,
    dones: &[bool],
    gamma: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(rewards.len(), values.len());
    assert_eq!(rewards.len(), dones.len());
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut next_value = bootstrap;
    let mut next_adv = 0.0;
    for t in (0..n).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_value * live - values[t];
        next_adv = delta + gamma * lambda * live * next_adv;
        adv[t] = next_adv;
        next_value = values[t];
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, returns)
}

/// Shifts and scales to zero mean and unit (population) standard deviation.
pub fn normalize_advantages(adv: &mut [f64]) {
    let n = adv.len() as f64;
    if adv.is_empty() {
        return;
    }
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    let std = var.sqrt().max(1e-8);
    for a in adv.iter_mut() {
        *a = (*a - mean) / std;
    }
}

/// Rescales `grad` so its Euclidean norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_grad_norm<F: Scalar>(grad: &mut [F], max_norm: f64) -> f64 {
    let norm = grad.iter().map(|g| g.as_f64() * g.as_f64()).sum::<f64>().sqrt();
    if norm > max_norm {
        let k = F::of(max_norm / norm);
        for g in grad.iter_mut() {
            *g *= k;
        }
    }
    norm
}

#[derive(Clone, Debug, PartialEq)]
pub struct Adam<F> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<F>,
    v: Vec<F>,
    t: u64,
}

impl<F: Scalar> Adam<F> {
    pub fn new(n: usize) -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![F::zero(); n], v: vec![F::zero(); n], t: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut [F], grad: &[F], lr: f64) {
        assert_eq!(params.len(), self.m.len());
        self.t += 1;
        let (b1, b2) = (F::of(self.beta1), F::of(self.beta2));
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        let step = F::of(lr / c1);
        let c2 = F::of(c2);
        let eps = F::of(self.eps);
        for (((p, &g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = b1 * *m + (F::one() - b1) * g;
            *v = b2 * *v + (F::one() - b2) * g * g;
            *p -= step * *m / ((*v / c2).sqrt() + eps);
        }
    }
}

/// Transitions from `num_envs` environments over `horizon` steps, stored
/// time-major (`index = t * num_envs + env`).
#[derive(Clone, Debug)]
pub struct RolloutBuffer {
    pub num_envs: usize,
    pub horizon: usize,
    pub state_dim: usize,
    pub velocity_dim: usize,
    pub action_dim: usize,
    pub partial_dim: usize,
    pub states: Vec<f32>,
    pub true_velocity: Vec<f32>,
    pub actions: Vec<f32>,
    pub means: Vec<f32>,
    pub log_prob: Vec<f32>,
    pub values: Vec<f32>,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
    pub next_partial: Vec<f32>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
    steps: usize,
}

impl RolloutBuffer {
    pub fn new(
        num_envs: usize,
        horizon: usize,
        state_dim: usize,
        velocity_dim: usize,
        action_dim: usize,
        partial_dim: usize,
    ) -> Self {
        let n = num_envs * horizon;
        Self {
            num_envs,
            horizon,
            state_dim,
            velocity_dim,
            action_dim,
            partial_dim,
            states: Vec::with_capacity(n * state_dim),
            true_velocity: Vec::with_capacity(n * velocity_dim),
            actions: Vec::with_capacity(n * action_dim),
            means: Vec::with_capacity(n * action_dim),
            log_prob: Vec::with_capacity(n),
            values: Vec::with_capacity(n),
            rewards: Vec::with_capacity(n),
            dones: Vec::with_capacity(n),
            next_partial: Vec::with_capacity(n * partial_dim),
            advantages: Vec::new(),
            returns: Vec::new(),
            steps: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.num_envs * self.horizon
    }

    pub fn len(&self) -> usize {
        self.log_prob.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_full(&self) -> bool {
        self.steps == self.horizon
    }

    pub fn clear(&mut self) {
        self.states.clear();
        self.true_velocity.clear();
        self.actions.clear();
        self.means.clear();
        self.log_prob.clear();
        self.values.clear();
        self.rewards.clear();
        self.dones.clear();
        self.next_partial.clear();
        self.advantages.clear();
        self.returns.clear();
        self.steps = 0;
    }

    /// Appends one time step for all environments. Slices are env-major.
    #[allow(clippy::too_many_arguments)]
    pub fn push_step(
        &mut self,
        states: &[f32],
        true_velocity: &[f32],
        actions: &[f32],
        means: &[f32],
        log_prob: &[f32],
        values: &[f32],
        rewards: &[f64],
        dones: &[bool],
        next_partial: &[f32],
    ) {
        assert!(!self.is_full(), "rollout buffer is full");
        let n = self.num_envs;
        assert_eq!(states.len(), n * self.state_dim);
        assert_eq!(true_velocity.len(), n * self.velocity_dim);
        assert_eq!(actions.len(), n * self.action_dim);
        assert_eq!(means.len(), n * self.action_dim);
        assert_eq!(next_partial.len(), n * self.partial_dim);
        assert!(log_prob.len() == n && values.len() == n && rewards.len() == n && dones.len() == n);
        self.states.extend_from_slice(states);
        self.true_velocity.extend_from_slice(true_velocity);
        self.actions.extend_from_slice(actions);
        self.means.extend_from_slice(means);
        self.log_prob.extend_from_slice(log_prob);
        self.values.extend_from_slice(values);
        self.rewards.extend_from_slice(rewards);
        self.dones.extend_from_slice(dones);
        self.next_partial.extend_from_slice(next_partial);
        self.steps += 1;
    }

    /// Fills advantages and returns; `last_values` bootstraps each environment.
    pub fn compute_returns(&mut self, last_values: &[f32], gamma: f64, lambda: f64) {
        assert!(self.is_full(), "rollout buffer is not full");
        let (n, h) = (self.num_envs, self.horizon);
        self.advantages = vec![0.0; n * h];
        self.returns = vec![0.0; n * h];
        for e in 0..n {
            let r: Vec<f64> = (0..h).map(|t| self.rewards[t * n + e]).collect();
            let v: Vec<f64> = (0..h).map(|t| f64::from(self.values[t * n + e])).collect();
            let d: Vec<bool> = (0..h).map(|t| self.dones[t * n + e]).collect();
            let (adv, ret) = gae(&r, &v, f64::from(last_values[e]), &d, gamma, lambda);
            for t in 0..h {
                self.advantages[t * n + e] = adv[t];
                self.returns[t * n + e] = ret[t];
            }
        }
    }

    fn rows(src: &[f32], width: usize, idx: &[usize]) -> Array2<f32> {
        Array2::from_shape_fn((idx.len(), width), |(i, c)| src[idx[i] * width + c])
    }

    /// Gathers a minibatch, optionally normalizing its advantages.
    pub fn minibatch(&self, idx: &[usize], old_log_std: &Array1<f32>, normalize: bool) -> MiniBatch<f32> {
        let mut adv: Vec<f64> = idx.iter().map(|&i| self.advantages[i]).collect();
        if normalize {
            normalize_advantages(&mut adv);
        }
        MiniBatch {
            states: Self::rows(&self.states, self.state_dim, idx),
            true_velocity: Self::rows(&self.true_velocity, self.velocity_dim, idx),
            actions: Self::rows(&self.actions, self.action_dim, idx),
            old_log_prob: idx.iter().map(|&i| self.log_prob[i]).collect(),
            old_value: idx.iter().map(|&i| self.values[i]).collect(),
            advantages: adv.into_iter().map(|a| a as f32).collect(),
            returns: idx.iter().map(|&i| self.returns[i] as f32).collect(),
            next_partial: Self::rows(&self.next_partial, self.partial_dim, idx),
            old_mean: Self::rows(&self.means, self.action_dim, idx),
            old_log_std: old_log_std.clone(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    /// Means over all minibatch steps.
    pub loss: LossStats,
    pub grad_norm: f64,
    pub learning_rate: f64,
    pub minibatch_steps: usize,
}

/// Runs the configured epochs of minibatch updates. On a non-finite loss the
/// model and optimizer are restored to their state before the update.
pub fn ppo_update<R: Rng + ?Sized>(
    model: &mut ActorCritic<f32>,
    adam: &mut Adam<f32>,
    lr: &mut f64,
    buffer: &RolloutBuffer,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<UpdateStats> {
    if !buffer.is_full() || buffer.advantages.len() != buffer.len() {
        return Err(Error::Config("update requires a full buffer with computed returns".into()));
    }
    let snapshot = (model.clone(), adam.clone(), *lr);
    match run_epochs(model, adam, lr, buffer, cfg, rng) {
        Ok(s) => Ok(s),
        Err(e) => {
            (*model, *adam, *lr) = snapshot;
            Err(e)
        }
    }
}

fn run_epochs<R: Rng + ?Sized>(
    model: &mut ActorCritic<f32>,
    adam: &mut Adam<f32>,
    lr: &mut f64,
    buffer: &RolloutBuffer,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<UpdateStats> {
    let hp = cfg.loss_params();
    let total = buffer.len();
    let mb_size = total / cfg.minibatches;
    let old_log_std = model.log_std.clone();
    let mut indices: Vec<usize> = (0..total).collect();
    let mut acc = UpdateStats::default();
    let mut params = model.params();
    for _ in 0..cfg.epochs {
        indices.shuffle(rng);
        for chunk in indices.chunks_exact(mb_size) {
            let mb = buffer.minibatch(chunk, &old_log_std, cfg.normalize_advantages);
            let (stats, mut grad) = model.loss_and_grad(&mb, &hp)?;
            if let Some(target) = cfg.desired_kl {
                if *lr > 0.0 {
                    if stats.approx_kl > 2.0 * target {
                        *lr = (*lr / 1.5).max(1e-5);
                    } else if stats.approx_kl > 0.0 && stats.approx_kl < 0.5 * target {
                        *lr = (*lr * 1.5).min(1e-2);
                    }
                }
            }
            let norm = clip_grad_norm(&mut grad, cfg.max_grad_norm);
            adam.step(&mut params, &grad, *lr);
            model.set_params(&params);
            model.clamp_log_std(cfg.log_std_bounds);
            params.clear();
            params = model.params();

            acc.minibatch_steps += 1;
            acc.grad_norm += norm;
            let l = &mut acc.loss;
            l.total += stats.total;
            l.surrogate += stats.surrogate;
            l.value += stats.value;
            l.entropy += stats.entropy;
            l.velocity += stats.velocity;
            l.latent += stats.latent;
            l.approx_kl += stats.approx_kl;
            l.clip_fraction += stats.clip_fraction;
            l.velocity_error += stats.velocity_error;
        }
    }
    let k = acc.minibatch_steps.max(1) as f64;
    let l = &mut acc.loss;
    for v in [
        &mut l.total,
        &mut l.surrogate,
        &mut l.value,
        &mut l.entropy,
        &mut l.velocity,
        &mut l.latent,
        &mut l.approx_kl,
        &mut l.clip_fraction,
        &mut l.velocity_error,
    ] {
        *v /= k;
    }
    acc.grad_norm /= k;
    acc.learning_rate = *lr;
    Ok(acc)
}
