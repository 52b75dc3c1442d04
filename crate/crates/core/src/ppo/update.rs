use serde::{Deserialize, Serialize};

use super::net::{log_softmax, PolicyValueNet};
use super::PpoConfig;
use crate::error::{Error, Result};
use crate::optim::Adam;

/// Rollout buffer collected under the behavior policy.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    pub observations: Vec<Vec<f64>>,
    pub actions: Vec<usize>,
    pub log_probs: Vec<f64>,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
}

impl Trajectory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, obs: Vec<f64>, action: usize, log_prob: f64, reward: f64, done: bool) {
        self.observations.push(obs);
        self.actions.push(action);
        self.log_probs.push(log_prob);
        self.rewards.push(reward);
        self.dones.push(done);
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn clear(&mut self) {
        *self = Self::default();
    }
}

/// Discounted returns computed backwards, restarting after every `done`.
pub fn discounted_returns(rewards: &[f64], dones: &[bool], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut g = 0.0;
    for t in (0..rewards.len()).rev() {
        if dones[t] {
            g = 0.0;
        }
        g = rewards[t] + gamma * g;
        out[t] = g;
    }
    out
}

/// Zero-mean, unit-variance rescaling; left untouched when the variance is
/// below 1e-12.
pub fn normalize(values: &mut [f64]) {
    let n = values.len() as f64;
    if values.is_empty() {
        return;
    }
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    if var < 1e-12 {
        return;
    }
    let std = var.sqrt();
    for v in values.iter_mut() {
        *v = (*v - mean) / std;
    }
}

/// Returns and normalized advantages `G_t − V(s_t)` under the current critic.
pub fn compute_returns(net: &PolicyValueNet, traj: &Trajectory, gamma: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if traj.is_empty() {
        return Err(Error::Config("empty trajectory".into()));
    }
    let returns = discounted_returns(&traj.rewards, &traj.dones, gamma);
    let mut adv: Vec<f64> = returns
        .iter()
        .zip(&traj.observations)
        .map(|(g, obs)| g - net.value(obs))
        .collect();
    normalize(&mut adv);
    Ok((returns, adv))
}

/// A prepared training batch.
#[derive(Debug, Clone)]
pub struct Batch<'a> {
    pub observations: &'a [Vec<f64>],
    pub actions: &'a [usize],
    pub old_log_probs: &'a [f64],
    pub advantages: &'a [f64],
    pub returns: &'a [f64],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossCoefficients {
    pub clip_epsilon: f64,
    pub entropy_coeff: f64,
    pub value_coeff: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    /// −mean(clipped surrogate) − entropy_coeff · mean(entropy)
    pub actor_loss: f64,
    /// value_coeff · mean((V − G)²)
    pub critic_loss: f64,
    pub entropy: f64,
    pub mean_ratio: f64,
    pub clip_fraction: f64,
}

impl LossReport {
    pub fn total(&self) -> f64 {
        self.actor_loss + self.critic_loss
    }
}

/// Loss and gradient with respect to all parameters.
pub fn loss_and_grad(
    net: &PolicyValueNet,
    params: &[f64],
    batch: &Batch<'_>,
    coeffs: &LossCoefficients,
) -> Result<(LossReport, Vec<f64>)> {
    let n = batch.actions.len();
    if n == 0 {
        return Err(Error::Config("empty batch".into()));
    }
    let n_actor = net.actor.n_params();
    let (pa, pc) = params.split_at(n_actor);
    let mut grad = vec![0.0; params.len()];
    let (ga, gc) = grad.split_at_mut(n_actor);
    let inv_n = 1.0 / n as f64;
    let eps = coeffs.clip_epsilon;
    let mut report = LossReport::default();
    let mut surrogate_sum = 0.0;

    for t in 0..n {
        let obs = &batch.observations[t];
        let a = batch.actions[t];
        let adv = batch.advantages[t];

        let (logits, cache) = net.actor.forward(pa, obs);
        let logp = log_softmax(&logits)?;
        let probs: Vec<f64> = logp.iter().map(|l| l.exp()).collect();
        let entropy = -probs.iter().zip(&logp).map(|(p, l)| p * l).sum::<f64>();
        let ratio = (logp[a] - batch.old_log_probs[t]).exp();
        let clipped = ratio.clamp(1.0 - eps, 1.0 + eps);
        let unclipped_obj = ratio * adv;
        let clipped_obj = clipped * adv;
        // gradient flows through the ratio unless the clipped term is the
        // active minimum with the ratio outside the trust region
        let use_unclipped = unclipped_obj <= clipped_obj;
        surrogate_sum += unclipped_obj.min(clipped_obj);
        report.entropy += entropy * inv_n;
        report.mean_ratio += ratio * inv_n;
        if !use_unclipped {
            report.clip_fraction += inv_n;
        }

        let mut d_logits = vec![0.0; logits.len()];
        if use_unclipped {
            // ∂(−ρA/n)/∂z_j = −(ρA/n)(1[j=a] − p_j)
            let scale = -unclipped_obj * inv_n;
            for (j, d) in d_logits.iter_mut().enumerate() {
                let ind = if j == a { 1.0 } else { 0.0 };
                *d += scale * (ind - probs[j]);
            }
        }
        // ∂(−c·H/n)/∂z_j = (c/n) p_j (log p_j + H)
        for (j, d) in d_logits.iter_mut().enumerate() {
            *d += coeffs.entropy_coeff * inv_n * probs[j] * (logp[j] + entropy);
        }
        net.actor.backward(pa, &cache, &d_logits, ga);

        let (v, vcache) = net.critic.forward(pc, obs);
        let diff = v[0] - batch.returns[t];
        report.critic_loss += coeffs.value_coeff * diff * diff * inv_n;
        net.critic.backward(pc, &vcache, &[2.0 * coeffs.value_coeff * diff * inv_n], gc);
    }
    report.actor_loss = -surrogate_sum * inv_n - coeffs.entropy_coeff * report.entropy;
    if !report.total().is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Numeric(format!(
            "non-finite PPO loss (actor {}, critic {})",
            report.actor_loss, report.critic_loss
        )));
    }
    Ok((report, grad))
}

/// K epochs of full-batch clipped-surrogate descent; clears the buffer.
/// Returns the report of the first epoch (evaluated at θ_old).
pub fn ppo_update(net: &mut PolicyValueNet, opt: &mut Adam, traj: &mut Trajectory, cfg: &PpoConfig) -> Result<LossReport> {
    let (returns, advantages) = compute_returns(net, traj, cfg.gamma)?;
    let batch = Batch {
        observations: &traj.observations,
        actions: &traj.actions,
        old_log_probs: &traj.log_probs,
        advantages: &advantages,
        returns: &returns,
    };
    let coeffs = cfg.coefficients();
    let mut first = None;
    for _ in 0..cfg.k_epochs {
        let (report, grad) = loss_and_grad(net, &net.params, &batch, &coeffs)?;
        first.get_or_insert(report);
        opt.step(&mut net.params, &grad);
    }
    if net.params.iter().any(|p| !p.is_finite()) {
        return Err(Error::Numeric("non-finite parameters after update".into()));
    }
    traj.clear();
    Ok(first.expect("k_epochs >= 1"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn returns_examples() {
        assert_eq!(discounted_returns(&[1.0, 1.0, 1.0], &[false, false, true], 1.0), vec![3.0, 2.0, 1.0]);
        assert_eq!(discounted_returns(&[0.0, 0.0, 8.0], &[false, false, true], 0.5), vec![2.0, 4.0, 8.0]);
        assert_eq!(discounted_returns(&[1.0, 1.0], &[true, true], 1.0), vec![1.0, 1.0]);
    }

    #[test]
    fn normalization_skips_constant_batches() {
        let mut v = vec![2.0, 2.0, 2.0];
        normalize(&mut v);
        assert_eq!(v, vec![2.0, 2.0, 2.0]);
        let mut w = vec![1.0, 3.0];
        normalize(&mut w);
        assert_eq!(w, vec![-1.0, 1.0]);
    }
}
