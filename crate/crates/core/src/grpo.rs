//! Group Relative Policy Optimization for the slot policy.
//!
//! Per group of `n` samples the objective is
//!
//! ```text
//! J = 1/n * sum_i [ min(rho_i * A_i, clip(rho_i, 1-eps, 1+eps) * A_i) - beta * KL_i ]
//! rho_i = exp(logpi(o_i) - logpi_old(o_i))
//! KL_i  = r - ln r - 1,   r = pi_ref(o_i) / pi(o_i)
//! ```
//!
//! with `A_i` the group-normalized reward. One ascent step is taken per group,
//! followed by decoupled weight decay.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::RunConfig;
use crate::policy::{grad_logprob, logprob, PolicyError, SlotChoices, SlotGradient, SlotPolicyParams};

#[derive(Debug, Error, PartialEq)]
pub enum GrpoError {
    #[error("group advantages need at least 2 rewards, got {0}")]
    GroupTooSmall(usize),
    #[error("group has {got} samples but group_size is {expected}")]
    GroupSizeMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

/// `(r_i - mean) / max(std, std_floor)` with the population standard deviation.
pub fn group_advantages(rewards: &[f64], std_floor: f64) -> Result<Vec<f64>, GrpoError> {
    if rewards.len() < 2 {
        return Err(GrpoError::GroupTooSmall(rewards.len()));
    }
    if rewards.iter().all(|&r| r == rewards[0]) {
        return Ok(vec![0.0; rewards.len()]);
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let denom = var.sqrt().max(std_floor);
    Ok(rewards.iter().map(|r| (r - mean) / denom).collect())
}

pub fn clipped_term(ratio: f64, advantage: f64, epsilon: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - epsilon, 1.0 + epsilon);
    (ratio * advantage).min(clipped * advantage)
}

/// Nonnegative estimator `r - ln r - 1` with `ln r = logprob_ref - logprob_new`.
pub fn kl_estimate(logprob_ref: f64, logprob_new: f64) -> f64 {
    let log_ratio = logprob_ref - logprob_new;
    log_ratio.exp() - log_ratio - 1.0
}

/// One member of a sampled group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSample {
    pub choices: SlotChoices,
    /// Log-probability under the policy that drew the sample.
    pub logprob_old: f64,
    pub reward: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StepStats {
    pub mean_reward: f64,
    pub mean_abs_advantage: f64,
    /// Fraction of samples whose ratio was clipped out of the gradient.
    pub clip_fraction: f64,
    pub kl_mean: f64,
    pub objective: f64,
}

struct Evaluated {
    objective: f64,
    gradient: SlotGradient,
    clipped: usize,
    kl_sum: f64,
}

fn evaluate(
    params: &SlotPolicyParams,
    group: &[GroupSample],
    advantages: &[f64],
    ref_params: &SlotPolicyParams,
    epsilon: f64,
    beta: f64,
) -> Result<Evaluated, GrpoError> {
    let n = group.len() as f64;
    let mut objective = 0.0;
    let mut gradient = SlotGradient::zeros_like(params);
    let mut clipped = 0;
    let mut kl_sum = 0.0;
    for (sample, &adv) in group.iter().zip(advantages) {
        let lp = logprob(params, &sample.choices)?;
        let lp_ref = logprob(ref_params, &sample.choices)?;
        let grad_lp = grad_logprob(params, &sample.choices)?;
        let ratio = (lp - sample.logprob_old).exp();
        let kl = kl_estimate(lp_ref, lp);
        objective += (clipped_term(ratio, adv, epsilon) - beta * kl) / n;
        kl_sum += kl;

        // The surrogate carries gradient unless the clipped branch is the
        // strict minimum, in which case it is constant in the logits.
        let inside = (1.0 - epsilon..=1.0 + epsilon).contains(&ratio);
        let surrogate_active = inside || ratio * adv < ratio.clamp(1.0 - epsilon, 1.0 + epsilon) * adv;
        if !surrogate_active {
            clipped += 1;
        }
        let surrogate_scale = if surrogate_active { adv * ratio } else { 0.0 };
        // d KL / d logits = (1 - exp(lp_ref - lp)) * grad lp
        let kl_scale = 1.0 - (lp_ref - lp).exp();
        gradient.add_scaled(&grad_lp, (surrogate_scale - beta * kl_scale) / n);
    }
    Ok(Evaluated {
        objective,
        gradient,
        clipped,
        kl_sum,
    })
}

/// The GRPO objective for `group` at `params`.
pub fn grpo_objective(
    params: &SlotPolicyParams,
    group: &[GroupSample],
    ref_params: &SlotPolicyParams,
    cfg: &RunConfig,
) -> Result<f64, GrpoError> {
    let rewards: Vec<f64> = group.iter().map(|s| s.reward).collect();
    let adv = group_advantages(&rewards, cfg.advantage_std_floor)?;
    Ok(evaluate(params, group, &adv, ref_params, cfg.epsilon, cfg.beta)?.objective)
}

/// Analytic gradient of [`grpo_objective`] with respect to the logits.
pub fn grpo_objective_grad(
    params: &SlotPolicyParams,
    group: &[GroupSample],
    ref_params: &SlotPolicyParams,
    cfg: &RunConfig,
) -> Result<SlotGradient, GrpoError> {
    let rewards: Vec<f64> = group.iter().map(|s| s.reward).collect();
    let adv = group_advantages(&rewards, cfg.advantage_std_floor)?;
    Ok(evaluate(params, group, &adv, ref_params, cfg.epsilon, cfg.beta)?.gradient)
}

/// One ascent step: `theta + lr * grad J - lr * weight_decay * theta`.
pub fn grpo_step(
    params: &SlotPolicyParams,
    group: &[GroupSample],
    ref_params: &SlotPolicyParams,
    cfg: &RunConfig,
) -> Result<(SlotPolicyParams, StepStats), GrpoError> {
    if group.len() != cfg.group_size {
        return Err(GrpoError::GroupSizeMismatch {
            expected: cfg.group_size,
            got: group.len(),
        });
    }
    let rewards: Vec<f64> = group.iter().map(|s| s.reward).collect();
    let adv = group_advantages(&rewards, cfg.advantage_std_floor)?;
    let eval = evaluate(params, group, &adv, ref_params, cfg.epsilon, cfg.beta)?;

    let mut next = params.clone();
    for (slot, grad) in next.slots.iter_mut().zip(&eval.gradient.0) {
        for (logit, g) in slot.logits.iter_mut().zip(grad) {
            let decay = cfg.learning_rate * cfg.weight_decay * *logit;
            *logit += cfg.learning_rate * g - decay;
        }
    }
    let n = group.len() as f64;
    let stats = StepStats {
        mean_reward: rewards.iter().sum::<f64>() / n,
        mean_abs_advantage: adv.iter().map(|a| a.abs()).sum::<f64>() / n,
        clip_fraction: eval.clipped as f64 / n,
        kl_mean: eval.kl_sum / n,
        objective: eval.objective,
    };
    Ok((next, stats))
}
