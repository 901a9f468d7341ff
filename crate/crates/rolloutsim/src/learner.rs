//! Training-side math and bookkeeping: policy version clock, behavior
//! logprob assembly for importance sampling, the clipped policy objective,
//! GAE and batch-normalized advantages, and staleness accounting.
//!
//! There is no parameter optimization here; an "update" advances the policy
//! clock. New-policy logprobs are synthesized with the same deterministic
//! function the engine uses, so the importance ratio differs from 1 exactly
//! when a token is stale.

use crate::buffer::BufferEntry;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum LearnerError {
    #[error("entry {0} is not completed")]
    IncompleteEntry(u64),
    #[error("batch must contain at least 2 rewards, got {0}")]
    BatchTooSmall(usize),
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("non-finite input: {0}")]
    NonFinite(String),
}

/// Clip and advantage-estimation hyperparameters. The clip range is
/// asymmetric (clip-higher): `eps_high` may exceed `eps_low`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hyperparams {
    pub eps_low: f64,
    pub eps_high: f64,
    pub gamma: f64,
    pub lambda: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self { eps_low: 0.2, eps_high: 0.28, gamma: 1.0, lambda: 1.0 }
    }
}

/// Monotone policy version counter; one increment per applied update.
#[derive(Debug, Default, Clone, Copy, PartialEq)]
pub struct PolicyClock {
    pub version: u32,
}

/// Per-token staleness distribution of one applied update.
#[derive(Debug, Clone, PartialEq)]
pub struct StalenessStats {
    pub p50: u32,
    pub max: u32,
    /// histogram[s] = token count with staleness s.
    pub histogram: Vec<u64>,
}

/// Flattens a completed entry's segments into per-token
/// (behavior logprob, generating version) records.
pub fn assemble_behavior_logprobs(entry: &BufferEntry) -> Result<Vec<(f64, u32)>, LearnerError> {
    if !entry.completed {
        return Err(LearnerError::IncompleteEntry(entry.request_id));
    }
    Ok(entry
        .segments
        .iter()
        .flat_map(|seg| seg.values.iter().map(|&(_, lp)| (lp, seg.policy_version)))
        .collect())
}

/// Batch-normalized advantage: (R_i - mean) / population std; a zero-spread
/// batch yields all-zero advantages.
pub fn reinforce_pp_advantage(rewards: &[f64]) -> Result<Vec<f64>, LearnerError> {
    if rewards.len() < 2 {
        return Err(LearnerError::BatchTooSmall(rewards.len()));
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if std == 0.0 {
        return Ok(vec![0.0; rewards.len()]);
    }
    Ok(rewards.iter().map(|r| (r - mean) / std).collect())
}

/// Generalized advantage estimation by backward recursion:
/// A_t = delta_t + gamma*lambda*A_{t+1}, delta_t = r_t + gamma*V_{t+1} - V_t.
///
/// `values` carries one bootstrap entry beyond `rewards`.
pub fn gae_advantage(
    rewards: &[f64],
    values: &[f64],
    gamma: f64,
    lambda: f64,
) -> Result<Vec<f64>, LearnerError> {
    if values.len() != rewards.len() + 1 {
        return Err(LearnerError::LengthMismatch(format!(
            "expected |values| = |rewards| + 1, got {} and {}",
            values.len(),
            rewards.len()
        )));
    }
    let mut advantages = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        let delta = rewards[t] + gamma * values[t + 1] - values[t];
        acc = delta + gamma * lambda * acc;
        advantages[t] = acc;
    }
    Ok(advantages)
}

/// Clipped policy objective with asymmetric bounds.
///
/// Per token: min(ratio*A, clip(ratio, 1 - eps_low, 1 + eps_high)*A) with
/// ratio = exp(new - behavior); returns the token mean and per-token ratios.
pub fn ppo_objective(
    new_logprobs: &[f64],
    behavior_logprobs: &[f64],
    advantages: &[f64],
    hp: &Hyperparams,
) -> Result<(f64, Vec<f64>), LearnerError> {
    if new_logprobs.len() != behavior_logprobs.len() || new_logprobs.len() != advantages.len() {
        return Err(LearnerError::LengthMismatch(format!(
            "got {} new, {} behavior, {} advantages",
            new_logprobs.len(),
            behavior_logprobs.len(),
            advantages.len()
        )));
    }
    let mut sum = 0.0;
    let mut ratios = Vec::with_capacity(new_logprobs.len());
    for ((&new, &old), &adv) in new_logprobs.iter().zip(behavior_logprobs).zip(advantages) {
        if !new.is_finite() || !old.is_finite() || !adv.is_finite() {
            return Err(LearnerError::NonFinite(format!("new={new}, behavior={old}, adv={adv}")));
        }
        let ratio = (new - old).exp();
        let clipped = ratio.clamp(1.0 - hp.eps_low, 1.0 + hp.eps_high);
        sum += (ratio * adv).min(clipped * adv);
        ratios.push(ratio);
    }
    let count = ratios.len().max(1) as f64;
    Ok((sum / count, ratios))
}

/// Advances the policy clock and reports the staleness distribution of the
/// consumed tokens: (version at update) - (generating version), where the
/// version at update is the clock value before the increment.
pub fn apply_update(clock: &mut PolicyClock, token_versions: &[u32]) -> StalenessStats {
    let at_update = clock.version;
    clock.version += 1;
    let mut staleness: Vec<u32> =
        token_versions.iter().map(|&v| at_update.saturating_sub(v)).collect();
    staleness.sort_unstable();
    let max = staleness.last().copied().unwrap_or(0);
    let p50 = if staleness.is_empty() { 0 } else { staleness[staleness.len() / 2] };
    let mut histogram = vec![0u64; max as usize + 1];
    for s in staleness {
        histogram[s as usize] += 1;
    }
    StalenessStats { p50, max, histogram }
}
