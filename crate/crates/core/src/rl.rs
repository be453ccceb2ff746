//! Scalar pieces of group-relative policy optimization: rewards, advantages,
//! group filtering, token masks, clipped surrogate terms and the KL estimator.
//! No gradients; model probabilities come in as plain numbers.

use serde::{Deserialize, Serialize};

use crate::control::{Judge, Message, Role};
use crate::error::{Error, Result};

/// Default number of trajectories sampled per question.
pub const DEFAULT_GROUP_SIZE: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClipParams {
    pub eps_low: f64,
    pub eps_high: f64,
    /// KL penalty weight. Unused by the DAPO objective.
    pub beta: f64,
}

impl ClipParams {
    pub fn dapo() -> Self {
        ClipParams { eps_low: 0.2, eps_high: 0.28, beta: 0.0 }
    }

    pub fn grpo() -> Self {
        ClipParams { eps_low: 0.2, eps_high: 0.2, beta: 0.01 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps_low > 0.0 && self.eps_low <= self.eps_high && self.eps_low < 1.0) {
            return Err(Error::Config(format!(
                "need 0 < eps_low <= eps_high and eps_low < 1, got {} and {}",
                self.eps_low, self.eps_high
            )));
        }
        if self.beta.is_nan() || self.beta < 0.0 {
            return Err(Error::Config("beta must be non-negative".into()));
        }
        Ok(())
    }
}

impl Default for ClipParams {
    fn default() -> Self {
        ClipParams::dapo()
    }
}

/// 1 if the judge accepts the answer, 0 otherwise. No answer scores 0 without
/// consulting the judge.
pub fn compute_reward(judge: &dyn Judge, question: &str, reference: &str, answer: Option<&str>) -> Result<u8> {
    match answer {
        None => Ok(0),
        Some(a) => Ok(judge.judge(question, reference, a)? as u8),
    }
}

/// `(R_i - mean) / std` with the population standard deviation. A group
/// whose rewards are all equal gets all-zero advantages.
pub fn group_advantages(rewards: &[f64]) -> Result<Vec<f64>> {
    let g = rewards.len();
    if g < 2 {
        return Err(Error::invalid(format!("group needs at least 2 rewards, got {g}")));
    }
    if rewards.iter().any(|r| !r.is_finite()) {
        return Err(Error::invalid("rewards must be finite"));
    }
    let n = g as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if std <= 1e-12 * mean.abs().max(1.0) {
        return Ok(vec![0.0; g]);
    }
    Ok(rewards.iter().map(|r| (r - mean) / std).collect())
}

/// Keeps a group only if some but not all trajectories succeeded.
pub fn dapo_group_filter(rewards: &[f64]) -> bool {
    let sum: f64 = rewards.iter().sum();
    sum > 0.0 && sum < rewards.len() as f64
}

/// `min(r * A, clip(r, 1 - eps_low, 1 + eps_high) * A)`.
pub fn clipped_term(ratio: f64, advantage: f64, eps_low: f64, eps_high: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - eps_low, 1.0 + eps_high);
    (ratio * advantage).min(clipped * advantage)
}

/// Per-token flags marking model-generated tokens.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenMask(pub Vec<bool>);

impl TokenMask {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|b| **b).count()
    }
}

/// Marks the tokens of assistant messages, given each message's token count.
pub fn token_mask(messages: &[Message], token_counts: &[usize]) -> Result<TokenMask> {
    if messages.len() != token_counts.len() {
        return Err(Error::invalid(format!("{} messages but {} token counts", messages.len(), token_counts.len())));
    }
    let mut mask = Vec::with_capacity(token_counts.iter().sum());
    for (m, &n) in messages.iter().zip(token_counts) {
        mask.extend(std::iter::repeat_n(m.role == Role::Assistant, n));
    }
    Ok(TokenMask(mask))
}

fn check_probs(name: &str, p: &[f64]) -> Result<()> {
    match p.iter().position(|x| !(*x > 0.0 && *x <= 1.0)) {
        Some(i) => Err(Error::invalid(format!("{name}[{i}] = {} is not in (0, 1]", p[i]))),
        None => Ok(()),
    }
}

/// Masked mean of `p_ref/p - ln(p_ref/p) - 1`.
pub fn kl_estimate(p_policy: &[f64], p_reference: &[f64], mask: &TokenMask) -> Result<f64> {
    if p_policy.len() != p_reference.len() || p_policy.len() != mask.len() {
        return Err(Error::invalid(format!(
            "length mismatch: policy {}, reference {}, mask {}",
            p_policy.len(),
            p_reference.len(),
            mask.len()
        )));
    }
    check_probs("p_policy", p_policy)?;
    check_probs("p_reference", p_reference)?;
    let n = mask.count();
    if n == 0 {
        return Err(Error::invalid("mask selects no tokens"));
    }
    let sum: f64 = p_policy
        .iter()
        .zip(p_reference)
        .zip(&mask.0)
        .filter(|(_, m)| **m)
        .map(|((p, q), _)| {
            let x = q / p;
            x - x.ln() - 1.0
        })
        .sum();
    Ok(sum / n as f64)
}

/// Importance ratios of one trajectory with its token mask.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenRatios {
    pub ratios: Vec<f64>,
    pub mask: TokenMask,
}

fn check_group(trajs: &[TokenRatios], advantages: &[f64]) -> Result<()> {
    if trajs.len() != advantages.len() {
        return Err(Error::invalid("one advantage per trajectory required"));
    }
    for t in trajs {
        if t.ratios.len() != t.mask.len() {
            return Err(Error::invalid("ratio and mask lengths differ"));
        }
        if t.ratios.iter().any(|r| !r.is_finite() || *r <= 0.0) {
            return Err(Error::invalid("ratios must be positive and finite"));
        }
    }
    Ok(())
}

/// Token-level mean of clipped terms over every generated token in the group.
pub fn dapo_objective(trajs: &[TokenRatios], advantages: &[f64], params: &ClipParams) -> Result<f64> {
    params.validate()?;
    check_group(trajs, advantages)?;
    let mut total = 0.0;
    let mut count = 0usize;
    for (t, &a) in trajs.iter().zip(advantages) {
        for (&r, _) in t.ratios.iter().zip(&t.mask.0).filter(|(_, m)| **m) {
            total += clipped_term(r, a, params.eps_low, params.eps_high);
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::invalid("group has no generated tokens"));
    }
    Ok(total / count as f64)
}

/// Mean over trajectories of (per-trajectory token mean of clipped terms
/// minus `beta` times that trajectory's KL estimate).
pub fn grpo_objective(trajs: &[TokenRatios], advantages: &[f64], kls: &[f64], params: &ClipParams) -> Result<f64> {
    params.validate()?;
    check_group(trajs, advantages)?;
    if kls.len() != trajs.len() {
        return Err(Error::invalid("one KL estimate per trajectory required"));
    }
    let mut total = 0.0;
    for ((t, &a), &kl) in trajs.iter().zip(advantages).zip(kls) {
        let n = t.mask.count();
        if n == 0 {
            return Err(Error::invalid("trajectory has no generated tokens"));
        }
        let s: f64 = t
            .ratios
            .iter()
            .zip(&t.mask.0)
            .filter(|(_, m)| **m)
            .map(|(&r, _)| clipped_term(r, a, params.eps_low, params.eps_high))
            .sum();
        total += s / n as f64 - params.beta * kl;
    }
    Ok(total / trajs.len() as f64)
}

/// One line of `score` input.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreInput {
    pub question: String,
    pub reference: String,
    /// One entry per sampled trajectory; `null` for a trajectory without an answer.
    pub answers: Vec<Option<String>>,
}

/// One line of `score` output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreOutput {
    pub question: String,
    pub rewards: Vec<u8>,
    pub keep: bool,
    pub advantages: Vec<f64>,
}

pub fn score_group(input: &ScoreInput, judge: &dyn Judge) -> Result<ScoreOutput> {
    let rewards = input
        .answers
        .iter()
        .map(|a| compute_reward(judge, &input.question, &input.reference, a.as_deref()))
        .collect::<Result<Vec<u8>>>()?;
    let r: Vec<f64> = rewards.iter().map(|&x| x as f64).collect();
    Ok(ScoreOutput {
        question: input.question.clone(),
        keep: dapo_group_filter(&r),
        advantages: group_advantages(&r)?,
        rewards,
    })
}
