use super::{CoTSample, GrpoConfig, Policy};
use crate::{Error, Result, Scalar};

/// Standard deviations below this are treated as zero.
pub const STD_FLOOR: f64 = 1e-8;

/// `(r − mean) / std` with the population standard deviation; a group whose
/// std is below [`STD_FLOOR`] gets all-zero advantages.
pub fn normalize_advantages<T: Scalar>(rewards: &[T]) -> Result<Vec<T>> {
    if rewards.len() < 2 {
        return Err(Error::invalid("advantage normalisation needs at least 2 rewards"));
    }
    let n = T::of(rewards.len() as f64);
    let mean = rewards.iter().copied().sum::<T>() / n;
    let var = rewards.iter().map(|&r| (r - mean) * (r - mean)).sum::<T>() / n;
    let std = var.sqrt();
    if std < T::of(STD_FLOOR) {
        return Ok(vec![T::zero(); rewards.len()]);
    }
    Ok(rewards.iter().map(|&r| (r - mean) / std).collect())
}

/// Mean-baseline advantages `r − mean`, without the std division.
pub fn group_mean_advantages<T: Scalar>(rewards: &[T]) -> Result<Vec<T>> {
    if rewards.len() < 2 {
        return Err(Error::invalid("advantage estimation needs at least 2 rewards"));
    }
    let mean = rewards.iter().copied().sum::<T>() / T::of(rewards.len() as f64);
    Ok(rewards.iter().map(|&r| r - mean).collect())
}

/// `x − ln x − 1` with `x = π_ref / π_θ = exp(logp_ref − logp_cur)`.
/// Returns the estimate and whether `x` was clamped to `ratio_cap`.
pub fn kl_estimate_capped<T: Scalar>(logp_ref: T, logp_cur: T, ratio_cap: T) -> (T, bool) {
    let log_x = logp_ref - logp_cur;
    let cap_log = ratio_cap.ln();
    let (log_x, saturated) = if log_x > cap_log {
        (cap_log, true)
    } else {
        (log_x, false)
    };
    let x = log_x.exp();
    ((x - log_x - T::one()).max(T::zero()), saturated)
}

/// [`kl_estimate_capped`] with a ratio cap of 1e12.
pub fn kl_estimate<T: Scalar>(logp_ref: T, logp_cur: T) -> T {
    kl_estimate_capped(logp_ref, logp_cur, T::of(1e12)).0
}

/// `min(ρA, clip(ρ, 1−ε, 1+ε)A)` with `ρ = exp(logp_cur − logp_old)`.
pub fn surrogate_term<T: Scalar>(logp_cur: T, logp_old: T, advantage: T, eps: T) -> T {
    let ratio = (logp_cur - logp_old).exp();
    let clipped = ratio.max(T::one() - eps).min(T::one() + eps);
    (ratio * advantage).min(clipped * advantage)
}

fn check_group<T: Scalar>(group: &[CoTSample<T>]) -> Result<()> {
    let first = group
        .first()
        .ok_or_else(|| Error::invalid("GRPO objective over an empty group"))?;
    if group.iter().any(|s| s.prompt != first.prompt) {
        return Err(Error::invalid("all samples in a group must share a prompt"));
    }
    Ok(())
}

/// Mean over the group of `surrogate − β · KL`, using the policy's current log-probs.
pub fn grpo_objective<T: Scalar, P: Policy<T> + ?Sized>(
    group: &[CoTSample<T>],
    policy: &P,
    cfg: &GrpoConfig,
) -> Result<T> {
    check_group(group)?;
    let eps = T::of(cfg.clip_eps);
    let beta = T::of(cfg.kl_beta);
    let cap = T::of(cfg.kl_ratio_cap);
    let total: T = group
        .iter()
        .map(|s| {
            let cur = policy.log_prob(&s.prompt, &s.output_text);
            surrogate_term(cur, s.logp_old, s.advantage, eps) - beta * kl_estimate_capped(s.logp_ref, cur, cap).0
        })
        .sum();
    Ok(total / T::of(group.len() as f64))
}

/// Exact gradient of [`grpo_objective`], if the policy exposes `∇ log π`.
///
/// The clipped branch contributes nothing once it is the active minimum;
/// the KL term contributes `−β (1 − x) ∇ log π`.
pub fn objective_gradient<T: Scalar, P: Policy<T> + ?Sized>(
    group: &[CoTSample<T>],
    policy: &P,
    cfg: &GrpoConfig,
) -> Result<Option<Vec<T>>> {
    check_group(group)?;
    let eps = T::of(cfg.clip_eps);
    let beta = T::of(cfg.kl_beta);
    let cap = T::of(cfg.kl_ratio_cap);
    let mut total: Option<Vec<T>> = None;
    for s in group {
        let Some(g) = policy.grad_log_prob(&s.prompt, &s.output_text) else {
            return Ok(None);
        };
        let cur = policy.log_prob(&s.prompt, &s.output_text);
        let ratio = (cur - s.logp_old).exp();
        let clipped = ratio.max(T::one() - eps).min(T::one() + eps);
        let d_surr = if ratio * s.advantage <= clipped * s.advantage {
            s.advantage * ratio
        } else {
            T::zero()
        };
        let log_x = s.logp_ref - cur;
        let d_kl = if log_x > cap.ln() {
            T::zero()
        } else {
            T::one() - log_x.exp()
        };
        let coef = d_surr - beta * d_kl;
        let acc = total.get_or_insert_with(|| vec![T::zero(); g.len()]);
        for (a, gi) in acc.iter_mut().zip(g) {
            *a = *a + coef * gi;
        }
    }
    let n = T::of(group.len() as f64);
    Ok(total.map(|v| v.into_iter().map(|x| x / n).collect()))
}
