use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::algebra::{group_mean_advantages, kl_estimate_capped, normalize_advantages, objective_gradient};
use super::{grpo_objective, CoTSample, Policy};
use crate::reward::{parse_cot, FormatSchema, RewardBreakdown};
use crate::{seeded_rng, Error, Result, Scalar};

/// How rewards within a group become advantages.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdvantageMode {
    /// `(r − mean) / std`.
    #[default]
    GroupStd,
    /// `r − mean`; keeps reward magnitude, so group-constant reward scales survive.
    GroupMean,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GrpoConfig {
    pub group_size: usize,
    pub clip_eps: f64,
    pub kl_beta: f64,
    pub learning_rate: f64,
    pub steps: usize,
    pub seed: u64,
    pub advantage: AdvantageMode,
    /// Gradient steps taken per sampled group before the old policy is refreshed.
    pub inner_epochs: usize,
    /// Central-difference step used when the policy has no exact gradient.
    pub fd_step: f64,
    pub kl_ratio_cap: f64,
    /// Language-model fine-tuning settings; recorded for reference, unused by the toy policy.
    pub llm_batch_size: usize,
    pub llm_learning_rate: f64,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        Self {
            group_size: 8,
            clip_eps: 0.2,
            kl_beta: 0.04,
            learning_rate: 0.1,
            steps: 2000,
            seed: 0,
            advantage: AdvantageMode::GroupStd,
            inner_epochs: 1,
            fd_step: 1e-4,
            kl_ratio_cap: 1e12,
            llm_batch_size: 4,
            llm_learning_rate: 2e-4,
        }
    }
}

impl GrpoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.group_size < 2 {
            return Err(Error::Config("group_size must be at least 2".into()));
        }
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return Err(Error::Config("clip_eps must lie in (0, 1)".into()));
        }
        // A zero learning rate is accepted as a no-op optimiser.
        if !(self.kl_beta >= 0.0) || !(self.learning_rate >= 0.0) || !(self.fd_step > 0.0) {
            return Err(Error::Config("kl_beta and learning_rate must be >= 0, fd_step > 0".into()));
        }
        if self.inner_epochs == 0 {
            return Err(Error::Config("inner_epochs must be at least 1".into()));
        }
        if !(self.kl_ratio_cap > 1.0) {
            return Err(Error::Config("kl_ratio_cap must exceed 1".into()));
        }
        Ok(())
    }
}

/// A training prompt with its ground-truth rating.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prompt {
    pub text: String,
    pub truth: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub step: usize,
    pub mean_reward: f64,
    pub mean_kl: f64,
    pub clip_fraction: f64,
    pub kl_saturated: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub steps: Vec<StepStats>,
}

impl TrainReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,mean_reward,mean_kl,mean_clip_fraction,kl_saturated\n");
        for s in &self.steps {
            out.push_str(&format!(
                "{},{:.6},{:.6},{:.6},{}\n",
                s.step, s.mean_reward, s.mean_kl, s.clip_fraction, s.kl_saturated
            ));
        }
        out
    }

    /// Mean reward over the last `n` steps.
    pub fn tail_reward(&self, n: usize) -> f64 {
        let tail = &self.steps[self.steps.len().saturating_sub(n)..];
        if tail.is_empty() {
            return 0.0;
        }
        tail.iter().map(|s| s.mean_reward).sum::<f64>() / tail.len() as f64
    }
}

fn finite_difference<T: Scalar, P: Policy<T> + Clone>(
    group: &[CoTSample<T>],
    policy: &P,
    cfg: &GrpoConfig,
) -> Result<Vec<T>> {
    let base = policy.parameters();
    let h = T::of(cfg.fd_step);
    let two = T::of(2.0);
    let mut probe = policy.clone();
    let mut theta = base.clone();
    let mut grad = Vec::with_capacity(base.len());
    for i in 0..base.len() {
        theta[i] = base[i] + h;
        probe.set_parameters(&theta)?;
        let up = grpo_objective(group, &probe, cfg)?;
        theta[i] = base[i] - h;
        probe.set_parameters(&theta)?;
        let down = grpo_objective(group, &probe, cfg)?;
        theta[i] = base[i];
        grad.push((up - down) / (two * h));
    }
    Ok(grad)
}

/// Runs GRPO on `policy`, keeping `reference` frozen for the KL term.
///
/// `score` maps (prompt, output) to a reward breakdown. The old policy is the
/// parameter snapshot at sampling time and is refreshed every step.
pub fn train<T, P, F>(
    policy: &mut P,
    reference: &P,
    prompts: &[Prompt],
    mut score: F,
    cfg: &GrpoConfig,
) -> Result<TrainReport>
where
    T: Scalar,
    P: Policy<T> + Clone,
    F: FnMut(&Prompt, &str) -> Result<RewardBreakdown<T>>,
{
    cfg.validate()?;
    if prompts.is_empty() {
        return Err(Error::invalid("GRPO training needs at least one prompt"));
    }
    let mut rng = seeded_rng(cfg.seed);
    let schema = FormatSchema::default();
    let eps = cfg.clip_eps;
    let cap = T::of(cfg.kl_ratio_cap);
    let mut report = TrainReport::default();
    for step in 0..cfg.steps {
        let prompt = &prompts[rng.gen_range(0..prompts.len())];
        let sampled = policy.sample(&prompt.text, cfg.group_size, &mut rng);
        let mut rewards = Vec::with_capacity(sampled.len());
        let mut breakdowns = Vec::with_capacity(sampled.len());
        for s in &sampled {
            let b = score(prompt, &s.output)?;
            rewards.push(b.total);
            breakdowns.push(b);
        }
        let advantages = match cfg.advantage {
            AdvantageMode::GroupStd => normalize_advantages(&rewards)?,
            AdvantageMode::GroupMean => group_mean_advantages(&rewards)?,
        };
        let mut kl_sum = 0.0;
        let mut saturated = 0;
        let group: Vec<CoTSample<T>> = sampled
            .into_iter()
            .zip(breakdowns)
            .zip(advantages)
            .map(|((s, reward), advantage)| {
                let logp_ref = reference.log_prob(&prompt.text, &s.output);
                let (kl, sat) = kl_estimate_capped(logp_ref, s.log_prob, cap);
                kl_sum += kl.as_f64();
                saturated += usize::from(sat);
                CoTSample {
                    prompt: prompt.text.clone(),
                    parsed_rating: parse_cot(&s.output, &schema).map(|p| p.rating),
                    output_text: s.output,
                    truth_rating: prompt.truth,
                    logp_old: s.log_prob,
                    logp_ref,
                    reward,
                    advantage,
                }
            })
            .collect();

        let mut clipped = 0usize;
        for _ in 0..cfg.inner_epochs {
            clipped = group
                .iter()
                .filter(|s| {
                    let r = (policy.log_prob(&s.prompt, &s.output_text) - s.logp_old).as_f64().exp();
                    r < 1.0 - eps || r > 1.0 + eps
                })
                .count();
            let grad = match objective_gradient(&group, &*policy, cfg)? {
                Some(g) => g,
                None => finite_difference(&group, &*policy, cfg)?,
            };
            if !crate::scalar::all_finite(&grad) {
                return Err(Error::NonFinite(format!("GRPO gradient at step {step}")));
            }
            policy.apply_gradient(&grad, T::of(cfg.learning_rate))?;
        }
        let n = group.len() as f64;
        report.steps.push(StepStats {
            step,
            mean_reward: rewards.iter().map(|r| r.as_f64()).sum::<f64>() / n,
            mean_kl: kl_sum / n,
            clip_fraction: clipped as f64 / n,
            kl_saturated: saturated,
        });
    }
    Ok(report)
}
