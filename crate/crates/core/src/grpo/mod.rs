//! Group-relative policy optimisation over a pluggable [`Policy`].
//!
//! Each step samples a group of outputs for one prompt from the frozen old
//! policy, scores them, turns rewards into group-relative advantages and
//! ascends the clipped surrogate minus a KL penalty toward a reference policy.

mod algebra;
mod toy;
mod train;
mod twofold;

pub use algebra::{
    group_mean_advantages, kl_estimate, kl_estimate_capped, normalize_advantages, objective_gradient,
    grpo_objective, surrogate_term, STD_FLOOR,
};
pub use toy::{prompt_features, rating_grid, ToyTemplatePolicy, GRID_CELLS};
pub use train::{train, AdvantageMode, GrpoConfig, Prompt, StepStats, TrainReport};
pub use twofold::{annotate_record, generate_cot_two_fold, CotRecord};

use serde::{Deserialize, Serialize};

use crate::reward::RewardBreakdown;
use crate::{Result, Rng, Scalar};

/// One sampled output and its log-probability under the sampling parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Sampled<T> {
    pub output: String,
    pub log_prob: T,
}

/// Behaviour contract for anything GRPO can optimise.
///
/// Log-probabilities are sequence-level: one scalar per output.
pub trait Policy<T: Scalar> {
    fn sample(&self, prompt: &str, count: usize, rng: &mut Rng) -> Vec<Sampled<T>>;

    fn log_prob(&self, prompt: &str, output: &str) -> T;

    fn parameters(&self) -> Vec<T>;

    fn set_parameters(&mut self, params: &[T]) -> Result<()>;

    /// Gradient ascent: `θ ← θ + learning_rate · grad`.
    fn apply_gradient(&mut self, grad: &[T], learning_rate: T) -> Result<()> {
        let mut params = self.parameters();
        if params.len() != grad.len() {
            return Err(crate::Error::Shape(format!(
                "gradient has {} entries, policy has {}",
                grad.len(),
                params.len()
            )));
        }
        for (p, &g) in params.iter_mut().zip(grad) {
            *p = *p + learning_rate * g;
        }
        self.set_parameters(&params)
    }

    /// Exact `∇θ log π(output | prompt)`, when the policy can provide it.
    fn grad_log_prob(&self, _prompt: &str, _output: &str) -> Option<Vec<T>> {
        None
    }

    /// Most likely output (greedy decoding).
    fn decode(&self, prompt: &str) -> String;
}

/// A scored member of a sampling group.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoTSample<T = f64> {
    pub prompt: String,
    pub output_text: String,
    pub parsed_rating: Option<f64>,
    pub truth_rating: f64,
    pub logp_old: T,
    pub logp_ref: T,
    pub reward: RewardBreakdown<T>,
    pub advantage: T,
}
