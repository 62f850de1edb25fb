//! Reward-policy comparison on a long-tail corpus: trains the toy policy with
//! each accuracy reward and measures minority-class behaviour.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::corpus::{build_frequency_table, FrequencyMode, ReviewRecord};
use crate::grpo::{train, AdvantageMode, GrpoConfig, Policy, Prompt, ToyTemplatePolicy, TrainReport};
use crate::reward::{composite_reward, parse_cot, FormatSchema, RewardConfig, RewardPolicy};
use crate::synth::{long_tail_corpus, LongTailConfig, SentimentLexicon, TextConfig};
use crate::{Error, Result};

/// Ratings at or below this are minority categories.
pub const MINORITY_MAX: f64 = 3.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyEvaluation {
    pub mae: f64,
    /// MAE over records whose true rating is a minority category.
    pub minority_mae: f64,
    /// Share of predictions that fall in a minority category.
    pub minority_prediction_rate: f64,
    pub count: usize,
}

/// Greedy predictions of `policy` scored against `records`.
pub fn evaluate_policy<P: Policy<f64> + ?Sized>(policy: &P, records: &[ReviewRecord]) -> Result<PolicyEvaluation> {
    if records.is_empty() {
        return Err(Error::invalid("cannot evaluate a policy on no records"));
    }
    let schema = FormatSchema::default();
    let (mut abs, mut min_abs, mut min_n, mut min_pred) = (0.0, 0.0, 0usize, 0usize);
    for r in records {
        let pred = parse_cot(&policy.decode(&r.review_text), &schema)
            .map(|p| p.rating)
            .ok_or_else(|| Error::invalid("policy decoded an unparseable rationale"))?;
        let e = (pred - r.rating).abs();
        abs += e;
        if r.rating <= MINORITY_MAX {
            min_abs += e;
            min_n += 1;
        }
        if pred.round() <= MINORITY_MAX {
            min_pred += 1;
        }
    }
    let n = records.len() as f64;
    Ok(PolicyEvaluation {
        mae: abs / n,
        minority_mae: if min_n == 0 { f64::NAN } else { min_abs / min_n as f64 },
        minority_prediction_rate: min_pred as f64 / n,
        count: records.len(),
    })
}

/// Trains a fresh toy policy on `train` with the given reward.
pub fn train_toy_policy(
    train_records: &[ReviewRecord],
    lexicon: Arc<SentimentLexicon>,
    analysis_len: usize,
    reward: &RewardConfig,
    grpo: &GrpoConfig,
) -> Result<(ToyTemplatePolicy<f64>, TrainReport)> {
    reward.validate()?;
    let table = build_frequency_table(train_records, FrequencyMode::Inverse)?;
    let prompts: Vec<Prompt> = train_records
        .iter()
        .map(|r| Prompt { text: r.review_text.clone(), truth: r.rating })
        .collect();
    let reference = ToyTemplatePolicy::new(lexicon, analysis_len);
    let mut policy = reference.clone();
    let schema = FormatSchema::default();
    let report = train(
        &mut policy,
        &reference,
        &prompts,
        |p: &Prompt, out: &str| composite_reward(out, p.truth, &table, reward, &schema),
        grpo,
    )?;
    Ok((policy, report))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardComparisonConfig {
    pub corpus: LongTailConfig,
    pub grpo: GrpoConfig,
    pub reward: RewardConfig,
    pub analysis_len: usize,
    /// Share of the corpus held out for evaluation.
    pub eval_fraction: f64,
}

impl Default for RewardComparisonConfig {
    fn default() -> Self {
        Self {
            corpus: LongTailConfig {
                text: TextConfig { cue_words: 1, cue_accuracy: 0.9 },
                ..LongTailConfig::default()
            },
            grpo: GrpoConfig {
                advantage: AdvantageMode::GroupMean,
                learning_rate: 0.1,
                steps: 10_000,
                ..GrpoConfig::default()
            },
            reward: RewardConfig::default(),
            analysis_len: 160,
            eval_fraction: 0.25,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardComparison {
    pub seed: u64,
    pub frequency_aware: PolicyEvaluation,
    pub linear: PolicyEvaluation,
}

/// Builds a long-tail corpus for `seed` and trains one policy per reward.
pub fn compare_reward_policies(cfg: &RewardComparisonConfig, seed: u64) -> Result<RewardComparison> {
    let lexicon = Arc::new(SentimentLexicon::english());
    let corpus = long_tail_corpus(&LongTailConfig { seed, ..cfg.corpus.clone() }, &lexicon)?;
    let cut = ((1.0 - cfg.eval_fraction) * corpus.len() as f64).round() as usize;
    let (train_records, eval_records) = corpus.split_at(cut);
    let outcome = |policy: RewardPolicy| -> Result<PolicyEvaluation> {
        let reward = RewardConfig { policy, ..cfg.reward.clone() };
        let grpo = GrpoConfig { seed, ..cfg.grpo.clone() };
        let (trained, _) = train_toy_policy(train_records, lexicon.clone(), cfg.analysis_len, &reward, &grpo)?;
        evaluate_policy(&trained, eval_records)
    };
    Ok(RewardComparison {
        seed,
        frequency_aware: outcome(RewardPolicy::FrequencyAware)?,
        linear: outcome(RewardPolicy::Linear)?,
    })
}
