use serde::{Deserialize, Serialize};

use super::Policy;
use crate::corpus::{CorpusSplit, Fold, ReviewRecord};
use crate::reward::{parse_cot, FormatSchema, RewardBreakdown};
use crate::{Error, Result, Scalar};

/// A review annotated with a generated rationale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CotRecord {
    #[serde(flatten)]
    pub record: ReviewRecord,
    pub cot_text: String,
    pub predicted_rating: Option<f64>,
    /// Fold whose policy generated the rationale.
    pub generator_fold: Fold,
    pub rewards: RewardBreakdown,
}

/// Greedy-decodes a rationale for one review and scores it.
pub fn annotate_record<T, P, S>(policy: &P, generator_fold: Fold, record: &ReviewRecord, score: &S) -> Result<CotRecord>
where
    T: Scalar,
    P: Policy<T> + ?Sized,
    S: Fn(&str, f64) -> Result<RewardBreakdown> + ?Sized,
{
    let cot_text = policy.decode(&record.review_text);
    Ok(CotRecord {
        predicted_rating: parse_cot(&cot_text, &FormatSchema::default()).map(|p| p.rating),
        rewards: score(&cot_text, record.rating)?,
        record: record.clone(),
        cot_text,
        generator_fold,
    })
}

/// Annotates every training review with the policy trained on the other fold.
///
/// `policy_a` was trained on fold A, so it annotates fold B, and vice versa.
pub fn generate_cot_two_fold<T, P, S>(policy_a: &P, policy_b: &P, split: &CorpusSplit, score: &S) -> Result<Vec<CotRecord>>
where
    T: Scalar,
    P: Policy<T> + ?Sized,
    S: Fn(&str, f64) -> Result<RewardBreakdown> + ?Sized,
{
    if split.folds.len() != split.train.len() {
        return Err(Error::invalid(format!(
            "{} training records but {} fold assignments",
            split.train.len(),
            split.folds.len()
        )));
    }
    for fold in [Fold::A, Fold::B] {
        if !split.folds.contains(&fold) {
            return Err(Error::invalid(format!("fold {fold} is empty")));
        }
    }
    split
        .train
        .iter()
        .zip(&split.folds)
        .map(|(record, &fold)| {
            let generator = fold.other();
            let policy = match generator {
                Fold::A => policy_a,
                Fold::B => policy_b,
            };
            annotate_record(policy, generator, record, score)
        })
        .collect()
}
