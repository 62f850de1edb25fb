//! Three-part reward for generated rationales: JSON format, frequency-aware
//! rating accuracy, and analysis length, plus the linear comparison reward.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::corpus::{rating_category, RatingFrequencyTable};
use crate::{Error, Result, Scalar};

/// Which accuracy reward drives the predict part.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RewardPolicy {
    #[default]
    FrequencyAware,
    Linear,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardWeights {
    pub format: f64,
    pub predict: f64,
    pub quality: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            format: 1.0,
            predict: 1.0,
            quality: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    /// Underestimation scale λ.
    pub lambda_under: f64,
    /// Underestimation growth μ.
    pub mu_under: f64,
    /// Overestimation scale γ.
    pub gamma_over: f64,
    /// Overestimation decay κ.
    pub kappa_over: f64,
    pub len_min: usize,
    pub len_max: usize,
    pub weights: RewardWeights,
    /// Predict reward assigned to unparseable or non-finite predictions.
    pub floor: f64,
    pub policy: RewardPolicy,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            lambda_under: 0.5,
            mu_under: 1.0,
            gamma_over: 0.5,
            kappa_over: 1.0,
            len_min: 100,
            len_max: 200,
            weights: RewardWeights::default(),
            floor: -1.0,
            policy: RewardPolicy::FrequencyAware,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        let consts = [self.lambda_under, self.mu_under, self.gamma_over, self.kappa_over];
        if consts.iter().any(|&c| !(c > 0.0 && c.is_finite())) {
            return Err(Error::Config("reward penalty constants must be positive".into()));
        }
        if self.len_min == 0 || self.len_min >= self.len_max {
            return Err(Error::Config(format!(
                "need 0 < len_min < len_max, got {} and {}",
                self.len_min, self.len_max
            )));
        }
        let w = self.weights;
        if [w.format, w.predict, w.quality].iter().any(|&x| x < 0.0 || !x.is_finite()) {
            return Err(Error::Config("reward weights must be non-negative".into()));
        }
        Ok(())
    }
}

/// Per-part rewards of one sample.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown<T = f64> {
    pub format: T,
    pub predict: T,
    pub quality: T,
    pub total: T,
    /// Set when the prediction was non-finite and the floor was substituted.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub flagged: bool,
}

/// Kind of a required JSON field.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FieldKind {
    String,
    Number,
}

/// Required top-level keys of a well-formed rationale.
#[derive(Clone, Debug, PartialEq)]
pub struct FormatSchema {
    pub required: Vec<(String, FieldKind)>,
    pub analysis_key: String,
    pub rating_key: String,
}

impl Default for FormatSchema {
    fn default() -> Self {
        Self {
            required: vec![
                ("analysis".into(), FieldKind::String),
                ("rating".into(), FieldKind::Number),
            ],
            analysis_key: "analysis".into(),
            rating_key: "rating".into(),
        }
    }
}

/// The fields extracted from a well-formed rationale.
#[derive(Clone, Debug, PartialEq)]
pub struct ParsedCot {
    pub analysis: String,
    pub rating: f64,
}

/// Parses `text` as a JSON object holding every required key with the right kind.
pub fn parse_cot(text: &str, schema: &FormatSchema) -> Option<ParsedCot> {
    let value: Value = serde_json::from_str(text.trim()).ok()?;
    let obj = value.as_object()?;
    for (key, kind) in &schema.required {
        let ok = match (kind, obj.get(key)?) {
            (FieldKind::String, Value::String(_)) => true,
            (FieldKind::Number, Value::Number(_)) => true,
            _ => false,
        };
        if !ok {
            return None;
        }
    }
    Some(ParsedCot {
        analysis: obj.get(&schema.analysis_key)?.as_str()?.to_string(),
        rating: obj.get(&schema.rating_key)?.as_f64()?,
    })
}

/// 1 if the rationale is well-formed JSON with the required keys, else 0.
pub fn format_reward<T: Scalar>(cot_text: &str, schema: &FormatSchema) -> T {
    if parse_cot(cot_text, schema).is_some() {
        T::one()
    } else {
        T::zero()
    }
}

/// `exp(−e²)`.
pub fn base<T: Scalar>(e: T) -> T {
    (-(e * e)).exp()
}

/// Asymmetric penalty: exponential growth for underestimation (`e < 0`),
/// saturating for overestimation (`e ≥ 0`).
pub fn penalty<T: Scalar>(e: T, cfg: &RewardConfig) -> T {
    if e < T::zero() {
        -T::of(cfg.lambda_under) * ((T::of(cfg.mu_under) * e.abs()).exp() - T::one())
    } else {
        -T::of(cfg.gamma_over) * (T::one() - (-T::of(cfg.kappa_over) * e).exp() / (T::one() + e))
    }
}

/// Frequency-aware accuracy reward `f · (Base(e) + Penalty(e))` with `e = pred − truth`.
/// A non-finite prediction yields the configured floor.
pub fn predict_reward<T: Scalar>(pred: T, truth: T, weight_f: T, cfg: &RewardConfig) -> T {
    if !pred.is_finite() {
        return T::of(cfg.floor);
    }
    let e = pred - truth;
    weight_f * (base(e) + penalty(e, cfg))
}

/// `clamp((ℓ − ℓ_min)/(ℓ_max − ℓ_min), 0, 1)` with ℓ the character count of `text`.
pub fn quality_reward<T: Scalar>(text: &str, cfg: &RewardConfig) -> T {
    let len = text.chars().count() as f64;
    let span = (cfg.len_max - cfg.len_min) as f64;
    T::of(((len - cfg.len_min as f64) / span).clamp(0.0, 1.0))
}

/// `max(0, 1 − |pred − truth| / 4)`.
pub fn linear_reward_baseline<T: Scalar>(pred: T, truth: T) -> T {
    (T::one() - (pred - truth).abs() / T::of(4.0)).max(T::zero())
}

/// Scores one generated rationale against the ground-truth rating.
///
/// The quality part measures the `analysis` field when the output parses,
/// and the whole output otherwise. An unparseable output gets the floor as
/// its predict part.
pub fn composite_reward<T: Scalar>(
    cot_text: &str,
    truth: f64,
    table: &RatingFrequencyTable,
    cfg: &RewardConfig,
    schema: &FormatSchema,
) -> Result<RewardBreakdown<T>> {
    let weight_f = rating_category(truth)
        .and_then(|_| table.weight(truth))
        .ok_or_else(|| Error::invalid(format!("truth rating {truth} missing from frequency table")))?;
    let (format, predict, quality, flagged) = match parse_cot(cot_text, schema) {
        Some(parsed) => {
            let pred = T::of(parsed.rating);
            let predict = match cfg.policy {
                RewardPolicy::FrequencyAware => predict_reward(pred, T::of(truth), T::of(weight_f), cfg),
                RewardPolicy::Linear if pred.is_finite() => linear_reward_baseline(pred, T::of(truth)),
                RewardPolicy::Linear => T::of(cfg.floor),
            };
            (T::one(), predict, quality_reward(&parsed.analysis, cfg), !pred.is_finite())
        }
        None => (T::zero(), T::of(cfg.floor), quality_reward(cot_text, cfg), false),
    };
    Ok(weighted(format, predict, quality, &cfg.weights, flagged))
}

fn weighted<T: Scalar>(format: T, predict: T, quality: T, w: &RewardWeights, flagged: bool) -> RewardBreakdown<T> {
    RewardBreakdown {
        format,
        predict,
        quality,
        total: T::of(w.format) * format + T::of(w.predict) * predict + T::of(w.quality) * quality,
        flagged,
    }
}

/// Renders a rationale in the expected JSON shape.
pub fn render_cot(analysis: &str, rating: f64) -> String {
    serde_json::json!({ "analysis": analysis, "rating": rating }).to_string()
}
