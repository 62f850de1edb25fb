use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{FrequencyMode, SchemaMapping};
use crate::encoder::EncoderConfig;
use crate::grpo::GrpoConfig;
use crate::recsys::RecsysConfig;
use crate::reward::{RewardConfig, RewardPolicy};
use crate::synth::SentimentLexicon;
use crate::{Error, Result};

/// Which ablation of the cascade to run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    #[default]
    Full,
    /// Empty rationales; the policy stages are skipped.
    NoCot,
    /// Empty rationales, item metadata appended to the encoder input.
    NoCotItem,
    /// Full cascade trained with the linear accuracy reward.
    LinearReward,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Full, Variant::NoCot, Variant::NoCotItem, Variant::LinearReward];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoCot => "no_cot",
            Variant::NoCotItem => "no_cot_item",
            Variant::LinearReward => "linear_reward",
        }
    }

    /// Row label used in reports.
    pub fn label(self) -> &'static str {
        match self {
            Variant::Full => "RecCoT",
            Variant::NoCot => "RecCoT(w/o CoT)",
            Variant::NoCotItem => "RecCoT(w/o CoT)+item",
            Variant::LinearReward => "RecCoT(linear reward)",
        }
    }

    pub fn uses_cot(self) -> bool {
        matches!(self, Variant::Full | Variant::LinearReward)
    }

    pub fn item_side_text(self) -> bool {
        self == Variant::NoCotItem
    }

    pub fn reward_policy(self) -> RewardPolicy {
        match self {
            Variant::LinearReward => RewardPolicy::Linear,
            _ => RewardPolicy::FrequencyAware,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant {s} (expected full, no_cot, no_cot_item or linear_reward)")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    /// Review JSONL, one object per line.
    pub reviews: PathBuf,
    pub schema: SchemaMapping,
    pub k_core: usize,
    /// Train, validation and test shares.
    pub split: [f64; 3],
    pub frequency_mode: FrequencyMode,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            reviews: PathBuf::from("reviews.jsonl"),
            schema: SchemaMapping::default(),
            k_core: 5,
            split: [0.8, 0.1, 0.1],
            frequency_mode: FrequencyMode::Inverse,
        }
    }
}

/// Settings of the template policy that writes rationales.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyConfig {
    /// Target analysis length in characters.
    pub analysis_len: usize,
    /// Sentiment vocabulary per class; 0 selects the built-in English list.
    pub words_per_class: usize,
    pub lexicon_seed: u64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            analysis_len: 150,
            words_per_class: 0,
            lexicon_seed: 7,
        }
    }
}

impl PolicyConfig {
    pub fn lexicon(&self) -> SentimentLexicon {
        if self.words_per_class == 0 {
            SentimentLexicon::english()
        } else {
            SentimentLexicon::generated(self.words_per_class, self.lexicon_seed)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default = "default_dataset")]
    pub dataset: String,
    /// Master seed; split, policy, encoder and recommender seeds derive from it.
    pub seed: u64,
    #[serde(default)]
    pub variant: Variant,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub reward: RewardConfig,
    #[serde(default)]
    pub grpo: GrpoConfig,
    #[serde(default)]
    pub policy: PolicyConfig,
    #[serde(default)]
    pub encoder: EncoderConfig,
    #[serde(default)]
    pub recsys: RecsysConfig,
}

fn default_dataset() -> String {
    "dataset".into()
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

impl ExperimentConfig {
    pub fn new(seed: u64) -> Self {
        let mut cfg = Self {
            dataset: default_dataset(),
            seed,
            variant: Variant::Full,
            output_dir: default_output_dir(),
            data: DataConfig::default(),
            reward: RewardConfig::default(),
            grpo: GrpoConfig::default(),
            policy: PolicyConfig::default(),
            encoder: EncoderConfig::default(),
            recsys: RecsysConfig::default(),
        };
        cfg.set_seed(seed);
        cfg
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let mut cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.set_seed(cfg.seed);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Sets the master seed and re-derives the per-stage seeds.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.grpo.seed = seed;
        self.encoder.seed = seed.wrapping_add(1);
        self.recsys.seed = seed.wrapping_add(2);
    }

    pub fn validate(&self) -> Result<()> {
        self.reward.validate()?;
        self.grpo.validate()?;
        self.encoder.validate()?;
        self.recsys.validate()?;
        let [tr, va, te] = self.data.split;
        if tr <= 0.0 || va <= 0.0 || te <= 0.0 || (tr + va + te - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("data.split must be positive and sum to 1, got {:?}", self.data.split)));
        }
        if self.policy.analysis_len == 0 {
            return Err(Error::Config("policy.analysis_len must be positive".into()));
        }
        if self.dataset.is_empty() {
            return Err(Error::Config("dataset name must not be empty".into()));
        }
        Ok(())
    }
}
