//! Stage-by-stage experiment harness driven by one TOML config.
//!
//! Stages, in order (each consumes the artifacts of the ones before it):
//!
//! ```text
//! ingest → stats → grpo-train → cot-generate → encoder-train → embed → rec-train → rec-eval → analyze
//! ```
//!
//! Artifacts live under `<output_dir>/<variant>/<stage dir>/`, each directory
//! with a `manifest.json` recording the config hash and input/output hashes.

mod config;
mod stages;

pub use config::{DataConfig, ExperimentConfig, PolicyConfig, Variant};
pub use stages::{FinalReport, RewardCompareRow};

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::ReviewRecord;
use crate::io::{read_json, write_json, write_jsonl};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Ingest,
    Stats,
    GrpoTrain,
    CotGenerate,
    EncoderTrain,
    Embed,
    RecTrain,
    RecEval,
    Analyze,
}

impl Stage {
    pub const ALL: [Stage; 9] = [
        Stage::Ingest,
        Stage::Stats,
        Stage::GrpoTrain,
        Stage::CotGenerate,
        Stage::EncoderTrain,
        Stage::Embed,
        Stage::RecTrain,
        Stage::RecEval,
        Stage::Analyze,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Stats => "stats",
            Stage::GrpoTrain => "grpo-train",
            Stage::CotGenerate => "cot-generate",
            Stage::EncoderTrain => "encoder-train",
            Stage::Embed => "embed",
            Stage::RecTrain => "rec-train",
            Stage::RecEval => "rec-eval",
            Stage::Analyze => "analyze",
        }
    }

    /// Artifact directory below the variant root.
    pub fn dir(self) -> &'static str {
        match self {
            Stage::Ingest => "corpus",
            Stage::Stats => "stats",
            Stage::GrpoTrain => "grpo",
            Stage::CotGenerate => "cot",
            Stage::EncoderTrain => "encoder",
            Stage::Embed => "cache",
            Stage::RecTrain => "recsys",
            Stage::RecEval => "report",
            Stage::Analyze => "analysis",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown stage {s}")))
    }
}

/// Provenance written next to every stage's artifacts.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: Stage,
    pub variant: Variant,
    pub config_hash: String,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_hash(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// A configured pipeline rooted at the directory that relative paths resolve against.
#[derive(Clone, Debug)]
pub struct Pipeline {
    pub config: ExperimentConfig,
    pub base_dir: PathBuf,
    /// Rerun stages even when their manifest records a different config.
    pub force: bool,
    /// Load this encoder instead of training one.
    pub encoder_checkpoint: Option<PathBuf>,
}

impl Pipeline {
    pub fn new(config: ExperimentConfig, base_dir: impl Into<PathBuf>) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            base_dir: base_dir.into(),
            force: false,
            encoder_checkpoint: None,
        })
    }

    /// Loads a config file; relative paths resolve against its directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let config = ExperimentConfig::from_file(path)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::new(config, base)
    }

    /// Resolves `p` against the config directory, then `RECCOT_DATA_DIR`.
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            return p.to_path_buf();
        }
        let local = self.base_dir.join(p);
        if local.exists() {
            return local;
        }
        match std::env::var_os("RECCOT_DATA_DIR") {
            Some(root) if Path::new(&root).join(p).exists() => Path::new(&root).join(p),
            _ => local,
        }
    }

    pub fn output_root(&self) -> PathBuf {
        self.resolve(&self.config.output_dir)
    }

    pub fn variant_root(&self) -> PathBuf {
        self.output_root().join(self.config.variant.name())
    }

    pub fn stage_dir(&self, stage: Stage) -> PathBuf {
        self.variant_root().join(stage.dir())
    }

    pub fn artifact(&self, stage: Stage, file: &str) -> PathBuf {
        self.stage_dir(stage).join(file)
    }

    /// Hash of the config sections that can affect `stage` or anything upstream of it.
    pub fn config_hash(&self, stage: Stage) -> String {
        let c = &self.config;
        let mut parts = serde_json::json!({ "seed": c.seed, "variant": c.variant, "data": c.data });
        let obj = parts.as_object_mut().expect("object");
        if stage >= Stage::GrpoTrain && c.variant.uses_cot() {
            obj.insert("reward".into(), serde_json::to_value(&c.reward).expect("serialises"));
            obj.insert("grpo".into(), serde_json::to_value(&c.grpo).expect("serialises"));
            obj.insert("policy".into(), serde_json::to_value(&c.policy).expect("serialises"));
        }
        if stage >= Stage::EncoderTrain {
            obj.insert("encoder".into(), serde_json::to_value(&c.encoder).expect("serialises"));
            let ckpt = self.encoder_checkpoint.as_ref().map(|p| p.to_string_lossy().into_owned());
            obj.insert("encoder_checkpoint".into(), serde_json::to_value(ckpt).expect("serialises"));
        }
        if stage >= Stage::RecTrain {
            obj.insert("recsys".into(), serde_json::to_value(&c.recsys).expect("serialises"));
            obj.insert("dataset".into(), serde_json::to_value(&c.dataset).expect("serialises"));
        }
        sha256_hex(&serde_json::to_vec(&parts).expect("serialises"))
    }

    fn check_manifest(&self, stage: Stage) -> Result<()> {
        let path = self.artifact(stage, "manifest.json");
        if !path.exists() || self.force {
            return Ok(());
        }
        let old: Manifest = read_json(&path)?;
        if old.config_hash != self.config_hash(stage) {
            return Err(Error::Refused(format!(
                "{stage} artifacts in {} were produced with a different config; rerun with --force to overwrite",
                self.stage_dir(stage).display()
            )));
        }
        Ok(())
    }

    fn write_manifest(&self, stage: Stage, inputs: &[PathBuf], outputs: &[PathBuf]) -> Result<()> {
        let hashes = |paths: &[PathBuf]| -> Result<BTreeMap<String, String>> {
            paths
                .iter()
                .map(|p| Ok((self.display_path(p), file_hash(p)?)))
                .collect()
        };
        let manifest = Manifest {
            stage,
            variant: self.config.variant,
            config_hash: self.config_hash(stage),
            inputs: hashes(inputs)?,
            outputs: hashes(outputs)?,
        };
        write_json(&self.artifact(stage, "manifest.json"), &manifest)
    }

    /// Path relative to the output root when possible, so manifests do not embed machine paths.
    fn display_path(&self, p: &Path) -> String {
        let root = self.output_root();
        p.strip_prefix(&root)
            .or_else(|_| p.strip_prefix(&self.base_dir))
            .unwrap_or(p)
            .to_string_lossy()
            .replace('\\', "/")
    }

    fn require(&self, paths: &[PathBuf]) -> Result<()> {
        match paths.iter().find(|p| !p.exists()) {
            Some(missing) => Err(Error::MissingArtifact(missing.clone())),
            None => Ok(()),
        }
    }

    /// Runs one stage and records its manifest.
    pub fn run_stage(&self, stage: Stage) -> Result<()> {
        if !self.config.variant.uses_cot() && matches!(stage, Stage::GrpoTrain | Stage::CotGenerate) {
            log::info!("{stage}: not used by variant {}", self.config.variant.name());
            return Ok(());
        }
        let inputs = self.stage_inputs(stage);
        self.require(&inputs)?;
        self.check_manifest(stage)?;
        std::fs::create_dir_all(self.stage_dir(stage)).map_err(|e| Error::io(self.stage_dir(stage), e))?;
        log::info!("running {stage} for {}", self.config.variant.name());
        let outputs = self.execute(stage)?;
        self.write_manifest(stage, &inputs, &outputs)
    }

    /// Runs every stage in order and returns the final report.
    pub fn run_all(&self) -> Result<FinalReport> {
        for stage in Stage::ALL {
            self.run_stage(stage)?;
        }
        read_json(&self.artifact(Stage::RecEval, "metrics.json"))
    }

    /// Runs the full cascade under both accuracy rewards and writes a
    /// comparison CSV to `<output_dir>/reward_compare.csv`.
    pub fn reward_compare(&self) -> Result<Vec<RewardCompareRow>> {
        let mut rows = Vec::new();
        for variant in [Variant::Full, Variant::LinearReward] {
            let mut p = self.clone();
            p.config.variant = variant;
            p.run_all()?;
            rows.push(p.reward_compare_row()?);
        }
        let mut csv = String::from("dataset,reward,cot_mae,pretrain_mse,pretrain_mae,contrastive_mse,contrastive_mae\n");
        for r in &rows {
            csv.push_str(&format!(
                "{},{},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
                r.dataset, r.reward, r.cot_mae, r.pretrain_mse, r.pretrain_mae, r.contrastive_mse, r.contrastive_mae
            ));
        }
        let path = self.output_root().join("reward_compare.csv");
        std::fs::create_dir_all(self.output_root()).map_err(|e| Error::io(self.output_root(), e))?;
        std::fs::write(&path, csv).map_err(|e| Error::io(&path, e))?;
        Ok(rows)
    }
}

/// Writes records as review JSONL using the default field names plus
/// `item_text`, which a config picks up with `schema.item_text = "item_text"`.
pub fn write_reviews_jsonl(path: &Path, records: &[ReviewRecord]) -> Result<()> {
    let rows = records.iter().map(|r| {
        let mut obj = serde_json::json!({
            "user": r.user_id,
            "item": r.item_id,
            "rating": r.rating,
            "text": r.review_text,
        });
        if let Some(ts) = r.timestamp {
            obj["timestamp"] = ts.into();
        }
        if let Some(t) = &r.item_text {
            obj["item_text"] = t.clone().into();
        }
        obj
    });
    write_jsonl(path, rows)
}
