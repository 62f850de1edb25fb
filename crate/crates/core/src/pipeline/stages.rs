use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{Pipeline, Stage};
use crate::cache::CacheStore;
use crate::checkpoint::Checkpoint;
use crate::corpus::{build_frequency_table, clean_records, filter_k_core, ingest, split, CorpusSplit, Fold, RatingFrequencyTable, ReviewRecord, SplitRow};
use crate::encoder::{embed_corpus, train_encoder, EncoderExample, EncoderParams};
use crate::grpo::{annotate_record, generate_cot_two_fold, train, CotRecord, Policy, Prompt, ToyTemplatePolicy};
use crate::io::{read_json, read_jsonl, write_json, write_jsonl};
use crate::recsys::{analyze_by_engagement, metrics, predict_records, train_recsys, BucketMetrics, IdIndex, Metrics, Prediction, RecModelParams, RecWeights, ENGAGEMENT_EDGES, LENGTH_EDGES};
use crate::reward::{composite_reward, FormatSchema, RewardBreakdown, RewardConfig};
use crate::{Error, Real, Result};

/// Test-set report written by `rec-eval`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinalReport {
    pub dataset: String,
    pub variant: String,
    pub label: String,
    pub mse: f64,
    pub mae: f64,
    pub count: usize,
    pub validation: Option<Metrics>,
    /// Error of predicting the training mean everywhere.
    pub baseline_mse: f64,
    pub baseline_mae: f64,
    /// `1 − mse / baseline_mse`.
    pub improvement_over_baseline: f64,
    pub by_engagement: Vec<BucketMetrics>,
    pub by_review_length: Vec<BucketMetrics>,
}

/// One row of the reward comparison table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardCompareRow {
    pub dataset: String,
    pub reward: String,
    /// Cross-fold rationale rating MAE.
    pub cot_mae: f64,
    /// Encoder rating head on the test split.
    pub pretrain_mse: f64,
    pub pretrain_mae: f64,
    /// Full recommender on the test split.
    pub contrastive_mse: f64,
    pub contrastive_mae: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct IngestSummary {
    lines_read: usize,
    skipped: usize,
    dropped_short_text: usize,
    removed_by_k_core: usize,
    kept: usize,
    train: usize,
    validation: usize,
    test: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct CorpusStats {
    interactions: usize,
    users: usize,
    items: usize,
    train_users: usize,
    train_items: usize,
    mean_train_rating: f64,
    mean_review_chars: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct CotMetrics {
    /// MAE on fold A, annotated by the fold-B policy.
    fold_a_mae: f64,
    fold_b_mae: f64,
    cot_mae: f64,
    validation_mae: f64,
    test_mae: f64,
    unparseable: usize,
    mean_reward: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct EncoderMetrics {
    validation: Metrics,
    test: Metrics,
    loaded_from_checkpoint: bool,
}

const SPLIT: (Stage, &str) = (Stage::Ingest, "split.jsonl");
const FREQUENCY: (Stage, &str) = (Stage::Stats, "frequency.json");
const POLICY_A: (Stage, &str) = (Stage::GrpoTrain, "policy_a.ckpt");
const POLICY_B: (Stage, &str) = (Stage::GrpoTrain, "policy_b.ckpt");
const COT: [(Stage, &str); 3] = [
    (Stage::CotGenerate, "train.jsonl"),
    (Stage::CotGenerate, "validation.jsonl"),
    (Stage::CotGenerate, "test.jsonl"),
];
const ENCODER: (Stage, &str) = (Stage::EncoderTrain, "encoder.ckpt");
const CACHE: (Stage, &str) = (Stage::Embed, "cache.bin");
const MODEL: (Stage, &str) = (Stage::RecTrain, "model.ckpt");
const PREDICTIONS: (Stage, &str) = (Stage::RecEval, "predictions.csv");

impl Pipeline {
    fn path(&self, (stage, file): (Stage, &str)) -> PathBuf {
        self.artifact(stage, file)
    }

    fn cot_inputs(&self) -> Vec<PathBuf> {
        if self.config.variant.uses_cot() {
            COT.iter().map(|&a| self.path(a)).collect()
        } else {
            Vec::new()
        }
    }

    /// Upstream artifacts a stage reads.
    pub fn stage_inputs(&self, stage: Stage) -> Vec<PathBuf> {
        let mut v = match stage {
            Stage::Ingest => vec![self.resolve(&self.config.data.reviews)],
            Stage::Stats => vec![self.path(SPLIT)],
            Stage::GrpoTrain => vec![self.path(SPLIT), self.path(FREQUENCY)],
            Stage::CotGenerate => vec![self.path(SPLIT), self.path(FREQUENCY), self.path(POLICY_A), self.path(POLICY_B)],
            Stage::EncoderTrain => {
                let mut v = vec![self.path(SPLIT)];
                v.extend(self.cot_inputs());
                v.extend(self.encoder_checkpoint.as_ref().map(|p| self.resolve(p)));
                v
            }
            Stage::Embed => {
                let mut v = vec![self.path(SPLIT), self.path(ENCODER)];
                v.extend(self.cot_inputs());
                v
            }
            Stage::RecTrain => vec![self.path(SPLIT), self.path(CACHE)],
            Stage::RecEval => vec![self.path(SPLIT), self.path(CACHE), self.path(MODEL)],
            Stage::Analyze => vec![self.path(SPLIT), self.path(PREDICTIONS)],
        };
        v.dedup();
        v
    }

    pub(super) fn execute(&self, stage: Stage) -> Result<Vec<PathBuf>> {
        match stage {
            Stage::Ingest => self.run_ingest(),
            Stage::Stats => self.run_stats(),
            Stage::GrpoTrain => self.run_grpo(),
            Stage::CotGenerate => self.run_cot(),
            Stage::EncoderTrain => self.run_encoder(),
            Stage::Embed => self.run_embed(),
            Stage::RecTrain => self.run_rec_train(),
            Stage::RecEval => self.run_rec_eval(),
            Stage::Analyze => self.run_analyze(),
        }
    }

    pub fn load_split(&self) -> Result<CorpusSplit> {
        CorpusSplit::from_rows(read_jsonl::<SplitRow>(&self.path(SPLIT))?)
    }

    fn run_ingest(&self) -> Result<Vec<PathBuf>> {
        let data = &self.config.data;
        let report = ingest(&self.resolve(&data.reviews), &data.schema)?;
        let lines_read = report.records.len() + report.skipped;
        let (cleaned, dropped) = clean_records(report.records);
        let filtered = filter_k_core(&cleaned, data.k_core)?;
        let [tr, va, te] = data.split;
        let parts = split(&filtered, (tr, va, te), self.config.seed)?;
        let summary = IngestSummary {
            lines_read,
            skipped: report.skipped,
            dropped_short_text: dropped,
            removed_by_k_core: cleaned.len() - filtered.len(),
            kept: filtered.len(),
            train: parts.train.len(),
            validation: parts.validation.len(),
            test: parts.test.len(),
        };
        log::info!("ingest: {summary:?}");
        let out = vec![
            self.artifact(Stage::Ingest, "filtered.jsonl"),
            self.path(SPLIT),
            self.artifact(Stage::Ingest, "summary.json"),
        ];
        write_jsonl(&out[0], &filtered)?;
        write_jsonl(&out[1], parts.to_rows())?;
        write_json(&out[2], &summary)?;
        Ok(out)
    }

    fn run_stats(&self) -> Result<Vec<PathBuf>> {
        let s = self.load_split()?;
        let table = build_frequency_table(&s.train, self.config.data.frequency_mode)?;
        let all: Vec<&ReviewRecord> = s.train.iter().chain(&s.validation).chain(&s.test).collect();
        let distinct = |recs: &[&ReviewRecord], user: bool| {
            let mut ids: Vec<&str> = recs
                .iter()
                .map(|r| if user { r.user_id.as_str() } else { r.item_id.as_str() })
                .collect();
            ids.sort_unstable();
            ids.dedup();
            ids.len()
        };
        let train_refs: Vec<&ReviewRecord> = s.train.iter().collect();
        let stats = CorpusStats {
            interactions: all.len(),
            users: distinct(&all, true),
            items: distinct(&all, false),
            train_users: distinct(&train_refs, true),
            train_items: distinct(&train_refs, false),
            mean_train_rating: mean(s.train.iter().map(|r| r.rating)),
            mean_review_chars: mean(all.iter().map(|r| r.review_text.chars().count() as f64)),
        };
        let out = vec![self.path(FREQUENCY), self.artifact(Stage::Stats, "corpus.json")];
        write_json(&out[0], &table)?;
        write_json(&out[1], &stats)?;
        Ok(out)
    }

    fn reward_config(&self) -> RewardConfig {
        RewardConfig { policy: self.config.variant.reward_policy(), ..self.config.reward.clone() }
    }

    fn scorer(&self) -> Result<impl Fn(&str, f64) -> Result<RewardBreakdown>> {
        let table: RatingFrequencyTable = read_json(&self.path(FREQUENCY))?;
        let reward = self.reward_config();
        reward.validate()?;
        let schema = FormatSchema::default();
        Ok(move |out: &str, truth: f64| composite_reward(out, truth, &table, &reward, &schema))
    }

    fn fresh_policy(&self) -> ToyTemplatePolicy<Real> {
        ToyTemplatePolicy::new(Arc::new(self.config.policy.lexicon()), self.config.policy.analysis_len)
    }

    fn load_policy(&self, path: &std::path::Path) -> Result<ToyTemplatePolicy<Real>> {
        let ckpt = Checkpoint::load(path)?;
        let weights = ckpt
            .tensor("weights")
            .ok_or_else(|| Error::Corrupt { offset: 0, reason: format!("{} has no policy weights", path.display()) })?;
        let mut policy = self.fresh_policy();
        policy.set_parameters(weights.data())?;
        Ok(policy)
    }

    fn run_grpo(&self) -> Result<Vec<PathBuf>> {
        let s = self.load_split()?;
        let score = self.scorer()?;
        let mut out = Vec::new();
        for (fold, ckpt, csv, seed_offset) in [(Fold::A, POLICY_A, "train_a.csv", 0), (Fold::B, POLICY_B, "train_b.csv", 1)] {
            let prompts: Vec<Prompt> = s
                .fold(fold)
                .into_iter()
                .map(|r| Prompt { text: r.review_text.clone(), truth: r.rating })
                .collect();
            let reference = self.fresh_policy();
            let mut policy = reference.clone();
            let cfg = crate::grpo::GrpoConfig { seed: self.config.grpo.seed.wrapping_add(seed_offset), ..self.config.grpo.clone() };
            let report = train(&mut policy, &reference, &prompts, |p: &Prompt, o: &str| score(o, p.truth), &cfg)?;
            log::info!("grpo fold {fold}: tail reward {:.4}", report.tail_reward(100));
            let meta = json!({
                "fold": fold.to_string(),
                "analysis_len": self.config.policy.analysis_len,
                "words_per_class": self.config.policy.words_per_class,
                "lexicon_seed": self.config.policy.lexicon_seed,
            });
            let ckpt_path = self.path(ckpt);
            Checkpoint { metadata: meta, tensors: vec![("weights".into(), policy.weights().clone())] }.save(&ckpt_path)?;
            let csv_path = self.artifact(Stage::GrpoTrain, csv);
            std::fs::write(&csv_path, report.to_csv()).map_err(|e| Error::io(&csv_path, e))?;
            out.extend([ckpt_path, csv_path]);
        }
        Ok(out)
    }

    fn run_cot(&self) -> Result<Vec<PathBuf>> {
        let s = self.load_split()?;
        let score = self.scorer()?;
        let a = self.load_policy(&self.path(POLICY_A))?;
        let b = self.load_policy(&self.path(POLICY_B))?;
        let train_cot = generate_cot_two_fold(&a, &b, &s, &score)?;
        // Held-out reviews are annotated by the fold-A policy.
        let annotate = |recs: &[ReviewRecord]| -> Result<Vec<CotRecord>> {
            recs.iter().map(|r| annotate_record(&a, Fold::A, r, &score)).collect()
        };
        let val_cot = annotate(&s.validation)?;
        let test_cot = annotate(&s.test)?;
        let unparseable = [&train_cot, &val_cot, &test_cot]
            .iter()
            .flat_map(|v| v.iter())
            .filter(|c| c.predicted_rating.is_none())
            .count();
        let fold_mae = |fold: Fold| cot_mae(train_cot.iter().zip(&s.folds).filter(|(_, &f)| f == fold).map(|(c, _)| c));
        let (fa, fb) = (fold_mae(Fold::A), fold_mae(Fold::B));
        let report = CotMetrics {
            fold_a_mae: fa,
            fold_b_mae: fb,
            cot_mae: (fa + fb) / 2.0,
            validation_mae: cot_mae(val_cot.iter()),
            test_mae: cot_mae(test_cot.iter()),
            unparseable,
            mean_reward: mean(train_cot.iter().map(|c| c.rewards.total)),
        };
        let mut out: Vec<PathBuf> = COT.iter().map(|&p| self.path(p)).collect();
        write_jsonl(&out[0], &train_cot)?;
        write_jsonl(&out[1], &val_cot)?;
        write_jsonl(&out[2], &test_cot)?;
        let m = self.artifact(Stage::CotGenerate, "metrics.json");
        write_json(&m, &report)?;
        out.push(m);
        Ok(out)
    }

    /// Encoder inputs for train, validation and test, with rationales when the variant uses them.
    fn encoder_examples(&self) -> Result<[Vec<EncoderExample>; 3]> {
        let item_text = self.config.variant.item_side_text() || self.config.encoder.item_side_text;
        if self.config.variant.uses_cot() {
            let load = |i: usize| -> Result<Vec<EncoderExample>> {
                let recs: Vec<CotRecord> = read_jsonl(&self.path(COT[i]))?;
                Ok(recs.iter().map(|c| EncoderExample::from_record(&c.record, &c.cot_text, item_text)).collect())
            };
            Ok([load(0)?, load(1)?, load(2)?])
        } else {
            let s = self.load_split()?;
            let conv = |recs: &[ReviewRecord]| recs.iter().map(|r| EncoderExample::from_record(r, "", item_text)).collect();
            Ok([conv(&s.train), conv(&s.validation), conv(&s.test)])
        }
    }

    fn load_encoder(&self, path: &std::path::Path) -> Result<EncoderParams<Real>> {
        let ckpt = Checkpoint::load(path)?;
        let field = |k: &str| {
            ckpt.metadata[k]
                .as_u64()
                .map(|v| v as usize)
                .ok_or_else(|| Error::Corrupt { offset: 0, reason: format!("encoder checkpoint lacks {k}") })
        };
        let dropout = ckpt.metadata["dropout"].as_f64().unwrap_or(0.0);
        let mut params = EncoderParams::zeros(field("buckets")?, field("hidden")?, field("dim")?, dropout);
        ckpt.load_into(&mut params)?;
        Ok(params)
    }

    fn run_encoder(&self) -> Result<Vec<PathBuf>> {
        let [train_ex, val_ex, test_ex] = self.encoder_examples()?;
        let (params, trace, loaded) = match &self.encoder_checkpoint {
            Some(p) => (self.load_encoder(&self.resolve(p))?, Default::default(), true),
            None => {
                let (p, t) = train_encoder::<Real>(&train_ex, &val_ex, &self.config.encoder)?;
                (p, t, false)
            }
        };
        let head_metrics = |ex: &[EncoderExample]| -> Result<Metrics> {
            let mut preds = Vec::with_capacity(ex.len());
            for e in ex {
                preds.push(params.encode_with_rating(&e.features(params.buckets())?)?.1);
            }
            metrics(&preds, &ex.iter().map(|e| e.rating).collect::<Vec<_>>())
        };
        let report = EncoderMetrics {
            validation: head_metrics(&val_ex)?,
            test: head_metrics(&test_ex)?,
            loaded_from_checkpoint: loaded,
        };
        let meta = json!({
            "dim": params.dim(),
            "hidden": params.hidden(),
            "buckets": params.buckets(),
            "dropout": params.dropout,
        });
        let out = vec![
            self.path(ENCODER),
            self.artifact(Stage::EncoderTrain, "trace.json"),
            self.artifact(Stage::EncoderTrain, "metrics.json"),
        ];
        Checkpoint::from_model(&params, meta).save(&out[0])?;
        write_json(&out[1], &trace)?;
        write_json(&out[2], &report)?;
        Ok(out)
    }

    fn run_embed(&self) -> Result<Vec<PathBuf>> {
        let params = self.load_encoder(&self.path(ENCODER))?;
        let [train_ex, _, _] = self.encoder_examples()?;
        let embedded = embed_corpus(&train_ex, &params);
        let mut store = CacheStore::new(params.dim());
        for r in &embedded.reviews {
            store.insert(r)?;
        }
        let written = store.write(&self.path(CACHE))?;
        log::info!("embed: {written:?}, {} skipped", embedded.skipped);
        let summary = self.artifact(Stage::Embed, "summary.json");
        write_json(&summary, &json!({ "summary": store.summary(), "skipped": embedded.skipped }))?;
        Ok(vec![self.path(CACHE), summary])
    }

    fn load_model(&self) -> Result<RecModelParams<Real>> {
        let ckpt = Checkpoint::load(&self.path(MODEL))?;
        let meta = &ckpt.metadata;
        let bad = |k: &str| Error::Corrupt { offset: 0, reason: format!("recommender checkpoint lacks {k}") };
        let users: IdIndex = serde_json::from_value(meta["users"].clone()).map_err(|_| bad("users"))?;
        let items: IdIndex = serde_json::from_value(meta["items"].clone()).map_err(|_| bad("items"))?;
        let num = |k: &str| meta[k].as_u64().map(|v| v as usize).ok_or_else(|| bad(k));
        let weights = RecWeights::zeros(users.table_rows(), items.table_rows(), num("dim")?, num("layers")?, num("hidden")?);
        let mut params = RecModelParams {
            users,
            items,
            weights,
            margin: meta["margin"].as_f64().ok_or_else(|| bad("margin"))?,
            dropout: meta["dropout"].as_f64().ok_or_else(|| bad("dropout"))?,
        };
        ckpt.load_into(&mut params)?;
        Ok(params)
    }

    fn run_rec_train(&self) -> Result<Vec<PathBuf>> {
        let s = self.load_split()?;
        let store = CacheStore::read(&self.path(CACHE))?;
        let (params, trace) = train_recsys::<Real>(&s.train, &s.validation, &store, &self.config.recsys)?;
        let meta = json!({
            "users": params.users,
            "items": params.items,
            "dim": params.weights.dim(),
            "layers": params.weights.layers(),
            "hidden": self.config.recsys.hidden,
            "margin": params.margin,
            "dropout": params.dropout,
            "k_max": self.config.recsys.k_max,
        });
        let out = vec![self.path(MODEL), self.artifact(Stage::RecTrain, "trace.json")];
        Checkpoint::from_model(&params, meta).save(&out[0])?;
        write_json(&out[1], &trace)?;
        Ok(out)
    }

    fn run_rec_eval(&self) -> Result<Vec<PathBuf>> {
        let s = self.load_split()?;
        let store = CacheStore::read(&self.path(CACHE))?;
        let params = self.load_model()?;
        let k = self.config.recsys.k_max;
        let preds = predict_records(&s.test, &store, &params, k)?;
        let p: Vec<f64> = preds.iter().map(|x| x.prediction).collect();
        let t: Vec<f64> = preds.iter().map(|x| x.truth).collect();
        let m = metrics(&p, &t)?;
        let validation = if s.validation.is_empty() {
            None
        } else {
            let vp = predict_records(&s.validation, &store, &params, k)?;
            Some(metrics(
                &vp.iter().map(|x| x.prediction).collect::<Vec<_>>(),
                &vp.iter().map(|x| x.truth).collect::<Vec<_>>(),
            )?)
        };
        let train_mean = mean(s.train.iter().map(|r| r.rating));
        let baseline = metrics(&vec![train_mean; t.len()], &t)?;
        let buckets = analyze_by_engagement(&s.test, &preds, &user_counts(&s.train), &ENGAGEMENT_EDGES, &LENGTH_EDGES)?;
        let report = FinalReport {
            dataset: self.config.dataset.clone(),
            variant: self.config.variant.name().into(),
            label: self.config.variant.label().into(),
            mse: m.mse,
            mae: m.mae,
            count: m.count,
            validation,
            baseline_mse: baseline.mse,
            baseline_mae: baseline.mae,
            improvement_over_baseline: 1.0 - m.mse / baseline.mse,
            by_engagement: buckets.by_engagement,
            by_review_length: buckets.by_review_length,
        };
        let out = vec![self.artifact(Stage::RecEval, "metrics.json"), self.path(PREDICTIONS)];
        write_json(&out[0], &report)?;
        write_predictions(&out[1], &preds)?;
        Ok(out)
    }

    fn run_analyze(&self) -> Result<Vec<PathBuf>> {
        let s = self.load_split()?;
        let preds = read_predictions(&self.path(PREDICTIONS))?;
        let report = analyze_by_engagement(&s.test, &preds, &user_counts(&s.train), &ENGAGEMENT_EDGES, &LENGTH_EDGES)?;
        let mut table = format!("{} / {}\n\nbucket\tinteractions\tusers\tmse\tmae\n", self.config.dataset, self.config.variant.label());
        for (title, rows) in [("engagement", &report.by_engagement), ("review length", &report.by_review_length)] {
            table.push_str(&format!("# {title}\n"));
            for b in rows {
                let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
                table.push_str(&format!("{}\t{}\t{}\t{}\t{}\n", b.label, b.interactions, b.users, fmt(b.mse), fmt(b.mae)));
            }
        }
        let out = vec![self.artifact(Stage::Analyze, "engagement.json"), self.artifact(Stage::Analyze, "engagement.tsv")];
        write_json(&out[0], &report)?;
        std::fs::write(&out[1], table).map_err(|e| Error::io(&out[1], e))?;
        Ok(out)
    }

    /// Collects the comparison row for the current variant from finished artifacts.
    pub fn reward_compare_row(&self) -> Result<RewardCompareRow> {
        let cot: CotMetrics = read_json(&self.artifact(Stage::CotGenerate, "metrics.json"))?;
        let enc: EncoderMetrics = read_json(&self.artifact(Stage::EncoderTrain, "metrics.json"))?;
        let rec: FinalReport = read_json(&self.artifact(Stage::RecEval, "metrics.json"))?;
        Ok(RewardCompareRow {
            dataset: self.config.dataset.clone(),
            reward: match self.config.variant.reward_policy() {
                crate::reward::RewardPolicy::FrequencyAware => "frequency-aware".into(),
                crate::reward::RewardPolicy::Linear => "linear".into(),
            },
            cot_mae: cot.cot_mae,
            pretrain_mse: enc.test.mse,
            pretrain_mae: enc.test.mae,
            contrastive_mse: rec.mse,
            contrastive_mae: rec.mae,
        })
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

/// MAE of parsed rationale ratings; unparseable rationales count as off by the full scale.
fn cot_mae<'a>(recs: impl Iterator<Item = &'a CotRecord>) -> f64 {
    mean(recs.map(|c| match c.predicted_rating {
        Some(p) => (p - c.record.rating).abs(),
        None => 4.0,
    }))
}

fn user_counts(train: &[ReviewRecord]) -> HashMap<String, usize> {
    let mut counts = HashMap::new();
    for r in train {
        *counts.entry(r.user_id.clone()).or_insert(0) += 1;
    }
    counts
}

pub(super) fn write_predictions(path: &std::path::Path, preds: &[Prediction]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;
    for p in preds {
        w.serialize(p).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub(super) fn read_predictions(path: &std::path::Path) -> Result<Vec<Prediction>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;
    r.deserialize()
        .map(|row| row.map_err(|e| Error::invalid(format!("{}: {e}", path.display()))))
        .collect()
}
