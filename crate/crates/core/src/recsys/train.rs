use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::analysis::{metrics, Metrics, Prediction};
use super::model::{add_row, contrastive_loss, AttnBlock, BatchPlan, IdIndex, Interaction, RecModelParams, RecWeights};
use crate::cache::CacheStore;
use crate::corpus::ReviewRecord;
use crate::nn::{adam_step, AdamState, Dense, Parameterized, Tensor2D};
use crate::{seeded_rng, Error, Result, Scalar};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RecsysConfig {
    pub layers: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Hinge margin Δ.
    pub margin: f64,
    pub contrastive_weight: f64,
    pub dropout: f64,
    /// Projector hidden width.
    pub hidden: usize,
    pub k_max: usize,
    pub reject_accidental_positives: bool,
    /// Probability of routing a training side through the cold-start row.
    pub cold_start_rate: f64,
    /// Half-width of the uniform ID-embedding initialisation.
    pub init_scale: f64,
    pub seed: u64,
}

impl Default for RecsysConfig {
    fn default() -> Self {
        Self {
            layers: 4,
            learning_rate: 1e-4,
            batch_size: 128,
            epochs: 5,
            margin: 1.0,
            contrastive_weight: 1.0,
            dropout: 0.5,
            hidden: 64,
            k_max: 10,
            reject_accidental_positives: false,
            cold_start_rate: 0.02,
            init_scale: 0.1,
            seed: 0,
        }
    }
}

impl RecsysConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Config("recsys batch_size must be at least 2 (in-batch negatives)".into()));
        }
        if self.hidden == 0 || self.k_max == 0 {
            return Err(Error::Config("recsys hidden and k_max must be positive".into()));
        }
        if !(self.margin > 0.0) || !(self.learning_rate >= 0.0) || !(self.contrastive_weight >= 0.0) {
            return Err(Error::Config("recsys margin must be > 0, learning_rate and contrastive_weight >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) || !(0.0..=1.0).contains(&self.cold_start_rate) {
            return Err(Error::Config("recsys dropout must lie in [0, 1) and cold_start_rate in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Batch loss split into its parts.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossParts<T> {
    pub mse: T,
    pub contrastive: T,
    pub total: T,
}

/// `mean (r̂ − r)² + w · mean ½(hinge_u + hinge_i)` and its gradient.
pub fn loss_and_grad<T: Scalar>(
    params: &RecModelParams<T>,
    batch: &[&Interaction<T>],
    plan: &BatchPlan<T>,
    contrastive_weight: f64,
) -> Result<(LossParts<T>, RecWeights<T>)> {
    let n = batch.len();
    if n == 0 {
        return Err(Error::invalid("empty recsys batch"));
    }
    let opt = |v: &Vec<Vec<T>>| if v.is_empty() { None } else { Some(v.clone()) };
    let mut tapes = Vec::with_capacity(n);
    for (k, x) in batch.iter().enumerate() {
        let user_row = if plan.cold_user[k] { 0 } else { x.user_row };
        let item_row = if plan.cold_item[k] { 0 } else { x.item_row };
        let um = opt(&plan.user_masks[k]);
        let im = opt(&plan.item_masks[k]);
        let pm = plan.proj_masks.get(k).map(Vec::as_slice);
        tapes.push(params.forward(x, user_row, item_row, um.as_deref(), im.as_deref(), pm)?);
    }
    let bn = T::of(n as f64);
    let margin = T::of(params.margin);
    let two = T::of(2.0);
    let c = T::of(contrastive_weight * 0.5) / bn;
    let mut grads = params.weights.zeros_like();
    let mut mse = T::zero();
    let mut cl = T::zero();
    let d = params.dim();
    for (k, x) in batch.iter().enumerate() {
        let t = &tapes[k];
        let err = t.prediction - T::of(x.rating);
        mse = mse + err * err / bn;
        let mut d_vu = vec![T::zero(); d];
        let mut d_vi = vec![T::zero(); d];
        // User anchor: positive is the interacted item, negative another batch item.
        if let Some(j) = plan.neg_item[k] {
            let neg = &tapes[j].p_i;
            let h = contrastive_loss(&t.v_u, &t.p_i, neg, margin);
            cl = cl + h * T::of(0.5) / bn;
            if h > T::zero() {
                for m in 0..d {
                    d_vu[m] = d_vu[m] + c * two * (neg[m] - t.p_i[m]);
                }
                let gp: Vec<T> = (0..d).map(|m| -c * two * (t.v_u[m] - t.p_i[m])).collect();
                let gn: Vec<T> = (0..d).map(|m| c * two * (t.v_u[m] - neg[m])).collect();
                add_row(&mut grads.item_emb, t.item_row, &gp);
                add_row(&mut grads.item_emb, tapes[j].item_row, &gn);
            }
        }
        if let Some(j) = plan.neg_user[k] {
            let neg = &tapes[j].p_u;
            let h = contrastive_loss(&t.v_i, &t.p_u, neg, margin);
            cl = cl + h * T::of(0.5) / bn;
            if h > T::zero() {
                for m in 0..d {
                    d_vi[m] = d_vi[m] + c * two * (neg[m] - t.p_u[m]);
                }
                let gp: Vec<T> = (0..d).map(|m| -c * two * (t.v_i[m] - t.p_u[m])).collect();
                let gn: Vec<T> = (0..d).map(|m| c * two * (t.v_i[m] - neg[m])).collect();
                add_row(&mut grads.user_emb, t.user_row, &gp);
                add_row(&mut grads.user_emb, tapes[j].user_row, &gn);
            }
        }
        params.backward(x, t, two * err / bn, &d_vu, &d_vi, &mut grads);
    }
    let total = mse + T::of(contrastive_weight) * cl;
    Ok((LossParts { mse, contrastive: cl, total }, grads))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_mse: f64,
    pub validation: Option<Metrics>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RecTrace {
    pub epochs: Vec<EpochMetrics>,
}

fn init_params<T: Scalar>(train: &[ReviewRecord], dim: usize, cfg: &RecsysConfig) -> RecModelParams<T> {
    let users = IdIndex::from_ids(train.iter().map(|r| r.user_id.as_str()));
    let items = IdIndex::from_ids(train.iter().map(|r| r.item_id.as_str()));
    let mut rng = seeded_rng(cfg.seed);
    let s = cfg.init_scale;
    let table = |rows: usize, rng: &mut crate::Rng| Tensor2D::filled_with(rows, dim, || T::of(rng.gen_range(-s..s)));
    let user_emb = table(users.table_rows(), &mut rng);
    let item_emb = table(items.table_rows(), &mut rng);
    let user_blocks = (0..cfg.layers).map(|_| AttnBlock::init(dim, &mut rng)).collect();
    let item_blocks = (0..cfg.layers).map(|_| AttnBlock::init(dim, &mut rng)).collect();
    let proj_hidden = Dense::glorot(2 * dim, cfg.hidden, &mut rng);
    let mut proj_out = Dense::glorot(cfg.hidden, 1, &mut rng);
    let mean = train.iter().map(|r| r.rating).sum::<f64>() / train.len().max(1) as f64;
    proj_out.bias.set(0, 0, T::of(mean));
    RecModelParams {
        users,
        items,
        weights: RecWeights { user_emb, item_emb, user_blocks, item_blocks, proj_hidden, proj_out },
        margin: cfg.margin,
        dropout: cfg.dropout,
    }
}

fn interactions<T: Scalar>(
    params: &RecModelParams<T>,
    records: &[ReviewRecord],
    store: &CacheStore,
    k_max: usize,
    exclude_self: bool,
) -> Result<Vec<Interaction<T>>> {
    records
        .iter()
        .map(|r| Interaction::build(params, store, &r.user_id, &r.item_id, r.rating, k_max, exclude_self))
        .collect()
}

/// Trains on `train` with histories from `store`; each training case leaves
/// its own review out of both histories.
pub fn train_recsys<T: Scalar>(
    train: &[ReviewRecord],
    validation: &[ReviewRecord],
    store: &CacheStore,
    cfg: &RecsysConfig,
) -> Result<(RecModelParams<T>, RecTrace)> {
    cfg.validate()?;
    if train.len() < 2 {
        return Err(Error::invalid("recsys training needs at least 2 interactions"));
    }
    let mut params = init_params::<T>(train, store.dim(), cfg);
    let train_x = interactions(&params, train, store, cfg.k_max, true)?;
    let mut adam = AdamState::new(params.num_params(), T::of(cfg.learning_rate));
    let mut rng = seeded_rng(cfg.seed ^ 0xbeef);
    let mut order: Vec<usize> = (0..train_x.len()).collect();
    let mut trace = RecTrace::default();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut chunks: Vec<&[usize]> = order.chunks(cfg.batch_size).collect();
        if chunks.len() > 1 && chunks.last().map(|c| c.len()) == Some(1) {
            // Fold a lone trailing case into the previous batch so it has a negative.
            chunks.pop();
            let len = chunks.len();
            chunks[len - 1] = &order[(len - 1) * cfg.batch_size..];
        }
        let (mut loss_sum, mut mse_sum) = (0.0, 0.0);
        for chunk in &chunks {
            let batch: Vec<&Interaction<T>> = chunk.iter().map(|&i| &train_x[i]).collect();
            let plan = BatchPlan::draw(
                &batch,
                &params.weights,
                cfg.dropout,
                cfg.cold_start_rate,
                cfg.reject_accidental_positives,
                &mut rng,
            )?;
            let (loss, grads) = loss_and_grad(&params, &batch, &plan, cfg.contrastive_weight)?;
            if !loss.total.is_finite() {
                return Err(Error::NonFinite(format!("recsys loss at epoch {epoch}")));
            }
            loss_sum += loss.total.as_f64();
            mse_sum += loss.mse.as_f64();
            if cfg.learning_rate > 0.0 {
                let mut flat = params.flatten();
                adam_step(&mut flat, &grads.flatten(), &mut adam)?;
                params.unflatten(&flat)?;
            }
        }
        let validation_metrics = if validation.is_empty() {
            None
        } else {
            Some(evaluate(validation, store, &params, cfg.k_max)?)
        };
        let nb = chunks.len() as f64;
        log::info!("recsys epoch {epoch}: loss {:.4}, validation {:?}", loss_sum / nb, validation_metrics);
        trace.epochs.push(EpochMetrics {
            epoch,
            train_loss: loss_sum / nb,
            train_mse: mse_sum / nb,
            validation: validation_metrics,
        });
    }
    Ok((params, trace))
}

/// Clamped eval-mode predictions, in record order.
pub fn predict_records<T: Scalar>(
    records: &[ReviewRecord],
    store: &CacheStore,
    params: &RecModelParams<T>,
    k_max: usize,
) -> Result<Vec<Prediction>> {
    records
        .iter()
        .map(|r| {
            let x = Interaction::build(params, store, &r.user_id, &r.item_id, r.rating, k_max, false)?;
            Ok(Prediction {
                user_id: r.user_id.clone(),
                item_id: r.item_id.clone(),
                truth: r.rating,
                prediction: params.predict_interaction(&x)?.as_f64(),
            })
        })
        .collect()
}

pub fn evaluate<T: Scalar>(
    records: &[ReviewRecord],
    store: &CacheStore,
    params: &RecModelParams<T>,
    k_max: usize,
) -> Result<Metrics> {
    if records.is_empty() {
        return Err(Error::invalid("cannot evaluate an empty split"));
    }
    let preds = predict_records(records, store, params, k_max)?;
    let p: Vec<f64> = preds.iter().map(|x| x.prediction).collect();
    let t: Vec<f64> = preds.iter().map(|x| x.truth).collect();
    metrics(&p, &t)
}
