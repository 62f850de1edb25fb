//! Hashed n-gram text encoder producing a fixed-size review embedding, trained
//! by rating regression.
//!
//! `features → mean-pooled table rows → Dense + tanh + dropout → Dense (embedding) → Dense (rating)`

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::corpus::ReviewRecord;
use crate::nn::{adam_step, adam_step_rows, dropout_mask, tanh_backward, tanh_forward, AdamState, Dense, Parameterized, Tensor2D};
use crate::scalar::all_finite;
use crate::{seeded_rng, Error, Result, Rng, Scalar};

pub const SEPARATOR: &str = "[SEP]";
const ITEM_SEPARATOR: &str = "[ITEM]";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    /// Embedding dimension d.
    pub dim: usize,
    /// Width of the hashed table rows.
    pub hidden: usize,
    /// Number of hash buckets V.
    pub buckets: usize,
    pub dropout: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Append item metadata text to the review side of the input.
    pub item_side_text: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            dim: 768,
            hidden: 64,
            buckets: 1 << 16,
            dropout: 0.5,
            learning_rate: 1e-5,
            batch_size: 4,
            epochs: 4,
            seed: 0,
            item_side_text: false,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.hidden == 0 || self.buckets == 0 || self.batch_size == 0 {
            return Err(Error::Config("encoder dim, hidden, buckets and batch_size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) || !(self.learning_rate >= 0.0) {
            return Err(Error::Config("encoder dropout must lie in [0, 1) and learning_rate >= 0".into()));
        }
        if self.buckets > u32::MAX as usize {
            return Err(Error::Config("encoder buckets must fit in u32".into()));
        }
        Ok(())
    }
}

/// Sorted multiset of hash-bucket ids.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Features(Vec<u32>);

impl Features {
    pub fn buckets(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

fn tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

/// FNV-1a, 64-bit.
pub fn bucket_of(token: &str, buckets: usize) -> u32 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in token.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    (h % buckets as u64) as u32
}

fn ngrams(toks: &[String], buckets: usize) -> Features {
    let mut out: Vec<u32> = toks.iter().map(|t| bucket_of(t, buckets)).collect();
    out.extend(toks.windows(2).map(|w| bucket_of(&format!("{}_{}", w[0], w[1]), buckets)));
    out.sort_unstable();
    Features(out)
}

/// Unigram and bigram features of a single text.
pub fn featurize_text(text: &str, buckets: usize) -> Features {
    ngrams(&tokens(text).collect::<Vec<_>>(), buckets)
}

/// Features of `cot ⊕ [SEP] ⊕ review`; bigrams span the separator.
pub fn featurize(cot_text: &str, review_text: &str, buckets: usize) -> Result<Features> {
    let mut toks: Vec<String> = tokens(cot_text).collect();
    let cot_len = toks.len();
    toks.push(SEPARATOR.to_string());
    for t in review_text.split(ITEM_SEPARATOR).enumerate().flat_map(|(k, part)| {
        let lead = (k > 0).then(|| ITEM_SEPARATOR.to_string());
        lead.into_iter().chain(tokens(part))
    }) {
        toks.push(t);
    }
    if cot_len == 0 && toks.len() == 1 {
        return Err(Error::invalid("both rationale and review text are empty"));
    }
    Ok(ngrams(&toks, buckets))
}

/// One training or embedding input.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderExample {
    pub user_id: String,
    pub item_id: String,
    pub ordinal: u64,
    pub rating: f64,
    pub cot_text: String,
    pub review_text: String,
}

impl EncoderExample {
    /// `item_side_text` appends the record's item metadata to the review side.
    pub fn from_record(record: &ReviewRecord, cot_text: &str, item_side_text: bool) -> Self {
        let mut review_text = record.review_text.clone();
        if let (true, Some(item)) = (item_side_text, &record.item_text) {
            review_text = format!("{review_text} {ITEM_SEPARATOR} {item}");
        }
        Self {
            user_id: record.user_id.clone(),
            item_id: record.item_id.clone(),
            ordinal: record.ordinal,
            rating: record.rating,
            cot_text: cot_text.to_string(),
            review_text,
        }
    }

    pub fn features(&self, buckets: usize) -> Result<Features> {
        featurize(&self.cot_text, &self.review_text, buckets)
    }
}

/// Embedding of one review plus the head's rating estimate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncodedReview {
    pub user_id: String,
    pub item_id: String,
    pub ordinal: u64,
    pub embedding: Vec<f64>,
    pub predicted_rating: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams<T> {
    /// `V × hidden`.
    pub table: Tensor2D<T>,
    pub dense1: Dense<T>,
    pub dense2: Dense<T>,
    pub head: Dense<T>,
    pub dropout: f64,
}

impl<T: Scalar> EncoderParams<T> {
    /// Small uniform table, Glorot dense layers, head bias at `mean_rating`.
    pub fn init(cfg: &EncoderConfig, mean_rating: f64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = seeded_rng(cfg.seed);
        let table = Tensor2D::filled_with(cfg.buckets, cfg.hidden, || T::of(rng.gen_range(-0.1..0.1)));
        let dense1 = Dense::glorot(cfg.hidden, cfg.dim, &mut rng);
        let dense2 = Dense::glorot(cfg.dim, cfg.dim, &mut rng);
        let mut head = Dense::glorot(cfg.dim, 1, &mut rng);
        head.bias.set(0, 0, T::of(mean_rating));
        Ok(Self { table, dense1, dense2, head, dropout: cfg.dropout })
    }

    /// All-zero parameters of the given shape.
    pub fn zeros(buckets: usize, hidden: usize, dim: usize, dropout: f64) -> Self {
        Self {
            table: Tensor2D::zeros(buckets, hidden),
            dense1: Dense::zeros(hidden, dim),
            dense2: Dense::zeros(dim, dim),
            head: Dense::zeros(dim, 1),
            dropout,
        }
    }

    pub fn dim(&self) -> usize {
        self.dense2.output_dim()
    }

    pub fn buckets(&self) -> usize {
        self.table.rows()
    }

    pub fn hidden(&self) -> usize {
        self.table.cols()
    }

    /// Mean of the table rows selected by `features`.
    pub fn pool(&self, features: &Features) -> Result<Vec<T>> {
        if features.is_empty() {
            return Err(Error::invalid("cannot encode an empty feature set"));
        }
        let mut pooled = vec![T::zero(); self.hidden()];
        for &b in features.buckets() {
            let row = self
                .table
                .data()
                .get(b as usize * self.hidden()..(b as usize + 1) * self.hidden())
                .ok_or_else(|| Error::Shape(format!("bucket {b} outside table of {} rows", self.buckets())))?;
            for (p, &x) in pooled.iter_mut().zip(row) {
                *p = *p + x;
            }
        }
        let n = T::of(features.len() as f64);
        Ok(pooled.into_iter().map(|p| p / n).collect())
    }

    fn forward(&self, features: &Features, mask: Option<&[T]>) -> Result<Pass<T>> {
        let pooled = self.pool(features)?;
        let act = tanh_forward(&self.dense1.forward(&pooled));
        let dropped: Vec<T> = match mask {
            Some(m) => act.iter().zip(m).map(|(&a, &k)| a * k).collect(),
            None => act.clone(),
        };
        let embedding = self.dense2.forward(&dropped);
        let rating = self.head.forward(&embedding)[0];
        Ok(Pass { pooled, act, dropped, embedding, rating })
    }

    /// The embedding; dropout applies only when `rng` is given (train mode).
    pub fn encode(&self, features: &Features, rng: Option<&mut Rng>) -> Result<Vec<T>> {
        let mask = rng.map(|r| dropout_mask(self.dim(), self.dropout, r));
        Ok(self.forward(features, mask.as_deref())?.embedding)
    }

    /// Eval-mode embedding and rating estimate.
    pub fn encode_with_rating(&self, features: &Features) -> Result<(Vec<T>, T)> {
        let p = self.forward(features, None)?;
        Ok((p.embedding, p.rating))
    }
}

struct Pass<T> {
    pooled: Vec<T>,
    act: Vec<T>,
    dropped: Vec<T>,
    embedding: Vec<T>,
    rating: T,
}

impl<T: Scalar> Parameterized<T> for EncoderParams<T> {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor2D<T>)) {
        f("table", &self.table);
        f("dense1.weight", &self.dense1.weight);
        f("dense1.bias", &self.dense1.bias);
        f("dense2.weight", &self.dense2.weight);
        f("dense2.bias", &self.dense2.bias);
        f("head.weight", &self.head.weight);
        f("head.bias", &self.head.bias);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor2D<T>)) {
        f("table", &mut self.table);
        f("dense1.weight", &mut self.dense1.weight);
        f("dense1.bias", &mut self.dense1.bias);
        f("dense2.weight", &mut self.dense2.weight);
        f("dense2.bias", &mut self.dense2.bias);
        f("head.weight", &mut self.head.weight);
        f("head.bias", &mut self.head.bias);
    }
}

/// Gradients with a sparse table part.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderGrads<T> {
    pub rows: BTreeMap<u32, Vec<T>>,
    pub dense1: Dense<T>,
    pub dense2: Dense<T>,
    pub head: Dense<T>,
}

impl<T: Scalar> EncoderGrads<T> {
    /// Densifies into the [`Parameterized::flatten`] layout of `params`.
    pub fn to_flat(&self, params: &EncoderParams<T>) -> Vec<T> {
        let h = params.hidden();
        let mut table = vec![T::zero(); params.table.len()];
        for (&r, g) in &self.rows {
            table[r as usize * h..(r as usize + 1) * h].copy_from_slice(g);
        }
        let mut out = table;
        for d in [&self.dense1, &self.dense2, &self.head] {
            out.extend_from_slice(d.weight.data());
            out.extend_from_slice(d.bias.data());
        }
        out
    }
}

/// Mean squared rating error over `batch` and its gradient.
///
/// `masks` holds one dropout mask per example, or is empty for eval mode.
pub fn loss_and_grad<T: Scalar>(
    params: &EncoderParams<T>,
    batch: &[(&Features, f64)],
    masks: &[Vec<T>],
) -> Result<(T, EncoderGrads<T>)> {
    if batch.is_empty() || !(masks.is_empty() || masks.len() == batch.len()) {
        return Err(Error::Shape("encoder batch is empty or masks do not match".into()));
    }
    let mut grads = EncoderGrads {
        rows: BTreeMap::new(),
        dense1: params.dense1.zeros_like(),
        dense2: params.dense2.zeros_like(),
        head: params.head.zeros_like(),
    };
    let n = T::of(batch.len() as f64);
    let mut loss = T::zero();
    for (k, &(features, rating)) in batch.iter().enumerate() {
        let mask = masks.get(k).map(Vec::as_slice);
        let pass = params.forward(features, mask)?;
        let err = pass.rating - T::of(rating);
        loss = loss + err * err / n;
        let d_rating = [T::of(2.0) * err / n];
        let d_emb = params.head.backward(&pass.embedding, &d_rating, &mut grads.head);
        let mut d_act = params.dense2.backward(&pass.dropped, &d_emb, &mut grads.dense2);
        if let Some(m) = mask {
            d_act.iter_mut().zip(m).for_each(|(d, &k)| *d = *d * k);
        }
        let d_z = tanh_backward(&pass.act, &d_act);
        let d_pool = params.dense1.backward(&pass.pooled, &d_z, &mut grads.dense1);
        let per = T::one() / T::of(features.len() as f64);
        for &b in features.buckets() {
            let row = grads.rows.entry(b).or_insert_with(|| vec![T::zero(); params.hidden()]);
            row.iter_mut().zip(&d_pool).for_each(|(g, &d)| *g = *g + d * per);
        }
    }
    Ok((loss, grads))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    /// Mean minibatch loss during the epoch (train mode).
    pub train_mse: f64,
    pub validation_mse: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EncoderTrace {
    pub epochs: Vec<EpochLoss>,
}

/// Eval-mode MSE of the rating head.
pub fn evaluate_mse<T: Scalar>(params: &EncoderParams<T>, data: &[(Features, f64)]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::invalid("cannot evaluate on an empty set"));
    }
    let mut total = 0.0;
    for (f, r) in data {
        let (_, pred) = params.encode_with_rating(f)?;
        total += (pred.as_f64() - r).powi(2);
    }
    Ok(total / data.len() as f64)
}

fn featurize_all(examples: &[EncoderExample], buckets: usize) -> Result<Vec<(Features, f64)>> {
    examples.iter().map(|e| Ok((e.features(buckets)?, e.rating))).collect()
}

/// Trains from scratch with Adam (lazy on table rows) over shuffled minibatches.
pub fn train_encoder<T: Scalar>(
    train: &[EncoderExample],
    validation: &[EncoderExample],
    cfg: &EncoderConfig,
) -> Result<(EncoderParams<T>, EncoderTrace)> {
    if train.is_empty() {
        return Err(Error::invalid("encoder training set is empty"));
    }
    let mean = train.iter().map(|e| e.rating).sum::<f64>() / train.len() as f64;
    let params = EncoderParams::init(cfg, mean)?;
    continue_training(params, train, validation, cfg)
}

/// Further trains existing parameters.
pub fn continue_training<T: Scalar>(
    mut params: EncoderParams<T>,
    train: &[EncoderExample],
    validation: &[EncoderExample],
    cfg: &EncoderConfig,
) -> Result<(EncoderParams<T>, EncoderTrace)> {
    cfg.validate()?;
    let train_set = featurize_all(train, params.buckets())?;
    let val_set = featurize_all(validation, params.buckets())?;
    let lr = T::of(cfg.learning_rate);
    let mut table_state = AdamState::new(params.table.len(), lr);
    let dense_len = params.num_params() - params.table.len();
    let mut dense_state = AdamState::new(dense_len, lr);
    let mut rng = seeded_rng(cfg.seed ^ 0x5eed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut trace = EncoderTrace::default();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<(&Features, f64)> = chunk.iter().map(|&i| (&train_set[i].0, train_set[i].1)).collect();
            let masks: Vec<Vec<T>> = if params.dropout > 0.0 {
                chunk.iter().map(|_| dropout_mask(params.dim(), params.dropout, &mut rng)).collect()
            } else {
                Vec::new()
            };
            let (loss, grads) = loss_and_grad(&params, &batch, &masks)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("encoder loss at epoch {epoch}, batch {batches}")));
            }
            loss_sum += loss.as_f64();
            batches += 1;
            if cfg.learning_rate == 0.0 {
                continue;
            }
            let rows: Vec<usize> = grads.rows.keys().map(|&r| r as usize).collect();
            let flat_rows: Vec<T> = grads.rows.values().flatten().copied().collect();
            let h = params.hidden();
            adam_step_rows(params.table.data_mut(), h, &rows, &flat_rows, &mut table_state)?;
            let mut dense: Vec<T> = Vec::with_capacity(dense_len);
            let mut dense_grad: Vec<T> = Vec::with_capacity(dense_len);
            for (p, g) in [(&params.dense1, &grads.dense1), (&params.dense2, &grads.dense2), (&params.head, &grads.head)] {
                dense.extend_from_slice(p.weight.data());
                dense.extend_from_slice(p.bias.data());
                dense_grad.extend_from_slice(g.weight.data());
                dense_grad.extend_from_slice(g.bias.data());
            }
            adam_step(&mut dense, &dense_grad, &mut dense_state)?;
            let mut offset = 0;
            for d in [&mut params.dense1, &mut params.dense2, &mut params.head] {
                for t in [&mut d.weight, &mut d.bias] {
                    let n = t.len();
                    t.data_mut().copy_from_slice(&dense[offset..offset + n]);
                    offset += n;
                }
            }
        }
        let validation_mse = if val_set.is_empty() { None } else { Some(evaluate_mse(&params, &val_set)?) };
        log::info!("encoder epoch {epoch}: train {:.4}, validation {:?}", loss_sum / batches as f64, validation_mse);
        trace.epochs.push(EpochLoss {
            epoch,
            train_mse: loss_sum / batches as f64,
            validation_mse,
        });
    }
    if !all_finite(&params.flatten()) {
        return Err(Error::NonFinite("encoder parameters after training".into()));
    }
    Ok((params, trace))
}

/// Eval-mode embeddings in input order; records that fail to featurize are skipped and counted.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EmbedOutput {
    pub reviews: Vec<EncodedReview>,
    pub skipped: usize,
}

pub fn embed_corpus<T: Scalar>(examples: &[EncoderExample], params: &EncoderParams<T>) -> EmbedOutput {
    let mut out = EmbedOutput::default();
    for e in examples {
        let encoded = e.features(params.buckets()).and_then(|f| params.encode_with_rating(&f));
        match encoded {
            Ok((embedding, rating)) => out.reviews.push(EncodedReview {
                user_id: e.user_id.clone(),
                item_id: e.item_id.clone(),
                ordinal: e.ordinal,
                embedding: embedding.into_iter().map(Scalar::as_f64).collect(),
                predicted_rating: rating.as_f64(),
            }),
            Err(err) => {
                log::warn!("skipping ({}, {}): {err}", e.user_id, e.item_id);
                out.skipped += 1;
            }
        }
    }
    out
}
