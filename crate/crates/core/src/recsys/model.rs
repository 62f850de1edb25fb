use std::collections::BTreeMap;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::cache::{retrieve_history, CacheStore, EntityKind, StackedHistory};
use crate::nn::{attention_backward, attention_forward, dropout_mask, tanh_backward, tanh_forward, Dense, Parameterized, Tensor2D};
use crate::{Error, Result, Rng, Scalar};

/// Maps entity ids to embedding rows; row 0 is the shared cold-start row.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IdIndex {
    rows: BTreeMap<String, usize>,
}

impl IdIndex {
    pub fn from_ids<'a>(ids: impl IntoIterator<Item = &'a str>) -> Self {
        let mut rows = BTreeMap::new();
        for id in ids {
            let next = rows.len() + 1;
            rows.entry(id.to_string()).or_insert(next);
        }
        Self { rows }
    }

    /// Row of `id`, or 0 when unknown.
    pub fn row(&self, id: &str) -> usize {
        self.rows.get(id).copied().unwrap_or(0)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.rows.contains_key(id)
    }

    /// Number of rows including the cold-start row.
    pub fn table_rows(&self) -> usize {
        self.rows.len() + 1
    }

    pub fn ids(&self) -> impl Iterator<Item = (&str, usize)> {
        self.rows.iter().map(|(k, &v)| (k.as_str(), v))
    }
}

/// `x' = g·x + dropout(attention(x·Wq, H·Wk, H·Wv))`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttnBlock<T> {
    pub wq: Tensor2D<T>,
    pub wk: Tensor2D<T>,
    pub wv: Tensor2D<T>,
    /// 1×1 residual gate.
    pub gate: Tensor2D<T>,
}

impl<T: Scalar> AttnBlock<T> {
    pub fn zeros(d: usize) -> Self {
        Self {
            wq: Tensor2D::zeros(d, d),
            wk: Tensor2D::zeros(d, d),
            wv: Tensor2D::zeros(d, d),
            gate: Tensor2D::zeros(1, 1),
        }
    }

    pub fn init(d: usize, rng: &mut Rng) -> Self {
        let limit = (3.0 / d as f64).sqrt();
        let mut w = || Tensor2D::filled_with(d, d, || T::of(rng.gen_range(-limit..limit)));
        Self {
            wq: w(),
            wk: w(),
            wv: w(),
            gate: Tensor2D::from_vec(1, 1, vec![T::one()]).expect("1x1"),
        }
    }

    fn visit_named(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor2D<T>)) {
        f(&format!("{prefix}.wq"), &self.wq);
        f(&format!("{prefix}.wk"), &self.wk);
        f(&format!("{prefix}.wv"), &self.wv);
        f(&format!("{prefix}.gate"), &self.gate);
    }

    fn visit_named_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor2D<T>)) {
        f(&format!("{prefix}.wq"), &mut self.wq);
        f(&format!("{prefix}.wk"), &mut self.wk);
        f(&format!("{prefix}.wv"), &mut self.wv);
        f(&format!("{prefix}.gate"), &mut self.gate);
    }
}

/// All trainable tensors, in a fixed visit order.
#[derive(Clone, Debug, PartialEq)]
pub struct RecWeights<T> {
    pub user_emb: Tensor2D<T>,
    pub item_emb: Tensor2D<T>,
    /// Query `p_u`, attending over the item's history.
    pub user_blocks: Vec<AttnBlock<T>>,
    /// Query `p_i`, attending over the user's history.
    pub item_blocks: Vec<AttnBlock<T>>,
    pub proj_hidden: Dense<T>,
    pub proj_out: Dense<T>,
}

impl<T: Scalar> RecWeights<T> {
    pub fn zeros(users: usize, items: usize, d: usize, layers: usize, hidden: usize) -> Self {
        Self {
            user_emb: Tensor2D::zeros(users, d),
            item_emb: Tensor2D::zeros(items, d),
            user_blocks: (0..layers).map(|_| AttnBlock::zeros(d)).collect(),
            item_blocks: (0..layers).map(|_| AttnBlock::zeros(d)).collect(),
            proj_hidden: Dense::zeros(2 * d, hidden),
            proj_out: Dense::zeros(hidden, 1),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(
            self.user_emb.rows(),
            self.item_emb.rows(),
            self.dim(),
            self.user_blocks.len(),
            self.proj_hidden.output_dim(),
        )
    }

    pub fn dim(&self) -> usize {
        self.user_emb.cols()
    }

    pub fn layers(&self) -> usize {
        self.user_blocks.len()
    }
}

impl<T: Scalar> Parameterized<T> for RecWeights<T> {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor2D<T>)) {
        f("user_emb", &self.user_emb);
        f("item_emb", &self.item_emb);
        for (l, b) in self.user_blocks.iter().enumerate() {
            b.visit_named(&format!("user_block{l}"), f);
        }
        for (l, b) in self.item_blocks.iter().enumerate() {
            b.visit_named(&format!("item_block{l}"), f);
        }
        f("proj_hidden.weight", &self.proj_hidden.weight);
        f("proj_hidden.bias", &self.proj_hidden.bias);
        f("proj_out.weight", &self.proj_out.weight);
        f("proj_out.bias", &self.proj_out.bias);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor2D<T>)) {
        f("user_emb", &mut self.user_emb);
        f("item_emb", &mut self.item_emb);
        for (l, b) in self.user_blocks.iter_mut().enumerate() {
            b.visit_named_mut(&format!("user_block{l}"), f);
        }
        for (l, b) in self.item_blocks.iter_mut().enumerate() {
            b.visit_named_mut(&format!("item_block{l}"), f);
        }
        f("proj_hidden.weight", &mut self.proj_hidden.weight);
        f("proj_hidden.bias", &mut self.proj_hidden.bias);
        f("proj_out.weight", &mut self.proj_out.weight);
        f("proj_out.bias", &mut self.proj_out.bias);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RecModelParams<T> {
    pub users: IdIndex,
    pub items: IdIndex,
    pub weights: RecWeights<T>,
    pub margin: f64,
    pub dropout: f64,
}

impl<T: Scalar> Parameterized<T> for RecModelParams<T> {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor2D<T>)) {
        self.weights.visit(f)
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor2D<T>)) {
        self.weights.visit_mut(f)
    }
}

/// Squared-distance hinge `max(0, Δ + ‖v − p⁺‖² − ‖v − p⁻‖²)`.
pub fn contrastive_loss<T: Scalar>(anchor: &[T], positive: &[T], negative: &[T], margin: T) -> T {
    (margin + sq_dist(anchor, positive) - sq_dist(anchor, negative)).max(T::zero())
}

fn sq_dist<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum()
}

/// Intermediate values of one block, kept for the backward pass.
struct BlockTape<T> {
    input: Vec<T>,
    query: Vec<T>,
    keys: Tensor2D<T>,
    values: Tensor2D<T>,
    weights: Vec<T>,
    mask: Option<Vec<T>>,
}

/// Forward through `blocks` for one query. `rows` are the valid history rows;
/// an empty matrix returns `p` unchanged.
fn fuse_taped<T: Scalar>(
    p: &[T],
    rows: &Tensor2D<T>,
    blocks: &[AttnBlock<T>],
    masks: Option<&[Vec<T>]>,
) -> Result<(Vec<T>, Vec<BlockTape<T>>)> {
    if rows.rows() == 0 {
        return Ok((p.to_vec(), Vec::new()));
    }
    let all = vec![true; rows.rows()];
    let mut x = p.to_vec();
    let mut tapes = Vec::with_capacity(blocks.len());
    for (l, b) in blocks.iter().enumerate() {
        let query = b.wq.vec_mul(&x);
        let keys = rows.matmul(&b.wk)?;
        let values = rows.matmul(&b.wv)?;
        let (attended, weights) = attention_forward(&query, &keys, &values, &all)?;
        let mask = masks.map(|m| m[l].clone());
        let g = b.gate.get(0, 0);
        let next: Vec<T> = match &mask {
            Some(m) => x.iter().zip(&attended).zip(m).map(|((&xi, &a), &k)| g * xi + a * k).collect(),
            None => x.iter().zip(&attended).map(|(&xi, &a)| g * xi + a).collect(),
        };
        tapes.push(BlockTape { input: x, query, keys, values, weights, mask });
        x = next;
    }
    Ok((x, tapes))
}

fn fuse_backward<T: Scalar>(
    rows: &Tensor2D<T>,
    blocks: &[AttnBlock<T>],
    tapes: &[BlockTape<T>],
    d_out: Vec<T>,
    grads: &mut [AttnBlock<T>],
) -> Vec<T> {
    let mut d_x = d_out;
    for l in (0..tapes.len()).rev() {
        let (b, t) = (&blocks[l], &tapes[l]);
        let g = b.gate.get(0, 0);
        let d_gate: T = d_x.iter().zip(&t.input).map(|(&d, &x)| d * x).sum();
        let d_att: Vec<T> = match &t.mask {
            Some(m) => d_x.iter().zip(m).map(|(&d, &k)| d * k).collect(),
            None => d_x.clone(),
        };
        let ag = attention_backward(&t.query, &t.keys, &t.values, &t.weights, &d_att);
        let gb = &mut grads[l];
        gb.gate.set(0, 0, gb.gate.get(0, 0) + d_gate);
        gb.wq.add_outer(&t.input, &ag.query);
        for j in 0..rows.rows() {
            gb.wk.add_outer(rows.row(j), ag.keys.row(j));
            gb.wv.add_outer(rows.row(j), ag.values.row(j));
        }
        let d_in_q = b.wq.mul_vec(&ag.query);
        d_x = d_x.iter().zip(d_in_q).map(|(&d, q)| g * d + q).collect();
    }
    d_x
}

/// Fuses the query `p` with a history through `blocks`. A miss returns `p`;
/// `masks` holds one dropout mask per block in train mode.
pub fn fuse<T: Scalar>(
    p: &[T],
    history: &StackedHistory<T>,
    blocks: &[AttnBlock<T>],
    masks: Option<&[Vec<T>]>,
) -> Result<Vec<T>> {
    if history.true_length == 0 {
        if !history.miss {
            return Err(Error::invalid("history has no valid rows but is not flagged as a miss"));
        }
        return Ok(p.to_vec());
    }
    if history.matrix.cols() != p.len() {
        return Err(Error::Shape(format!("history width {} vs query {}", history.matrix.cols(), p.len())));
    }
    Ok(fuse_taped(p, &history.valid_rows(), blocks, masks)?.0)
}

/// One (user, item, rating) case with its histories' valid rows.
#[derive(Clone, Debug, PartialEq)]
pub struct Interaction<T> {
    pub user_row: usize,
    pub item_row: usize,
    pub rating: f64,
    /// The user's history, attended by the item query.
    pub user_history: Tensor2D<T>,
    /// The item's history, attended by the user query.
    pub item_history: Tensor2D<T>,
}

impl<T: Scalar> Interaction<T> {
    /// Builds the case, optionally leaving the interaction's own review out of both histories.
    pub fn build(
        params: &RecModelParams<T>,
        store: &CacheStore,
        user: &str,
        item: &str,
        rating: f64,
        k_max: usize,
        exclude_self: bool,
    ) -> Result<Self> {
        let exclude = exclude_self.then_some((user, item));
        let hu: StackedHistory<T> = retrieve_history(store, EntityKind::User, user, k_max, exclude)?;
        let hi: StackedHistory<T> = retrieve_history(store, EntityKind::Item, item, k_max, exclude)?;
        Ok(Self {
            user_row: params.users.row(user),
            item_row: params.items.row(item),
            rating,
            user_history: hu.valid_rows(),
            item_history: hi.valid_rows(),
        })
    }
}

/// Random choices for one minibatch: dropout masks and in-batch negatives.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchPlan<T> {
    /// Per example: masks for the user-query blocks, the item-query blocks, and the projector.
    pub user_masks: Vec<Vec<Vec<T>>>,
    pub item_masks: Vec<Vec<Vec<T>>>,
    pub proj_masks: Vec<Vec<T>>,
    /// Per example: batch index of the negative item (for the user anchor) and negative user.
    pub neg_item: Vec<Option<usize>>,
    pub neg_user: Vec<Option<usize>>,
    /// Per example: whether the user/item rows are replaced by the cold-start row.
    pub cold_user: Vec<bool>,
    pub cold_item: Vec<bool>,
}

impl<T: Scalar> BatchPlan<T> {
    /// No dropout, no cold-start substitution; negatives as given.
    pub fn deterministic(n: usize, neg: Vec<Option<usize>>) -> Self {
        Self {
            user_masks: vec![Vec::new(); n],
            item_masks: vec![Vec::new(); n],
            proj_masks: Vec::new(),
            neg_item: neg.clone(),
            neg_user: neg,
            cold_user: vec![false; n],
            cold_item: vec![false; n],
        }
    }

    pub fn draw(
        batch: &[&Interaction<T>],
        weights: &RecWeights<T>,
        dropout: f64,
        cold_start_rate: f64,
        reject_accidental_positives: bool,
        rng: &mut Rng,
    ) -> Result<Self> {
        let n = batch.len();
        if n < 2 {
            return Err(Error::invalid("a contrastive batch needs at least 2 interactions"));
        }
        let d = weights.dim();
        let layers = weights.layers();
        let hidden = weights.proj_hidden.output_dim();
        let blocks = |rng: &mut Rng| -> Vec<Vec<T>> {
            if dropout > 0.0 {
                (0..layers).map(|_| dropout_mask(d, dropout, rng)).collect()
            } else {
                Vec::new()
            }
        };
        let mut plan = Self::deterministic(n, vec![None; n]);
        for k in 0..n {
            plan.user_masks[k] = blocks(rng);
            plan.item_masks[k] = blocks(rng);
            plan.cold_user[k] = rng.gen::<f64>() < cold_start_rate;
            plan.cold_item[k] = rng.gen::<f64>() < cold_start_rate;
        }
        if dropout > 0.0 {
            plan.proj_masks = (0..n).map(|_| dropout_mask(hidden, dropout, rng)).collect();
        }
        let negative = |rng: &mut Rng, k: usize, same: &dyn Fn(usize) -> bool| -> Option<usize> {
            let candidates: Vec<usize> = (0..n)
                .filter(|&j| j != k && !(reject_accidental_positives && same(j)))
                .collect();
            (!candidates.is_empty()).then(|| candidates[rng.gen_range(0..candidates.len())])
        };
        for k in 0..n {
            plan.neg_item[k] = negative(rng, k, &|j| batch[j].item_row == batch[k].item_row);
            plan.neg_user[k] = negative(rng, k, &|j| batch[j].user_row == batch[k].user_row);
        }
        Ok(plan)
    }
}

/// Values from one forward pass needed by the backward pass.
pub(crate) struct Tape<T> {
    pub user_row: usize,
    pub item_row: usize,
    pub p_u: Vec<T>,
    pub p_i: Vec<T>,
    pub v_u: Vec<T>,
    pub v_i: Vec<T>,
    user_tapes: Vec<BlockTape<T>>,
    item_tapes: Vec<BlockTape<T>>,
    concat: Vec<T>,
    hidden: Vec<T>,
    dropped: Vec<T>,
    proj_mask: Option<Vec<T>>,
    pub prediction: T,
}

impl<T: Scalar> RecModelParams<T> {
    pub fn dim(&self) -> usize {
        self.weights.dim()
    }

    pub(crate) fn forward(
        &self,
        x: &Interaction<T>,
        user_row: usize,
        item_row: usize,
        user_masks: Option<&[Vec<T>]>,
        item_masks: Option<&[Vec<T>]>,
        proj_mask: Option<&[T]>,
    ) -> Result<Tape<T>> {
        let w = &self.weights;
        let p_u = w.user_emb.row(user_row).to_vec();
        let p_i = w.item_emb.row(item_row).to_vec();
        let (v_u, user_tapes) = fuse_taped(&p_u, &x.item_history, &w.user_blocks, user_masks)?;
        let (v_i, item_tapes) = fuse_taped(&p_i, &x.user_history, &w.item_blocks, item_masks)?;
        let concat: Vec<T> = v_u.iter().chain(&v_i).copied().collect();
        let hidden = tanh_forward(&w.proj_hidden.forward(&concat));
        let dropped: Vec<T> = match proj_mask {
            Some(m) => hidden.iter().zip(m).map(|(&h, &k)| h * k).collect(),
            None => hidden.clone(),
        };
        let prediction = w.proj_out.forward(&dropped)[0];
        Ok(Tape {
            user_row,
            item_row,
            p_u,
            p_i,
            v_u,
            v_i,
            user_tapes,
            item_tapes,
            concat,
            hidden,
            dropped,
            proj_mask: proj_mask.map(<[T]>::to_vec),
            prediction,
        })
    }

    /// Accumulates gradients given `d_pred` and extra gradients on `v_u`, `v_i`.
    pub(crate) fn backward(
        &self,
        x: &Interaction<T>,
        tape: &Tape<T>,
        d_pred: T,
        d_vu_extra: &[T],
        d_vi_extra: &[T],
        grads: &mut RecWeights<T>,
    ) {
        let w = &self.weights;
        let d = self.dim();
        let mut d_dropped = w.proj_out.backward(&tape.dropped, &[d_pred], &mut grads.proj_out);
        if let Some(m) = &tape.proj_mask {
            d_dropped.iter_mut().zip(m).for_each(|(dd, &k)| *dd = *dd * k);
        }
        let d_z = tanh_backward(&tape.hidden, &d_dropped);
        let d_concat = w.proj_hidden.backward(&tape.concat, &d_z, &mut grads.proj_hidden);
        let d_vu: Vec<T> = d_concat[..d].iter().zip(d_vu_extra).map(|(&a, &b)| a + b).collect();
        let d_vi: Vec<T> = d_concat[d..].iter().zip(d_vi_extra).map(|(&a, &b)| a + b).collect();
        let d_pu = fuse_backward(&x.item_history, &w.user_blocks, &tape.user_tapes, d_vu, &mut grads.user_blocks);
        let d_pi = fuse_backward(&x.user_history, &w.item_blocks, &tape.item_tapes, d_vi, &mut grads.item_blocks);
        add_row(&mut grads.user_emb, tape.user_row, &d_pu);
        add_row(&mut grads.item_emb, tape.item_row, &d_pi);
    }

    /// Eval-mode prediction clamped to [1, 5].
    pub fn predict_interaction(&self, x: &Interaction<T>) -> Result<T> {
        let tape = self.forward(x, x.user_row, x.item_row, None, None, None)?;
        Ok(tape.prediction.max(T::one()).min(T::of(5.0)))
    }

    /// Prediction for `(user, item)` from the cache, without exclusion.
    pub fn predict(&self, user: &str, item: &str, store: &CacheStore, k_max: usize) -> Result<T> {
        let x = Interaction::build(self, store, user, item, 0.0, k_max, false)?;
        self.predict_interaction(&x)
    }

    /// Prediction from explicit histories (padding beyond `true_length` is ignored).
    pub fn predict_with_histories(
        &self,
        user: &str,
        item: &str,
        user_history: &StackedHistory<T>,
        item_history: &StackedHistory<T>,
    ) -> Result<T> {
        for h in [user_history, item_history] {
            if h.true_length == 0 && !h.miss {
                return Err(Error::invalid("history has no valid rows but is not flagged as a miss"));
            }
        }
        let x = Interaction {
            user_row: self.users.row(user),
            item_row: self.items.row(item),
            rating: 0.0,
            user_history: user_history.valid_rows(),
            item_history: item_history.valid_rows(),
        };
        self.predict_interaction(&x)
    }
}

pub(crate) fn add_row<T: Scalar>(t: &mut Tensor2D<T>, row: usize, g: &[T]) {
    for (a, &b) in t.row_mut(row).iter_mut().zip(g) {
        *a = *a + b;
    }
}
