use super::Tensor2D;
use crate::{Error, Result, Scalar};

/// Row-wise softmax with max subtraction.
pub fn softmax_rows<T: Scalar>(x: &Tensor2D<T>) -> Tensor2D<T> {
    let mut out = x.clone();
    for r in 0..out.rows() {
        softmax_in_place(out.row_mut(r));
    }
    out
}

fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total = total + *v;
    }
    for v in row.iter_mut() {
        *v = *v / total;
    }
}

/// Scaled dot-product attention for a single query row.
///
/// `mask[j] == true` marks position `j` as attendable; masked positions get
/// zero weight. Returns the attended output and the per-position weights.
pub fn attention_forward<T: Scalar>(
    query: &[T],
    keys: &Tensor2D<T>,
    values: &Tensor2D<T>,
    mask: &[bool],
) -> Result<(Vec<T>, Vec<T>)> {
    let n = keys.rows();
    if keys.cols() != query.len() || values.rows() != n || mask.len() != n {
        return Err(Error::Shape(format!(
            "attention: query {}, keys {:?}, values {:?}, mask {}",
            query.len(),
            keys.shape(),
            values.shape(),
            mask.len()
        )));
    }
    if !mask.iter().any(|&m| m) {
        return Err(Error::invalid("attention: every position is masked"));
    }
    let scale = T::one() / T::of(query.len() as f64).sqrt();
    let mut logits: Vec<T> = Vec::with_capacity(n);
    let mut active: Vec<usize> = Vec::with_capacity(n);
    for j in (0..n).filter(|&j| mask[j]) {
        let s: T = keys.row(j).iter().zip(query).map(|(&k, &q)| k * q).sum();
        logits.push(s * scale);
        active.push(j);
    }
    softmax_in_place(&mut logits);
    let mut weights = vec![T::zero(); n];
    let mut out = vec![T::zero(); values.cols()];
    for (&j, &w) in active.iter().zip(&logits) {
        weights[j] = w;
        for (o, &v) in out.iter_mut().zip(values.row(j)) {
            *o = *o + w * v;
        }
    }
    Ok((out, weights))
}

/// Tensor-level wrapper: `query` is 1×d, output is 1×d_v.
pub fn attention<T: Scalar>(
    query: &Tensor2D<T>,
    keys: &Tensor2D<T>,
    values: &Tensor2D<T>,
    mask: &[bool],
) -> Result<Tensor2D<T>> {
    if query.rows() != 1 {
        return Err(Error::Shape(format!(
            "attention query must be a single row, got {:?}",
            query.shape()
        )));
    }
    let (out, _) = attention_forward(query.row(0), keys, values, mask)?;
    Ok(Tensor2D::row_vector(out))
}

pub struct AttentionGrads<T> {
    pub query: Vec<T>,
    pub keys: Tensor2D<T>,
    pub values: Tensor2D<T>,
}

/// Backward pass of [`attention_forward`] given the upstream gradient of the output.
pub fn attention_backward<T: Scalar>(
    query: &[T],
    keys: &Tensor2D<T>,
    values: &Tensor2D<T>,
    weights: &[T],
    d_out: &[T],
) -> AttentionGrads<T> {
    let n = keys.rows();
    let scale = T::one() / T::of(query.len() as f64).sqrt();
    let mut d_values = Tensor2D::zeros(n, values.cols());
    let mut d_weights = vec![T::zero(); n];
    for j in 0..n {
        if weights[j] == T::zero() {
            continue;
        }
        d_values.row_mut(j).iter_mut().zip(d_out).for_each(|(g, &d)| *g = weights[j] * d);
        d_weights[j] = values.row(j).iter().zip(d_out).map(|(&v, &d)| v * d).sum();
    }
    let mean: T = weights.iter().zip(&d_weights).map(|(&w, &g)| w * g).sum();
    let mut d_query = vec![T::zero(); query.len()];
    let mut d_keys = Tensor2D::zeros(n, keys.cols());
    for j in 0..n {
        if weights[j] == T::zero() {
            continue;
        }
        let d_logit = weights[j] * (d_weights[j] - mean) * scale;
        for (dq, &k) in d_query.iter_mut().zip(keys.row(j)) {
            *dq = *dq + d_logit * k;
        }
        for (dk, &q) in d_keys.row_mut(j).iter_mut().zip(query) {
            *dk = d_logit * q;
        }
    }
    AttentionGrads {
        query: d_query,
        keys: d_keys,
        values: d_values,
    }
}
