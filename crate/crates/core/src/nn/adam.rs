use crate::scalar::all_finite;
use crate::{Error, Result, Scalar};

/// Moment accumulators and hyper-parameters for one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    pub step: u64,
    m: Vec<T>,
    v: Vec<T>,
}

impl<T: Scalar> AdamState<T> {
    /// Defaults: β₁ = 0.9, β₂ = 0.999, ε = 1e-8.
    pub fn new(len: usize, lr: T) -> Self {
        Self {
            lr,
            beta1: T::of(0.9),
            beta2: T::of(0.999),
            eps: T::of(1e-8),
            step: 0,
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
        }
    }

    pub fn first_moment(&self) -> &[T] {
        &self.m
    }

    pub fn second_moment(&self) -> &[T] {
        &self.v
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    fn corrections(&self) -> (T, T) {
        let t = self.step as i32;
        (
            T::one() - self.beta1.powi(t),
            T::one() - self.beta2.powi(t),
        )
    }

    #[inline]
    fn update(&mut self, i: usize, p: &mut T, g: T, c1: T, c2: T) {
        let one = T::one();
        self.m[i] = self.beta1 * self.m[i] + (one - self.beta1) * g;
        self.v[i] = self.beta2 * self.v[i] + (one - self.beta2) * g * g;
        let m_hat = self.m[i] / c1;
        let v_hat = self.v[i] / c2;
        *p = *p - self.lr * m_hat / (v_hat.sqrt() + self.eps);
    }
}

/// One bias-corrected Adam update over the whole tensor.
pub fn adam_step<T: Scalar>(params: &mut [T], grads: &[T], state: &mut AdamState<T>) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.len() {
        return Err(Error::Shape(format!(
            "adam: params {}, grads {}, state {}",
            params.len(),
            grads.len(),
            state.len()
        )));
    }
    if !all_finite(grads) {
        return Err(Error::NonFinite("adam gradient".into()));
    }
    state.step += 1;
    let (c1, c2) = state.corrections();
    for (i, (p, &g)) in params.iter_mut().zip(grads).enumerate() {
        state.update(i, p, g, c1, c2);
    }
    Ok(())
}

/// Lazy Adam over selected rows of a row-major table of width `width`.
///
/// Only the listed rows have their moments and values touched; the step
/// counter advances once per call. `grads` holds one gradient row per entry of
/// `rows`, concatenated.
pub fn adam_step_rows<T: Scalar>(
    params: &mut [T],
    width: usize,
    rows: &[usize],
    grads: &[T],
    state: &mut AdamState<T>,
) -> Result<()> {
    if params.len() != state.len() || grads.len() != rows.len() * width {
        return Err(Error::Shape("adam_step_rows: inconsistent lengths".into()));
    }
    if !all_finite(grads) {
        return Err(Error::NonFinite("adam gradient".into()));
    }
    state.step += 1;
    let (c1, c2) = state.corrections();
    for (k, &r) in rows.iter().enumerate() {
        for c in 0..width {
            let i = r * width + c;
            state.update(i, &mut params[i], grads[k * width + c], c1, c2);
        }
    }
    Ok(())
}
