//! Minimal differentiable kernel: tensors, dense maps, single-query
//! attention, dropout, losses and Adam. Every layer exposes a forward and a
//! hand-written backward pass; `grad_check` verifies them numerically.

mod adam;
mod attention;
mod dense;
mod gradcheck;
mod loss;
mod tensor;

pub use adam::{adam_step, adam_step_rows, AdamState};
pub use attention::{attention, attention_backward, attention_forward, softmax_rows, AttentionGrads};
pub use dense::{tanh_backward, tanh_forward, Dense, DenseGrad};
pub use gradcheck::{grad_check, GRAD_CHECK_STEP};
pub use loss::{mse, mse_grad};
pub use tensor::{matmul, Tensor2D};

use crate::Scalar;
use rand::Rng as _;

/// Visits named parameter tensors in a fixed order.
///
/// Models and their gradient containers share one layout, so the same visit
/// order drives checkpointing, flattening for gradient checks, and the
/// per-tensor Adam states.
pub trait Parameterized<T: Scalar> {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor2D<T>));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor2D<T>));

    fn flatten(&self) -> Vec<T> {
        let mut out = Vec::new();
        self.visit(&mut |_, t| out.extend_from_slice(t.data()));
        out
    }

    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, t| n += t.len());
        n
    }

    /// Overwrites parameters from a flat vector laid out as in [`flatten`](Self::flatten).
    fn unflatten(&mut self, flat: &[T]) -> crate::Result<()> {
        let need = self.num_params();
        if flat.len() != need {
            return Err(crate::Error::Shape(format!(
                "flat parameter vector has {} entries, model needs {need}",
                flat.len()
            )));
        }
        let mut offset = 0;
        self.visit_mut(&mut |_, t| {
            let n = t.len();
            t.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        });
        Ok(())
    }
}

/// Inverted-dropout mask: each entry is 0 with probability `rate`, otherwise
/// `1 / (1 - rate)`. A rate of 0 yields all ones.
pub fn dropout_mask<T: Scalar>(len: usize, rate: f64, rng: &mut crate::Rng) -> Vec<T> {
    if rate <= 0.0 {
        return vec![T::one(); len];
    }
    let keep = T::of(1.0 / (1.0 - rate));
    (0..len)
        .map(|_| if rng.gen::<f64>() < rate { T::zero() } else { keep })
        .collect()
}
