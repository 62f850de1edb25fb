use super::{Parameterized, Tensor2D};
use crate::Scalar;
use rand::Rng as _;

/// Affine map `y = x·W + b` with `W` stored as `in × out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense<T> {
    pub weight: Tensor2D<T>,
    pub bias: Tensor2D<T>,
}

pub type DenseGrad<T> = Dense<T>;

impl<T: Scalar> Dense<T> {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Tensor2D::zeros(input, output),
            bias: Tensor2D::zeros(1, output),
        }
    }

    /// Glorot-uniform weights, zero bias.
    pub fn glorot(input: usize, output: usize, rng: &mut crate::Rng) -> Self {
        let limit = (6.0 / (input + output) as f64).sqrt();
        Self {
            weight: Tensor2D::filled_with(input, output, || T::of(rng.gen_range(-limit..limit))),
            bias: Tensor2D::zeros(1, output),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.input_dim(), self.output_dim())
    }

    pub fn forward(&self, x: &[T]) -> Vec<T> {
        let mut y = self.weight.vec_mul(x);
        for (o, &b) in y.iter_mut().zip(self.bias.data()) {
            *o = *o + b;
        }
        y
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx`.
    pub fn backward(&self, x: &[T], d_y: &[T], grad: &mut DenseGrad<T>) -> Vec<T> {
        grad.weight.add_outer(x, d_y);
        for (g, &d) in grad.bias.data_mut().iter_mut().zip(d_y) {
            *g = *g + d;
        }
        self.weight.mul_vec(d_y)
    }
}

impl<T: Scalar> Parameterized<T> for Dense<T> {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor2D<T>)) {
        f("weight", &self.weight);
        f("bias", &self.bias);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor2D<T>)) {
        f("weight", &mut self.weight);
        f("bias", &mut self.bias);
    }
}

pub fn tanh_forward<T: Scalar>(z: &[T]) -> Vec<T> {
    z.iter().map(|v| v.tanh()).collect()
}

/// `dL/dz` given `a = tanh(z)` and `dL/da`.
pub fn tanh_backward<T: Scalar>(a: &[T], d_a: &[T]) -> Vec<T> {
    a.iter().zip(d_a).map(|(&a, &d)| d * (T::one() - a * a)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::grad_check;

    #[test]
    fn dense_tanh_gradients() {
        let mut rng = crate::seeded_rng(2);
        let layer = Dense::<f64>::glorot(4, 3, &mut rng);
        let x: Vec<f64> = vec![0.3, -0.5, 0.8, 0.1];
        let probe = [0.2, -1.0, 0.6];
        let loss = |l: &Dense<f64>, x: &[f64]| -> f64 {
            tanh_forward(&l.forward(x)).iter().zip(&probe).map(|(a, b)| a * b).sum()
        };
        let a = tanh_forward(&layer.forward(&x));
        let dz = tanh_backward(&a, &probe);
        let mut g = layer.zeros_like();
        let dx = layer.backward(&x, &dz, &mut g);

        let params = layer.flatten();
        let f = |p: &[f64]| {
            let mut l = layer.clone();
            l.unflatten(p).unwrap();
            loss(&l, &x)
        };
        assert!(grad_check(f, &params, &g.flatten()) < 1e-6);
        let fx = |p: &[f64]| loss(&layer, p);
        assert!(grad_check(fx, &x, &dx) < 1e-6);
    }
}
