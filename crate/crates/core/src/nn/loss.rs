use crate::Scalar;

pub fn mse<T: Scalar>(pred: &[T], target: &[T]) -> T {
    let n = T::of(pred.len() as f64);
    pred.iter()
        .zip(target)
        .map(|(&p, &t)| (p - t) * (p - t))
        .sum::<T>()
        / n
}

/// Gradient of [`mse`] with respect to `pred`.
pub fn mse_grad<T: Scalar>(pred: &[T], target: &[T]) -> Vec<T> {
    let scale = T::of(2.0 / pred.len() as f64);
    pred.iter().zip(target).map(|(&p, &t)| scale * (p - t)).collect()
}
