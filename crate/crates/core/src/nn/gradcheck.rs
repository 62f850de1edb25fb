use crate::Scalar;

/// Central-difference step used by [`grad_check`].
pub const GRAD_CHECK_STEP: f64 = 1e-5;

/// Max over coordinates of `|g_fd − g| / max(1, |g_fd| + |g|)`, where `g_fd`
/// is the central finite difference of `f` at `params`.
pub fn grad_check<T: Scalar>(mut f: impl FnMut(&[T]) -> T, params: &[T], exact: &[T]) -> T {
    assert_eq!(params.len(), exact.len(), "gradient length mismatch");
    let h = T::of(GRAD_CHECK_STEP);
    let two_h = h + h;
    let mut probe = params.to_vec();
    let mut worst = T::zero();
    for i in 0..params.len() {
        probe[i] = params[i] + h;
        let up = f(&probe);
        probe[i] = params[i] - h;
        let down = f(&probe);
        probe[i] = params[i];
        let fd = (up - down) / two_h;
        let denom = T::one().max(fd.abs() + exact[i].abs());
        let err = (fd - exact[i]).abs() / denom;
        if err > worst || err.is_nan() {
            worst = err;
        }
    }
    worst
}
