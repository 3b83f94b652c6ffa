//! Central finite-difference gradient oracle.
//!
//! Independent of the tape: it only re-evaluates a forward closure at
//! perturbed inputs, so it can second-guess any analytic gradient the tape
//! produces. Used by the invariant checker and by tests.

use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const DEFAULT_STEP: f64 = 1e-5;

/// Central-difference gradient of `f` with respect to every entry of every
/// tensor in `params`. The closure sees the perturbed parameter set.
pub fn grad<T: Scalar>(
    params: &[Tensor<T>],
    h: T,
    mut f: impl FnMut(&[Tensor<T>]) -> T,
) -> Vec<Tensor<T>> {
    let mut work: Vec<Tensor<T>> = params.to_vec();
    let mut grads: Vec<Tensor<T>> = params
        .iter()
        .map(|p| Tensor::zeros(p.shape().to_vec()))
        .collect();
    let two_h = h + h;
    for pi in 0..params.len() {
        for ei in 0..params[pi].numel() {
            let orig = work[pi].data()[ei];
            work[pi].data_mut()[ei] = orig + h;
            let plus = f(&work);
            work[pi].data_mut()[ei] = orig - h;
            let minus = f(&work);
            work[pi].data_mut()[ei] = orig;
            grads[pi].data_mut()[ei] = (plus - minus) / two_h;
        }
    }
    grads
}

/// Relative error between two gradients of one tensor, measured in the L2
/// norm: `‖a − b‖ / max(‖a‖, ‖b‖)`. Returns 0 when both are zero.
pub fn rel_error<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> f64 {
    assert_eq!(a.shape(), b.shape(), "rel_error shape mismatch");
    let mut diff = T::zero();
    for (&x, &y) in a.data().iter().zip(b.data().iter()) {
        let d = x - y;
        diff += d * d;
    }
    let na = a.norm_l2();
    let nb = b.norm_l2();
    let denom = if na > nb { na } else { nb };
    if denom == T::zero() {
        return 0.0;
    }
    (diff.sqrt() / denom).to_f64()
}

/// Largest per-tensor relative error between analytic and finite-difference
/// gradients.
pub fn max_rel_error<T: Scalar>(analytic: &[Tensor<T>], fd: &[Tensor<T>]) -> f64 {
    analytic
        .iter()
        .zip(fd.iter())
        .map(|(a, b)| rel_error(a, b))
        .fold(0.0, f64::max)
}
