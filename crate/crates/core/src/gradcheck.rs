//! Central finite differences, used as an independent oracle for every
//! analytic gradient in the crate.

use crate::params::Parameters;
use crate::tensor::Tensor;

/// Numerical gradient of `loss` with respect to parameter tensor `index` of
/// `base`, by central differences with step `eps`.
pub fn central_difference<P, F>(base: &P, index: usize, loss: F, eps: f64) -> Tensor
where
    P: Parameters + Clone,
    F: Fn(&P) -> f64,
{
    let mut probe = base.clone();
    let len = probe.tensors()[index].len();
    let mut grad = Tensor::zeros_like(probe.tensors()[index]);
    for i in 0..len {
        let orig = probe.tensors()[index].data()[i];
        probe.tensors_mut()[index].data_mut()[i] = orig + eps;
        let up = loss(&probe);
        probe.tensors_mut()[index].data_mut()[i] = orig - eps;
        let down = loss(&probe);
        probe.tensors_mut()[index].data_mut()[i] = orig;
        grad.data_mut()[i] = (up - down) / (2.0 * eps);
    }
    grad
}

/// Central differences of a function of a plain vector.
pub fn central_difference_vec<F: Fn(&[f64]) -> f64>(x: &[f64], f: F, eps: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + eps;
            let up = f(&probe);
            probe[i] = x[i] - eps;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * eps)
        })
        .collect()
}

/// Elementwise relative error `|a - b| / max(|a|, |b|, 1e-6)`, maximised
/// over entries. The floor keeps entries whose true gradient is ~0 from
/// dividing roundoff by roundoff.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

pub fn max_relative_error(analytic: &Tensor, numeric: &Tensor) -> f64 {
    max_relative_error_slices(analytic.data(), numeric.data())
}

pub fn max_relative_error_slices(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &b)| relative_error(a, b))
        .fold(0.0, f64::max)
}
