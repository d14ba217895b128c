//! Central finite-difference helpers for gradient checks.

use crate::tensor::Tensor;

/// Central-difference estimate of `∂f/∂x` at `x`, one coordinate at a time.
pub fn numerical_grad(x: &Tensor, step: f64, mut f: impl FnMut(&Tensor) -> f64) -> Tensor {
    let mut probe = x.clone();
    let mut out = Tensor::zeros(x.shape());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + step;
        let up = f(&probe);
        probe.data_mut()[i] = orig - step;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        out.data_mut()[i] = (up - down) / (2.0 * step);
    }
    out
}

/// `‖a − b‖ / max(‖a‖, ‖b‖, floor)`, the usual relative error for gradient checks.
pub fn relative_error(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.shape(), b.shape());
    let diff: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let scale = a.sum_squares().sqrt().max(b.sum_squares().sqrt()).max(1e-12);
    diff / scale
}
