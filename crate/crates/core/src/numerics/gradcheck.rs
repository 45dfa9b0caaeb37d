//! Central finite-difference gradient checking.
//!
//! Only forward evaluations are used here, so the check stays independent of
//! the adjoint rules it is meant to validate.

use super::tensor::Tensor;

/// Outcome of comparing an analytic gradient against finite differences.
#[derive(Clone, Debug)]
pub struct GradCheck {
    /// Worst relative error over all checked coordinates.
    pub max_rel_err: f64,
    /// Coordinate (flat index) where the worst error occurred.
    pub worst_index: usize,
    pub checked: usize,
}

/// Central-difference estimate of `d f / d x` at every coordinate of `x`.
pub fn numeric_gradient<F>(x: &Tensor, step: f64, mut f: F) -> Tensor
where
    F: FnMut(&Tensor) -> f64,
{
    let mut probe = x.clone();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + step;
        let up = f(&probe);
        probe.data_mut()[i] = orig - step;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        out.push((up - down) / (2.0 * step));
    }
    Tensor::new(x.shape().to_vec(), out).expect("same shape")
}

/// Relative error `|a − n| / max(|a| + |n|, floor)`.
///
/// The floor keeps coordinates whose true gradient is ~0 from dominating on
/// rounding noise alone.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(floor)
}

/// Compares `analytic` against central differences of `f` around `x`.
pub fn check<F>(x: &Tensor, analytic: &Tensor, step: f64, floor: f64, f: F) -> GradCheck
where
    F: FnMut(&Tensor) -> f64,
{
    let numeric = numeric_gradient(x, step, f);
    let mut worst = GradCheck {
        max_rel_err: 0.0,
        worst_index: 0,
        checked: x.len(),
    };
    for (i, (a, n)) in analytic.data().iter().zip(numeric.data()).enumerate() {
        let e = relative_error(*a, *n, floor);
        if e > worst.max_rel_err {
            worst.max_rel_err = e;
            worst.worst_index = i;
        }
    }
    worst
}
