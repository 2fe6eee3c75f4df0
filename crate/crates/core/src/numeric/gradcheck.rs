use super::Matrix;
use crate::error::{Error, Result};

/// Central-difference gradient of a scalar function at `point`:
/// `(f(x + h·eᵢ) − f(x − h·eᵢ)) / 2h` for every coordinate `i`.
pub fn finite_difference_gradient<F>(mut scalar_fn: F, point: &Matrix, h: f64) -> Result<Matrix>
where
    F: FnMut(&Matrix) -> Result<f64>,
{
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::param(format!(
            "finite difference step must be positive, got {h}"
        )));
    }
    let mut probe = point.clone();
    let mut grad = Matrix::zeros(point.rows(), point.cols());
    for i in 0..point.as_slice().len() {
        let x = point.as_slice()[i];
        probe.data_mut()[i] = x + h;
        let fp = scalar_fn(&probe)?;
        probe.data_mut()[i] = x - h;
        let fm = scalar_fn(&probe)?;
        probe.data_mut()[i] = x;
        let g = (fp - fm) / (2.0 * h);
        if !g.is_finite() {
            return Err(Error::NonFinite("finite_difference_gradient"));
        }
        grad.data_mut()[i] = g;
    }
    Ok(grad)
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)` in Frobenius norm, with a floor of 1e-12 on the
/// denominator so two zero matrices compare equal.
pub fn relative_error(a: &Matrix, b: &Matrix) -> f64 {
    assert_eq!(a.shape(), b.shape(), "relative_error: shape mismatch");
    let diff = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    diff / a.frobenius_norm().max(b.frobenius_norm()).max(1e-12)
}
