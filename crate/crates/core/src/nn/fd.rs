//! Central finite differences, the reference the analytic gradients are
//! checked against.

use crate::error::{invalid, Error, Result};
use crate::nn::ParamStore;

/// Magnitude below which [`max_relative_error`] compares absolutely.
///
/// Central differences with `h = 1e-5` carry roughly `1e-11 * |f|` of
/// round-off, so coordinates that are truly zero never come out as exactly
/// zero and a pure ratio would be meaningless there.
pub const RELATIVE_FLOOR: f64 = 1e-6;

/// `(f(θ + h·eᵢ) − f(θ − h·eᵢ)) / 2h` for every coordinate of `params`.
pub fn finite_diff_grad<F>(mut loss: F, params: &ParamStore, h: f64) -> Result<Vec<f64>>
where
    F: FnMut(&ParamStore) -> f64,
{
    if !(h > 0.0) {
        return Err(invalid(format!("finite-difference step must be positive, got {h}")));
    }
    let mut probe = params.clone();
    let mut grad = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        let orig = probe.values()[i];
        probe.values_mut()[i] = orig + h;
        let up = loss(&probe);
        probe.values_mut()[i] = orig - h;
        let down = loss(&probe);
        probe.values_mut()[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite(format!("loss at coordinate {i}: {up} / {down}")));
        }
        grad.push((up - down) / (2.0 * h));
    }
    Ok(grad)
}

/// Largest `|a − b| / max(|a|, |b|, RELATIVE_FLOOR)` over paired entries.
pub fn max_relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "gradient lengths differ");
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y).abs() / x.abs().max(y.abs()).max(RELATIVE_FLOOR))
        .fold(0.0, f64::max)
}
