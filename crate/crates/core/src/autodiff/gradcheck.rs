use super::tensor::{Precision, Tensor};
use crate::error::{Error, Result};

/// `|a − b| / max(1, |a|, |b|)`
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / 1f64.max(a.abs()).max(b.abs())
}

/// Compares the gradients already stored on `params` (from a prior backward
/// pass) against central differences of `f`, coordinate by coordinate.
///
/// Returns the largest relative error. Every coordinate is restored to its
/// original value before returning.
pub fn finite_difference_check<F>(
    params: &mut [Tensor],
    step: f64,
    precision: Precision,
    mut f: F,
) -> Result<f64>
where
    F: FnMut(&[Tensor]) -> Result<f64>,
{
    if precision != Precision::F64 {
        return Err(Error::InvalidArgument(
            "finite-difference checks require 64-bit precision".into(),
        ));
    }
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "step must be positive, got {step}"
        )));
    }
    let analytic: Vec<Vec<f64>> = params.iter().map(Tensor::grad_or_zeros).collect();
    let mut worst: f64 = 0.0;
    for ti in 0..params.len() {
        for ci in 0..params[ti].len() {
            let orig = params[ti].data()[ci];
            params[ti].data_mut()[ci] = orig + step;
            let plus = f(params);
            params[ti].data_mut()[ci] = orig - step;
            let minus = f(params);
            params[ti].data_mut()[ci] = orig;
            let (plus, minus) = (plus?, minus?);
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::NonFinite(format!(
                    "objective at tensor {ti} coordinate {ci}"
                )));
            }
            let numeric = (plus - minus) / (2.0 * step);
            worst = worst.max(relative_error(numeric, analytic[ti][ci]));
        }
    }
    Ok(worst)
}
