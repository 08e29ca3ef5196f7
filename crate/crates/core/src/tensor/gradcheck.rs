//! Central-difference gradient checking.

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    /// `max_i |g_a - g_n| / max(1, |g_n|)`
    pub max_rel_error: f64,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tolerance
    }
}

/// Compares the analytic gradient of the scalar function `f` at `x` with
/// central differences of step `step`.
pub fn finite_diff_check<F>(f: F, x: &[f64], shape: &[usize], step: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&Tensor) -> Result<Tensor>,
{
    let leaf = Tensor::param(x.to_vec(), shape)?;
    let out = f(&leaf)?;
    if out.len() != 1 {
        return Err(Error::NonScalarLoss(out.shape().to_vec()));
    }
    out.backward()?;
    let analytic = leaf.grad().unwrap_or_else(|| vec![0.0; x.len()]);

    let eval = |v: Vec<f64>| -> Result<f64> { f(&Tensor::new(v, shape)?)?.item() };
    let mut numeric = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let mut plus = x.to_vec();
        plus[i] += step;
        let mut minus = x.to_vec();
        minus[i] -= step;
        numeric.push((eval(plus)? - eval(minus)?) / (2.0 * step));
    }
    let max_rel_error = analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| (a - n).abs() / n.abs().max(1.0))
        .fold(0.0, f64::max);
    Ok(GradCheckReport {
        analytic,
        numeric,
        max_rel_error,
        tolerance: tol,
    })
}
