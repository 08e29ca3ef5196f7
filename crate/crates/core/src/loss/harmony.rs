use crate::error::Result;
use crate::tensor::Tensor;

/// `c = p^detach(u) · u^detach(p)` after clamping both into `[eps, 1]`.
///
/// The exponents are constants, so gradients reach `p` and `u` through the
/// bases only.
pub fn task_correlation(p: &Tensor, u: &Tensor, eps: f64) -> Result<Tensor> {
    let p = p.clamp(eps, 1.0)?;
    let u = u.clamp(eps, 1.0)?;
    p.pow(&u.detach())?.mul(&u.pow(&p.detach())?)
}

/// `α (e^-c - e^-1)` with the constant weight `α = 1 + |p - u|`.
pub fn tcorr_loss(p: &Tensor, u: &Tensor, eps: f64) -> Result<Tensor> {
    let c = task_correlation(p, u, eps)?;
    let alpha = p.detach().sub(&u.detach())?.abs().add_scalar(1.0);
    alpha.mul(&c.neg().exp().add_scalar(-(-1f64).exp()))
}

/// `(1 + u)^γ (1 - u)`, elementwise.
pub fn hiou_loss(u: &Tensor, gamma: f64) -> Result<Tensor> {
    u.add_scalar(1.0).powf(gamma)?.mul(&u.affine(-1.0, 1.0))
}
