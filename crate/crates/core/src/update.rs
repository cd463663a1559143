//! Per-step perturbation kernels: the sign rule, the sign-free rescale rule,
//! L1 normalization for momentum accumulation, and the L-infinity budget
//! projection.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Parameters of the rescale rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RescaleParams {
    /// Upper bound on the rescaled update's elementwise magnitude.
    pub c: f64,
}

impl Default for RescaleParams {
    fn default() -> Self {
        RescaleParams { c: 2.0 }
    }
}

/// Which per-step update kernel drives the attack.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UpdateRule {
    Sign,
    Rescale(RescaleParams),
}

impl UpdateRule {
    pub fn rescale(c: f64) -> UpdateRule {
        UpdateRule::Rescale(RescaleParams { c })
    }

    pub fn apply(&self, g: &Tensor) -> Result<Tensor> {
        match self {
            UpdateRule::Sign => Ok(sign_update(g)),
            UpdateRule::Rescale(p) => rescale_update(g, p.c),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let UpdateRule::Rescale(p) = self {
            if !(p.c > 0.0) {
                return Err(Error::Config(format!(
                    "rescale factor must be positive, got {}",
                    p.c
                )));
            }
        }
        Ok(())
    }
}

/// Elementwise strict sign: -1, 0 or +1.
pub fn sign_update(g: &Tensor) -> Tensor {
    g.map(|v| {
        if v > 0.0 {
            1.0
        } else if v < 0.0 {
            -1.0
        } else {
            0.0
        }
    })
}

/// Sign-free rescaling of a gradient into `(-c, c)`.
///
/// Each nonzero entry maps to `c * sign(g_i) * sigmoid(z_i)` where `z_i` is
/// the standardized log2-magnitude of `g_i`. Statistics use the nonzero
/// entries only and the population standard deviation (divide by the count);
/// zero entries stay exactly zero. If every nonzero magnitude is equal the
/// standardized values are defined as zero, giving `(c/2) * sign(g)`.
pub fn rescale_update(g: &Tensor, c: f64) -> Result<Tensor> {
    if !(c > 0.0) {
        return Err(Error::Config(format!(
            "rescale factor must be positive, got {c}"
        )));
    }
    let logs: Vec<f64> = g
        .data()
        .iter()
        .filter(|&&v| v != 0.0)
        .map(|&v| v.abs().log2())
        .collect();
    if logs.is_empty() {
        return Ok(Tensor::zeros(g.shape()));
    }
    let n = logs.len() as f64;
    let mean = logs.iter().sum::<f64>() / n;
    let var = logs.iter().map(|&l| (l - mean) * (l - mean)).sum::<f64>() / n;
    let std = var.sqrt();

    Ok(g.map(|v| {
        if v == 0.0 {
            return 0.0;
        }
        let z = if std == 0.0 {
            0.0
        } else {
            (v.abs().log2() - mean) / std
        };
        let sig = 1.0 / (1.0 + (-z).exp());
        c * v.signum() * sig
    }))
}

/// `g / ||g||_1`. A zero gradient passes through unchanged and is flagged
/// as degenerate (second return value).
pub fn l1_normalize(g: &Tensor) -> (Tensor, bool) {
    let norm = g.l1_norm();
    if norm == 0.0 {
        log::warn!("degenerate all-zero gradient: skipping L1 normalization");
        return (g.clone(), true);
    }
    (g.scale(1.0 / norm), false)
}

/// Elementwise projection of `x_adv` onto `[x_orig - eps, x_orig + eps]`
/// intersected with the pixel box `[0, 1]`.
pub fn clip_to_budget(x_adv: &Tensor, x_orig: &Tensor, epsilon: f64) -> Result<Tensor> {
    if epsilon < 0.0 {
        return Err(Error::Config(format!(
            "perturbation budget must be non-negative, got {epsilon}"
        )));
    }
    x_adv.zip_map(x_orig, |adv, orig| {
        let lo = (orig - epsilon).max(0.0);
        let hi = (orig + epsilon).min(1.0);
        adv.clamp(lo, hi)
    })
}
