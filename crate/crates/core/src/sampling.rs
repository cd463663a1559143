//! Gradient-stabilizing samplers.
//!
//! The depth-first sampler averages gradients along a random walk whose
//! step `i+1` is centered on sample `i`, not on the original input. The
//! Gaussian sampler is the flat (breadth-first) baseline where every sample
//! is centered on the input.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::rng::RngStream;
use crate::tensor::Tensor;

/// Which sampler wraps the gradient evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplerKind {
    None,
    DepthFirst,
    Gaussian,
}

/// Sampler configuration. `n = 0` means "no sampling" for any kind.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplerConfig {
    pub kind: SamplerKind,
    /// Number of extra sampled points (the base point is always included).
    pub n: usize,
    /// Range factor: steps are uniform on `[-beta * eps, beta * eps]`.
    pub beta: f64,
    /// Gaussian scale; `None` derives `beta * eps / sqrt(3)`, which matches
    /// the standard deviation of the uniform law so the two samplers are
    /// variance-matched.
    pub sigma: Option<f64>,
}

impl SamplerConfig {
    pub fn none() -> SamplerConfig {
        SamplerConfig {
            kind: SamplerKind::None,
            n: 0,
            beta: 0.0,
            sigma: None,
        }
    }

    pub fn depth_first(n: usize, beta: f64) -> SamplerConfig {
        SamplerConfig {
            kind: SamplerKind::DepthFirst,
            n,
            beta,
            sigma: None,
        }
    }

    pub fn gaussian(n: usize, sigma: Option<f64>) -> SamplerConfig {
        SamplerConfig {
            kind: SamplerKind::Gaussian,
            n,
            beta: 0.0,
            sigma,
        }
    }

    pub(crate) fn resolved_sigma(&self, epsilon: f64) -> f64 {
        self.sigma.unwrap_or(self.beta * epsilon / 3.0f64.sqrt())
    }
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig::depth_first(12, 1.5)
    }
}

/// The depth-first chain `x^0 = x`, `x^{i+1} = x^i + xi_i` with `xi_i`
/// drawn elementwise i.i.d. uniform on `[-beta * eps, beta * eps]`.
/// All noise is drawn up front from the stream, so the caller may evaluate
/// gradients at the points in any order.
pub fn depth_first_chain(
    x: &Tensor,
    n: usize,
    beta: f64,
    epsilon: f64,
    stream: &RngStream,
) -> Vec<Tensor> {
    let mut points = Vec::with_capacity(n + 1);
    points.push(x.clone());
    let range = beta * epsilon;
    let mut rng = stream.rng();
    for _ in 0..n {
        let prev = points.last().unwrap();
        let next = prev.map(|v| v + rng.random_range(-range..=range));
        points.push(next);
    }
    points
}

/// Average of `grad_fn` over the depth-first chain. `grad_fn` receives the
/// point and its sample index (0 is the base point). With `n = 0` or
/// `beta = 0` this is exactly `grad_fn(x, 0)`.
pub fn depth_first_gradient<F>(
    grad_fn: F,
    x: &Tensor,
    n: usize,
    beta: f64,
    epsilon: f64,
    stream: &RngStream,
) -> Result<Tensor>
where
    F: Fn(&Tensor, usize) -> Result<Tensor>,
{
    if n == 0 || beta == 0.0 {
        return grad_fn(x, 0);
    }
    let points = depth_first_chain(x, n, beta, epsilon, stream);
    average_gradients(grad_fn, &points)
}

/// Points for the flat baseline: the base plus `n` Gaussian perturbations
/// of it, all centered on `x`.
pub fn gaussian_points(x: &Tensor, n: usize, sigma: f64, stream: &RngStream) -> Vec<Tensor> {
    let mut points = Vec::with_capacity(n + 1);
    points.push(x.clone());
    let normal = Normal::new(0.0, sigma).expect("sigma validated non-negative");
    let mut rng = stream.rng();
    for _ in 0..n {
        points.push(x.map(|v| v + normal.sample(&mut rng)));
    }
    points
}

/// Average of `grad_fn` over Gaussian-perturbed copies of `x`. With `n = 0`
/// or `sigma = 0` this is exactly `grad_fn(x, 0)`.
pub fn gaussian_gradient<F>(
    grad_fn: F,
    x: &Tensor,
    n: usize,
    sigma: f64,
    stream: &RngStream,
) -> Result<Tensor>
where
    F: Fn(&Tensor, usize) -> Result<Tensor>,
{
    if n == 0 || sigma == 0.0 {
        return grad_fn(x, 0);
    }
    let points = gaussian_points(x, n, sigma, stream);
    average_gradients(grad_fn, &points)
}

fn average_gradients<F>(grad_fn: F, points: &[Tensor]) -> Result<Tensor>
where
    F: Fn(&Tensor, usize) -> Result<Tensor>,
{
    let mut acc: Option<Tensor> = None;
    for (i, point) in points.iter().enumerate() {
        let g = grad_fn(point, i)?;
        match acc.as_mut() {
            None => acc = Some(g),
            Some(t) => t.add_scaled(&g, 1.0)?,
        }
    }
    Ok(acc.expect("at least the base point").scale(1.0 / points.len() as f64))
}

/// True iff every chain point stays within `i * beta * eps` of the base in
/// the L-infinity norm (each step moves at most `beta * eps` per element).
pub fn chain_within_bound(chain: &[Tensor], beta: f64, epsilon: f64) -> bool {
    let Some(base) = chain.first() else {
        return true;
    };
    chain.iter().enumerate().all(|(i, point)| {
        match point.linf_distance(base) {
            Ok(d) => d <= i as f64 * beta * epsilon + 1e-12,
            Err(_) => false,
        }
    })
}
