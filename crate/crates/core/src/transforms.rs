//! Input-transformation gradient pipelines: random resize-pad (DIM),
//! scale-copy gradient averaging (SIM), kernel-smoothed gradients (TIM),
//! and their composition (CTM).

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Random resize-and-pad configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DimConfig {
    /// Probability of applying the transform at all.
    pub probability: f64,
    /// Lower bound of the resize as a fraction of the side length.
    pub min_resize_fraction: f64,
}

impl Default for DimConfig {
    fn default() -> Self {
        DimConfig {
            probability: 0.5,
            min_resize_fraction: 0.9,
        }
    }
}

/// Scale-copy configuration: gradients are averaged over `x / 2^i` for
/// `i = 0..copies`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimConfig {
    pub copies: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig { copies: 5 }
    }
}

/// Gradient-smoothing kernel configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimConfig {
    /// Odd kernel side length.
    pub kernel_size: usize,
    /// Gaussian sigma; `None` derives `kernel_size / sqrt(3)`.
    pub sigma: Option<f64>,
}

impl Default for TimConfig {
    fn default() -> Self {
        TimConfig {
            kernel_size: 7,
            sigma: None,
        }
    }
}

impl TimConfig {
    pub fn resolved_sigma(&self) -> f64 {
        self.sigma.unwrap_or(self.kernel_size as f64 / 3.0f64.sqrt())
    }
}

/// Which transforms are active. Any subset may be enabled; the empty
/// pipeline is the identity gradient source.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TransformPipeline {
    pub dim: Option<DimConfig>,
    pub sim: Option<SimConfig>,
    pub tim: Option<TimConfig>,
}

impl TransformPipeline {
    pub fn empty() -> TransformPipeline {
        TransformPipeline::default()
    }

    pub fn is_empty(&self) -> bool {
        self.dim.is_none() && self.sim.is_none() && self.tim.is_none()
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(dim) = &self.dim {
            if !(0.0..=1.0).contains(&dim.probability) {
                return Err(Error::Config(format!(
                    "DIM probability must be in [0, 1], got {}",
                    dim.probability
                )));
            }
            if !(dim.min_resize_fraction > 0.0 && dim.min_resize_fraction <= 1.0) {
                return Err(Error::Config(format!(
                    "DIM resize fraction must be in (0, 1], got {}",
                    dim.min_resize_fraction
                )));
            }
        }
        if let Some(sim) = &self.sim {
            if sim.copies < 1 {
                return Err(Error::Config("SIM needs at least one scale copy".into()));
            }
        }
        if let Some(tim) = &self.tim {
            if tim.kernel_size % 2 == 0 || tim.kernel_size == 0 {
                return Err(Error::Config(format!(
                    "TIM kernel size must be odd, got {}",
                    tim.kernel_size
                )));
            }
            if !(tim.resolved_sigma() > 0.0) {
                return Err(Error::Config("TIM sigma must be positive".into()));
            }
        }
        Ok(())
    }

    /// Validate and precompute the smoothing kernel once.
    pub fn prepare(&self) -> Result<PreparedPipeline> {
        self.validate()?;
        let kernel = self
            .tim
            .map(|cfg| tim_kernel(cfg.kernel_size, cfg.resolved_sigma()))
            .transpose()?;
        Ok(PreparedPipeline {
            dim: self.dim,
            sim: self.sim,
            tim_kernel: kernel,
        })
    }
}

/// A validated pipeline with its smoothing kernel materialized.
#[derive(Debug, Clone)]
pub struct PreparedPipeline {
    dim: Option<DimConfig>,
    sim: Option<SimConfig>,
    tim_kernel: Option<Tensor>,
}

impl PreparedPipeline {
    pub fn empty() -> PreparedPipeline {
        PreparedPipeline {
            dim: None,
            sim: None,
            tim_kernel: None,
        }
    }
}

/// With probability `p`: bilinear-resize a square image down to a random
/// side in `[ceil(fraction * H), H]` and zero-pad back to `H x H` at a
/// random offset. Otherwise the input passes through unchanged.
pub fn dim_transform(x: &Tensor, cfg: &DimConfig, rng: &mut ChaCha8Rng) -> Result<Tensor> {
    if x.shape().len() != 3 || x.shape()[1] != x.shape()[2] {
        return Err(Error::Dimension(format!(
            "dim_transform expects a square CxHxH image, got {:?}",
            x.shape()
        )));
    }
    if rng.random::<f64>() >= cfg.probability {
        return Ok(x.clone());
    }
    let side = x.shape()[1];
    let min_side = (cfg.min_resize_fraction * side as f64).ceil() as usize;
    let min_side = min_side.clamp(1, side);
    let new_side = rng.random_range(min_side..=side);
    let max_offset = side - new_side;
    let top = rng.random_range(0..=max_offset);
    let left = rng.random_range(0..=max_offset);
    if new_side == side {
        return Ok(x.clone());
    }
    let resized = bilinear_resize(x, new_side)?;
    let channels = x.shape()[0];
    let mut out = Tensor::zeros(x.shape());
    for c in 0..channels {
        for i in 0..new_side {
            for j in 0..new_side {
                out.data_mut()[(c * side + top + i) * side + left + j] =
                    resized.data()[(c * new_side + i) * new_side + j];
            }
        }
    }
    Ok(out)
}

/// Bilinear resize of a square CxHxH image to CxSxS, align-corners false.
fn bilinear_resize(x: &Tensor, new_side: usize) -> Result<Tensor> {
    let (channels, side) = (x.shape()[0], x.shape()[1]);
    let scale = side as f64 / new_side as f64;
    let mut out = Tensor::zeros(&[channels, new_side, new_side]);
    for c in 0..channels {
        for i in 0..new_side {
            let src_y = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (side - 1) as f64);
            let y0 = src_y.floor() as usize;
            let y1 = (y0 + 1).min(side - 1);
            let wy = src_y - y0 as f64;
            for j in 0..new_side {
                let src_x = ((j as f64 + 0.5) * scale - 0.5).clamp(0.0, (side - 1) as f64);
                let x0 = src_x.floor() as usize;
                let x1 = (x0 + 1).min(side - 1);
                let wx = src_x - x0 as f64;
                let p = |yy: usize, xx: usize| x.data()[(c * side + yy) * side + xx];
                let top = p(y0, x0) * (1.0 - wx) + p(y0, x1) * wx;
                let bottom = p(y1, x0) * (1.0 - wx) + p(y1, x1) * wx;
                out.data_mut()[(c * new_side + i) * new_side + j] =
                    top * (1.0 - wy) + bottom * wy;
            }
        }
    }
    Ok(out)
}

/// Average of `grad_fn` over the scale copies `x / 2^i`, `i = 0..copies`.
/// With one copy this is exactly `grad_fn(x)`.
pub fn sim_gradients<F>(grad_fn: F, x: &Tensor, copies: usize) -> Result<Tensor>
where
    F: Fn(&Tensor) -> Result<Tensor>,
{
    if copies == 0 {
        return Err(Error::Config("SIM needs at least one scale copy".into()));
    }
    if copies == 1 {
        return grad_fn(x);
    }
    let mut acc: Option<Tensor> = None;
    for i in 0..copies {
        let scaled = x.scale(0.5f64.powi(i as i32));
        let g = grad_fn(&scaled)?;
        match acc.as_mut() {
            None => acc = Some(g),
            Some(t) => t.add_scaled(&g, 1.0)?,
        }
    }
    Ok(acc.expect("copies >= 1").scale(1.0 / copies as f64))
}

/// Discretized isotropic Gaussian kernel, normalized to sum 1.
pub fn tim_kernel(size: usize, sigma: f64) -> Result<Tensor> {
    if size % 2 == 0 || size == 0 {
        return Err(Error::Config(format!(
            "smoothing kernel size must be odd, got {size}"
        )));
    }
    if !(sigma > 0.0) {
        return Err(Error::Config(format!(
            "smoothing kernel sigma must be positive, got {sigma}"
        )));
    }
    let center = (size / 2) as f64;
    let mut data = Vec::with_capacity(size * size);
    for i in 0..size {
        for j in 0..size {
            let dy = i as f64 - center;
            let dx = j as f64 - center;
            data.push((-(dy * dy + dx * dx) / (2.0 * sigma * sigma)).exp());
        }
    }
    let total: f64 = data.iter().sum();
    for v in &mut data {
        *v /= total;
    }
    Tensor::from_vec(&[size, size], data)
}

/// Convolve each channel of `g` with the kernel under zero same-padding.
/// A 1x1 kernel of value 1 passes the gradient through unchanged.
pub fn tim_smooth(g: &Tensor, kernel: &Tensor) -> Result<Tensor> {
    if g.shape().len() != 3 {
        return Err(Error::Dimension(format!(
            "tim_smooth expects a CxHxW gradient, got {:?}",
            g.shape()
        )));
    }
    if kernel.shape().len() != 2 || kernel.shape()[0] != kernel.shape()[1] {
        return Err(Error::Dimension(format!(
            "tim_smooth expects a square kernel, got {:?}",
            kernel.shape()
        )));
    }
    let (channels, h, w) = (g.shape()[0], g.shape()[1], g.shape()[2]);
    let k = kernel.shape()[0];
    if k == 1 {
        return Ok(g.scale(kernel.data()[0]));
    }
    let pad = (k - 1) / 2;
    let mut out = Tensor::zeros(g.shape());
    for c in 0..channels {
        for a in 0..k {
            let i_lo = pad.saturating_sub(a);
            let i_hi = (h + pad).saturating_sub(a).min(h);
            for b in 0..k {
                let kv = kernel.data()[a * k + b];
                let j_lo = pad.saturating_sub(b);
                let j_hi = (w + pad).saturating_sub(b).min(w);
                for i in i_lo..i_hi.max(i_lo) {
                    let src = (c * h + (i + a - pad)) * w;
                    let dst = (c * h + i) * w;
                    for j in j_lo..j_hi.max(j_lo) {
                        out.data_mut()[dst + j] += kv * g.data()[src + j + b - pad];
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Composite gradient: transform the input (DIM), average scale-copy
/// gradients (SIM), smooth the result (TIM). Inactive stages pass through
/// untouched, so the empty pipeline is exactly `grad_fn(x)`.
pub fn composite_gradient<F>(
    grad_fn: F,
    x: &Tensor,
    pipeline: &PreparedPipeline,
    rng: &mut ChaCha8Rng,
) -> Result<Tensor>
where
    F: Fn(&Tensor) -> Result<Tensor>,
{
    let transformed;
    let point = match &pipeline.dim {
        Some(cfg) => {
            transformed = dim_transform(x, cfg, rng)?;
            &transformed
        }
        None => x,
    };
    let raw = match &pipeline.sim {
        Some(cfg) => sim_gradients(&grad_fn, point, cfg.copies)?,
        None => grad_fn(point)?,
    };
    match &pipeline.tim_kernel {
        Some(kernel) => tim_smooth(&raw, kernel),
        None => Ok(raw),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{Arch, Classifier, ModelSpec};
    use crate::rng::RngStream;
    use crate::tensor::Tensor;

    fn blob_image() -> Tensor {
        crate::data::synthetic_blobs(1, 2, 16, 0).images[0].clone()
    }

    fn test_model() -> Classifier {
        let spec = ModelSpec::new(Arch::CnnB, [1, 16, 16], 2).unwrap();
        Classifier::init(spec, 7).unwrap()
    }

    #[test]
    fn dim_zero_probability_is_bit_exact_identity() {
        let x = blob_image();
        let cfg = DimConfig {
            probability: 0.0,
            ..DimConfig::default()
        };
        let mut rng = RngStream::new(1, 0, 0).rng();
        let out = dim_transform(&x, &cfg, &mut rng).unwrap();
        assert!(out.bits_eq(&x));
    }

    #[test]
    fn dim_unit_fraction_is_identity() {
        // min_resize_fraction = 1 forces the resize to be a no-op and the
        // padding offset to 0, even when the transform fires.
        let x = blob_image();
        let cfg = DimConfig {
            probability: 1.0,
            min_resize_fraction: 1.0,
        };
        for seed in 0..16 {
            let mut rng = RngStream::new(seed, 0, 0).rng();
            let out = dim_transform(&x, &cfg, &mut rng).unwrap();
            assert!(out.bits_eq(&x));
        }
    }

    #[test]
    fn dim_seeded_run_matches_recorded_mass() {
        // golden: recorded once with this exact seed, then pinned
        let x = blob_image();
        let cfg = DimConfig {
            probability: 1.0,
            min_resize_fraction: 0.9,
        };
        let mut rng = RngStream::new(42, 0, 0).rng();
        let out = dim_transform(&x, &cfg, &mut rng).unwrap();
        assert_eq!(out.shape(), x.shape());
        let recorded = 13.15937374635289103;
        let sum: f64 = out.data().iter().sum();
        assert!(
            (sum - recorded).abs() <= 0.05 * recorded,
            "mass {sum} drifted from recorded {recorded}"
        );
    }

    #[test]
    fn dim_requires_square_images() {
        let x = Tensor::zeros(&[1, 4, 6]);
        let mut rng = RngStream::new(0, 0, 0).rng();
        assert!(dim_transform(&x, &DimConfig::default(), &mut rng).is_err());
    }

    #[test]
    fn sim_single_copy_is_exact() {
        let x = blob_image();
        let model = test_model();
        let base = model.input_gradient(&x, 0).unwrap();
        let out = sim_gradients(|p| model.input_gradient(p, 0), &x, 1).unwrap();
        assert!(out.bits_eq(&base));
    }

    #[test]
    fn sim_matches_closed_form_for_linear_gradient() {
        // grad(x) = a * x + b elementwise; the scale-copy average is
        // a * x * mean(2^-i) + b.
        let x = blob_image();
        let (a, b) = (3.0, -0.25);
        let m = 5;
        let out = sim_gradients(|p| Ok(p.map(|v| a * v + b)), &x, m).unwrap();
        let mean_scale: f64 = (0..m).map(|i| 0.5f64.powi(i as i32)).sum::<f64>() / m as f64;
        let expected = x.map(|v| a * v * mean_scale + b);
        assert!(out.linf_distance(&expected).unwrap() < 1e-14);
    }

    #[test]
    fn tim_kernel_size_one_is_identity() {
        let kernel = tim_kernel(1, 1.0).unwrap();
        assert_eq!(kernel.shape(), &[1, 1]);
        assert_eq!(kernel.data(), &[1.0]);
        let g = blob_image();
        let out = tim_smooth(&g, &kernel).unwrap();
        assert!(out.bits_eq(&g));
    }

    #[test]
    fn tim_kernel_rejects_even_size() {
        assert!(tim_kernel(4, 1.0).is_err());
        assert!(tim_kernel(0, 1.0).is_err());
    }

    #[test]
    fn tim_kernel_normalized_symmetric_center_max() {
        let size = 7;
        let kernel = tim_kernel(size, size as f64 / 3.0f64.sqrt()).unwrap();
        let sum: f64 = kernel.data().iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        let center = kernel.data()[(size / 2) * size + size / 2];
        assert!(kernel.data().iter().all(|&v| v >= 0.0 && v <= center));
        for i in 0..size {
            for j in 0..size {
                let v = kernel.data()[i * size + j];
                // horizontal / vertical flips
                assert_eq!(v, kernel.data()[i * size + (size - 1 - j)]);
                assert_eq!(v, kernel.data()[(size - 1 - i) * size + j]);
                // 90 degree rotation
                assert_eq!(v, kernel.data()[j * size + (size - 1 - i)]);
            }
        }
    }

    #[test]
    fn tim_smooth_never_grows_l1_mass() {
        let kernel = tim_kernel(7, 4.0).unwrap();
        for seed in 0..8 {
            let g = crate::data::synthetic_blobs(1, 2, 12, seed).images[0]
                .map(|v| v - 0.3);
            let out = tim_smooth(&g, &kernel).unwrap();
            assert!(out.l1_norm() <= g.l1_norm() + 1e-12);
        }
    }

    #[test]
    fn empty_pipeline_is_bit_exact_input_gradient() {
        let x = blob_image();
        let model = test_model();
        let base = model.input_gradient(&x, 1).unwrap();
        let pipeline = TransformPipeline::empty().prepare().unwrap();
        let mut rng = RngStream::new(3, 0, 0).rng();
        let out =
            composite_gradient(|p| model.input_gradient(p, 1), &x, &pipeline, &mut rng).unwrap();
        assert!(out.bits_eq(&base));
    }

    #[test]
    fn dim_only_zero_probability_reduces_to_input_gradient() {
        let x = blob_image();
        let model = test_model();
        let base = model.input_gradient(&x, 1).unwrap();
        let pipeline = TransformPipeline {
            dim: Some(DimConfig {
                probability: 0.0,
                ..DimConfig::default()
            }),
            sim: None,
            tim: None,
        }
        .prepare()
        .unwrap();
        let mut rng = RngStream::new(3, 0, 0).rng();
        let out =
            composite_gradient(|p| model.input_gradient(p, 1), &x, &pipeline, &mut rng).unwrap();
        assert!(out.bits_eq(&base));
    }

    #[test]
    fn neutral_parameters_reduce_every_stage_to_identity() {
        let x = blob_image();
        let model = test_model();
        let base = model.input_gradient(&x, 0).unwrap();
        let pipeline = TransformPipeline {
            dim: Some(DimConfig {
                probability: 0.0,
                ..DimConfig::default()
            }),
            sim: Some(SimConfig { copies: 1 }),
            tim: Some(TimConfig {
                kernel_size: 1,
                sigma: Some(1.0),
            }),
        }
        .prepare()
        .unwrap();
        let mut rng = RngStream::new(9, 0, 0).rng();
        let out =
            composite_gradient(|p| model.input_gradient(p, 0), &x, &pipeline, &mut rng).unwrap();
        assert!(out.bits_eq(&base));
    }

    #[test]
    fn full_pipeline_seeded_snapshot() {
        // golden: recorded once with seed 42, then pinned
        let x = blob_image();
        let model = test_model();
        let pipeline = TransformPipeline {
            dim: Some(DimConfig::default()),
            sim: Some(SimConfig::default()),
            tim: Some(TimConfig::default()),
        }
        .prepare()
        .unwrap();
        let mut rng = RngStream::new(42, 0, 0).rng();
        let g =
            composite_gradient(|p| model.input_gradient(p, 1), &x, &pipeline, &mut rng).unwrap();
        assert_eq!(g.shape(), x.shape());
        assert!((g.l1_norm() - 0.29949472497685375).abs() < 1e-12);
        assert!((g.data()[0] - 0.00030646588156366).abs() < 1e-12);
        assert!((g.data()[1] - 0.00000907284674947).abs() < 1e-12);
        assert!((g.data()[2] - -0.00054605790636985).abs() < 1e-12);
        assert!((g.data()[128] - 0.00104256397687932).abs() < 1e-12);

        // and it is deterministic under the same stream
        let mut rng = RngStream::new(42, 0, 0).rng();
        let again =
            composite_gradient(|p| model.input_gradient(p, 1), &x, &pipeline, &mut rng).unwrap();
        assert!(again.bits_eq(&g));
    }

    #[test]
    fn pipeline_validation_catches_bad_configs() {
        let bad_p = TransformPipeline {
            dim: Some(DimConfig {
                probability: 1.5,
                ..DimConfig::default()
            }),
            ..TransformPipeline::empty()
        };
        assert!(bad_p.validate().is_err());
        let bad_m = TransformPipeline {
            sim: Some(SimConfig { copies: 0 }),
            ..TransformPipeline::empty()
        };
        assert!(bad_m.validate().is_err());
        let bad_k = TransformPipeline {
            tim: Some(TimConfig {
                kernel_size: 6,
                sigma: None,
            }),
            ..TransformPipeline::empty()
        };
        assert!(bad_k.validate().is_err());
    }
}
