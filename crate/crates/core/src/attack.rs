//! The attack engine: method family x update rule x sampler x transform
//! pipeline x gradient source.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::models::Classifier;
use crate::rng::RngStream;
use crate::sampling::{depth_first_gradient, gaussian_gradient, SamplerConfig, SamplerKind};
use crate::tape::Tape;
use crate::tensor::Tensor;
use crate::transforms::{composite_gradient, PreparedPipeline, TransformPipeline};
use crate::update::{clip_to_budget, l1_normalize, UpdateRule};

/// Attack family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// Single-step: one update of size epsilon.
    Fgsm,
    /// Iterative with step alpha.
    Ifgsm,
    /// Iterative with momentum accumulation.
    Mifgsm,
    /// Momentum with a Nesterov lookahead evaluation point.
    Nifgsm,
}

impl Method {
    pub fn parse(s: &str) -> Result<Method> {
        match s {
            "fgsm" => Ok(Method::Fgsm),
            "ifgsm" => Ok(Method::Ifgsm),
            "mifgsm" => Ok(Method::Mifgsm),
            "nifgsm" => Ok(Method::Nifgsm),
            other => Err(Error::Config(format!(
                "unknown method '{other}' (expected fgsm, ifgsm, mifgsm or nifgsm)"
            ))),
        }
    }

    fn uses_momentum(&self) -> bool {
        matches!(self, Method::Mifgsm | Method::Nifgsm)
    }
}

/// Full attack parameterization.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackConfig {
    pub method: Method,
    pub rule: UpdateRule,
    pub sampler: SamplerConfig,
    pub pipeline: TransformPipeline,
    pub epsilon: f64,
    pub iterations: usize,
    pub alpha: f64,
    pub mu: f64,
    pub seed: u64,
}

impl Default for AttackConfig {
    /// The momentum attack with rescaling and depth-first sampling at its
    /// stock hyperparameters (eps 16/255, T 10, alpha 1.6/255, mu 1, c 2,
    /// N 12, beta 1.5).
    fn default() -> Self {
        AttackConfig {
            method: Method::Mifgsm,
            rule: UpdateRule::rescale(2.0),
            sampler: SamplerConfig::depth_first(12, 1.5),
            pipeline: TransformPipeline::empty(),
            epsilon: 16.0 / 255.0,
            iterations: 10,
            alpha: 1.6 / 255.0,
            mu: 1.0,
            seed: 0,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::Config(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if self.iterations == 0 {
            return Err(Error::Config("iteration count must be at least 1".into()));
        }
        if !(self.alpha > 0.0) {
            return Err(Error::Config(format!(
                "step size must be positive, got {}",
                self.alpha
            )));
        }
        if self.mu < 0.0 {
            return Err(Error::Config(format!(
                "momentum decay must be non-negative, got {}",
                self.mu
            )));
        }
        if self.method == Method::Fgsm && (self.iterations != 1 || self.alpha != self.epsilon) {
            return Err(Error::Config(
                "fgsm is single-step: iterations must be 1 and alpha must equal epsilon".into(),
            ));
        }
        if self.sampler.beta < 0.0 || self.sampler.sigma.is_some_and(|s| s < 0.0) {
            return Err(Error::Config("sampler range must be non-negative".into()));
        }
        self.rule.validate()?;
        self.pipeline.validate()?;
        Ok(())
    }

    /// Stable hash of every field, used to detect config drift on saved
    /// adversarial batches.
    pub fn fingerprint(&self) -> u64 {
        let mut bytes = Vec::new();
        bytes.push(match self.method {
            Method::Fgsm => 0u8,
            Method::Ifgsm => 1,
            Method::Mifgsm => 2,
            Method::Nifgsm => 3,
        });
        match self.rule {
            UpdateRule::Sign => bytes.push(0),
            UpdateRule::Rescale(p) => {
                bytes.push(1);
                bytes.extend_from_slice(&p.c.to_bits().to_le_bytes());
            }
        }
        bytes.push(match self.sampler.kind {
            SamplerKind::None => 0u8,
            SamplerKind::DepthFirst => 1,
            SamplerKind::Gaussian => 2,
        });
        bytes.extend_from_slice(&(self.sampler.n as u64).to_le_bytes());
        bytes.extend_from_slice(&self.sampler.beta.to_bits().to_le_bytes());
        bytes.extend_from_slice(&self.sampler.sigma.unwrap_or(-1.0).to_bits().to_le_bytes());
        for (flag, a, b) in [
            (
                self.pipeline.dim.is_some(),
                self.pipeline.dim.map_or(0, |d| d.probability.to_bits()),
                self.pipeline.dim.map_or(0, |d| d.min_resize_fraction.to_bits()),
            ),
            (
                self.pipeline.sim.is_some(),
                self.pipeline.sim.map_or(0, |s| s.copies as u64),
                0,
            ),
            (
                self.pipeline.tim.is_some(),
                self.pipeline.tim.map_or(0, |t| t.kernel_size as u64),
                self.pipeline.tim.map_or(0, |t| t.resolved_sigma().to_bits()),
            ),
        ] {
            bytes.push(flag as u8);
            bytes.extend_from_slice(&a.to_le_bytes());
            bytes.extend_from_slice(&b.to_le_bytes());
        }
        bytes.extend_from_slice(&self.epsilon.to_bits().to_le_bytes());
        bytes.extend_from_slice(&(self.iterations as u64).to_le_bytes());
        bytes.extend_from_slice(&self.alpha.to_bits().to_le_bytes());
        bytes.extend_from_slice(&self.mu.to_bits().to_le_bytes());
        bytes.extend_from_slice(&self.seed.to_le_bytes());
        fnv1a(&bytes)
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Where gradients come from: one model, or several fused by averaging
/// their logits before the loss.
pub enum GradientSource<'a> {
    Single(&'a Classifier),
    Ensemble(&'a [Classifier]),
}

impl<'a> GradientSource<'a> {
    pub fn validate(&self) -> Result<()> {
        match self {
            GradientSource::Single(_) => Ok(()),
            GradientSource::Ensemble(models) => {
                let Some(first) = models.first() else {
                    return Err(Error::Config("ensemble must have at least one member".into()));
                };
                for m in models.iter() {
                    if m.spec().input_shape != first.spec().input_shape
                        || m.spec().num_classes != first.spec().num_classes
                    {
                        return Err(Error::Config(format!(
                            "ensemble members disagree on shapes: {:?}/{} vs {:?}/{}",
                            first.spec().input_shape,
                            first.spec().num_classes,
                            m.spec().input_shape,
                            m.spec().num_classes
                        )));
                    }
                }
                Ok(())
            }
        }
    }

    pub fn input_shape(&self) -> [usize; 3] {
        match self {
            GradientSource::Single(m) => m.spec().input_shape,
            GradientSource::Ensemble(models) => models[0].spec().input_shape,
        }
    }

    /// Mean of member logits (just the model's logits for a single source).
    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        match self {
            GradientSource::Single(m) => m.logits(x),
            GradientSource::Ensemble(models) if models.len() == 1 => models[0].logits(x),
            GradientSource::Ensemble(models) => {
                let mut acc = models[0].logits(x)?;
                for m in &models[1..] {
                    acc.add_scaled(&m.logits(x)?, 1.0)?;
                }
                Ok(acc.scale(1.0 / models.len() as f64))
            }
        }
    }

    /// Loss gradient with respect to the input. For an ensemble this is the
    /// gradient of the cross-entropy applied to the averaged logits.
    pub fn gradient(&self, x: &Tensor, label: usize) -> Result<Tensor> {
        match self {
            GradientSource::Single(m) => m.input_gradient(x, label),
            GradientSource::Ensemble(models) if models.len() == 1 => {
                models[0].input_gradient(x, label)
            }
            GradientSource::Ensemble(models) => {
                self.validate()?;
                let mut tape = Tape::new();
                let x_id = tape.leaf(x.clone());
                let mut avg = None;
                for m in models.iter() {
                    let params = m.constant_params(&mut tape);
                    let logits = m.build_graph(&mut tape, x_id, &params)?;
                    avg = Some(match avg {
                        None => logits,
                        Some(acc) => tape.add(acc, logits)?,
                    });
                }
                let sum = avg.expect("ensemble validated nonempty");
                let mean = tape.scalar_mul(sum, 1.0 / models.len() as f64);
                let loss = tape.softmax_cross_entropy(mean, label)?;
                let grads = tape.backward(loss)?;
                Ok(grads
                    .wrt(x_id)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(x.shape())))
            }
        }
    }
}

/// One crafted example with its bookkeeping.
#[derive(Debug, Clone)]
pub struct AttackOutcome {
    pub adversarial: Tensor,
    pub iterations: usize,
    /// Final L-infinity distance from the original.
    pub final_linf: f64,
    /// Fraction of pixels whose additive update got projected away, per
    /// iteration.
    pub clipped_fraction: Vec<f64>,
    /// True when every iteration saw an all-zero gradient (the input is
    /// returned unchanged).
    pub degenerate: bool,
}

/// Sampled, transformed gradient for one iteration: the sampler wraps the
/// transform pipeline, which wraps the raw source gradient. Each sampled
/// point gets fresh transform randomness from its own stream lane.
fn evaluate_gradient(
    source: &GradientSource,
    x: &Tensor,
    label: usize,
    cfg: &AttackConfig,
    pipeline: &PreparedPipeline,
    stream: &RngStream,
) -> Result<Tensor> {
    let grad_fn = |point: &Tensor, sample: usize| -> Result<Tensor> {
        let mut rng = stream.lane(sample as u64 + 1).rng();
        composite_gradient(|p| source.gradient(p, label), point, pipeline, &mut rng)
    };
    match cfg.sampler.kind {
        SamplerKind::None => grad_fn(x, 0),
        SamplerKind::DepthFirst => depth_first_gradient(
            grad_fn,
            x,
            cfg.sampler.n,
            cfg.sampler.beta,
            cfg.epsilon,
            stream,
        ),
        SamplerKind::Gaussian => gaussian_gradient(
            grad_fn,
            x,
            cfg.sampler.n,
            cfg.sampler.resolved_sigma(cfg.epsilon),
            stream,
        ),
    }
}

/// Craft one adversarial example. `image_index` keys the random streams so
/// batches are reproducible element by element.
pub fn run_attack(
    source: &GradientSource,
    x: &Tensor,
    label: usize,
    cfg: &AttackConfig,
    image_index: u64,
) -> Result<AttackOutcome> {
    cfg.validate()?;
    source.validate()?;
    if x.shape() != source.input_shape() {
        return Err(Error::Dimension(format!(
            "input shape {:?} does not match the source's {:?}",
            x.shape(),
            source.input_shape()
        )));
    }
    if !x.in_range(0.0, 1.0) {
        return Err(Error::Data("input pixels must lie in [0, 1]".into()));
    }
    let pipeline = cfg.pipeline.prepare()?;

    let mut x_adv = x.clone();
    let mut momentum = Tensor::zeros(x.shape());
    let mut clipped_fraction = Vec::with_capacity(cfg.iterations);
    let mut degenerate_steps = 0usize;

    for t in 0..cfg.iterations {
        let stream = RngStream::new(cfg.seed, image_index, t as u64);
        let eval_point = if cfg.method == Method::Nifgsm {
            // lookahead x + alpha * mu * g with the pre-update momentum
            let mut nes = x_adv.clone();
            nes.add_scaled(&momentum, cfg.alpha * cfg.mu)?;
            nes
        } else {
            x_adv.clone()
        };

        let raw = evaluate_gradient(source, &eval_point, label, cfg, &pipeline, &stream)?;
        let direction = if cfg.method.uses_momentum() {
            let (normalized, degenerate) = l1_normalize(&raw);
            if degenerate {
                degenerate_steps += 1;
            }
            let mut g = momentum.scale(cfg.mu);
            g.add_scaled(&normalized, 1.0)?;
            momentum = g.clone();
            g
        } else {
            if raw.l1_norm() == 0.0 {
                degenerate_steps += 1;
            }
            raw
        };

        let step = cfg.rule.apply(&direction)?;
        let mut proposed = x_adv.clone();
        proposed.add_scaled(&step, cfg.alpha)?;
        let next = clip_to_budget(&proposed, x, cfg.epsilon)?;
        let clipped = proposed
            .data()
            .iter()
            .zip(next.data())
            .filter(|(p, n)| p != n)
            .count();
        clipped_fraction.push(clipped as f64 / x.numel() as f64);
        x_adv = next;
    }

    let degenerate = degenerate_steps == cfg.iterations;
    if degenerate {
        log::warn!("gradient was all-zero on every iteration; input returned unchanged");
    }
    Ok(AttackOutcome {
        final_linf: x_adv.linf_distance(x)?,
        adversarial: x_adv,
        iterations: cfg.iterations,
        clipped_fraction,
        degenerate,
    })
}

/// Attack a slice of a dataset. Element `i` uses image index
/// `start_index + i`, so results are independent of how the work is split
/// or scheduled; output order matches input order. Per-image failures are
/// reported in place without aborting the rest.
pub fn attack_batch(
    source: &GradientSource,
    images: &[Tensor],
    labels: &[usize],
    cfg: &AttackConfig,
    start_index: u64,
) -> Vec<Result<AttackOutcome>> {
    images
        .par_iter()
        .zip(labels.par_iter())
        .enumerate()
        .map(|(i, (x, &y))| run_attack(source, x, y, cfg, start_index + i as u64))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic_blobs;
    use crate::models::{train, Arch, Classifier, ModelSpec, TrainConfig};
    use crate::tensor::Tensor;

    fn fixture() -> (Classifier, crate::data::LabeledDataset) {
        let data = synthetic_blobs(30, 3, 8, 13);
        let spec = ModelSpec::new(Arch::MlpA, [1, 8, 8], 3).unwrap();
        let cfg = TrainConfig {
            epochs: 3,
            seed: 5,
            ..TrainConfig::default()
        };
        (train(&spec, &data, &cfg).unwrap().classifier, data)
    }

    fn sign_cfg(method: Method, mu: f64) -> AttackConfig {
        AttackConfig {
            method,
            rule: UpdateRule::Sign,
            sampler: crate::sampling::SamplerConfig::none(),
            pipeline: crate::transforms::TransformPipeline::empty(),
            epsilon: 0.1,
            iterations: 5,
            alpha: 0.02,
            mu,
            seed: 3,
        }
    }

    #[test]
    fn fgsm_matches_closed_form() {
        let (model, data) = fixture();
        let x = &data.images[0];
        let y = data.labels[0];
        let cfg = AttackConfig {
            method: Method::Fgsm,
            iterations: 1,
            alpha: 0.1,
            ..sign_cfg(Method::Fgsm, 0.0)
        };
        let out = run_attack(&GradientSource::Single(&model), x, y, &cfg, 0).unwrap();

        // hand-rolled single step: x + eps * sgn(grad), boxed
        let g = model.input_gradient(x, y).unwrap();
        let mut expected = Tensor::zeros(x.shape());
        for i in 0..x.numel() {
            let sgn = if g.data()[i] > 0.0 {
                1.0
            } else if g.data()[i] < 0.0 {
                -1.0
            } else {
                0.0
            };
            let v = x.data()[i] + cfg.epsilon * sgn;
            let lo = (x.data()[i] - cfg.epsilon).max(0.0);
            let hi = (x.data()[i] + cfg.epsilon).min(1.0);
            expected.data_mut()[i] = v.clamp(lo, hi);
        }
        assert!(out.adversarial.bits_eq(&expected));
    }

    #[test]
    fn fgsm_config_requires_single_full_step() {
        let cfg = AttackConfig {
            method: Method::Fgsm,
            iterations: 2,
            ..AttackConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn zero_momentum_collapses_mi_and_ni_to_iterative() {
        let (model, data) = fixture();
        let source = GradientSource::Single(&model);
        for idx in 0..4 {
            let x = &data.images[idx];
            let y = data.labels[idx];
            let base = run_attack(&source, x, y, &sign_cfg(Method::Ifgsm, 0.0), 0).unwrap();
            let mi = run_attack(&source, x, y, &sign_cfg(Method::Mifgsm, 0.0), 0).unwrap();
            let ni = run_attack(&source, x, y, &sign_cfg(Method::Nifgsm, 0.0), 0).unwrap();
            assert!(mi.adversarial.bits_eq(&base.adversarial));
            assert!(ni.adversarial.bits_eq(&base.adversarial));
        }
    }

    #[test]
    fn budget_and_box_always_hold() {
        let (model, data) = fixture();
        let source = GradientSource::Single(&model);
        let cfg = AttackConfig {
            epsilon: 0.07,
            alpha: 0.02,
            iterations: 8,
            seed: 11,
            ..AttackConfig::default()
        };
        for idx in 0..6 {
            let out = run_attack(&source, &data.images[idx], data.labels[idx], &cfg, idx as u64)
                .unwrap();
            assert!(out.final_linf <= cfg.epsilon + 1e-9);
            assert!(out.adversarial.in_range(0.0, 1.0));
            assert_eq!(out.clipped_fraction.len(), cfg.iterations);
        }
    }

    #[test]
    fn single_member_ensemble_is_bit_exact() {
        let (model, data) = fixture();
        let members = vec![model.clone()];
        let single = GradientSource::Single(&model);
        let ensemble = GradientSource::Ensemble(&members);
        let g1 = single.gradient(&data.images[0], data.labels[0]).unwrap();
        let g2 = ensemble.gradient(&data.images[0], data.labels[0]).unwrap();
        assert!(g1.bits_eq(&g2));
    }

    #[test]
    fn duplicated_member_ensemble_matches_single_model() {
        let (model, data) = fixture();
        let members = vec![model.clone(), model.clone()];
        let single = GradientSource::Single(&model);
        let ensemble = GradientSource::Ensemble(&members);
        for idx in 0..3 {
            let g1 = single.gradient(&data.images[idx], data.labels[idx]).unwrap();
            let g2 = ensemble.gradient(&data.images[idx], data.labels[idx]).unwrap();
            assert!(g1.bits_eq(&g2));
        }
    }

    /// MLP with a large positive hidden bias acts affinely on [0, 1] inputs:
    /// logits = W2 (W1 x + b1) + b2, so the averaged-logit gradient has the
    /// closed form mean(M)^T (softmax(mean(z)) - one_hot).
    fn affine_model(seed: u64, hidden_bias: f64) -> Classifier {
        let spec = ModelSpec::new(Arch::MlpA, [1, 4, 4], 3).unwrap();
        let mut weights = crate::models::init_model(&spec, seed).unwrap();
        for (name, tensor) in &mut weights.tensors {
            if name == "dense0.weight" {
                // keep entries small so the bias dominates and relu stays on
                *tensor = tensor.scale(0.05);
            }
            if name == "dense0.bias" {
                *tensor = Tensor::filled(tensor.shape(), hidden_bias);
            }
        }
        Classifier::from_weights(spec, weights).unwrap()
    }

    fn affine_parts(model: &Classifier) -> (Vec<Vec<f64>>, Vec<f64>) {
        let get = |name: &str| -> &Tensor {
            &model
                .weights()
                .tensors
                .iter()
                .find(|(n, _)| n == name)
                .unwrap()
                .1
        };
        let w1 = get("dense0.weight");
        let b1 = get("dense0.bias");
        let w2 = get("dense1.weight");
        let b2 = get("dense1.bias");
        let (h, d) = (w1.shape()[0], w1.shape()[1]);
        let k = w2.shape()[0];
        // M = W2 W1 (k x d), c = W2 b1 + b2
        let mut m = vec![vec![0.0; d]; k];
        let mut c = vec![0.0; k];
        for r in 0..k {
            for j in 0..d {
                for p in 0..h {
                    m[r][j] += w2.data()[r * h + p] * w1.data()[p * d + j];
                }
            }
            for p in 0..h {
                c[r] += w2.data()[r * h + p] * b1.data()[p];
            }
            c[r] += b2.data()[r];
        }
        (m, c)
    }

    #[test]
    fn ensemble_gradient_matches_affine_closed_form() {
        let a = affine_model(1, 5.0);
        let b = affine_model(2, 5.0);
        let members = vec![a.clone(), b.clone()];
        let ensemble = GradientSource::Ensemble(&members);
        let x = synthetic_blobs(1, 2, 4, 3).images[0].clone();
        let label = 1usize;

        let (ma, ca) = affine_parts(&a);
        let (mb, cb) = affine_parts(&b);
        let k = ca.len();
        let d = x.numel();
        let mut logits = vec![0.0; k];
        for r in 0..k {
            let mut za = ca[r];
            let mut zb = cb[r];
            for j in 0..d {
                za += ma[r][j] * x.data()[j];
                zb += mb[r][j] * x.data()[j];
            }
            logits[r] = 0.5 * (za + zb);
        }
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        let mut expected = vec![0.0; d];
        for r in 0..k {
            let gz = exps[r] / total - if r == label { 1.0 } else { 0.0 };
            for j in 0..d {
                expected[j] += gz * 0.5 * (ma[r][j] + mb[r][j]);
            }
        }

        let got = ensemble.gradient(&x, label).unwrap();
        for j in 0..d {
            let err = (got.data()[j] - expected[j]).abs()
                / got.data()[j].abs().max(expected[j].abs()).max(1e-8);
            assert!(err < 1e-10, "element {j}: {} vs {}", got.data()[j], expected[j]);
        }
    }

    #[test]
    fn ensemble_rejects_mismatched_members() {
        let a = Classifier::init(ModelSpec::new(Arch::MlpA, [1, 8, 8], 3).unwrap(), 0).unwrap();
        let b = Classifier::init(ModelSpec::new(Arch::MlpA, [1, 4, 4], 3).unwrap(), 0).unwrap();
        let members = vec![a, b];
        let ensemble = GradientSource::Ensemble(&members);
        assert!(matches!(ensemble.validate(), Err(Error::Config(_))));
        let empty: Vec<Classifier> = Vec::new();
        assert!(GradientSource::Ensemble(&empty).validate().is_err());
    }

    #[test]
    fn batch_of_one_equals_run_attack() {
        let (model, data) = fixture();
        let source = GradientSource::Single(&model);
        let cfg = sign_cfg(Method::Mifgsm, 1.0);
        let direct = run_attack(&source, &data.images[2], data.labels[2], &cfg, 2).unwrap();
        let batch = attack_batch(
            &source,
            &data.images[2..3],
            &data.labels[2..3],
            &cfg,
            2,
        );
        assert!(batch[0].as_ref().unwrap().adversarial.bits_eq(&direct.adversarial));
    }

    #[test]
    fn batch_reruns_and_parallel_serial_agree() {
        let (model, data) = fixture();
        let source = GradientSource::Single(&model);
        let cfg = AttackConfig {
            iterations: 4,
            seed: 17,
            ..AttackConfig::default()
        };
        let (images, labels) = data.slice(0, 12);
        let a = attack_batch(&source, images, labels, &cfg, 0);
        let b = attack_batch(&source, images, labels, &cfg, 0);
        let serial: Vec<_> = images
            .iter()
            .zip(labels)
            .enumerate()
            .map(|(i, (x, &y))| run_attack(&source, x, y, &cfg, i as u64))
            .collect();
        for ((ra, rb), rs) in a.iter().zip(&b).zip(&serial) {
            let (ta, tb, ts) = (
                &ra.as_ref().unwrap().adversarial,
                &rb.as_ref().unwrap().adversarial,
                &rs.as_ref().unwrap().adversarial,
            );
            assert!(ta.bits_eq(tb));
            assert!(ta.bits_eq(ts));
        }
    }

    #[test]
    fn degenerate_gradient_returns_input_unchanged() {
        // all-zero weights give all-equal logits whose gradient is nonzero…
        // so zero the final layer instead: gradient is exactly zero.
        let spec = ModelSpec::new(Arch::MlpA, [1, 8, 8], 3).unwrap();
        let mut weights = crate::models::init_model(&spec, 4).unwrap();
        for (name, tensor) in &mut weights.tensors {
            if name.starts_with("dense1") {
                *tensor = Tensor::zeros(tensor.shape());
            }
        }
        let model = Classifier::from_weights(spec, weights).unwrap();
        let data = synthetic_blobs(1, 3, 8, 6);
        let out = run_attack(
            &GradientSource::Single(&model),
            &data.images[0],
            0,
            &sign_cfg(Method::Ifgsm, 0.0),
            0,
        )
        .unwrap();
        assert!(out.degenerate);
        assert!(out.adversarial.bits_eq(&data.images[0]));
    }

    #[test]
    fn fingerprint_distinguishes_configs() {
        let base = AttackConfig::default();
        let mut seen = std::collections::HashSet::new();
        seen.insert(base.fingerprint());
        for cfg in [
            AttackConfig { method: Method::Nifgsm, ..base.clone() },
            AttackConfig { rule: UpdateRule::Sign, ..base.clone() },
            AttackConfig { rule: UpdateRule::rescale(3.0), ..base.clone() },
            AttackConfig { epsilon: 0.3, ..base.clone() },
            AttackConfig { alpha: 0.03, ..base.clone() },
            AttackConfig { iterations: 20, ..base.clone() },
            AttackConfig { mu: 0.5, ..base.clone() },
            AttackConfig { seed: 1, ..base.clone() },
            AttackConfig {
                sampler: crate::sampling::SamplerConfig::depth_first(6, 1.5),
                ..base.clone()
            },
            AttackConfig {
                sampler: crate::sampling::SamplerConfig::gaussian(12, None),
                ..base.clone()
            },
            AttackConfig {
                pipeline: crate::transforms::TransformPipeline {
                    dim: Some(crate::transforms::DimConfig::default()),
                    ..crate::transforms::TransformPipeline::empty()
                },
                ..base.clone()
            },
        ] {
            assert!(seen.insert(cfg.fingerprint()), "collision for {cfg:?}");
        }
        // stability: same config, same fingerprint
        assert_eq!(base.fingerprint(), AttackConfig::default().fingerprint());
    }

    #[test]
    fn rejects_out_of_range_input() {
        let (model, _) = fixture();
        let bad = Tensor::filled(&[1, 8, 8], 1.5);
        let err = run_attack(
            &GradientSource::Single(&model),
            &bad,
            0,
            &sign_cfg(Method::Ifgsm, 0.0),
            0,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Data(_)));
    }
}
