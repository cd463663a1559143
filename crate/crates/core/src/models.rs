//! Desk-scale victim and transfer-target classifiers: architectures, seeded
//! initialization, SGD training (optionally adversarial), and weight
//! persistence.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{LabeledDataset, Reader};
use crate::error::{Error, Result};
use crate::rng::derive_seed;
use crate::tape::{self, Padding, Tape, ValueId};
use crate::tensor::Tensor;
use crate::update::{clip_to_budget, sign_update};

const WEIGHTS_MAGIC: &[u8; 4] = b"GATK";
const WEIGHTS_VERSION: u32 = 1;
const META_TENSOR: &str = "meta";

/// Architecture identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arch {
    MlpA,
    CnnA,
    CnnB,
}

impl Arch {
    pub fn id(&self) -> &'static str {
        match self {
            Arch::MlpA => "mlp-a",
            Arch::CnnA => "cnn-a",
            Arch::CnnB => "cnn-b",
        }
    }

    pub fn parse(s: &str) -> Result<Arch> {
        match s {
            "mlp-a" => Ok(Arch::MlpA),
            "cnn-a" => Ok(Arch::CnnA),
            "cnn-b" => Ok(Arch::CnnB),
            other => Err(Error::Config(format!(
                "unknown architecture '{other}' (expected mlp-a, cnn-a or cnn-b)"
            ))),
        }
    }

    fn code(&self) -> u32 {
        match self {
            Arch::MlpA => 0,
            Arch::CnnA => 1,
            Arch::CnnB => 2,
        }
    }

    fn from_code(code: u32) -> Result<Arch> {
        match code {
            0 => Ok(Arch::MlpA),
            1 => Ok(Arch::CnnA),
            2 => Ok(Arch::CnnB),
            other => Err(Error::Format(format!("unknown architecture code {other}"))),
        }
    }
}

/// Architecture plus concrete input/output dimensions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelSpec {
    pub arch: Arch,
    /// Input shape as `[channels, height, width]`.
    pub input_shape: [usize; 3],
    pub num_classes: usize,
}

enum LayerKind {
    Conv { out_channels: usize, kernel: usize },
    Relu,
    AvgPool2,
    Flatten,
    Dense { out: usize },
}

impl ModelSpec {
    pub fn new(arch: Arch, input_shape: [usize; 3], num_classes: usize) -> Result<ModelSpec> {
        let spec = ModelSpec {
            arch,
            input_shape,
            num_classes,
        };
        spec.parameter_shapes()?;
        Ok(spec)
    }

    fn plan(&self) -> Vec<LayerKind> {
        use LayerKind::*;
        match self.arch {
            Arch::MlpA => vec![Flatten, Dense { out: 256 }, Relu, Dense { out: self.num_classes }],
            Arch::CnnA => vec![
                Conv { out_channels: 8, kernel: 3 },
                Relu,
                AvgPool2,
                Conv { out_channels: 16, kernel: 3 },
                Relu,
                AvgPool2,
                Flatten,
                Dense { out: self.num_classes },
            ],
            Arch::CnnB => vec![
                Conv { out_channels: 6, kernel: 5 },
                Relu,
                AvgPool2,
                Flatten,
                Dense { out: 64 },
                Relu,
                Dense { out: self.num_classes },
            ],
        }
    }

    /// Named parameter tensors in consumption order, with shapes.
    fn parameter_shapes(&self) -> Result<Vec<(String, Vec<usize>)>> {
        if self.num_classes < 2 {
            return Err(Error::Config(format!(
                "need at least 2 classes, got {}",
                self.num_classes
            )));
        }
        let [mut c, mut h, mut w] = self.input_shape;
        if c == 0 || h == 0 || w == 0 {
            return Err(Error::Config(format!(
                "degenerate input shape {:?}",
                self.input_shape
            )));
        }
        let mut shapes = Vec::new();
        let (mut conv_idx, mut dense_idx) = (0, 0);
        let mut flat: Option<usize> = None;
        for layer in self.plan() {
            match layer {
                LayerKind::Conv { out_channels, kernel } => {
                    shapes.push((format!("conv{conv_idx}.kernel"), vec![out_channels, c, kernel, kernel]));
                    shapes.push((format!("conv{conv_idx}.bias"), vec![out_channels]));
                    conv_idx += 1;
                    c = out_channels;
                }
                LayerKind::Relu => {}
                LayerKind::AvgPool2 => {
                    if h % 2 != 0 || w % 2 != 0 {
                        return Err(Error::Config(format!(
                            "{} needs even spatial dims at every pooling stage; got {}x{} from input {:?}",
                            self.arch.id(),
                            h,
                            w,
                            self.input_shape
                        )));
                    }
                    h /= 2;
                    w /= 2;
                }
                LayerKind::Flatten => flat = Some(c * h * w),
                LayerKind::Dense { out } => {
                    let inp = flat.take().unwrap_or(c * h * w);
                    shapes.push((format!("dense{dense_idx}.weight"), vec![out, inp]));
                    shapes.push((format!("dense{dense_idx}.bias"), vec![out]));
                    dense_idx += 1;
                    flat = Some(out);
                }
            }
        }
        Ok(shapes)
    }
}

/// Ordered list of named parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    pub tensors: Vec<(String, Tensor)>,
}

/// A classifier: a model spec with its weights.
#[derive(Debug, Clone)]
pub struct Classifier {
    spec: ModelSpec,
    weights: Weights,
}

/// Deterministic Glorot-uniform initialization: weights drawn uniformly from
/// `[-sqrt(6 / (fan_in + fan_out)), +...)`, biases zero.
pub fn init_model(spec: &ModelSpec, seed: u64) -> Result<Weights> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x696e_6974 /* "init" */));
    let mut tensors = Vec::new();
    for (name, shape) in spec.parameter_shapes()? {
        let tensor = if name.ends_with(".bias") {
            Tensor::zeros(&shape)
        } else {
            let (fan_in, fan_out) = match shape.len() {
                2 => (shape[1], shape[0]),
                4 => (shape[1] * shape[2] * shape[3], shape[0] * shape[2] * shape[3]),
                _ => unreachable!("parameter tensors are rank 2 or 4"),
            };
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let data = (0..shape.iter().product::<usize>())
                .map(|_| rng.random_range(-limit..limit))
                .collect();
            Tensor::from_vec(&shape, data)?
        };
        tensors.push((name, tensor));
    }
    Ok(Weights { tensors })
}

impl Classifier {
    pub fn init(spec: ModelSpec, seed: u64) -> Result<Classifier> {
        let weights = init_model(&spec, seed)?;
        Ok(Classifier { spec, weights })
    }

    /// Assemble from existing weights, validating every shape against the
    /// spec's parameter plan.
    pub fn from_weights(spec: ModelSpec, weights: Weights) -> Result<Classifier> {
        let expected = spec.parameter_shapes()?;
        if weights.tensors.len() != expected.len() {
            return Err(Error::Dimension(format!(
                "{} expects {} parameter tensors, got {}",
                spec.arch.id(),
                expected.len(),
                weights.tensors.len()
            )));
        }
        for ((name, tensor), (want_name, want_shape)) in weights.tensors.iter().zip(&expected) {
            if name != want_name || tensor.shape() != want_shape.as_slice() {
                return Err(Error::Dimension(format!(
                    "parameter '{name}' with shape {:?} does not match expected '{want_name}' {:?}",
                    tensor.shape(),
                    want_shape
                )));
            }
            if !tensor.is_finite() {
                return Err(Error::Data(format!("parameter '{name}' has non-finite entries")));
            }
        }
        Ok(Classifier { spec, weights })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn weights(&self) -> &Weights {
        &self.weights
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.shape() != self.spec.input_shape {
            return Err(Error::Dimension(format!(
                "input shape {:?} does not match model input {:?}",
                x.shape(),
                self.spec.input_shape
            )));
        }
        Ok(())
    }

    /// Plain forward pass to logits (no tape).
    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let mut params = self.weights.tensors.iter().map(|(_, t)| t);
        let mut cur = x.clone();
        for layer in self.spec.plan() {
            cur = match layer {
                LayerKind::Conv { .. } => {
                    let kernel = params.next().expect("plan/params aligned");
                    let bias = params.next().expect("plan/params aligned");
                    let mut out = tape::conv2d_forward(&cur, kernel, Padding::Same)?;
                    let (ch, hw) = (out.shape()[0], out.shape()[1] * out.shape()[2]);
                    for ci in 0..ch {
                        let bv = bias.data()[ci];
                        for v in &mut out.data_mut()[ci * hw..(ci + 1) * hw] {
                            *v += bv;
                        }
                    }
                    out
                }
                LayerKind::Relu => cur.map(|v| v.max(0.0)),
                LayerKind::AvgPool2 => tape::avgpool2_forward(&cur)?,
                LayerKind::Flatten => cur.reshape(&[cur.numel()])?,
                LayerKind::Dense { .. } => {
                    let weight = params.next().expect("plan/params aligned");
                    let bias = params.next().expect("plan/params aligned");
                    tape::matvec_forward(weight, &cur)?.add(bias)?
                }
            };
        }
        Ok(cur)
    }

    /// Softmax class probabilities.
    pub fn predict(&self, x: &Tensor) -> Result<Vec<f64>> {
        Ok(tape::softmax(self.logits(x)?.data()))
    }

    /// Class with the highest logit.
    pub fn classify(&self, x: &Tensor) -> Result<usize> {
        let logits = self.logits(x)?;
        Ok(argmax(logits.data()))
    }

    /// Cross-entropy loss of the model on one example.
    pub fn loss(&self, x: &Tensor, label: usize) -> Result<f64> {
        let logits = self.logits(x)?;
        if label >= logits.numel() {
            return Err(Error::Index(format!(
                "label {} out of range for {} classes",
                label,
                logits.numel()
            )));
        }
        Ok(tape::softmax_cross_entropy_forward(logits.data(), label).0)
    }

    /// Record this model's forward pass on a tape. `params` must align with
    /// `weights.tensors`; the caller decides whether they are leaves (for
    /// weight gradients) or constants (for input gradients only).
    pub(crate) fn build_graph(&self, tape: &mut Tape, x: ValueId, params: &[ValueId]) -> Result<ValueId> {
        let mut params = params.iter().copied();
        let mut cur = x;
        for layer in self.spec.plan() {
            cur = match layer {
                LayerKind::Conv { .. } => {
                    let kernel = params.next().expect("plan/params aligned");
                    let bias = params.next().expect("plan/params aligned");
                    let conv = tape.conv2d(cur, kernel, Padding::Same)?;
                    tape.bias_channels(conv, bias)?
                }
                LayerKind::Relu => tape.relu(cur),
                LayerKind::AvgPool2 => tape.avgpool2(cur)?,
                LayerKind::Flatten => {
                    let n = tape.value(cur).numel();
                    tape.reshape(cur, &[n])?
                }
                LayerKind::Dense { .. } => {
                    let weight = params.next().expect("plan/params aligned");
                    let bias = params.next().expect("plan/params aligned");
                    let prod = tape.matvec(weight, cur)?;
                    tape.add(prod, bias)?
                }
            };
        }
        Ok(cur)
    }

    /// Insert all weights on a tape as constants (frozen parameters).
    pub(crate) fn constant_params(&self, tape: &mut Tape) -> Vec<ValueId> {
        self.weights
            .tensors
            .iter()
            .map(|(_, t)| tape.constant(t.clone()))
            .collect()
    }

    /// Exact reverse-mode gradient of the loss with respect to the input.
    pub fn input_gradient(&self, x: &Tensor, label: usize) -> Result<Tensor> {
        self.check_input(x)?;
        let mut tape = Tape::new();
        let x_id = tape.leaf(x.clone());
        let params = self.constant_params(&mut tape);
        let logits = self.build_graph(&mut tape, x_id, &params)?;
        let loss = tape.softmax_cross_entropy(logits, label)?;
        let grads = tape.backward(loss)?;
        Ok(grads
            .wrt(x_id)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(x.shape())))
    }

    /// Loss and per-parameter gradients for one example (training path).
    fn loss_and_weight_grads(&self, x: &Tensor, label: usize) -> Result<(f64, Vec<Tensor>)> {
        let mut tape = Tape::new();
        let x_id = tape.constant(x.clone());
        let params: Vec<ValueId> = self
            .weights
            .tensors
            .iter()
            .map(|(_, t)| tape.leaf(t.clone()))
            .collect();
        let logits = self.build_graph(&mut tape, x_id, &params)?;
        let loss_id = tape.softmax_cross_entropy(logits, label)?;
        let loss = tape.value(loss_id).item()?;
        let grads = tape.backward(loss_id)?;
        let out = params
            .iter()
            .zip(&self.weights.tensors)
            .map(|(&id, (_, t))| {
                grads
                    .wrt(id)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(t.shape()))
            })
            .collect();
        Ok((loss, out))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = Tensor::from_vec(
            &[5],
            vec![
                f64::from(self.spec.arch.code()),
                self.spec.input_shape[0] as f64,
                self.spec.input_shape[1] as f64,
                self.spec.input_shape[2] as f64,
                self.spec.num_classes as f64,
            ],
        )?;
        let mut tensors = vec![(META_TENSOR.to_string(), meta)];
        tensors.extend(self.weights.tensors.iter().cloned());
        save_weights(&Weights { tensors }, path)
    }

    pub fn load(path: &Path) -> Result<Classifier> {
        let mut weights = load_weights(path)?;
        if weights.tensors.first().map(|(n, _)| n.as_str()) != Some(META_TENSOR) {
            return Err(Error::Format(
                "model file is missing the leading meta tensor".into(),
            ));
        }
        let (_, meta) = weights.tensors.remove(0);
        if meta.numel() != 5 {
            return Err(Error::Format(format!(
                "meta tensor has {} entries, expected 5",
                meta.numel()
            )));
        }
        let m = meta.data();
        let spec = ModelSpec::new(
            Arch::from_code(m[0] as u32)?,
            [m[1] as usize, m[2] as usize, m[3] as usize],
            m[4] as usize,
        )?;
        Classifier::from_weights(spec, weights)
    }
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Fraction of examples the model classifies correctly.
pub fn accuracy(model: &Classifier, images: &[Tensor], labels: &[usize]) -> Result<f64> {
    if images.is_empty() {
        return Err(Error::Data("cannot compute accuracy on an empty set".into()));
    }
    let mut correct = 0usize;
    for (image, &label) in images.iter().zip(labels) {
        if model.classify(image)? == label {
            correct += 1;
        }
    }
    Ok(correct as f64 / images.len() as f64)
}

/// Training hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
    /// Fraction of each batch replaced by single-step sign-rule adversarial
    /// versions (epsilon 0.2) against the current weights.
    pub adversarial_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 3,
            batch_size: 32,
            learning_rate: 0.05,
            momentum: 0.9,
            seed: 0,
            adversarial_fraction: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch size must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..=1.0).contains(&self.adversarial_fraction) {
            return Err(Error::Config(format!(
                "adversarial fraction must be in [0, 1], got {}",
                self.adversarial_fraction
            )));
        }
        if self.momentum < 0.0 {
            return Err(Error::Config(format!(
                "momentum must be non-negative, got {}",
                self.momentum
            )));
        }
        Ok(())
    }
}

/// A trained classifier with its per-epoch mean training loss.
#[derive(Debug)]
pub struct Training {
    pub classifier: Classifier,
    pub epoch_losses: Vec<f64>,
}

const ADVERSARIAL_TRAIN_EPS: f64 = 0.2;

/// Mini-batch SGD with momentum on softmax cross-entropy. Deterministic
/// given (spec, dataset order, config). Aborts with a diagnostic naming the
/// batch if the loss goes non-finite.
pub fn train(spec: &ModelSpec, dataset: &LabeledDataset, cfg: &TrainConfig) -> Result<Training> {
    cfg.validate()?;
    dataset.validate()?;
    if dataset.is_empty() {
        return Err(Error::Data("cannot train on an empty dataset".into()));
    }
    if dataset.num_classes > spec.num_classes {
        return Err(Error::Config(format!(
            "dataset has {} classes but the model outputs {}",
            dataset.num_classes, spec.num_classes
        )));
    }

    let mut model = Classifier::init(spec.clone(), cfg.seed)?;
    let mut velocity: Vec<Tensor> = model
        .weights
        .tensors
        .iter()
        .map(|(_, t)| Tensor::zeros(t.shape()))
        .collect();
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let mut shuffle_rng =
            ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 0x7368_7566 + epoch as u64));
        order.shuffle(&mut shuffle_rng);

        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for (batch_idx, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let adversarial_count =
                (cfg.adversarial_fraction * chunk.len() as f64).round() as usize;
            let mut grad_acc: Vec<Tensor> = model
                .weights
                .tensors
                .iter()
                .map(|(_, t)| Tensor::zeros(t.shape()))
                .collect();
            let mut batch_loss = 0.0;
            for (pos, &example) in chunk.iter().enumerate() {
                let label = dataset.labels[example];
                let image = if pos < adversarial_count {
                    let g = model.input_gradient(&dataset.images[example], label)?;
                    let stepped = dataset.images[example]
                        .add(&sign_update(&g).scale(ADVERSARIAL_TRAIN_EPS))?;
                    clip_to_budget(&stepped, &dataset.images[example], ADVERSARIAL_TRAIN_EPS)?
                } else {
                    dataset.images[example].clone()
                };
                let (loss, grads) = model.loss_and_weight_grads(&image, label)?;
                if !loss.is_finite() {
                    return Err(Error::Numerical(format!(
                        "non-finite loss in epoch {epoch}, batch {batch_idx}"
                    )));
                }
                batch_loss += loss;
                for (acc, g) in grad_acc.iter_mut().zip(&grads) {
                    acc.add_scaled(g, 1.0)?;
                }
            }
            let inv = 1.0 / chunk.len() as f64;
            for ((v, g), (_, w)) in velocity
                .iter_mut()
                .zip(&grad_acc)
                .zip(model.weights.tensors.iter_mut())
            {
                for i in 0..v.numel() {
                    let vd = v.data_mut();
                    vd[i] = cfg.momentum * vd[i] + g.data()[i] * inv;
                    w.data_mut()[i] -= cfg.learning_rate * vd[i];
                }
            }
            epoch_loss += batch_loss * inv;
            batches += 1;
        }
        epoch_losses.push(epoch_loss / batches as f64);
    }

    Ok(Training {
        classifier: model,
        epoch_losses,
    })
}

/// Serialize weights. Format: magic "GATK", version u32 LE, tensor count
/// u32 LE, then per tensor: name length u32 LE + UTF-8 name, rank u32 LE,
/// dims u64 LE each, payload f64 LE. A CRC32 of all preceding bytes trails.
pub fn save_weights(weights: &Weights, path: &Path) -> Result<()> {
    let mut bytes = Vec::new();
    bytes.extend_from_slice(WEIGHTS_MAGIC);
    bytes.extend_from_slice(&WEIGHTS_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(weights.tensors.len() as u32).to_le_bytes());
    for (name, tensor) in &weights.tensors {
        bytes.extend_from_slice(&(name.len() as u32).to_le_bytes());
        bytes.extend_from_slice(name.as_bytes());
        bytes.extend_from_slice(&(tensor.shape().len() as u32).to_le_bytes());
        for &dim in tensor.shape() {
            bytes.extend_from_slice(&(dim as u64).to_le_bytes());
        }
        for &v in tensor.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&bytes);
    bytes.extend_from_slice(&crc.to_le_bytes());
    fs::write(path, bytes)?;
    Ok(())
}

/// Load weights saved by [`save_weights`]; the round trip is bit-exact.
pub fn load_weights(path: &Path) -> Result<Weights> {
    let bytes = fs::read(path)?;
    if bytes.len() < 4 {
        return Err(Error::Truncated {
            expected: 4,
            actual: bytes.len() as u64,
        });
    }
    if &bytes[..4] != WEIGHTS_MAGIC {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected {:?}",
            &bytes[..4],
            WEIGHTS_MAGIC
        )));
    }
    if bytes.len() < 8 {
        return Err(Error::Truncated {
            expected: 8,
            actual: bytes.len() as u64,
        });
    }
    let body_len = bytes.len() - 4;
    let stored_crc = u32::from_le_bytes(bytes[body_len..].try_into().unwrap());
    let computed = crc32fast::hash(&bytes[..body_len]);
    if stored_crc != computed {
        return Err(Error::Format(format!(
            "checksum mismatch: stored {stored_crc:#010x}, computed {computed:#010x}"
        )));
    }

    let mut r = Reader::new(&bytes[4..body_len]);
    let version = r.u32_le()?;
    if version != WEIGHTS_VERSION {
        return Err(Error::Version {
            found: version,
            expected: WEIGHTS_VERSION,
        });
    }
    let count = r.u32_le()? as usize;
    let mut tensors = Vec::new();
    for _ in 0..count {
        let name_len = r.u32_le()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|_| Error::Format("tensor name is not valid UTF-8".into()))?;
        let rank = r.u32_le()? as usize;
        let mut shape = Vec::new();
        for _ in 0..rank {
            shape.push(r.u64_le()? as usize);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| Error::Format("tensor shape overflows".into()))?;
        let payload = r.take(numel)?;
        let data: Vec<f64> = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.push((name, Tensor::from_vec(&shape, data)?));
    }
    r.finish()?;
    Ok(Weights { tensors })
}
