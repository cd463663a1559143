//! Tape-based reverse-mode differentiation over tensors.
//!
//! A [`Tape`] records every operation as a node referencing earlier nodes,
//! so the graph is acyclic by construction and reverse insertion order is a
//! reverse topological order. [`Tape::backward`] walks it once, accumulating
//! gradients (shared subexpressions add, never overwrite).

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a value recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ValueId(usize);

/// Zero-padding convention for convolutions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// No padding; output shrinks by `kernel - 1`.
    Valid,
    /// Zero-pad so output spatial dims equal input dims.
    Same,
}

enum Op {
    Leaf,
    Constant,
    Add(ValueId, ValueId),
    Sub(ValueId, ValueId),
    Mul(ValueId, ValueId),
    ScalarMul(ValueId, f64),
    MatMul(ValueId, ValueId),
    MatVec(ValueId, ValueId),
    Conv2d {
        x: ValueId,
        kernels: ValueId,
        padding: Padding,
    },
    BiasChannels {
        x: ValueId,
        bias: ValueId,
    },
    Relu(ValueId),
    AvgPool2(ValueId),
    Reshape(ValueId),
    Sum(ValueId),
    SoftmaxCrossEntropy {
        logits: ValueId,
        label: usize,
        // softmax cached at forward time for the backward pass
        probs: Vec<f64>,
    },
}

struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// Gradients produced by one backward pass, indexed by [`ValueId`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient with respect to `id`, if any path reached it.
    pub fn wrt(&self, id: ValueId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Tape {
        Tape { nodes: Vec::new() }
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> ValueId {
        let id = ValueId(self.nodes.len());
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        id
    }

    fn needs_grad(&self, ids: &[ValueId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    pub fn value(&self, id: ValueId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> ValueId {
        self.push(Op::Leaf, value, true)
    }

    /// Non-differentiated input (e.g. frozen weights during an attack).
    pub fn constant(&mut self, value: Tensor) -> ValueId {
        self.push(Op::Constant, value, false)
    }

    pub fn add(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let value = self.value(a).add(self.value(b))?;
        let rg = self.needs_grad(&[a, b]);
        Ok(self.push(Op::Add(a, b), value, rg))
    }

    pub fn sub(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let value = self.value(a).sub(self.value(b))?;
        let rg = self.needs_grad(&[a, b]);
        Ok(self.push(Op::Sub(a, b), value, rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        let rg = self.needs_grad(&[a, b]);
        Ok(self.push(Op::Mul(a, b), value, rg))
    }

    pub fn scalar_mul(&mut self, a: ValueId, k: f64) -> ValueId {
        let value = self.value(a).scale(k);
        let rg = self.needs_grad(&[a]);
        self.push(Op::ScalarMul(a, k), value, rg)
    }

    /// Matrix product of an `m x k` and a `k x n` tensor.
    pub fn matmul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let value = matmul_forward(self.value(a), self.value(b))?;
        let rg = self.needs_grad(&[a, b]);
        Ok(self.push(Op::MatMul(a, b), value, rg))
    }

    /// Matrix-vector product of an `o x i` weight and an `i` vector.
    pub fn matvec(&mut self, w: ValueId, x: ValueId) -> Result<ValueId> {
        let value = matvec_forward(self.value(w), self.value(x))?;
        let rg = self.needs_grad(&[w, x]);
        Ok(self.push(Op::MatVec(w, x), value, rg))
    }

    /// Cross-correlation (no kernel flip) of a `C_in x H x W` input with
    /// `C_out x C_in x kh x kw` kernels.
    pub fn conv2d(&mut self, x: ValueId, kernels: ValueId, padding: Padding) -> Result<ValueId> {
        let value = conv2d_forward(self.value(x), self.value(kernels), padding)?;
        let rg = self.needs_grad(&[x, kernels]);
        Ok(self.push(
            Op::Conv2d {
                x,
                kernels,
                padding,
            },
            value,
            rg,
        ))
    }

    /// Adds `bias[c]` to every spatial position of channel `c`.
    pub fn bias_channels(&mut self, x: ValueId, bias: ValueId) -> Result<ValueId> {
        let xs = self.value(x).shape().to_vec();
        let bs = self.value(bias).shape().to_vec();
        if xs.len() != 3 || bs.len() != 1 || bs[0] != xs[0] {
            return Err(Error::Dimension(format!(
                "bias_channels expects CxHxW input and C bias, got {:?} and {:?}",
                xs, bs
            )));
        }
        let (c, h, w) = (xs[0], xs[1], xs[2]);
        let mut data = self.value(x).data().to_vec();
        let bias_data = self.value(bias).data();
        for ci in 0..c {
            let base = ci * h * w;
            let bv = bias_data[ci];
            for v in &mut data[base..base + h * w] {
                *v += bv;
            }
        }
        let value = Tensor::from_vec(&xs, data)?;
        let rg = self.needs_grad(&[x, bias]);
        Ok(self.push(Op::BiasChannels { x, bias }, value, rg))
    }

    /// Elementwise `max(0, x)`; the subgradient at exactly 0 is 0.
    pub fn relu(&mut self, a: ValueId) -> ValueId {
        let value = self.value(a).map(|v| v.max(0.0));
        let rg = self.needs_grad(&[a]);
        self.push(Op::Relu(a), value, rg)
    }

    /// 2x2 non-overlapping mean pooling over each channel.
    pub fn avgpool2(&mut self, a: ValueId) -> Result<ValueId> {
        let value = avgpool2_forward(self.value(a))?;
        let rg = self.needs_grad(&[a]);
        Ok(self.push(Op::AvgPool2(a), value, rg))
    }

    pub fn reshape(&mut self, a: ValueId, shape: &[usize]) -> Result<ValueId> {
        let value = self.value(a).reshape(shape)?;
        let rg = self.needs_grad(&[a]);
        Ok(self.push(Op::Reshape(a), value, rg))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, a: ValueId) -> ValueId {
        let value = Tensor::scalar(self.value(a).data().iter().sum());
        let rg = self.needs_grad(&[a]);
        self.push(Op::Sum(a), value, rg)
    }

    /// `-log softmax(logits)[label]`, stabilized by max-subtraction.
    pub fn softmax_cross_entropy(&mut self, logits: ValueId, label: usize) -> Result<ValueId> {
        let lv = self.value(logits);
        if lv.shape().len() != 1 {
            return Err(Error::Dimension(format!(
                "softmax_cross_entropy expects a rank-1 logit vector, got {:?}",
                lv.shape()
            )));
        }
        let k = lv.numel();
        if label >= k {
            return Err(Error::Index(format!(
                "label {} out of range for {} classes",
                label, k
            )));
        }
        let (loss, probs) = softmax_cross_entropy_forward(lv.data(), label);
        let rg = self.needs_grad(&[logits]);
        Ok(self.push(
            Op::SoftmaxCrossEntropy {
                logits,
                label,
                probs,
            },
            Tensor::scalar(loss),
            rg,
        ))
    }

    /// Reverse pass from a scalar output. Visits every node at most once in
    /// reverse insertion order and accumulates into input gradients.
    pub fn backward(&self, output: ValueId) -> Result<Gradients> {
        if self.value(output).numel() != 1 {
            return Err(Error::Dimension(format!(
                "backward requires a scalar output, got shape {:?}",
                self.value(output).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        let out_shape = self.value(output).shape().to_vec();
        grads[output.0] = Some(Tensor::filled(&out_shape, 1.0));

        for i in (0..=output.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(grad) = grads[i].take() else {
                continue;
            };
            self.backward_step(node, &grad, &mut grads)?;
            grads[i] = Some(grad);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], id: ValueId, update: impl FnOnce(&mut Tensor)) {
        if !self.nodes[id.0].requires_grad {
            return;
        }
        let slot = grads[id.0]
            .get_or_insert_with(|| Tensor::zeros(self.nodes[id.0].value.shape()));
        update(slot);
    }

    fn backward_step(&self, node: &Node, grad: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        match &node.op {
            Op::Leaf | Op::Constant => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, |g| g.add_scaled(grad, 1.0).unwrap());
                self.accumulate(grads, *b, |g| g.add_scaled(grad, 1.0).unwrap());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, |g| g.add_scaled(grad, 1.0).unwrap());
                self.accumulate(grads, *b, |g| g.add_scaled(grad, -1.0).unwrap());
            }
            Op::Mul(a, b) => {
                let av = self.value(*a).clone();
                let bv = self.value(*b).clone();
                self.accumulate(grads, *a, |g| {
                    for ((gi, &gr), &b) in g.data_mut().iter_mut().zip(grad.data()).zip(bv.data()) {
                        *gi += gr * b;
                    }
                });
                self.accumulate(grads, *b, |g| {
                    for ((gi, &gr), &a) in g.data_mut().iter_mut().zip(grad.data()).zip(av.data()) {
                        *gi += gr * a;
                    }
                });
            }
            Op::ScalarMul(a, k) => {
                self.accumulate(grads, *a, |g| g.add_scaled(grad, *k).unwrap());
            }
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, kk) = (av.shape()[0], av.shape()[1]);
                let n = bv.shape()[1];
                self.accumulate(grads, *a, |g| {
                    // dA += G * B^T
                    let gd = g.data_mut();
                    for i in 0..m {
                        for p in 0..kk {
                            let mut acc = 0.0;
                            let grow = i * n;
                            let brow = p * n;
                            for j in 0..n {
                                acc += grad.data()[grow + j] * bv.data()[brow + j];
                            }
                            gd[i * kk + p] += acc;
                        }
                    }
                });
                self.accumulate(grads, *b, |g| {
                    // dB += A^T * G
                    let gd = g.data_mut();
                    for i in 0..m {
                        let grow = i * n;
                        for p in 0..kk {
                            let av_ip = av.data()[i * kk + p];
                            if av_ip == 0.0 {
                                continue;
                            }
                            let brow = p * n;
                            for j in 0..n {
                                gd[brow + j] += av_ip * grad.data()[grow + j];
                            }
                        }
                    }
                });
            }
            Op::MatVec(w, x) => {
                let (wv, xv) = (self.value(*w), self.value(*x));
                let (o, i) = (wv.shape()[0], wv.shape()[1]);
                self.accumulate(grads, *w, |g| {
                    let gd = g.data_mut();
                    for r in 0..o {
                        let gr = grad.data()[r];
                        if gr == 0.0 {
                            continue;
                        }
                        let row = r * i;
                        for c in 0..i {
                            gd[row + c] += gr * xv.data()[c];
                        }
                    }
                });
                self.accumulate(grads, *x, |g| {
                    let gd = g.data_mut();
                    for r in 0..o {
                        let gr = grad.data()[r];
                        if gr == 0.0 {
                            continue;
                        }
                        let row = r * i;
                        for c in 0..i {
                            gd[c] += gr * wv.data()[row + c];
                        }
                    }
                });
            }
            Op::Conv2d {
                x,
                kernels,
                padding,
            } => {
                conv2d_backward(
                    self.value(*x),
                    self.value(*kernels),
                    *padding,
                    grad,
                    self.nodes[x.0].requires_grad,
                    self.nodes[kernels.0].requires_grad,
                )
                .map(|(dx, dk)| {
                    if let Some(dx) = dx {
                        self.accumulate(grads, *x, |g| g.add_scaled(&dx, 1.0).unwrap());
                    }
                    if let Some(dk) = dk {
                        self.accumulate(grads, *kernels, |g| g.add_scaled(&dk, 1.0).unwrap());
                    }
                })?;
            }
            Op::BiasChannels { x, bias } => {
                self.accumulate(grads, *x, |g| g.add_scaled(grad, 1.0).unwrap());
                let shape = self.value(*x).shape().to_vec();
                let (c, hw) = (shape[0], shape[1] * shape[2]);
                self.accumulate(grads, *bias, |g| {
                    let gd = g.data_mut();
                    for ci in 0..c {
                        gd[ci] += grad.data()[ci * hw..(ci + 1) * hw].iter().sum::<f64>();
                    }
                });
            }
            Op::Relu(a) => {
                let xv = self.value(*a).clone();
                self.accumulate(grads, *a, |g| {
                    for ((gi, &gr), &x) in g.data_mut().iter_mut().zip(grad.data()).zip(xv.data()) {
                        if x > 0.0 {
                            *gi += gr;
                        }
                    }
                });
            }
            Op::AvgPool2(a) => {
                let shape = self.value(*a).shape().to_vec();
                let (c, h, w) = (shape[0], shape[1], shape[2]);
                let (oh, ow) = (h / 2, w / 2);
                self.accumulate(grads, *a, |g| {
                    let gd = g.data_mut();
                    for ci in 0..c {
                        for i in 0..oh {
                            for j in 0..ow {
                                let gv = 0.25 * grad.data()[(ci * oh + i) * ow + j];
                                for di in 0..2 {
                                    let row = (ci * h + 2 * i + di) * w + 2 * j;
                                    gd[row] += gv;
                                    gd[row + 1] += gv;
                                }
                            }
                        }
                    }
                });
            }
            Op::Reshape(a) => {
                let shape = self.value(*a).shape().to_vec();
                let back = grad.reshape(&shape)?;
                self.accumulate(grads, *a, |g| g.add_scaled(&back, 1.0).unwrap());
            }
            Op::Sum(a) => {
                let gv = grad.data()[0];
                self.accumulate(grads, *a, |g| {
                    for gi in g.data_mut() {
                        *gi += gv;
                    }
                });
            }
            Op::SoftmaxCrossEntropy {
                logits,
                label,
                probs,
            } => {
                let gv = grad.data()[0];
                let label = *label;
                self.accumulate(grads, *logits, |g| {
                    for (i, (gi, &p)) in g.data_mut().iter_mut().zip(probs).enumerate() {
                        let one_hot = if i == label { 1.0 } else { 0.0 };
                        *gi += gv * (p - one_hot);
                    }
                });
            }
        }
        Ok(())
    }
}

pub(crate) fn matmul_forward(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape().len() != 2 || b.shape().len() != 2 || a.shape()[1] != b.shape()[0] {
        return Err(Error::Dimension(format!(
            "matmul shapes incompatible: {:?} x {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let n = b.shape()[1];
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a.data()[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = p * n;
            let crow = i * n;
            for j in 0..n {
                out[crow + j] += av * b.data()[brow + j];
            }
        }
    }
    Tensor::from_vec(&[m, n], out)
}

pub(crate) fn matvec_forward(w: &Tensor, x: &Tensor) -> Result<Tensor> {
    if w.shape().len() != 2 || x.shape().len() != 1 || w.shape()[1] != x.shape()[0] {
        return Err(Error::Dimension(format!(
            "matvec shapes incompatible: {:?} x {:?}",
            w.shape(),
            x.shape()
        )));
    }
    let (o, i) = (w.shape()[0], w.shape()[1]);
    let mut out = vec![0.0; o];
    for r in 0..o {
        let row = r * i;
        let mut acc = 0.0;
        for c in 0..i {
            acc += w.data()[row + c] * x.data()[c];
        }
        out[r] = acc;
    }
    Tensor::from_vec(&[o], out)
}

struct ConvDims {
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    ph: usize,
    pw: usize,
    oh: usize,
    ow: usize,
}

fn conv_dims(x: &Tensor, kernels: &Tensor, padding: Padding) -> Result<ConvDims> {
    if x.shape().len() != 3 || kernels.shape().len() != 4 {
        return Err(Error::Dimension(format!(
            "conv2d expects CxHxW input and OxCxKhxKw kernels, got {:?} and {:?}",
            x.shape(),
            kernels.shape()
        )));
    }
    let (cin, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (cout, kc, kh, kw) = (
        kernels.shape()[0],
        kernels.shape()[1],
        kernels.shape()[2],
        kernels.shape()[3],
    );
    if kc != cin {
        return Err(Error::Dimension(format!(
            "conv2d channel mismatch: input {:?} vs kernels {:?}",
            x.shape(),
            kernels.shape()
        )));
    }
    let (ph, pw, oh, ow) = match padding {
        Padding::Valid => {
            if kh > h || kw > w {
                return Err(Error::Dimension(format!(
                    "kernel {}x{} larger than input {}x{} under valid padding",
                    kh, kw, h, w
                )));
            }
            (0, 0, h - kh + 1, w - kw + 1)
        }
        Padding::Same => ((kh - 1) / 2, (kw - 1) / 2, h, w),
    };
    Ok(ConvDims {
        cin,
        h,
        w,
        cout,
        kh,
        kw,
        ph,
        pw,
        oh,
        ow,
    })
}

/// Row range `i` such that `0 <= i + a - p < h` and `i < oh`.
fn conv_span(a: usize, p: usize, h: usize, oh: usize) -> (usize, usize) {
    let lo = p.saturating_sub(a);
    let hi = (h + p).saturating_sub(a).min(oh);
    (lo, hi.max(lo))
}

pub(crate) fn conv2d_forward(x: &Tensor, kernels: &Tensor, padding: Padding) -> Result<Tensor> {
    let d = conv_dims(x, kernels, padding)?;
    let mut out = vec![0.0; d.cout * d.oh * d.ow];
    for co in 0..d.cout {
        for ci in 0..d.cin {
            for a in 0..d.kh {
                let (i_lo, i_hi) = conv_span(a, d.ph, d.h, d.oh);
                for b in 0..d.kw {
                    let wv = kernels.data()[((co * d.cin + ci) * d.kh + a) * d.kw + b];
                    if wv == 0.0 {
                        continue;
                    }
                    let (j_lo, j_hi) = conv_span(b, d.pw, d.w, d.ow);
                    for i in i_lo..i_hi {
                        let xbase = (ci * d.h + (i + a - d.ph)) * d.w;
                        let orow = (co * d.oh + i) * d.ow;
                        for j in j_lo..j_hi {
                            out[orow + j] += wv * x.data()[xbase + j + b - d.pw];
                        }
                    }
                }
            }
        }
    }
    Tensor::from_vec(&[d.cout, d.oh, d.ow], out)
}

type ConvGrads = (Option<Tensor>, Option<Tensor>);

fn conv2d_backward(
    x: &Tensor,
    kernels: &Tensor,
    padding: Padding,
    grad: &Tensor,
    need_dx: bool,
    need_dk: bool,
) -> Result<ConvGrads> {
    let d = conv_dims(x, kernels, padding)?;
    let mut dx = if need_dx {
        Some(vec![0.0; x.numel()])
    } else {
        None
    };
    let mut dk = if need_dk {
        Some(vec![0.0; kernels.numel()])
    } else {
        None
    };
    for co in 0..d.cout {
        for ci in 0..d.cin {
            for a in 0..d.kh {
                let (i_lo, i_hi) = conv_span(a, d.ph, d.h, d.oh);
                for b in 0..d.kw {
                    let (j_lo, j_hi) = conv_span(b, d.pw, d.w, d.ow);
                    let kidx = ((co * d.cin + ci) * d.kh + a) * d.kw + b;
                    let wv = kernels.data()[kidx];
                    let mut kacc = 0.0;
                    for i in i_lo..i_hi {
                        let xbase = (ci * d.h + (i + a - d.ph)) * d.w;
                        let orow = (co * d.oh + i) * d.ow;
                        if let Some(dx) = dx.as_mut() {
                            for j in j_lo..j_hi {
                                dx[xbase + j + b - d.pw] += wv * grad.data()[orow + j];
                            }
                        }
                        if dk.is_some() {
                            for j in j_lo..j_hi {
                                kacc += grad.data()[orow + j] * x.data()[xbase + j + b - d.pw];
                            }
                        }
                    }
                    if let Some(dk) = dk.as_mut() {
                        dk[kidx] += kacc;
                    }
                }
            }
        }
    }
    let dx = dx.map(|v| Tensor::from_vec(x.shape(), v)).transpose()?;
    let dk = dk.map(|v| Tensor::from_vec(kernels.shape(), v)).transpose()?;
    Ok((dx, dk))
}

pub(crate) fn avgpool2_forward(x: &Tensor) -> Result<Tensor> {
    if x.shape().len() != 3 {
        return Err(Error::Dimension(format!(
            "avgpool2 expects CxHxW input, got {:?}",
            x.shape()
        )));
    }
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Dimension(format!(
            "avgpool2 requires even spatial dims, got {}x{}",
            h, w
        )));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0; c * oh * ow];
    for ci in 0..c {
        for i in 0..oh {
            for j in 0..ow {
                let r0 = (ci * h + 2 * i) * w + 2 * j;
                let r1 = r0 + w;
                out[(ci * oh + i) * ow + j] =
                    0.25 * (x.data()[r0] + x.data()[r0 + 1] + x.data()[r1] + x.data()[r1 + 1]);
            }
        }
    }
    Tensor::from_vec(&[c, oh, ow], out)
}

pub(crate) fn softmax_cross_entropy_forward(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    let probs: Vec<f64> = exps.iter().map(|&e| e / total).collect();
    let loss = total.ln() - (logits[label] - max);
    (loss, probs)
}

/// Stabilized softmax of a logit slice (shared with the plain forward path).
pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / total).collect()
}

/// Central-difference gradient estimate of a scalar function, elementwise.
pub fn finite_diff_gradient<F>(mut f: F, x: &Tensor, h: f64) -> Result<Tensor>
where
    F: FnMut(&Tensor) -> Result<f64>,
{
    if h <= 0.0 {
        return Err(Error::Config(format!("finite-difference step must be positive, got {h}")));
    }
    let mut grad = Tensor::zeros(x.shape());
    let mut probe = x.clone();
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe)?;
        probe.data_mut()[i] = orig - h;
        let down = f(&probe)?;
        probe.data_mut()[i] = orig;
        grad.data_mut()[i] = (up - down) / (2.0 * h);
    }
    Ok(grad)
}
