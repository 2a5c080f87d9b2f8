use super::gemm::gemm;
use super::loss::{cross_entropy_row, focal_row, FocalLossConfig};
use super::{shape_err, ParamGrads, ParamId, ParamSet, Tensor, TensorError};
use std::collections::HashMap;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    Add(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Relu(usize),
    Sigmoid(usize),
    Tanh(usize),
    Sum(usize),
    Reshape(usize),
    Slice {
        src: usize,
        start: usize,
    },
    Concat(Vec<usize>),
    Mean(Vec<usize>),
    Linear {
        x: usize,
        w: usize,
        b: Option<usize>,
    },
    Conv2d {
        x: usize,
        w: usize,
        b: Option<usize>,
        stride: usize,
        pad: usize,
        kernel: usize,
        cols: Vec<f64>,
    },
    MaxPool {
        x: usize,
        argmax: Vec<usize>,
    },
    /// Scalar loss with its gradient w.r.t. `logits` saved at forward time.
    Loss {
        logits: usize,
        grad: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Option<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Records one forward evaluation for reverse-mode differentiation.
///
/// Nodes are appended in evaluation order, so node indices are already a
/// topological order and the backward pass is a reverse index sweep.
#[derive(Debug)]
pub struct Tape<'p> {
    params: Option<&'p ParamSet>,
    nodes: Vec<Node>,
    consumed: bool,
}

/// Gradients produced by [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    leaves: HashMap<Var, Tensor>,
    params: Option<ParamGrads>,
}

impl Gradients {
    /// Gradient of a leaf created with [`Tape::leaf`].
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.leaves.get(&var)
    }

    pub fn param(&self, id: ParamId) -> Option<&[f64]> {
        self.params.as_ref().map(|p| p.get(id))
    }

    pub fn params(&self) -> Option<&ParamGrads> {
        self.params.as_ref()
    }
}

impl Default for Tape<'static> {
    fn default() -> Self {
        Tape::new()
    }
}

impl Tape<'static> {
    pub fn new() -> Self {
        Tape {
            params: None,
            nodes: Vec::new(),
            consumed: false,
        }
    }
}

impl<'p> Tape<'p> {
    pub fn with_params(params: &'p ParamSet) -> Self {
        Tape {
            params: Some(params),
            nodes: Vec::new(),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        self.val(var.0)
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.val(var.0).shape()
    }

    fn val(&self, idx: usize) -> &Tensor {
        let node = &self.nodes[idx];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => self
                .params
                .expect("param node without parameter set")
                .get(*id),
            _ => unreachable!("node without value"),
        }
    }

    fn push(&mut self, value: Tensor, op: Op, parents: &[usize]) -> Var {
        let requires_grad = parents.iter().any(|&p| self.nodes[p].requires_grad);
        self.nodes.push(Node {
            value: Some(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Differentiable input; its gradient is reported by [`Gradients::get`].
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value: Some(value),
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Non-differentiable input.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value: Some(value),
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Parameter from the borrowed set; frozen parameters receive no gradient.
    pub fn param(&mut self, id: ParamId) -> Var {
        let params = self.params.expect("tape has no parameter set");
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
            requires_grad: params.is_trainable(id),
        });
        Var(self.nodes.len() - 1)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), TensorError> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let src = self.value(a);
        let out = Tensor {
            shape: src.shape.clone(),
            data: src.data.iter().map(|&v| f(v)).collect(),
        };
        self.push(out, op, &[a.0])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.same_shape("add", a, b)?;
        let (x, y) = (self.value(a), self.value(b));
        let out = Tensor {
            shape: x.shape.clone(),
            data: x.data.iter().zip(&y.data).map(|(p, q)| p + q).collect(),
        };
        Ok(self.push(out, Op::Add(a.0, b.0), &[a.0, b.0]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.same_shape("mul", a, b)?;
        let (x, y) = (self.value(a), self.value(b));
        let out = Tensor {
            shape: x.shape.clone(),
            data: x.data.iter().zip(&y.data).map(|(p, q)| p * q).collect(),
        };
        Ok(self.push(out, Op::Mul(a.0, b.0), &[a.0, b.0]))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        self.unary(a, |v| v * factor, Op::Scale(a.0, factor))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |v| v.max(0.0), Op::Relu(a.0))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a.0))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a.0))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let total = self.value(a).data.iter().sum();
        self.push(Tensor::scalar(total), Op::Sum(a.0), &[a.0])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let out = self.value(a).clone().reshape(shape)?;
        Ok(self.push(out, Op::Reshape(a.0), &[a.0]))
    }

    pub fn flatten(&mut self, a: Var) -> Var {
        let n = self.value(a).numel();
        self.reshape(a, &[n]).expect("flatten preserves length")
    }

    /// `len` consecutive values starting at flat offset `start`, as a vector.
    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var, TensorError> {
        let src = self.value(a);
        if start + len > src.numel() {
            return Err(shape_err(
                "slice",
                format!("{start}..{} exceeds length {}", start + len, src.numel()),
            ));
        }
        let out = Tensor::vector(src.data[start..start + len].to_vec());
        Ok(self.push(out, Op::Slice { src: a.0, start }, &[a.0]))
    }

    /// Row `index` of a 2-D value.
    pub fn row(&mut self, a: Var, index: usize) -> Result<Var, TensorError> {
        let shape = self.shape(a);
        if shape.len() != 2 || index >= shape[0] {
            return Err(shape_err("row", format!("row {index} of {shape:?}")));
        }
        let cols = shape[1];
        self.slice(a, index * cols, cols)
    }

    /// Flat concatenation into a vector.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        if parts.is_empty() {
            return Err(shape_err("concat", "no inputs"));
        }
        let mut data = Vec::new();
        for p in parts {
            data.extend_from_slice(&self.value(*p).data);
        }
        let idx: Vec<usize> = parts.iter().map(|v| v.0).collect();
        Ok(self.push(Tensor::vector(data), Op::Concat(idx.clone()), &idx))
    }

    /// Stack equally-shaped values along a new leading axis.
    pub fn stack(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        if parts.is_empty() {
            return Err(shape_err("stack", "no inputs"));
        }
        let inner = self.shape(parts[0]).to_vec();
        for p in parts {
            if self.shape(*p) != inner.as_slice() {
                return Err(shape_err("stack", format!("{:?} vs {inner:?}", self.shape(*p))));
            }
        }
        let flat = self.concat(parts)?;
        let mut shape = vec![parts.len()];
        shape.extend(inner);
        self.reshape(flat, &shape)
    }

    /// Elementwise mean of equally-shaped values.
    pub fn mean(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        if parts.is_empty() {
            return Err(shape_err("mean", "no inputs"));
        }
        for p in &parts[1..] {
            self.same_shape("mean", parts[0], *p)?;
        }
        let first = self.value(parts[0]);
        let mut data = vec![0.0; first.numel()];
        let shape = first.shape.clone();
        for p in parts {
            for (d, v) in data.iter_mut().zip(&self.value(*p).data) {
                *d += v;
            }
        }
        let n = parts.len() as f64;
        data.iter_mut().for_each(|d| *d /= n);
        let idx: Vec<usize> = parts.iter().map(|v| v.0).collect();
        Ok(self.push(Tensor { shape, data }, Op::Mean(idx.clone()), &idx))
    }

    /// Affine map `W x + b` for `x` of shape `[N]`, or row-wise for `[B, N]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var, TensorError> {
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if ws.len() != 2 {
            return Err(shape_err("linear", format!("weight must be 2-D, got {ws:?}")));
        }
        let (m, n) = (ws[0], ws[1]);
        let rows = match xs.as_slice() {
            [k] if *k == n => None,
            [r, k] if *k == n => Some(*r),
            _ => return Err(shape_err("linear", format!("input {xs:?} vs weight {ws:?}"))),
        };
        if let Some(b) = b {
            if self.shape(b) != [m] {
                return Err(shape_err("linear", format!("bias {:?} vs {m} outputs", self.shape(b))));
            }
        }
        let batch = rows.unwrap_or(1);
        let xv = &self.value(x).data;
        let wv = &self.value(w).data;
        let mut out = vec![0.0; batch * m];
        if batch == 1 {
            let nz: Vec<usize> = (0..n).filter(|&j| xv[j] != 0.0).collect();
            for (i, o) in out.iter_mut().enumerate() {
                let row = &wv[i * n..(i + 1) * n];
                *o = nz.iter().map(|&j| row[j] * xv[j]).sum();
            }
        } else {
            gemm(batch, n, m, xv, false, wv, true, &mut out, 0.0);
        }
        if let Some(b) = b {
            let bv = &self.value(b).data;
            for chunk in out.chunks_mut(m) {
                chunk.iter_mut().zip(bv).for_each(|(o, bb)| *o += bb);
            }
        }
        let shape = match rows {
            None => vec![m],
            Some(r) => vec![r, m],
        };
        let mut parents = vec![x.0, w.0];
        parents.extend(b.map(|v| v.0));
        Ok(self.push(
            Tensor { shape, data: out },
            Op::Linear {
                x: x.0,
                w: w.0,
                b: b.map(|v| v.0),
            },
            &parents,
        ))
    }

    /// Cross-correlation of `[C_in, H, W]` with `[C_out, C_in, K, K]` weights.
    ///
    /// Output size per axis is `⌊(H + 2·pad − K) / stride⌋ + 1`.
    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var, TensorError> {
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        let (ci, h, wd) = match xs.as_slice() {
            [c, h, w] => (*c, *h, *w),
            _ => return Err(shape_err("conv2d", format!("input must be [C,H,W], got {xs:?}"))),
        };
        let (co, k) = match ws.as_slice() {
            [o, i, kh, kw] if *i == ci && kh == kw => (*o, *kh),
            _ => {
                return Err(shape_err(
                    "conv2d",
                    format!("weight {ws:?} incompatible with input {xs:?}"),
                ))
            }
        };
        if stride == 0 || h + 2 * pad < k || wd + 2 * pad < k {
            return Err(shape_err(
                "conv2d",
                format!("kernel {k} stride {stride} pad {pad} on {h}x{wd}"),
            ));
        }
        if let Some(b) = b {
            if self.shape(b) != [co] {
                return Err(shape_err("conv2d", format!("bias {:?} vs {co} channels", self.shape(b))));
            }
        }
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (wd + 2 * pad - k) / stride + 1;
        let cols = im2col(&self.value(x).data, ci, h, wd, k, stride, pad, ho, wo);
        let mut out = vec![0.0; co * ho * wo];
        gemm(co, ci * k * k, ho * wo, &self.value(w).data, false, &cols, false, &mut out, 0.0);
        if let Some(b) = b {
            let bv = &self.value(b).data;
            for (c, plane) in out.chunks_mut(ho * wo).enumerate() {
                plane.iter_mut().for_each(|v| *v += bv[c]);
            }
        }
        let mut parents = vec![x.0, w.0];
        parents.extend(b.map(|v| v.0));
        Ok(self.push(
            Tensor {
                shape: vec![co, ho, wo],
                data: out,
            },
            Op::Conv2d {
                x: x.0,
                w: w.0,
                b: b.map(|v| v.0),
                stride,
                pad,
                kernel: k,
                cols,
            },
            &parents,
        ))
    }

    /// Per-window maximum over `[C, H, W]`; ties resolve to the first element.
    pub fn max_pool2d(&mut self, x: Var, kernel: usize, stride: usize) -> Result<Var, TensorError> {
        let xs = self.shape(x).to_vec();
        let (c, h, w) = match xs.as_slice() {
            [c, h, w] if *h >= kernel && *w >= kernel && kernel > 0 && stride > 0 => (*c, *h, *w),
            _ => {
                return Err(shape_err(
                    "max_pool2d",
                    format!("kernel {kernel} stride {stride} on {xs:?}"),
                ))
            }
        };
        let ho = (h - kernel) / stride + 1;
        let wo = (w - kernel) / stride + 1;
        let xv = &self.value(x).data;
        let mut out = Vec::with_capacity(c * ho * wo);
        let mut argmax = Vec::with_capacity(c * ho * wo);
        for ch in 0..c {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = usize::MAX;
                    let mut best_v = f64::NEG_INFINITY;
                    for ky in 0..kernel {
                        for kx in 0..kernel {
                            let idx = (ch * h + oy * stride + ky) * w + ox * stride + kx;
                            if best == usize::MAX || xv[idx] > best_v {
                                best = idx;
                                best_v = xv[idx];
                            }
                        }
                    }
                    out.push(best_v);
                    argmax.push(best);
                }
            }
        }
        Ok(self.push(
            Tensor {
                shape: vec![c, ho, wo],
                data: out,
            },
            Op::MaxPool { x: x.0, argmax },
            &[x.0],
        ))
    }

    fn loss_rows(
        &mut self,
        logits: Var,
        labels: &[usize],
        row_fn: impl Fn(&[f64], usize) -> Result<(f64, Vec<f64>), TensorError>,
    ) -> Result<Var, TensorError> {
        let shape = self.shape(logits).to_vec();
        let classes = *shape.last().unwrap_or(&0);
        let rows = match shape.len() {
            1 => 1,
            2 => shape[0],
            _ => return Err(shape_err("loss", format!("logits must be [K] or [B,K], got {shape:?}"))),
        };
        if labels.len() != rows || rows == 0 {
            return Err(shape_err("loss", format!("{rows} logit rows vs {} labels", labels.len())));
        }
        let data = &self.value(logits).data;
        let mut total = 0.0;
        let mut grad = Vec::with_capacity(data.len());
        let inv = 1.0 / rows as f64;
        for (row, &label) in data.chunks(classes.max(1)).zip(labels) {
            let (l, g) = row_fn(row, label)?;
            total += l;
            grad.extend(g.into_iter().map(|v| v * inv));
        }
        let value = if rows == 1 { total } else { total * inv };
        Ok(self.push(
            Tensor::scalar(value),
            Op::Loss {
                logits: logits.0,
                grad,
            },
            &[logits.0],
        ))
    }

    /// Mean of `-log softmax(logits)[label]` over rows.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var, TensorError> {
        self.loss_rows(logits, labels, cross_entropy_row)
    }

    /// Mean of `-(1 - p_t)^gamma · log p_t` over rows.
    pub fn focal_loss(
        &mut self,
        logits: Var,
        labels: &[usize],
        config: &FocalLossConfig,
    ) -> Result<Var, TensorError> {
        config.validate()?;
        let cfg = *config;
        self.loss_rows(logits, labels, move |row, label| focal_row(row, label, &cfg))
    }

    /// Gradients of a scalar `loss` with fresh parameter gradient buffers.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients, TensorError> {
        let mut acc = match self.params {
            Some(p) => p.zero_grads(),
            None => ParamGrads { grads: Vec::new() },
        };
        let mut grads = self.backward_into(loss, &mut acc)?;
        grads.params = Some(acc);
        Ok(grads)
    }

    /// Like [`Tape::backward`], but adds parameter gradients into `acc`.
    pub fn backward_into(&mut self, loss: Var, acc: &mut ParamGrads) -> Result<Gradients, TensorError> {
        if self.consumed {
            return Err(TensorError::TapeConsumed);
        }
        let loss_value = self.value(loss);
        if loss_value.numel() != 1 {
            return Err(TensorError::NonScalarLoss(loss_value.shape.clone()));
        }
        if let Some(p) = self.params {
            if acc.len() != p.len() {
                return Err(shape_err("backward", "gradient buffers do not match parameter set"));
            }
        }
        self.consumed = true;
        let tape: &Tape = self;
        let mut store = GradStore {
            local: (0..=loss.0).map(|_| None).collect(),
            params: acc,
        };
        let mut leaves = HashMap::new();
        if tape.nodes[loss.0].requires_grad {
            store.local[loss.0] = Some(vec![1.0]);
        }
        for i in (0..=loss.0).rev() {
            let node = &tape.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                let g = store.local[i]
                    .take()
                    .unwrap_or_else(|| vec![0.0; tape.val(i).numel()]);
                let shape = tape.val(i).shape.clone();
                leaves.insert(Var(i), Tensor { shape, data: g });
                continue;
            }
            let Some(g) = store.local[i].take() else {
                continue;
            };
            tape.backprop_node(i, &g, &mut store);
        }
        Ok(Gradients {
            leaves,
            params: None,
        })
    }

    fn backprop_node(&self, i: usize, g: &[f64], store: &mut GradStore<'_>) {
        let nodes = &self.nodes;
        let out = self.val(i);
        match &self.nodes[i].op {
            Op::Leaf | Op::Param(_) => {}
            Op::Add(a, b) => {
                for &p in [a, b] {
                    if let Some(buf) = store.buf(nodes, p, g.len()) {
                        add_into(buf, g);
                    }
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (&self.val(*a).data, &self.val(*b).data);
                if let Some(buf) = store.buf(nodes, *a, g.len()) {
                    for ((d, gv), y) in buf.iter_mut().zip(g).zip(bv) {
                        *d += gv * y;
                    }
                }
                if let Some(buf) = store.buf(nodes, *b, g.len()) {
                    for ((d, gv), x) in buf.iter_mut().zip(g).zip(av) {
                        *d += gv * x;
                    }
                }
            }
            Op::Scale(a, f) => {
                if let Some(buf) = store.buf(nodes, *a, g.len()) {
                    buf.iter_mut().zip(g).for_each(|(d, gv)| *d += gv * f);
                }
            }
            Op::Relu(a) => {
                if let Some(buf) = store.buf(nodes, *a, g.len()) {
                    for ((d, gv), y) in buf.iter_mut().zip(g).zip(&out.data) {
                        if *y > 0.0 {
                            *d += gv;
                        }
                    }
                }
            }
            Op::Sigmoid(a) => {
                if let Some(buf) = store.buf(nodes, *a, g.len()) {
                    for ((d, gv), y) in buf.iter_mut().zip(g).zip(&out.data) {
                        *d += gv * y * (1.0 - y);
                    }
                }
            }
            Op::Tanh(a) => {
                if let Some(buf) = store.buf(nodes, *a, g.len()) {
                    for ((d, gv), y) in buf.iter_mut().zip(g).zip(&out.data) {
                        *d += gv * (1.0 - y * y);
                    }
                }
            }
            Op::Sum(a) => {
                let n = self.val(*a).numel();
                if let Some(buf) = store.buf(nodes, *a, n) {
                    buf.iter_mut().for_each(|d| *d += g[0]);
                }
            }
            Op::Reshape(a) => {
                if let Some(buf) = store.buf(nodes, *a, g.len()) {
                    add_into(buf, g);
                }
            }
            Op::Slice { src, start } => {
                let n = self.val(*src).numel();
                if let Some(buf) = store.buf(nodes, *src, n) {
                    add_into(&mut buf[*start..*start + g.len()], g);
                }
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.val(p).numel();
                    if let Some(buf) = store.buf(nodes, p, n) {
                        add_into(buf, &g[offset..offset + n]);
                    }
                    offset += n;
                }
            }
            Op::Mean(parts) => {
                let inv = 1.0 / parts.len() as f64;
                for &p in parts {
                    if let Some(buf) = store.buf(nodes, p, g.len()) {
                        buf.iter_mut().zip(g).for_each(|(d, gv)| *d += gv * inv);
                    }
                }
            }
            Op::Linear { x, w, b } => self.backprop_linear(*x, *w, *b, g, store),
            Op::Conv2d {
                x,
                w,
                b,
                stride,
                pad,
                kernel,
                cols,
            } => self.backprop_conv(*x, *w, *b, (*stride, *pad, *kernel), cols, out, g, store),
            Op::MaxPool { x, argmax } => {
                let n = self.val(*x).numel();
                if let Some(buf) = store.buf(nodes, *x, n) {
                    for (&src, gv) in argmax.iter().zip(g) {
                        buf[src] += gv;
                    }
                }
            }
            Op::Loss { logits, grad } => {
                if let Some(buf) = store.buf(nodes, *logits, grad.len()) {
                    buf.iter_mut().zip(grad).for_each(|(d, lg)| *d += g[0] * lg);
                }
            }
        }
    }

    fn backprop_linear(&self, x: usize, w: usize, b: Option<usize>, g: &[f64], store: &mut GradStore<'_>) {
        let nodes = &self.nodes;
        let ws = &self.val(w).shape;
        let (m, n) = (ws[0], ws[1]);
        let batch = g.len() / m;
        if let Some(b) = b {
            if let Some(buf) = store.buf(nodes, b, m) {
                for row in g.chunks(m) {
                    add_into(buf, row);
                }
            }
        }
        let xv = &self.val(x).data;
        let wv = &self.val(w).data;
        if let Some(buf) = store.buf(nodes, w, m * n) {
            if batch == 1 {
                let nz: Vec<usize> = (0..n).filter(|&j| xv[j] != 0.0).collect();
                for (i, gi) in g.iter().enumerate() {
                    if *gi == 0.0 {
                        continue;
                    }
                    let row = &mut buf[i * n..(i + 1) * n];
                    for &j in &nz {
                        row[j] += gi * xv[j];
                    }
                }
            } else {
                gemm(m, batch, n, g, true, xv, false, buf, 1.0);
            }
        }
        if let Some(buf) = store.buf(nodes, x, batch * n) {
            gemm(batch, m, n, g, false, wv, false, buf, 1.0);
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn backprop_conv(
        &self,
        x: usize,
        w: usize,
        b: Option<usize>,
        (stride, pad, k): (usize, usize, usize),
        cols: &[f64],
        out: &Tensor,
        g: &[f64],
        store: &mut GradStore<'_>,
    ) {
        let nodes = &self.nodes;
        let (co, ho, wo) = (out.shape[0], out.shape[1], out.shape[2]);
        let xs = &self.val(x).shape;
        let (ci, h, wd) = (xs[0], xs[1], xs[2]);
        let patch = ci * k * k;
        let plane = ho * wo;
        if let Some(b) = b {
            if let Some(buf) = store.buf(nodes, b, co) {
                for (c, gp) in g.chunks(plane).enumerate() {
                    buf[c] += gp.iter().sum::<f64>();
                }
            }
        }
        if let Some(buf) = store.buf(nodes, w, co * patch) {
            gemm(co, plane, patch, g, false, cols, true, buf, 1.0);
        }
        if nodes[x].requires_grad {
            let mut dcols = vec![0.0; patch * plane];
            gemm(patch, co, plane, &self.val(w).data, true, g, false, &mut dcols, 0.0);
            if let Some(buf) = store.buf(nodes, x, ci * h * wd) {
                col2im_add(&dcols, buf, ci, h, wd, k, stride, pad, ho, wo);
            }
        }
    }
}

struct GradStore<'a> {
    local: Vec<Option<Vec<f64>>>,
    params: &'a mut ParamGrads,
}

impl GradStore<'_> {
    fn buf(&mut self, nodes: &[Node], idx: usize, len: usize) -> Option<&mut [f64]> {
        let node = &nodes[idx];
        if !node.requires_grad {
            return None;
        }
        if let Op::Param(id) = node.op {
            return Some(self.params.slot(id.index()).as_mut_slice());
        }
        Some(self.local[idx].get_or_insert_with(|| vec![0.0; len]).as_mut_slice())
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

#[allow(clippy::too_many_arguments)]
fn im2col(
    x: &[f64],
    ci: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
) -> Vec<f64> {
    let mut cols = vec![0.0; ci * k * k * ho * wo];
    for c in 0..ci {
        for ky in 0..k {
            for kx in 0..k {
                let row = ((c * k + ky) * k + kx) * ho * wo;
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = (c * h + iy as usize) * w;
                    let dst = row + oy * wo;
                    for ox in 0..wo {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            cols[dst + ox] = x[src + ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

#[allow(clippy::too_many_arguments)]
fn col2im_add(
    cols: &[f64],
    dx: &mut [f64],
    ci: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
) {
    for c in 0..ci {
        for ky in 0..k {
            for kx in 0..k {
                let row = ((c * k + ky) * k + kx) * ho * wo;
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = (c * h + iy as usize) * w;
                    for ox in 0..wo {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            dx[dst + ix as usize] += cols[row + oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
}
