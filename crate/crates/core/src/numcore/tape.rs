//! Reverse-mode differentiation over a linear record of executed ops.
//!
//! Every op appends one node holding its output value plus whatever it needs
//! for the backward pass. [`Tape::backward`] walks the record in reverse and
//! accumulates vector-Jacobian products into a [`Gradients`] table.

use super::kernels::{self, MatRef};
use super::rng::RngStream;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sum(Var),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Softmax {
        x: Var,
        axis: usize,
    },
    Conv1d {
        x: Var,
        w: Var,
        dilation: usize,
    },
    WeightNorm {
        v: Var,
        g: Var,
        norms: Vec<f64>,
    },
    Dropout {
        x: Var,
        scale: Vec<f64>,
    },
    Gather {
        table: Var,
        ids: Vec<usize>,
        frozen_row: Option<usize>,
    },
    MaxAxis {
        x: Var,
        argmax: Vec<usize>,
    },
    MeanAxis {
        x: Var,
        axis: usize,
    },
    BceLogits {
        logits: Var,
        targets: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Ordered record of a forward computation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every recorded value that needs one.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&[f64]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }

    /// Gradient of `var`, or zeros of length `len` when nothing flowed into it.
    pub fn get_or_zeros(&self, var: Var, len: usize) -> Vec<f64> {
        self.get(var).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; len])
    }
}

/// Describes a softmax/reduction axis as a set of strided lanes.
struct Lanes {
    count: usize,
    len: usize,
    stride: usize,
    outer_stride: usize,
}

impl Lanes {
    fn new(shape: &[usize], axis: usize) -> Result<Self> {
        match (shape, axis) {
            ([n], 0) => Ok(Lanes { count: 1, len: *n, stride: 1, outer_stride: 0 }),
            ([r, c], 0) => Ok(Lanes { count: *c, len: *r, stride: *c, outer_stride: 1 }),
            ([r, c], 1) => Ok(Lanes { count: *r, len: *c, stride: 1, outer_stride: *c }),
            _ => Err(Error::invalid(format!("axis {axis} invalid for shape {shape:?}"))),
        }
    }

    fn index(&self, lane: usize, pos: usize) -> usize {
        lane * self.outer_stride + pos * self.stride
    }
}

fn reduced_shape(shape: &[usize], axis: usize) -> Vec<usize> {
    let mut out: Vec<usize> = shape
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != axis)
        .map(|(_, &d)| d)
        .collect();
    if out.is_empty() {
        out.push(1);
    }
    out
}

fn sigmoid_scalar(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn needs_grad(&self, var: Var) -> bool {
        self.nodes[var.0].needs_grad
    }

    /// Records an input. Gradients are tracked when the tensor's `requires_grad` flag is set.
    pub fn leaf(&mut self, tensor: &Tensor) -> Var {
        let needs_grad = tensor.requires_grad();
        self.push(tensor.detached(), Op::Leaf, needs_grad)
    }

    pub fn constant(&mut self, tensor: Tensor) -> Var {
        self.push(tensor.detached(), Op::Leaf, false)
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (p, q) = self.value(a).dims2()?;
        let (q2, r) = self.value(b).dims2()?;
        if q != q2 {
            return Err(Error::shape(format!("matmul {p}x{q} by {q2}x{r}")));
        }
        let mut out = vec![0.0; p * r];
        kernels::gemm(
            MatRef::row_major(self.value(a).data(), p, q),
            MatRef::row_major(self.value(b).data(), q, r),
            0.0,
            &mut out,
        );
        let value = Tensor::new(&[p, r], out)?;
        let needs = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::MatMul(a, b), needs))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.value(x).dims2()?;
        let src = self.value(x).data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = src[i * c + j];
            }
        }
        let value = Tensor::new(&[c, r], out)?;
        let needs = self.any_grad(&[x]);
        Ok(self.push(value, Op::Transpose(x), needs))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let value = Tensor::new(self.value(a).shape(), data)?;
        let needs = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::Add(a, b), needs))
    }

    /// Adds a length-`c` row to every row of an `r × c` matrix.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (r, c) = self.value(x).dims2()?;
        if self.value(row).numel() != c {
            return Err(Error::shape(format!(
                "row of {} values added to {r}x{c}",
                self.value(row).numel()
            )));
        }
        let bias = self.value(row).data();
        let data = self
            .value(x)
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v + bias[i % c])
            .collect();
        let value = Tensor::new(&[r, c], data)?;
        let needs = self.any_grad(&[x, row]);
        Ok(self.push(value, Op::AddRow(x, row), needs))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let value = Tensor::new(self.value(a).shape(), data)?;
        let needs = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::Mul(a, b), needs))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let value = self.map(x, |v| v * factor);
        let needs = self.any_grad(&[x]);
        self.push(value, Op::Scale(x, factor), needs)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).data().iter().sum();
        let needs = self.any_grad(&[x]);
        self.push(Tensor::scalar(total), Op::Sum(x), needs)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.map(x, |v| v.max(0.0));
        let needs = self.any_grad(&[x]);
        self.push(value, Op::Relu(x), needs)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let value = self.map(x, f64::tanh);
        let needs = self.any_grad(&[x]);
        self.push(value, Op::Tanh(x), needs)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.map(x, sigmoid_scalar);
        let needs = self.any_grad(&[x]);
        self.push(value, Op::Sigmoid(x), needs)
    }

    /// Softmax along `axis` with max subtraction.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.softmax_masked(x, axis, None)
    }

    /// Softmax along `axis`; positions with `mask[pos] == false` receive exactly zero weight.
    pub fn softmax_masked(&mut self, x: Var, axis: usize, mask: Option<&[bool]>) -> Result<Var> {
        let shape = self.value(x).shape().to_vec();
        let lanes = Lanes::new(&shape, axis)?;
        if lanes.len == 0 {
            return Err(Error::invalid("softmax over an empty axis"));
        }
        if let Some(m) = mask {
            if m.len() != lanes.len {
                return Err(Error::shape(format!(
                    "mask of length {} for softmax axis of length {}",
                    m.len(),
                    lanes.len
                )));
            }
            if !m.iter().any(|&b| b) {
                return Err(Error::invalid("softmax mask excludes every position"));
            }
        }
        let keep = |pos: usize| mask.is_none_or(|m| m[pos]);
        let src = self.value(x).data();
        let mut out = vec![0.0; src.len()];
        for lane in 0..lanes.count {
            let mut max = f64::NEG_INFINITY;
            for pos in (0..lanes.len).filter(|&p| keep(p)) {
                max = max.max(src[lanes.index(lane, pos)]);
            }
            let mut total = 0.0;
            for pos in (0..lanes.len).filter(|&p| keep(p)) {
                let idx = lanes.index(lane, pos);
                let e = (src[idx] - max).exp();
                out[idx] = e;
                total += e;
            }
            for pos in (0..lanes.len).filter(|&p| keep(p)) {
                out[lanes.index(lane, pos)] /= total;
            }
        }
        let value = Tensor::new(&shape, out)?;
        let needs = self.any_grad(&[x]);
        Ok(self.push(value, Op::Softmax { x, axis }, needs))
    }

    /// Dilated causal convolution, `x`: n × c_in, `filters`: c_out × c_in × k, result n × c_out.
    ///
    /// `out[s, o] = Σ_c Σ_i filters[o, c, i] · x[s - dilation·i, c]`, with rows before the
    /// start of the sequence treated as zero.
    pub fn conv1d_dilated(&mut self, x: Var, filters: Var, dilation: usize) -> Result<Var> {
        if dilation < 1 {
            return Err(Error::invalid("dilation must be at least 1"));
        }
        let (n, c_in) = self.value(x).dims2()?;
        let (c_out, fc_in, k) = match self.value(filters).shape() {
            &[o, c, k] => (o, c, k),
            s => return Err(Error::shape(format!("filters must be 3-D, got {s:?}"))),
        };
        if k < 1 {
            return Err(Error::invalid("kernel size must be at least 1"));
        }
        if fc_in != c_in {
            return Err(Error::shape(format!(
                "input has {c_in} channels, filters expect {fc_in}"
            )));
        }
        let out = kernels::conv1d_forward(
            self.value(x).data(),
            n,
            c_in,
            self.value(filters).data(),
            c_out,
            k,
            dilation,
        );
        let value = Tensor::new(&[n, c_out], out)?;
        let needs = self.any_grad(&[x, filters]);
        Ok(self.push(value, Op::Conv1d { x, w: filters, dilation }, needs))
    }

    /// Per-output-channel reparameterization `g[o] · v[o] / ‖v[o]‖₂`.
    ///
    /// `v` has the output channel as its leading dimension; `g` holds one gain per channel.
    pub fn weight_norm(&mut self, v: Var, g: Var) -> Result<Var> {
        let shape = self.value(v).shape().to_vec();
        let channels = shape[0];
        if self.value(g).numel() != channels {
            return Err(Error::shape(format!(
                "{} gains for {channels} output channels",
                self.value(g).numel()
            )));
        }
        let per = self.value(v).numel() / channels;
        let vd = self.value(v).data();
        let gd = self.value(g).data();
        let mut norms = Vec::with_capacity(channels);
        let mut out = vec![0.0; vd.len()];
        for o in 0..channels {
            let block = &vd[o * per..(o + 1) * per];
            let norm = block.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm.is_nan() || norm <= 0.0 {
                return Err(Error::DegenerateInput(format!(
                    "weight-norm direction for channel {o} has zero norm"
                )));
            }
            let factor = gd[o] / norm;
            for (dst, src) in out[o * per..(o + 1) * per].iter_mut().zip(block) {
                *dst = factor * src;
            }
            norms.push(norm);
        }
        let value = Tensor::new(&shape, out)?;
        let needs = self.any_grad(&[v, g]);
        Ok(self.push(value, Op::WeightNorm { v, g, norms }, needs))
    }

    /// Inverted dropout. Identity when `training` is false or `rate` is zero.
    pub fn dropout(&mut self, x: Var, rate: f64, training: bool, rng: &mut RngStream) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::invalid(format!("dropout rate {rate} outside [0, 1)")));
        }
        if !training || rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - rate);
        let scale: Vec<f64> = (0..self.value(x).numel())
            .map(|_| if rng.uniform() < rate { 0.0 } else { keep })
            .collect();
        let data = self
            .value(x)
            .data()
            .iter()
            .zip(&scale)
            .map(|(v, s)| v * s)
            .collect();
        let value = Tensor::new(self.value(x).shape(), data)?;
        let needs = self.any_grad(&[x]);
        Ok(self.push(value, Op::Dropout { x, scale }, needs))
    }

    /// Row lookup into a `vocab × dim` table. `frozen_row` never receives gradient.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize], frozen_row: Option<usize>) -> Result<Var> {
        let (rows, dim) = self.value(table).dims2()?;
        if ids.is_empty() {
            return Err(Error::invalid("empty id sequence"));
        }
        let src = self.value(table).data();
        let mut out = Vec::with_capacity(ids.len() * dim);
        for &id in ids {
            if id >= rows {
                return Err(Error::Index(format!("id {id} with table of {rows} rows")));
            }
            out.extend_from_slice(&src[id * dim..(id + 1) * dim]);
        }
        let value = Tensor::new(&[ids.len(), dim], out)?;
        let needs = self.any_grad(&[table]);
        Ok(self.push(
            value,
            Op::Gather {
                table,
                ids: ids.to_vec(),
                frozen_row,
            },
            needs,
        ))
    }

    /// Maximum along `axis`; ties resolve to the lowest index.
    pub fn max_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.value(x).shape().to_vec();
        let lanes = Lanes::new(&shape, axis)?;
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(lanes.count);
        let mut argmax = Vec::with_capacity(lanes.count);
        for lane in 0..lanes.count {
            let mut best = lanes.index(lane, 0);
            for pos in 1..lanes.len {
                let idx = lanes.index(lane, pos);
                if src[idx] > src[best] {
                    best = idx;
                }
            }
            out.push(src[best]);
            argmax.push(best);
        }
        let value = Tensor::new(&reduced_shape(&shape, axis), out)?;
        let needs = self.any_grad(&[x]);
        Ok(self.push(value, Op::MaxAxis { x, argmax }, needs))
    }

    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.value(x).shape().to_vec();
        let lanes = Lanes::new(&shape, axis)?;
        let src = self.value(x).data();
        let out = (0..lanes.count)
            .map(|lane| {
                (0..lanes.len).map(|p| src[lanes.index(lane, p)]).sum::<f64>() / lanes.len as f64
            })
            .collect();
        let value = Tensor::new(&reduced_shape(&shape, axis), out)?;
        let needs = self.any_grad(&[x]);
        Ok(self.push(value, Op::MeanAxis { x, axis }, needs))
    }

    /// Binary cross-entropy summed over coordinates, evaluated from logits.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[f64]) -> Result<Var> {
        let z = self.value(logits).data();
        if z.len() != targets.len() {
            return Err(Error::shape(format!(
                "{} logits for {} targets",
                z.len(),
                targets.len()
            )));
        }
        let loss = z
            .iter()
            .zip(targets)
            .map(|(&z, &y)| z.max(0.0) - z * y + (-z.abs()).exp().ln_1p())
            .sum();
        let needs = self.any_grad(&[logits]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::BceLogits {
                logits,
                targets: targets.to_vec(),
            },
            needs,
        ))
    }

    fn map(&self, x: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let v = self.value(x);
        Tensor::new(v.shape(), v.data().iter().map(|&e| f(e)).collect()).unwrap()
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::shape(format!("{what}: {sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    /// Back-propagates from the scalar `loss` through every recorded op.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if !self.value(loss).is_scalar() {
            return Err(Error::invalid(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(gout) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if node.needs_grad {
                self.backprop_node(node, &gout, &mut grads)?;
            }
            grads[idx] = Some(gout);
        }
        for (g, node) in grads.iter_mut().zip(&self.nodes) {
            if !node.needs_grad {
                *g = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, node: &Node, gout: &[f64], grads: &mut [Option<Vec<f64>>]) -> Result<()> {
        let wants = |v: Var| self.nodes[v.0].needs_grad;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (p, q) = self.value(*a).dims2()?;
                let (_, r) = self.value(*b).dims2()?;
                let go = MatRef::row_major(gout, p, r);
                if wants(*a) {
                    let mut ga = vec![0.0; p * q];
                    kernels::gemm(go, MatRef::row_major(self.value(*b).data(), q, r).t(), 0.0, &mut ga);
                    accumulate(grads, *a, ga);
                }
                if wants(*b) {
                    let mut gb = vec![0.0; q * r];
                    kernels::gemm(MatRef::row_major(self.value(*a).data(), p, q).t(), go, 0.0, &mut gb);
                    accumulate(grads, *b, gb);
                }
            }
            Op::Transpose(x) => {
                let (r, c) = self.value(*x).dims2()?;
                let mut gx = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        gx[i * c + j] = gout[j * r + i];
                    }
                }
                accumulate(grads, *x, gx);
            }
            Op::Add(a, b) => {
                if wants(*a) {
                    accumulate(grads, *a, gout.to_vec());
                }
                if wants(*b) {
                    accumulate(grads, *b, gout.to_vec());
                }
            }
            Op::AddRow(x, row) => {
                if wants(*x) {
                    accumulate(grads, *x, gout.to_vec());
                }
                if wants(*row) {
                    let c = self.value(*row).numel();
                    let mut gr = vec![0.0; c];
                    for (i, g) in gout.iter().enumerate() {
                        gr[i % c] += g;
                    }
                    accumulate(grads, *row, gr);
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                if wants(*a) {
                    accumulate(grads, *a, gout.iter().zip(vb).map(|(g, y)| g * y).collect());
                }
                if wants(*b) {
                    accumulate(grads, *b, gout.iter().zip(va).map(|(g, x)| g * x).collect());
                }
            }
            Op::Scale(x, factor) => {
                accumulate(grads, *x, gout.iter().map(|g| g * factor).collect());
            }
            Op::Sum(x) => {
                accumulate(grads, *x, vec![gout[0]; self.value(*x).numel()]);
            }
            Op::Relu(x) => {
                let gx = gout
                    .iter()
                    .zip(self.value(*x).data())
                    .map(|(g, &v)| if v > 0.0 { *g } else { 0.0 })
                    .collect();
                accumulate(grads, *x, gx);
            }
            Op::Tanh(x) => {
                let gx = gout
                    .iter()
                    .zip(node.value.data())
                    .map(|(g, y)| g * (1.0 - y * y))
                    .collect();
                accumulate(grads, *x, gx);
            }
            Op::Sigmoid(x) => {
                let gx = gout
                    .iter()
                    .zip(node.value.data())
                    .map(|(g, y)| g * y * (1.0 - y))
                    .collect();
                accumulate(grads, *x, gx);
            }
            Op::Softmax { x, axis } => {
                let lanes = Lanes::new(node.value.shape(), *axis)?;
                let y = node.value.data();
                let mut gx = vec![0.0; y.len()];
                for lane in 0..lanes.count {
                    let dot: f64 = (0..lanes.len)
                        .map(|p| {
                            let i = lanes.index(lane, p);
                            gout[i] * y[i]
                        })
                        .sum();
                    for p in 0..lanes.len {
                        let i = lanes.index(lane, p);
                        gx[i] = y[i] * (gout[i] - dot);
                    }
                }
                accumulate(grads, *x, gx);
            }
            Op::Conv1d { x, w, dilation } => {
                let (n, c_in) = self.value(*x).dims2()?;
                let ws = self.value(*w).shape();
                let (c_out, k) = (ws[0], ws[2]);
                let (gx, gw) = kernels::conv1d_backward(
                    self.value(*x).data(),
                    n,
                    c_in,
                    self.value(*w).data(),
                    c_out,
                    k,
                    *dilation,
                    gout,
                    wants(*x),
                    wants(*w),
                );
                if let Some(gx) = gx {
                    accumulate(grads, *x, gx);
                }
                if let Some(gw) = gw {
                    accumulate(grads, *w, gw);
                }
            }
            Op::WeightNorm { v, g, norms } => {
                let vd = self.value(*v).data();
                let gd = self.value(*g).data();
                let channels = norms.len();
                let per = vd.len() / channels;
                let mut gv = vec![0.0; vd.len()];
                let mut gg = vec![0.0; channels];
                for o in 0..channels {
                    let range = o * per..(o + 1) * per;
                    let norm = norms[o];
                    let proj: f64 = vd[range.clone()]
                        .iter()
                        .zip(&gout[range.clone()])
                        .map(|(vi, go)| vi * go)
                        .sum::<f64>()
                        / norm;
                    gg[o] = proj;
                    let factor = gd[o] / norm;
                    for i in range {
                        gv[i] = factor * (gout[i] - vd[i] / norm * proj);
                    }
                }
                if wants(*v) {
                    accumulate(grads, *v, gv);
                }
                if wants(*g) {
                    accumulate(grads, *g, gg);
                }
            }
            Op::Dropout { x, scale } => {
                accumulate(grads, *x, gout.iter().zip(scale).map(|(g, s)| g * s).collect());
            }
            Op::Gather { table, ids, frozen_row } => {
                let (rows, dim) = self.value(*table).dims2()?;
                let mut gt = vec![0.0; rows * dim];
                for (t, &id) in ids.iter().enumerate() {
                    if Some(id) == *frozen_row {
                        continue;
                    }
                    for (dst, src) in gt[id * dim..(id + 1) * dim]
                        .iter_mut()
                        .zip(&gout[t * dim..(t + 1) * dim])
                    {
                        *dst += src;
                    }
                }
                accumulate(grads, *table, gt);
            }
            Op::MaxAxis { x, argmax } => {
                let mut gx = vec![0.0; self.value(*x).numel()];
                for (g, &idx) in gout.iter().zip(argmax) {
                    gx[idx] += g;
                }
                accumulate(grads, *x, gx);
            }
            Op::MeanAxis { x, axis } => {
                let lanes = Lanes::new(self.value(*x).shape(), *axis)?;
                let mut gx = vec![0.0; self.value(*x).numel()];
                for lane in 0..lanes.count {
                    for p in 0..lanes.len {
                        gx[lanes.index(lane, p)] = gout[lane] / lanes.len as f64;
                    }
                }
                accumulate(grads, *x, gx);
            }
            Op::BceLogits { logits, targets } => {
                let gz = self
                    .value(*logits)
                    .data()
                    .iter()
                    .zip(targets)
                    .map(|(&z, &y)| gout[0] * (sigmoid_scalar(z) - y))
                    .collect();
                accumulate(grads, *logits, gz);
            }
        }
        Ok(())
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], var: Var, delta: Vec<f64>) {
    match &mut grads[var.0] {
        Some(existing) => existing.iter_mut().zip(&delta).for_each(|(a, d)| *a += d),
        slot @ None => *slot = Some(delta),
    }
}

/// Numerically stable logistic function.
pub fn sigmoid(z: f64) -> f64 {
    sigmoid_scalar(z)
}
