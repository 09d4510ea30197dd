//! Reverse-mode differentiation over a linear record of tensor operations.
//!
//! A [`Tape`] owns every value produced during a forward pass. Operations
//! append a node holding the output tensor, the ids of the inputs, and
//! whatever forward context the backward rule needs. Because inputs must
//! already exist on the tape, the node list is always in topological order
//! and [`Tape::backward`] is a single reverse sweep.
//!
//! ```
//! use mdfa_core::{Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let x = tape.param(Tensor::vector(vec![1.0, 2.0, 3.0]));
//! let s = tape.sum(x);
//! tape.backward(s).unwrap();
//! assert_eq!(tape.grad(x).unwrap(), &[1.0, 1.0, 1.0]);
//! ```

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{numel, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    MatMul {
        a: Var,
        b: Var,
    },
    Transpose {
        x: Var,
    },
    Conv1d {
        x: Var,
        k: Var,
        b: Option<Var>,
    },
    DsConv1d {
        x: Var,
        depth: Var,
        point: Var,
        b: Option<Var>,
        mid: Vec<f64>,
    },
    Softmax {
        x: Var,
    },
    Relu {
        x: Var,
    },
    Dropout {
        x: Var,
        mask: Vec<f64>,
    },
    Mse {
        pred: Var,
        target: Var,
    },
    Concat {
        xs: Vec<Var>,
        axis: usize,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    Add {
        a: Var,
        b: Var,
    },
    Scale {
        x: Var,
        factor: f64,
    },
    MeanRows {
        x: Var,
    },
    Sum {
        x: Var,
    },
    Reshape {
        x: Var,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Linear { .. } => "linear",
            Op::MatMul { .. } => "matmul",
            Op::Transpose { .. } => "transpose",
            Op::Conv1d { .. } => "conv1d_same",
            Op::DsConv1d { .. } => "depthwise_separable_conv1d",
            Op::Softmax { .. } => "softmax_lastdim",
            Op::Relu { .. } => "relu",
            Op::Dropout { .. } => "dropout",
            Op::Mse { .. } => "mse_loss",
            Op::Concat { .. } => "concat",
            Op::SliceCols { .. } => "slice_cols",
            Op::Add { .. } => "add",
            Op::Scale { .. } => "scale",
            Op::MeanRows { .. } => "mean_rows",
            Op::Sum { .. } => "sum",
            Op::Reshape { .. } => "reshape",
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Linear { x, w, b } | Op::Conv1d { x, k: w, b } => {
                let mut v = vec![*x, *w];
                v.extend(b);
                v
            }
            Op::DsConv1d {
                x, depth, point, b, ..
            } => {
                let mut v = vec![*x, *depth, *point];
                v.extend(b);
                v
            }
            Op::MatMul { a, b } | Op::Add { a, b } => vec![*a, *b],
            Op::Mse { pred, target } => vec![*pred, *target],
            Op::Concat { xs, .. } => xs.clone(),
            Op::Transpose { x }
            | Op::Softmax { x }
            | Op::Relu { x }
            | Op::Dropout { x, .. }
            | Op::SliceCols { x, .. }
            | Op::Scale { x, .. }
            | Op::MeanRows { x }
            | Op::Sum { x }
            | Op::Reshape { x } => vec![*x],
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// One entry of the computation record, as exposed for inspection.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordEntry {
    pub op: &'static str,
    pub inputs: Vec<Var>,
    pub output: Var,
}

#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn dims2(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    match *t.shape() {
        [r, c] => Ok((r, c)),
        _ => Err(Error::dim(op, t.shape(), &[0, 0])),
    }
}

fn check_odd_kernel(op: &'static str, k: usize) -> Result<()> {
    if k % 2 == 0 {
        return Err(Error::Config(format!("{op}: kernel size {k} must be odd")));
    }
    Ok(())
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let requires_grad = match &op {
            Op::Leaf => value.requires_grad(),
            other => other.inputs().iter().any(|v| self.nodes[v.0].requires_grad),
        };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a leaf; gradient tracking follows `tensor.requires_grad()`.
    pub fn leaf(&mut self, tensor: Tensor) -> Var {
        self.push(tensor, Op::Leaf)
    }

    /// Records a leaf that receives gradients.
    pub fn param(&mut self, tensor: Tensor) -> Var {
        self.leaf(tensor.with_requires_grad(true))
    }

    /// Records a leaf that never receives gradients.
    pub fn constant(&mut self, tensor: Tensor) -> Var {
        self.leaf(tensor.with_requires_grad(false))
    }

    /// Copies `x` into a fresh constant leaf, cutting the graph.
    pub fn detach(&mut self, x: Var) -> Var {
        let t = self.value(x).clone();
        self.constant(t)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient of a leaf after [`Tape::backward`].
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad()
    }

    pub fn zero_grads(&mut self) {
        for n in &mut self.nodes {
            n.value.zero_grad();
        }
    }

    pub fn record(&self) -> Vec<RecordEntry> {
        self.nodes
            .iter()
            .enumerate()
            .map(|(i, n)| RecordEntry {
                op: n.op.name(),
                inputs: n.op.inputs(),
                output: Var(i),
            })
            .collect()
    }

    /// `x[N×Din] · w[Din×Dout] + b[Dout]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (n, din) = dims2("linear", self.value(x))?;
        let (win, dout) = dims2("linear", self.value(w))?;
        if din != win {
            return Err(Error::dim("linear", self.shape(x), self.shape(w)));
        }
        if let Some(b) = b {
            if self.shape(b) != [dout] {
                return Err(Error::dim("linear", self.shape(w), self.shape(b)));
            }
        }
        let mut out = vec![0.0; n * dout];
        matmul_into(
            self.value(x).data(),
            self.value(w).data(),
            &mut out,
            n,
            din,
            dout,
        );
        if let Some(b) = b {
            let bias = self.value(b).data();
            for row in out.chunks_mut(dout) {
                for (o, bj) in row.iter_mut().zip(bias) {
                    *o += bj;
                }
            }
        }
        Ok(self.push(Tensor::new(vec![n, dout], out)?, Op::Linear { x, w, b }))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, k) = dims2("matmul", self.value(a))?;
        let (k2, m) = dims2("matmul", self.value(b))?;
        if k != k2 {
            return Err(Error::dim("matmul", self.shape(a), self.shape(b)));
        }
        let mut out = vec![0.0; n * m];
        matmul_into(
            self.value(a).data(),
            self.value(b).data(),
            &mut out,
            n,
            k,
            m,
        );
        Ok(self.push(Tensor::new(vec![n, m], out)?, Op::MatMul { a, b }))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (r, c) = dims2("transpose", self.value(x))?;
        let out = transpose_data(self.value(x).data(), r, c);
        Ok(self.push(Tensor::new(vec![c, r], out)?, Op::Transpose { x }))
    }

    /// Same-length zero-padded cross-correlation.
    ///
    /// `x[Cin×T]`, `k[Cout×Cin×K]` with odd `K`, optional `b[Cout]`.
    pub fn conv1d_same(&mut self, x: Var, k: Var, b: Option<Var>) -> Result<Var> {
        let (cin, t) = dims2("conv1d_same", self.value(x))?;
        let &[cout, kin, ks] = self.shape(k) else {
            return Err(Error::dim("conv1d_same", self.shape(x), self.shape(k)));
        };
        check_odd_kernel("conv1d_same", ks)?;
        if t == 0 {
            return Err(Error::EmptyInput { op: "conv1d_same" });
        }
        if kin != cin {
            return Err(Error::dim("conv1d_same", self.shape(x), self.shape(k)));
        }
        if let Some(b) = b {
            if self.shape(b) != [cout] {
                return Err(Error::dim("conv1d_same", self.shape(k), self.shape(b)));
            }
        }
        let xd = self.value(x).data();
        let kd = self.value(k).data();
        let pad = ks / 2;
        let mut out = vec![0.0; cout * t];
        for o in 0..cout {
            let orow = &mut out[o * t..(o + 1) * t];
            if let Some(b) = b {
                orow.fill(self.nodes[b.0].value.data()[o]);
            }
            for c in 0..cin {
                let xrow = &xd[c * t..(c + 1) * t];
                let krow = &kd[(o * cin + c) * ks..(o * cin + c + 1) * ks];
                for (j, &kv) in krow.iter().enumerate() {
                    // output position s reads input s + j - pad
                    let (lo, hi) = valid_range(t, j, pad);
                    for s in lo..hi {
                        orow[s] += kv * xrow[s + j - pad];
                    }
                }
            }
        }
        Ok(self.push(Tensor::new(vec![cout, t], out)?, Op::Conv1d { x, k, b }))
    }

    /// Per-channel convolution with `depth[C×K]` followed by pointwise
    /// mixing with `point[C×C]` (row = output channel) and bias `b[C]`.
    pub fn depthwise_separable_conv1d(
        &mut self,
        x: Var,
        depth: Var,
        point: Var,
        b: Option<Var>,
    ) -> Result<Var> {
        const OP: &str = "depthwise_separable_conv1d";
        let (c, t) = dims2(OP, self.value(x))?;
        let (dc, ks) = dims2(OP, self.value(depth))?;
        check_odd_kernel(OP, ks)?;
        if t == 0 {
            return Err(Error::EmptyInput { op: OP });
        }
        if dc != c {
            return Err(Error::dim(OP, self.shape(x), self.shape(depth)));
        }
        if self.shape(point) != [c, c] {
            return Err(Error::dim(OP, self.shape(x), self.shape(point)));
        }
        if let Some(b) = b {
            if self.shape(b) != [c] {
                return Err(Error::dim(OP, self.shape(x), self.shape(b)));
            }
        }
        let xd = self.value(x).data();
        let dd = self.value(depth).data();
        let pad = ks / 2;
        let mut mid = vec![0.0; c * t];
        for ch in 0..c {
            let xrow = &xd[ch * t..(ch + 1) * t];
            let mrow = &mut mid[ch * t..(ch + 1) * t];
            for (j, &kv) in dd[ch * ks..(ch + 1) * ks].iter().enumerate() {
                let (lo, hi) = valid_range(t, j, pad);
                for s in lo..hi {
                    mrow[s] += kv * xrow[s + j - pad];
                }
            }
        }
        let mut out = vec![0.0; c * t];
        matmul_into(self.value(point).data(), &mid, &mut out, c, c, t);
        if let Some(b) = b {
            let bias = self.value(b).data();
            for (row, bv) in out.chunks_mut(t).zip(bias) {
                row.iter_mut().for_each(|v| *v += bv);
            }
        }
        Ok(self.push(
            Tensor::new(vec![c, t], out)?,
            Op::DsConv1d {
                x,
                depth,
                point,
                b,
                mid,
            },
        ))
    }

    /// Numerically stable softmax over the last dimension.
    pub fn softmax_lastdim(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let m = *shape.last().ok_or(Error::EmptyInput {
            op: "softmax_lastdim",
        })?;
        if m == 0 {
            return Err(Error::EmptyInput {
                op: "softmax_lastdim",
            });
        }
        let mut out = self.value(x).data().to_vec();
        for row in out.chunks_mut(m) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            row.iter_mut().for_each(|v| *v /= sum);
        }
        Ok(self.push(Tensor::new(shape, out)?, Op::Softmax { x }))
    }

    /// Elementwise ReLU.
    pub fn relu(&mut self, x: Var) -> Var {
        let t = self.value(x);
        // NaN passes through so a poisoned input still surfaces in the loss.
        let out: Vec<f64> = t
            .data()
            .iter()
            .map(|&v| if v < 0.0 { 0.0 } else { v })
            .collect();
        let value = Tensor::new(t.shape().to_vec(), out).expect("same shape");
        self.push(value, Op::Relu { x })
    }

    /// Inverted dropout. Identity when `!training` or `p == 0`.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        x: Var,
        p: f64,
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Config(format!(
                "dropout probability {p} not in [0, 1)"
            )));
        }
        if !training || p == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - p);
        let t = self.value(x);
        let mask: Vec<f64> = (0..t.len())
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        let out = t.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let value = Tensor::new(t.shape().to_vec(), out)?;
        Ok(self.push(value, Op::Dropout { x, mask }))
    }

    /// Mean squared error between equal-length tensors; scalar output.
    pub fn mse_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (p, t) = (self.value(pred), self.value(target));
        if p.len() != t.len() {
            return Err(Error::dim("mse_loss", p.shape(), t.shape()));
        }
        if p.is_empty() {
            return Err(Error::EmptyInput { op: "mse_loss" });
        }
        let sse: f64 = p
            .data()
            .iter()
            .zip(t.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        let value = Tensor::scalar(sse / p.len() as f64);
        Ok(self.push(value, Op::Mse { pred, target }))
    }

    /// Concatenates along `axis`. Axis 0 works for any rank; axis 1 needs
    /// 2-D inputs.
    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = *xs.first().ok_or(Error::EmptyInput { op: "concat" })?;
        let base = self.shape(first).to_vec();
        if axis >= base.len() || axis > 1 || (axis == 1 && base.len() != 2) {
            return Err(Error::Usage(format!(
                "concat along axis {axis} of shape {base:?}"
            )));
        }
        let mut total = 0;
        for &v in xs {
            let s = self.shape(v);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return Err(Error::dim("concat", &base, s));
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let mut out = Vec::with_capacity(numel(&shape));
        if axis == 0 {
            for &v in xs {
                out.extend_from_slice(self.value(v).data());
            }
        } else {
            for r in 0..base[0] {
                for &v in xs {
                    let c = self.shape(v)[1];
                    out.extend_from_slice(&self.value(v).data()[r * c..(r + 1) * c]);
                }
            }
        }
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::Concat {
                xs: xs.to_vec(),
                axis,
            },
        ))
    }

    /// Channel-stacks `[Ci×T]` tensors into `[(ΣCi)×T]`.
    pub fn concat_channels(&mut self, xs: &[Var]) -> Result<Var> {
        for &v in xs {
            dims2("concat_channels", self.value(v))?;
        }
        self.concat(xs, 0)
    }

    /// Columns `start..start+len` of a 2-D tensor.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = dims2("slice_cols", self.value(x))?;
        if start + len > c {
            return Err(Error::dim("slice_cols", &[r, c], &[start, len]));
        }
        let d = self.value(x).data();
        let out: Vec<f64> = (0..r)
            .flat_map(|i| d[i * c + start..i * c + start + len].iter().copied())
            .collect();
        Ok(self.push(Tensor::new(vec![r, len], out)?, Op::SliceCols { x, start }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim("add", self.shape(a), self.shape(b)));
        }
        let out = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let value = Tensor::new(self.shape(a).to_vec(), out)?;
        Ok(self.push(value, Op::Add { a, b }))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let t = self.value(x);
        let out = t.data().iter().map(|v| v * factor).collect();
        let value = Tensor::new(t.shape().to_vec(), out).expect("same shape");
        self.push(value, Op::Scale { x, factor })
    }

    /// Mean over the rows of `[T×D]`, giving `[D]`.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let (r, c) = dims2("mean_rows", self.value(x))?;
        if r == 0 {
            return Err(Error::EmptyInput { op: "mean_rows" });
        }
        let mut out = vec![0.0; c];
        for row in self.value(x).data().chunks(c) {
            out.iter_mut().zip(row).for_each(|(o, v)| *o += v);
        }
        out.iter_mut().for_each(|o| *o /= r as f64);
        Ok(self.push(Tensor::vector(out), Op::MeanRows { x }))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum { x })
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshaped(shape.to_vec())?;
        Ok(self.push(value.with_requires_grad(false), Op::Reshape { x }))
    }

    /// Back-propagates from a one-element `loss`, accumulating into the
    /// `grad` slot of every leaf that requires gradients. Leaves the loss
    /// does not depend on receive zeros.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if matches!(self.nodes[i].op, Op::Leaf) {
                grads[i] = Some(g);
                continue;
            }
            self.backprop_node(i, &g, &mut grads);
        }
        for (i, node) in self.nodes.iter_mut().enumerate() {
            if !matches!(node.op, Op::Leaf) || !node.value.requires_grad() {
                continue;
            }
            let n = node.value.len();
            let mut acc = node
                .value
                .grad()
                .map_or_else(|| vec![0.0; n], <[f64]>::to_vec);
            if let Some(Some(g)) = grads.get(i) {
                acc.iter_mut().zip(g).for_each(|(a, b)| *a += b);
            }
            node.value.set_grad(acc)?;
        }
        Ok(())
    }

    fn backprop_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let needs = |v: Var| nodes[v.0].requires_grad;
        macro_rules! slot {
            ($v:expr) => {
                grad_slot(grads, nodes, $v)
            };
        }
        let val = |v: Var| nodes[v.0].value.data();
        let shp = |v: Var| nodes[v.0].value.shape();
        match &nodes[i].op {
            Op::Leaf => {}
            Op::Linear { x, w, b } => {
                let (n, din) = (shp(*x)[0], shp(*x)[1]);
                let dout = shp(*w)[1];
                if needs(*x) {
                    matmul_bt_acc(g, val(*w), slot!(*x), n, dout, din);
                }
                if needs(*w) {
                    matmul_at_acc(val(*x), g, slot!(*w), n, din, dout);
                }
                if let Some(b) = b.filter(|b| needs(*b)) {
                    let gb = slot!(b);
                    for row in g.chunks(dout) {
                        gb.iter_mut().zip(row).for_each(|(a, v)| *a += v);
                    }
                }
            }
            Op::MatMul { a, b } => {
                let (n, k) = (shp(*a)[0], shp(*a)[1]);
                let m = shp(*b)[1];
                if needs(*a) {
                    matmul_bt_acc(g, val(*b), slot!(*a), n, m, k);
                }
                if needs(*b) {
                    matmul_at_acc(val(*a), g, slot!(*b), n, k, m);
                }
            }
            Op::Transpose { x } => {
                let (r, c) = (shp(*x)[0], shp(*x)[1]);
                let gx = slot!(*x);
                for i in 0..r {
                    for j in 0..c {
                        gx[i * c + j] += g[j * r + i];
                    }
                }
            }
            Op::Conv1d { x, k, b } => {
                let (cin, t) = (shp(*x)[0], shp(*x)[1]);
                let (cout, ks) = (shp(*k)[0], shp(*k)[2]);
                let pad = ks / 2;
                if needs(*x) {
                    let kd = val(*k);
                    let gx = slot!(*x);
                    for o in 0..cout {
                        let grow = &g[o * t..(o + 1) * t];
                        for c in 0..cin {
                            let gxr = &mut gx[c * t..(c + 1) * t];
                            for j in 0..ks {
                                let kv = kd[(o * cin + c) * ks + j];
                                let (lo, hi) = valid_range(t, j, pad);
                                for s in lo..hi {
                                    gxr[s + j - pad] += kv * grow[s];
                                }
                            }
                        }
                    }
                }
                if needs(*k) {
                    let xd = val(*x);
                    let gk = slot!(*k);
                    for o in 0..cout {
                        let grow = &g[o * t..(o + 1) * t];
                        for c in 0..cin {
                            let xr = &xd[c * t..(c + 1) * t];
                            for j in 0..ks {
                                let (lo, hi) = valid_range(t, j, pad);
                                let acc: f64 = (lo..hi).map(|s| xr[s + j - pad] * grow[s]).sum();
                                gk[(o * cin + c) * ks + j] += acc;
                            }
                        }
                    }
                }
                if let Some(b) = b.filter(|b| needs(*b)) {
                    let gb = slot!(b);
                    for (o, row) in g.chunks(t).enumerate() {
                        gb[o] += row.iter().sum::<f64>();
                    }
                }
            }
            Op::DsConv1d {
                x,
                depth,
                point,
                b,
                mid,
            } => {
                let (c, t) = (shp(*x)[0], shp(*x)[1]);
                let ks = shp(*depth)[1];
                let pad = ks / 2;
                if let Some(b) = b.filter(|b| needs(*b)) {
                    let gb = slot!(b);
                    for (o, row) in g.chunks(t).enumerate() {
                        gb[o] += row.iter().sum::<f64>();
                    }
                }
                if needs(*point) {
                    // d point[o,c] = Σ_t g[o,t] mid[c,t]
                    matmul_bt_acc(g, mid, slot!(*point), c, t, c);
                }
                if needs(*x) || needs(*depth) {
                    let mut gmid = vec![0.0; c * t];
                    matmul_at_acc(val(*point), g, &mut gmid, c, c, t);
                    if needs(*x) {
                        let dd = val(*depth);
                        let gx = slot!(*x);
                        for ch in 0..c {
                            for j in 0..ks {
                                let kv = dd[ch * ks + j];
                                let (lo, hi) = valid_range(t, j, pad);
                                for s in lo..hi {
                                    gx[ch * t + s + j - pad] += kv * gmid[ch * t + s];
                                }
                            }
                        }
                    }
                    if needs(*depth) {
                        let xd = val(*x);
                        let gd = slot!(*depth);
                        for ch in 0..c {
                            for j in 0..ks {
                                let (lo, hi) = valid_range(t, j, pad);
                                let acc: f64 = (lo..hi)
                                    .map(|s| xd[ch * t + s + j - pad] * gmid[ch * t + s])
                                    .sum();
                                gd[ch * ks + j] += acc;
                            }
                        }
                    }
                }
            }
            Op::Softmax { x } => {
                let y = nodes[i].value.data();
                let m = *nodes[i].value.shape().last().expect("rank >= 1");
                let gx = slot!(*x);
                for ((yr, gr), gxr) in y.chunks(m).zip(g.chunks(m)).zip(gx.chunks_mut(m)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for ((o, yv), gv) in gxr.iter_mut().zip(yr).zip(gr) {
                        *o += yv * (gv - dot);
                    }
                }
            }
            Op::Relu { x } => {
                let xd = val(*x);
                let gx = slot!(*x);
                for ((o, xv), gv) in gx.iter_mut().zip(xd).zip(g) {
                    if *xv > 0.0 {
                        *o += gv;
                    }
                }
            }
            Op::Dropout { x, mask } => {
                let gx = slot!(*x);
                for ((o, m), gv) in gx.iter_mut().zip(mask).zip(g) {
                    *o += m * gv;
                }
            }
            Op::Mse { pred, target } => {
                let n = val(*pred).len() as f64;
                let scale = 2.0 * g[0] / n;
                let resid: Vec<f64> = val(*pred)
                    .iter()
                    .zip(val(*target))
                    .map(|(p, t)| scale * (p - t))
                    .collect();
                if needs(*pred) {
                    slot!(*pred)
                        .iter_mut()
                        .zip(&resid)
                        .for_each(|(o, r)| *o += r);
                }
                if needs(*target) {
                    slot!(*target)
                        .iter_mut()
                        .zip(&resid)
                        .for_each(|(o, r)| *o -= r);
                }
            }
            Op::Concat { xs, axis } => {
                if *axis == 0 {
                    let mut off = 0;
                    for &v in xs {
                        let n = nodes[v.0].value.len();
                        if needs(v) {
                            slot!(v)
                                .iter_mut()
                                .zip(&g[off..off + n])
                                .for_each(|(o, x)| *o += x);
                        }
                        off += n;
                    }
                } else {
                    let rows = shp(xs[0])[0];
                    let total: usize = xs.iter().map(|v| shp(*v)[1]).sum();
                    let mut col = 0;
                    for &v in xs {
                        let c = shp(v)[1];
                        if needs(v) {
                            let gv = slot!(v);
                            for r in 0..rows {
                                let src = &g[r * total + col..r * total + col + c];
                                gv[r * c..(r + 1) * c]
                                    .iter_mut()
                                    .zip(src)
                                    .for_each(|(o, x)| *o += x);
                            }
                        }
                        col += c;
                    }
                }
            }
            Op::SliceCols { x, start } => {
                let c = shp(*x)[1];
                let len = nodes[i].value.shape()[1];
                let gx = slot!(*x);
                for (r, row) in g.chunks(len).enumerate() {
                    gx[r * c + start..r * c + start + len]
                        .iter_mut()
                        .zip(row)
                        .for_each(|(o, v)| *o += v);
                }
            }
            Op::Add { a, b } => {
                for v in [*a, *b] {
                    if needs(v) {
                        slot!(v).iter_mut().zip(g).for_each(|(o, x)| *o += x);
                    }
                }
            }
            Op::Scale { x, factor } => {
                slot!(*x)
                    .iter_mut()
                    .zip(g)
                    .for_each(|(o, v)| *o += factor * v);
            }
            Op::MeanRows { x } => {
                let (r, c) = (shp(*x)[0], shp(*x)[1]);
                let inv = 1.0 / r as f64;
                let gx = slot!(*x);
                for row in gx.chunks_mut(c) {
                    row.iter_mut().zip(g).for_each(|(o, v)| *o += v * inv);
                }
            }
            Op::Sum { x } => {
                slot!(*x).iter_mut().for_each(|o| *o += g[0]);
            }
            Op::Reshape { x } => {
                slot!(*x).iter_mut().zip(g).for_each(|(o, v)| *o += v);
            }
        }
    }
}

fn grad_slot<'a>(grads: &'a mut [Option<Vec<f64>>], nodes: &[Node], v: Var) -> &'a mut Vec<f64> {
    let n = nodes[v.0].value.len();
    grads[v.0].get_or_insert_with(|| vec![0.0; n])
}

/// Output positions `s` whose input index `s + j - pad` lies in `0..t`.
#[inline]
fn valid_range(t: usize, j: usize, pad: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(j);
    let hi = (t + pad).saturating_sub(j).min(t);
    (lo, hi.max(lo))
}

/// `out[n×m] = a[n×k] · b[k×m]`.
fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let orow = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * m..(p + 1) * m];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `out[n×k] += g[n×m] · b[k×m]ᵀ`.
fn matmul_bt_acc(g: &[f64], b: &[f64], out: &mut [f64], n: usize, m: usize, k: usize) {
    for i in 0..n {
        let grow = &g[i * m..(i + 1) * m];
        for p in 0..k {
            let brow = &b[p * m..(p + 1) * m];
            out[i * k + p] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

/// `out[k×m] += a[n×k]ᵀ · g[n×m]`.
fn matmul_at_acc(a: &[f64], g: &[f64], out: &mut [f64], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let grow = &g[i * m..(i + 1) * m];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[p * m..(p + 1) * m];
            for (o, gv) in orow.iter_mut().zip(grow) {
                *o += av * gv;
            }
        }
    }
}

fn transpose_data(d: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = d[i * c + j];
        }
    }
    out
}
