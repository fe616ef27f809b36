use std::ops::Range;

use super::Tensor;
use crate::error::{invalid, Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// How a squared-error loss reduces over its elements.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    Mean,
    Sum,
}

/// Operation selector for [`Graph::apply`].
///
/// Broadcasting and contraction rules:
/// - `MatMul`: `[m, k] x [k, n] -> [m, n]`.
/// - `Add`: equal shapes, or a `[1, n]` right operand added to every row of
///   an `[m, n]` left operand.
/// - `Sub`: equal shapes.
/// - `Concat`: rank-2 inputs joined along `axis` (0 = rows, 1 = columns).
/// - `Reshape`: any shape with the same element count.
/// - `Softmax`/`LogSoftmax`: normalized over the last axis.
/// - `Slice`: rank-2 sub-block.
/// - `Gather`: picks one column per row of an `[m, c]` input, giving `[m, 1]`.
/// - `SquaredError`: `(pred, target)` of equal shape, reduced to `[1, 1]`.
/// - `Sum`: all elements to `[1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub enum OpKind {
    MatMul,
    Add,
    Sub,
    Concat { axis: usize },
    Reshape(Vec<usize>),
    Transpose,
    Scale(f64),
    Slice { rows: Range<usize>, cols: Range<usize> },
    Gather(Vec<usize>),
    Abs,
    Elu,
    Relu,
    Softmax,
    LogSoftmax,
    SquaredError(Reduction),
    Sum,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add { lhs: Var, rhs: Var, broadcast: bool },
    Sub(Var, Var),
    Concat { inputs: Vec<Var>, axis: usize },
    Reshape(Var),
    Transpose(Var),
    Scale(Var, f64),
    Slice { input: Var, rows: Range<usize>, cols: Range<usize> },
    Gather { input: Var, index: Vec<usize> },
    Abs(Var),
    Elu(Var),
    Relu(Var),
    Softmax(Var),
    LogSoftmax(Var),
    SquaredError { pred: Var, target: Var, reduction: Reduction },
    Sum(Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Add { .. } => "add",
            Op::Sub(..) => "sub",
            Op::Concat { .. } => "concat",
            Op::Reshape(_) => "reshape",
            Op::Transpose(_) => "transpose",
            Op::Scale(..) => "scale",
            Op::Slice { .. } => "slice",
            Op::Gather { .. } => "gather",
            Op::Abs(_) => "abs",
            Op::Elu(_) => "elu",
            Op::Relu(_) => "relu",
            Op::Softmax(_) => "softmax",
            Op::LogSoftmax(_) => "log_softmax",
            Op::SquaredError { .. } => "squared_error",
            Op::Sum(_) => "sum",
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Tape of tensor operations supporting reverse-mode differentiation.
///
/// Nodes are appended in evaluation order, so the node list is already
/// topologically sorted. Gradients of leaves accumulate across
/// [`Graph::backward`] calls until [`Graph::zero_grad`].
#[derive(Debug, Default, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
    leaf_grads: Vec<Option<Tensor>>,
}

fn rank2(t: &Tensor, op: &'static str) -> Result<(usize, usize)> {
    if t.is_matrix() {
        Ok((t.shape()[0], t.shape()[1]))
    } else {
        invalid(format!("{op} expects a rank-2 tensor, got {:?}", t.shape()))
    }
}

fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Trainable leaf; gradients are accumulated for it.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, true)
    }

    /// Constant leaf; no gradient is tracked.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, false)
    }

    fn push_leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        self.leaf_grads.push(None);
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Accumulated gradient of a trainable leaf, if backward has reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.leaf_grads[v.0].as_ref()
    }

    pub fn zero_grad(&mut self) {
        for g in &mut self.leaf_grads {
            *g = None;
        }
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("op `{}`", op.name())));
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.leaf_grads.push(None);
        Ok(Var(self.nodes.len() - 1))
    }

    /// Generic entry point dispatching on `kind`.
    pub fn apply(&mut self, kind: OpKind, inputs: &[Var]) -> Result<Var> {
        let arity = |n: usize| -> Result<()> {
            if inputs.len() == n {
                Ok(())
            } else {
                invalid(format!("{kind:?} takes {n} inputs, got {}", inputs.len()))
            }
        };
        match kind {
            OpKind::MatMul => {
                arity(2)?;
                self.matmul(inputs[0], inputs[1])
            }
            OpKind::Add => {
                arity(2)?;
                self.add(inputs[0], inputs[1])
            }
            OpKind::Sub => {
                arity(2)?;
                self.sub(inputs[0], inputs[1])
            }
            OpKind::Concat { axis } => self.concat(inputs, axis),
            OpKind::Reshape(ref shape) => {
                arity(1)?;
                self.reshape(inputs[0], shape)
            }
            OpKind::Transpose => {
                arity(1)?;
                self.transpose(inputs[0])
            }
            OpKind::Scale(c) => {
                arity(1)?;
                self.scale(inputs[0], c)
            }
            OpKind::Slice { ref rows, ref cols } => {
                arity(1)?;
                self.slice(inputs[0], rows.clone(), cols.clone())
            }
            OpKind::Gather(ref index) => {
                arity(1)?;
                self.gather(inputs[0], index)
            }
            OpKind::Abs => {
                arity(1)?;
                self.abs(inputs[0])
            }
            OpKind::Elu => {
                arity(1)?;
                self.elu(inputs[0])
            }
            OpKind::Relu => {
                arity(1)?;
                self.relu(inputs[0])
            }
            OpKind::Softmax => {
                arity(1)?;
                self.softmax(inputs[0])
            }
            OpKind::LogSoftmax => {
                arity(1)?;
                self.log_softmax(inputs[0])
            }
            OpKind::SquaredError(reduction) => {
                arity(2)?;
                self.squared_error(inputs[0], inputs[1], reduction)
            }
            OpKind::Sum => {
                arity(1)?;
                self.sum(inputs[0])
            }
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, k) = rank2(av, "matmul")?;
        let (k2, n) = rank2(bv, "matmul")?;
        if k != k2 {
            return Err(Error::Shape {
                op: "matmul",
                lhs: av.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            });
        }
        let (ad, bd) = (av.data(), bv.data());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let orow = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let x = ad[i * k + p];
                if x == 0.0 {
                    continue;
                }
                let brow = &bd[p * n..(p + 1) * n];
                for (o, &y) in orow.iter_mut().zip(brow) {
                    *o += x * y;
                }
            }
        }
        self.push(Tensor::from_parts(vec![m, n], out), Op::MatMul(a, b), &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() == bv.shape() {
            let data = av.data().iter().zip(bv.data()).map(|(x, y)| x + y).collect();
            let t = Tensor::from_parts(av.shape().to_vec(), data);
            return self.push(t, Op::Add { lhs: a, rhs: b, broadcast: false }, &[a, b]);
        }
        if av.is_matrix() && bv.shape() == [1, av.shape()[1]] {
            let n = av.shape()[1];
            let mut data = av.data().to_vec();
            for row in data.chunks_mut(n) {
                for (x, y) in row.iter_mut().zip(bv.data()) {
                    *x += y;
                }
            }
            let t = Tensor::from_parts(av.shape().to_vec(), data);
            return self.push(t, Op::Add { lhs: a, rhs: b, broadcast: true }, &[a, b]);
        }
        Err(Error::Shape {
            op: "add",
            lhs: av.shape().to_vec(),
            rhs: bv.shape().to_vec(),
        })
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::Shape {
                op: "sub",
                lhs: av.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            });
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x - y).collect();
        let t = Tensor::from_parts(av.shape().to_vec(), data);
        self.push(t, Op::Sub(a, b), &[a, b])
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let Some(&first) = inputs.first() else {
            return invalid("concat of zero tensors");
        };
        if axis > 1 {
            return invalid(format!("concat axis {axis} out of range for rank-2 tensors"));
        }
        let (r0, c0) = rank2(self.value(first), "concat")?;
        let mut total = 0;
        for &v in inputs {
            let (r, c) = rank2(self.value(v), "concat")?;
            let ok = if axis == 0 { c == c0 } else { r == r0 };
            if !ok {
                return Err(Error::Shape {
                    op: "concat",
                    lhs: self.value(first).shape().to_vec(),
                    rhs: self.value(v).shape().to_vec(),
                });
            }
            total += if axis == 0 { r } else { c };
        }
        let t = if axis == 0 {
            let mut data = Vec::with_capacity(total * c0);
            for &v in inputs {
                data.extend_from_slice(self.value(v).data());
            }
            Tensor::from_parts(vec![total, c0], data)
        } else {
            let mut data = Vec::with_capacity(r0 * total);
            for i in 0..r0 {
                for &v in inputs {
                    data.extend_from_slice(self.value(v).row_slice(i));
                }
            }
            Tensor::from_parts(vec![r0, total], data)
        };
        self.push(
            t,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            inputs,
        )
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).reshaped(shape)?;
        self.push(t, Op::Reshape(a), &[a])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let (m, n) = rank2(av, "transpose")?;
        let d = av.data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = d[i * n + j];
            }
        }
        self.push(Tensor::from_parts(vec![n, m], out), Op::Transpose(a), &[a])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let av = self.value(a);
        let data = av.data().iter().map(|x| x * c).collect();
        let t = Tensor::from_parts(av.shape().to_vec(), data);
        self.push(t, Op::Scale(a, c), &[a])
    }

    pub fn slice(&mut self, a: Var, rows: Range<usize>, cols: Range<usize>) -> Result<Var> {
        let av = self.value(a);
        let (m, n) = rank2(av, "slice")?;
        if rows.start >= rows.end || cols.start >= cols.end || rows.end > m || cols.end > n {
            return invalid(format!("slice {rows:?} x {cols:?} out of bounds for shape {:?}", av.shape()));
        }
        let w = cols.len();
        let mut data = Vec::with_capacity(rows.len() * w);
        for i in rows.clone() {
            data.extend_from_slice(&av.data()[i * n + cols.start..i * n + cols.end]);
        }
        let t = Tensor::from_parts(vec![rows.len(), w], data);
        self.push(t, Op::Slice { input: a, rows, cols }, &[a])
    }

    pub fn gather(&mut self, a: Var, index: &[usize]) -> Result<Var> {
        let av = self.value(a);
        let (m, n) = rank2(av, "gather")?;
        if index.len() != m {
            return Err(Error::Shape {
                op: "gather",
                lhs: av.shape().to_vec(),
                rhs: vec![index.len()],
            });
        }
        if let Some(&bad) = index.iter().find(|&&c| c >= n) {
            return invalid(format!("gather index {bad} out of range for {n} columns"));
        }
        let data = index.iter().enumerate().map(|(i, &c)| av.data()[i * n + c]).collect();
        let t = Tensor::from_parts(vec![m, 1], data);
        self.push(
            t,
            Op::Gather {
                input: a,
                index: index.to_vec(),
            },
            &[a],
        )
    }

    fn map_unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Result<Var> {
        let av = self.value(a);
        let data = av.data().iter().map(|&x| f(x)).collect();
        let t = Tensor::from_parts(av.shape().to_vec(), data);
        self.push(t, op, &[a])
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        self.map_unary(a, Op::Abs(a), f64::abs)
    }

    /// ELU with unit scale: `x` for `x > 0`, `e^x - 1` otherwise.
    pub fn elu(&mut self, a: Var) -> Result<Var> {
        self.map_unary(a, Op::Elu(a), elu)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.map_unary(a, Op::Relu(a), |x| x.max(0.0))
    }

    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let n = *av.shape().last().unwrap();
        let mut data = av.data().to_vec();
        for row in data.chunks_mut(n) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                z += *x;
            }
            for x in row.iter_mut() {
                *x /= z;
            }
        }
        let t = Tensor::from_parts(av.shape().to_vec(), data);
        self.push(t, Op::Softmax(a), &[a])
    }

    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let n = *av.shape().last().unwrap();
        let mut data = av.data().to_vec();
        for row in data.chunks_mut(n) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            for x in row.iter_mut() {
                *x -= lse;
            }
        }
        let t = Tensor::from_parts(av.shape().to_vec(), data);
        self.push(t, Op::LogSoftmax(a), &[a])
    }

    pub fn squared_error(&mut self, pred: Var, target: Var, reduction: Reduction) -> Result<Var> {
        let (pv, tv) = (self.value(pred), self.value(target));
        if pv.shape() != tv.shape() {
            return Err(Error::Shape {
                op: "squared_error",
                lhs: pv.shape().to_vec(),
                rhs: tv.shape().to_vec(),
            });
        }
        let mut s: f64 = pv.data().iter().zip(tv.data()).map(|(p, t)| (p - t) * (p - t)).sum();
        if reduction == Reduction::Mean {
            s /= pv.numel() as f64;
        }
        self.push(
            Tensor::from_parts(vec![1, 1], vec![s]),
            Op::SquaredError { pred, target, reduction },
            &[pred, target],
        )
    }

    /// Mean squared error between `pred` and `target`.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        self.squared_error(pred, target, Reduction::Mean)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::from_parts(vec![1, 1], vec![s]), Op::Sum(a), &[a])
    }

    /// Propagates d`loss`/d(node) back to every trainable leaf.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return invalid(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            ));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                match &mut self.leaf_grads[idx] {
                    Some(acc) => acc.add_assign(&g),
                    slot => *slot = Some(g),
                }
                continue;
            }
            self.backprop_node(idx, &g, &mut grads);
        }
        Ok(())
    }

    fn backprop_node(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let nodes = &self.nodes;
        let wants = |v: Var| nodes[v.0].requires_grad;
        let gd = g.data();
        match &nodes[idx].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                let (m, k) = (av.shape()[0], av.shape()[1]);
                let n = bv.shape()[1];
                if wants(*a) {
                    let ga = slot(grads, *a, av.shape()).data_mut();
                    let bd = bv.data();
                    for i in 0..m {
                        let grow = &gd[i * n..(i + 1) * n];
                        for p in 0..k {
                            let brow = &bd[p * n..(p + 1) * n];
                            ga[i * k + p] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                        }
                    }
                }
                if wants(*b) {
                    let gb = slot(grads, *b, bv.shape()).data_mut();
                    let ad = av.data();
                    for i in 0..m {
                        let grow = &gd[i * n..(i + 1) * n];
                        for p in 0..k {
                            let x = ad[i * k + p];
                            if x == 0.0 {
                                continue;
                            }
                            for (o, &y) in gb[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                *o += x * y;
                            }
                        }
                    }
                }
            }
            Op::Add { lhs, rhs, broadcast } => {
                if wants(*lhs) {
                    slot(grads, *lhs, g.shape()).add_assign(g);
                }
                if wants(*rhs) {
                    if *broadcast {
                        let shape = nodes[rhs.0].value.shape();
                        let n = shape[1];
                        let gb = slot(grads, *rhs, shape).data_mut();
                        for row in gd.chunks(n) {
                            for (o, &x) in gb.iter_mut().zip(row) {
                                *o += x;
                            }
                        }
                    } else {
                        slot(grads, *rhs, g.shape()).add_assign(g);
                    }
                }
            }
            Op::Sub(a, b) => {
                if wants(*a) {
                    slot(grads, *a, g.shape()).add_assign(g);
                }
                if wants(*b) {
                    for (o, &x) in slot(grads, *b, g.shape()).data_mut().iter_mut().zip(gd) {
                        *o -= x;
                    }
                }
            }
            Op::Concat { inputs, axis } => {
                let total_cols = g.shape()[1];
                let mut offset = 0;
                for &v in inputs {
                    let shape = nodes[v.0].value.shape();
                    let (r, c) = (shape[0], shape[1]);
                    if wants(v) {
                        let gv = slot(grads, v, shape).data_mut();
                        if *axis == 0 {
                            for (o, &x) in gv.iter_mut().zip(&gd[offset * c..(offset + r) * c]) {
                                *o += x;
                            }
                        } else {
                            for i in 0..r {
                                let src = &gd[i * total_cols + offset..i * total_cols + offset + c];
                                for (o, &x) in gv[i * c..(i + 1) * c].iter_mut().zip(src) {
                                    *o += x;
                                }
                            }
                        }
                    }
                    offset += if *axis == 0 { r } else { c };
                }
            }
            Op::Reshape(a) => {
                if wants(*a) {
                    let shape = nodes[a.0].value.shape();
                    for (o, &x) in slot(grads, *a, shape).data_mut().iter_mut().zip(gd) {
                        *o += x;
                    }
                }
            }
            Op::Transpose(a) => {
                if wants(*a) {
                    let shape = nodes[a.0].value.shape();
                    let (m, n) = (shape[0], shape[1]);
                    let ga = slot(grads, *a, shape).data_mut();
                    for i in 0..m {
                        for j in 0..n {
                            ga[i * n + j] += gd[j * m + i];
                        }
                    }
                }
            }
            Op::Scale(a, c) => {
                if wants(*a) {
                    for (o, &x) in slot(grads, *a, g.shape()).data_mut().iter_mut().zip(gd) {
                        *o += c * x;
                    }
                }
            }
            Op::Slice { input, rows, cols } => {
                if wants(*input) {
                    let shape = nodes[input.0].value.shape();
                    let n = shape[1];
                    let w = cols.len();
                    let ga = slot(grads, *input, shape).data_mut();
                    for (k, i) in rows.clone().enumerate() {
                        let dst = &mut ga[i * n + cols.start..i * n + cols.end];
                        for (o, &x) in dst.iter_mut().zip(&gd[k * w..(k + 1) * w]) {
                            *o += x;
                        }
                    }
                }
            }
            Op::Gather { input, index } => {
                if wants(*input) {
                    let shape = nodes[input.0].value.shape();
                    let n = shape[1];
                    let ga = slot(grads, *input, shape).data_mut();
                    for (i, &c) in index.iter().enumerate() {
                        ga[i * n + c] += gd[i];
                    }
                }
            }
            Op::Abs(a) => {
                if wants(*a) {
                    let x = nodes[a.0].value.data();
                    let ga = slot(grads, *a, g.shape()).data_mut();
                    for ((o, &gx), &xv) in ga.iter_mut().zip(gd).zip(x) {
                        // subgradient at exactly zero is zero
                        let s = if xv > 0.0 {
                            1.0
                        } else if xv < 0.0 {
                            -1.0
                        } else {
                            0.0
                        };
                        *o += gx * s;
                    }
                }
            }
            Op::Elu(a) => {
                if wants(*a) {
                    let x = nodes[a.0].value.data();
                    let ga = slot(grads, *a, g.shape()).data_mut();
                    for ((o, &gx), &xv) in ga.iter_mut().zip(gd).zip(x) {
                        *o += if xv > 0.0 { gx } else { gx * xv.exp() };
                    }
                }
            }
            Op::Relu(a) => {
                if wants(*a) {
                    let x = nodes[a.0].value.data();
                    let ga = slot(grads, *a, g.shape()).data_mut();
                    for ((o, &gx), &xv) in ga.iter_mut().zip(gd).zip(x) {
                        if xv > 0.0 {
                            *o += gx;
                        }
                    }
                }
            }
            Op::Softmax(a) => {
                if wants(*a) {
                    let y = nodes[idx].value.data();
                    let n = *g.shape().last().unwrap();
                    let ga = slot(grads, *a, g.shape()).data_mut();
                    for ((orow, grow), yrow) in ga.chunks_mut(n).zip(gd.chunks(n)).zip(y.chunks(n)) {
                        let dot: f64 = grow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                        for ((o, &gx), &yv) in orow.iter_mut().zip(grow).zip(yrow) {
                            *o += yv * (gx - dot);
                        }
                    }
                }
            }
            Op::LogSoftmax(a) => {
                if wants(*a) {
                    let y = nodes[idx].value.data();
                    let n = *g.shape().last().unwrap();
                    let ga = slot(grads, *a, g.shape()).data_mut();
                    for ((orow, grow), yrow) in ga.chunks_mut(n).zip(gd.chunks(n)).zip(y.chunks(n)) {
                        let gsum: f64 = grow.iter().sum();
                        for ((o, &gx), &yv) in orow.iter_mut().zip(grow).zip(yrow) {
                            *o += gx - yv.exp() * gsum;
                        }
                    }
                }
            }
            Op::SquaredError {
                pred,
                target,
                reduction,
            } => {
                let (pv, tv) = (&nodes[pred.0].value, &nodes[target.0].value);
                let mut c = 2.0 * gd[0];
                if *reduction == Reduction::Mean {
                    c /= pv.numel() as f64;
                }
                if wants(*pred) {
                    let gp = slot(grads, *pred, pv.shape()).data_mut();
                    for ((o, &p), &t) in gp.iter_mut().zip(pv.data()).zip(tv.data()) {
                        *o += c * (p - t);
                    }
                }
                if wants(*target) {
                    let gt = slot(grads, *target, tv.shape()).data_mut();
                    for ((o, &p), &t) in gt.iter_mut().zip(pv.data()).zip(tv.data()) {
                        *o -= c * (p - t);
                    }
                }
            }
            Op::Sum(a) => {
                if wants(*a) {
                    let shape = nodes[a.0].value.shape();
                    for o in slot(grads, *a, shape).data_mut() {
                        *o += gd[0];
                    }
                }
            }
        }
    }
}

fn slot<'a>(grads: &'a mut [Option<Tensor>], v: Var, shape: &[usize]) -> &'a mut Tensor {
    grads[v.0].get_or_insert_with(|| Tensor::zeros(shape))
}
