use std::collections::HashMap;

use super::tensor::gemm;
use super::{DiffError, Tensor};
use crate::linalg::Lu;

/// Handle to a node inside one [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Operation tag plus any static arguments the operation needs.
///
/// Binary element-wise ops (`Add`, `Sub`, `Mul`) broadcast their second
/// operand when it is `1 x c` (row bias), `r x 1` (column) or `1 x 1`.
#[derive(Clone, Debug, PartialEq)]
pub enum Op {
    Leaf,
    Constant,
    Add,
    Sub,
    Mul,
    MatMul,
    Exp,
    /// `exp(clamp(x, lo, hi))`; zero derivative outside the clamp window.
    ExpClamped { lo: f64, hi: f64 },
    Log,
    Tanh,
    Sigmoid,
    Neg,
    Square,
    Scale(f64),
    Sum,
    Mean,
    /// Sum along each row: `r x c -> r x 1`.
    SumRows,
    /// Row-wise `log(sum(exp(x)))`, stabilised by the row maximum.
    LogSumExp,
    Concat { axis: usize },
    Slice { axis: usize, start: usize, end: usize },
    Reshape { rows: usize, cols: usize },
    /// `log|det A|` of a square matrix.
    LogAbsDet,
    /// `log(sigmoid(x))` without underflow.
    LogSigmoid,
    /// `log(1 - exp(-x))` for `x > 0`.
    Log1mExp,
}

impl Op {
    pub fn tag(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Constant => "constant",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::MatMul => "matmul",
            Op::Exp => "exp",
            Op::ExpClamped { .. } => "exp_clamped",
            Op::Log => "log",
            Op::Tanh => "tanh",
            Op::Sigmoid => "sigmoid",
            Op::Neg => "neg",
            Op::Square => "square",
            Op::Scale(_) => "scale",
            Op::Sum => "sum",
            Op::Mean => "mean",
            Op::SumRows => "sum_rows",
            Op::LogSumExp => "log_sum_exp",
            Op::Concat { .. } => "concat",
            Op::Slice { .. } => "slice",
            Op::Reshape { .. } => "reshape",
            Op::LogAbsDet => "log_abs_det",
            Op::LogSigmoid => "log_sigmoid",
            Op::Log1mExp => "log1m_exp",
        }
    }

    fn arity(&self) -> Option<usize> {
        match self {
            Op::Leaf | Op::Constant => Some(0),
            Op::Add | Op::Sub | Op::Mul | Op::MatMul => Some(2),
            Op::Concat { .. } => None,
            _ => Some(1),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Broadcast {
    Full,
    Row,
    Col,
    Scalar,
}

impl Broadcast {
    fn index(self, i: usize, j: usize, cols: usize) -> usize {
        match self {
            Broadcast::Full => i * cols + j,
            Broadcast::Row => j,
            Broadcast::Col => i,
            Broadcast::Scalar => 0,
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    inputs: Vec<NodeId>,
    requires_grad: bool,
}

/// Tape of differentiable operations.
///
/// Nodes are appended in evaluation order, so the node index is already a
/// topological order and the backward pass is a reverse sweep. A graph is
/// meant to be built for one evaluation and then dropped.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
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

    /// Trainable input; gradients are reported for leaves.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, Vec::new(), true)
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Constant, Vec::new(), false)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn op(&self, id: NodeId) -> &Op {
        &self.nodes[id.0].op
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: Vec<NodeId>, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            inputs,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn dims(&self, op: &Op, id: NodeId) -> Result<(usize, usize), DiffError> {
        let v = &self.nodes[id.0].value;
        v.dims2().ok_or_else(|| DiffError::Shape {
            op: op.tag(),
            lhs: v.shape().to_vec(),
            rhs: vec![],
        })
    }

    fn shape_error(&self, op: &Op, a: NodeId, b: NodeId) -> DiffError {
        DiffError::Shape {
            op: op.tag(),
            lhs: self.nodes[a.0].value.shape().to_vec(),
            rhs: self.nodes[b.0].value.shape().to_vec(),
        }
    }

    fn broadcast(&self, op: &Op, a: NodeId, b: NodeId) -> Result<(usize, usize, Broadcast), DiffError> {
        let (r, c) = self.dims(op, a)?;
        let (br, bc) = self.dims(op, b)?;
        let mode = if (br, bc) == (r, c) {
            Broadcast::Full
        } else if (br, bc) == (1, 1) {
            Broadcast::Scalar
        } else if br == 1 && bc == c {
            Broadcast::Row
        } else if bc == 1 && br == r {
            Broadcast::Col
        } else {
            return Err(self.shape_error(op, a, b));
        };
        Ok((r, c, mode))
    }

    /// Applies `op` to `inputs`, recording the node for the backward pass.
    pub fn apply(&mut self, op: Op, inputs: &[NodeId]) -> Result<NodeId, DiffError> {
        if let Some(n) = op.arity() {
            if inputs.len() != n {
                return Err(DiffError::Arity {
                    op: op.tag(),
                    expected: n,
                    got: inputs.len(),
                });
            }
        }
        if matches!(op, Op::Leaf | Op::Constant) {
            return Err(DiffError::InvalidArgument {
                op: op.tag(),
                reason: "use Graph::leaf or Graph::constant".into(),
            });
        }
        let value = self.forward_value(&op, inputs)?;
        let requires_grad = inputs.iter().any(|i| self.nodes[i.0].requires_grad);
        Ok(self.push(value, op, inputs.to_vec(), requires_grad))
    }

    fn forward_value(&self, op: &Op, inputs: &[NodeId]) -> Result<Tensor, DiffError> {
        let val = |i: usize| &self.nodes[inputs[i].0].value;
        let unary = |f: &dyn Fn(f64) -> f64| Ok(val(0).map(f));
        match op {
            Op::Leaf | Op::Constant => unreachable!(),
            Op::Add | Op::Sub | Op::Mul => {
                let (r, c, mode) = self.broadcast(op, inputs[0], inputs[1])?;
                let a = val(0).data();
                let b = val(1).data();
                let mut out = Vec::with_capacity(r * c);
                for i in 0..r {
                    for j in 0..c {
                        let x = a[i * c + j];
                        let y = b[mode.index(i, j, c)];
                        out.push(match op {
                            Op::Add => x + y,
                            Op::Sub => x - y,
                            _ => x * y,
                        });
                    }
                }
                Ok(Tensor::matrix(r, c, out))
            }
            Op::MatMul => {
                let (m, k) = self.dims(op, inputs[0])?;
                let (k2, n) = self.dims(op, inputs[1])?;
                if k != k2 {
                    return Err(self.shape_error(op, inputs[0], inputs[1]));
                }
                let mut out = vec![0.0; m * n];
                gemm(m, k, n, val(0).data(), false, val(1).data(), false, &mut out, false);
                Ok(Tensor::matrix(m, n, out))
            }
            Op::Exp => unary(&f64::exp),
            Op::ExpClamped { lo, hi } => {
                let (lo, hi) = (*lo, *hi);
                unary(&move |x: f64| x.clamp(lo, hi).exp())
            }
            Op::Log => unary(&f64::ln),
            Op::Tanh => unary(&f64::tanh),
            Op::Sigmoid => unary(&sigmoid),
            Op::Neg => unary(&|x: f64| -x),
            Op::Square => unary(&|x: f64| x * x),
            Op::Scale(s) => {
                let s = *s;
                unary(&move |x: f64| s * x)
            }
            Op::LogSigmoid => unary(&log_sigmoid),
            Op::Log1mExp => unary(&log1m_exp),
            Op::Sum => Ok(Tensor::scalar(val(0).data().iter().sum())),
            Op::Mean => {
                let v = val(0);
                if v.is_empty() {
                    return Err(DiffError::InvalidArgument {
                        op: op.tag(),
                        reason: "empty input".into(),
                    });
                }
                Ok(Tensor::scalar(v.data().iter().sum::<f64>() / v.len() as f64))
            }
            Op::SumRows => {
                let (r, _) = self.dims(op, inputs[0])?;
                let v = val(0);
                let out = (0..r).map(|i| v.row_slice(i).iter().sum()).collect();
                Ok(Tensor::matrix(r, 1, out))
            }
            Op::LogSumExp => {
                let (r, c) = self.dims(op, inputs[0])?;
                if c == 0 {
                    return Err(DiffError::InvalidArgument {
                        op: op.tag(),
                        reason: "zero columns".into(),
                    });
                }
                let v = val(0);
                let out = (0..r).map(|i| log_sum_exp(v.row_slice(i))).collect();
                Ok(Tensor::matrix(r, 1, out))
            }
            Op::Concat { axis } => self.concat_value(op, *axis, inputs),
            Op::Slice { axis, start, end } => {
                let (r, c) = self.dims(op, inputs[0])?;
                let limit = if *axis == 0 { r } else { c };
                if *axis > 1 || start >= end || *end > limit {
                    return Err(DiffError::InvalidArgument {
                        op: op.tag(),
                        reason: format!("range {start}..{end} on axis {axis} of {r}x{c}"),
                    });
                }
                let v = val(0);
                if *axis == 0 {
                    Ok(Tensor::matrix(end - start, c, v.data()[start * c..end * c].to_vec()))
                } else {
                    let w = end - start;
                    let mut out = Vec::with_capacity(r * w);
                    for i in 0..r {
                        out.extend_from_slice(&v.row_slice(i)[*start..*end]);
                    }
                    Ok(Tensor::matrix(r, w, out))
                }
            }
            Op::Reshape { rows, cols } => {
                let v = val(0);
                if rows * cols != v.len() {
                    return Err(DiffError::Shape {
                        op: op.tag(),
                        lhs: v.shape().to_vec(),
                        rhs: vec![*rows, *cols],
                    });
                }
                v.reshaped(vec![*rows, *cols])
            }
            Op::LogAbsDet => {
                let (r, c) = self.dims(op, inputs[0])?;
                if r != c {
                    return Err(DiffError::Shape {
                        op: op.tag(),
                        lhs: vec![r, c],
                        rhs: vec![],
                    });
                }
                Ok(Tensor::scalar(Lu::new(val(0).data(), r).log_abs_det()))
            }
        }
    }

    fn concat_value(&self, op: &Op, axis: usize, inputs: &[NodeId]) -> Result<Tensor, DiffError> {
        if inputs.is_empty() || axis > 1 {
            return Err(DiffError::InvalidArgument {
                op: op.tag(),
                reason: format!("{} inputs on axis {axis}", inputs.len()),
            });
        }
        let first = self.dims(op, inputs[0])?;
        let mut dims = Vec::with_capacity(inputs.len());
        for &id in inputs {
            let d = self.dims(op, id)?;
            let agree = if axis == 0 { d.1 == first.1 } else { d.0 == first.0 };
            if !agree {
                return Err(self.shape_error(op, inputs[0], id));
            }
            dims.push(d);
        }
        if axis == 0 {
            let rows: usize = dims.iter().map(|d| d.0).sum();
            let mut out = Vec::with_capacity(rows * first.1);
            for &id in inputs {
                out.extend_from_slice(self.nodes[id.0].value.data());
            }
            Ok(Tensor::matrix(rows, first.1, out))
        } else {
            let cols: usize = dims.iter().map(|d| d.1).sum();
            let mut out = Vec::with_capacity(first.0 * cols);
            for i in 0..first.0 {
                for &id in inputs {
                    out.extend_from_slice(self.nodes[id.0].value.row_slice(i));
                }
            }
            Ok(Tensor::matrix(first.0, cols, out))
        }
    }

    /// Reverse sweep from a one-element `root`.
    pub fn backward(&self, root: NodeId) -> Result<Gradients, DiffError> {
        let rv = &self.nodes[root.0].value;
        if rv.len() != 1 {
            return Err(DiffError::NonScalarRoot {
                shape: rv.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(vec![1.0]);
        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if node.op == Op::Leaf {
                grads[idx] = Some(g);
                continue;
            }
            if !node.requires_grad {
                continue;
            }
            self.propagate(node, &g, &mut grads);
        }
        let mut map = HashMap::new();
        let mut leaf_shapes = HashMap::new();
        for (idx, node) in self.nodes.iter().enumerate().take(root.0 + 1) {
            if node.op == Op::Leaf {
                leaf_shapes.insert(NodeId(idx), node.value.shape().to_vec());
                if let Some(g) = grads[idx].take() {
                    map.insert(NodeId(idx), Tensor::new(node.value.shape().to_vec(), g)?);
                }
            }
        }
        Ok(Gradients { map, leaf_shapes })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let input = |i: usize| &self.nodes[node.inputs[i].0];
        let mut acc = |i: usize, f: &mut dyn FnMut(&mut [f64])| {
            let n = &self.nodes[node.inputs[i].0];
            if !n.requires_grad {
                return;
            }
            let slot = &mut grads[node.inputs[i].0];
            let buf = slot.get_or_insert_with(|| vec![0.0; n.value.len()]);
            f(buf);
        };
        let y = node.value.data();
        match &node.op {
            Op::Leaf | Op::Constant => {}
            Op::Add | Op::Sub | Op::Mul => {
                let a = input(0).value.data();
                let b = input(1).value.data();
                let (r, c) = node.value.dims2().unwrap();
                let (br, bc) = input(1).value.dims2().unwrap();
                let mode = if (br, bc) == (r, c) {
                    Broadcast::Full
                } else if (br, bc) == (1, 1) {
                    Broadcast::Scalar
                } else if br == 1 {
                    Broadcast::Row
                } else {
                    Broadcast::Col
                };
                let op = node.op.clone();
                acc(0, &mut |ga| {
                    for i in 0..r {
                        for j in 0..c {
                            let k = i * c + j;
                            ga[k] += match op {
                                Op::Mul => g[k] * b[mode.index(i, j, c)],
                                _ => g[k],
                            };
                        }
                    }
                });
                acc(1, &mut |gb| {
                    for i in 0..r {
                        for j in 0..c {
                            let k = i * c + j;
                            gb[mode.index(i, j, c)] += match op {
                                Op::Add => g[k],
                                Op::Sub => -g[k],
                                _ => g[k] * a[k],
                            };
                        }
                    }
                });
            }
            Op::MatMul => {
                let a = input(0).value.data();
                let b = input(1).value.data();
                let (m, k) = input(0).value.dims2().unwrap();
                let n = input(1).value.cols();
                acc(0, &mut |ga| gemm(m, n, k, g, false, b, true, ga, true));
                acc(1, &mut |gb| gemm(k, m, n, a, true, g, false, gb, true));
            }
            Op::Exp => acc(0, &mut |ga| {
                for (k, gk) in ga.iter_mut().enumerate() {
                    *gk += g[k] * y[k];
                }
            }),
            Op::ExpClamped { lo, hi } => {
                let x = input(0).value.data();
                acc(0, &mut |ga| {
                    for (k, gk) in ga.iter_mut().enumerate() {
                        if x[k] >= *lo && x[k] <= *hi {
                            *gk += g[k] * y[k];
                        }
                    }
                })
            }
            Op::Log => {
                let x = input(0).value.data();
                acc(0, &mut |ga| {
                    for (k, gk) in ga.iter_mut().enumerate() {
                        *gk += g[k] / x[k];
                    }
                })
            }
            Op::Tanh => acc(0, &mut |ga| {
                for (k, gk) in ga.iter_mut().enumerate() {
                    *gk += g[k] * (1.0 - y[k] * y[k]);
                }
            }),
            Op::Sigmoid => acc(0, &mut |ga| {
                for (k, gk) in ga.iter_mut().enumerate() {
                    *gk += g[k] * y[k] * (1.0 - y[k]);
                }
            }),
            Op::Neg => acc(0, &mut |ga| {
                for (k, gk) in ga.iter_mut().enumerate() {
                    *gk -= g[k];
                }
            }),
            Op::Square => {
                let x = input(0).value.data();
                acc(0, &mut |ga| {
                    for (k, gk) in ga.iter_mut().enumerate() {
                        *gk += 2.0 * x[k] * g[k];
                    }
                })
            }
            Op::Scale(s) => acc(0, &mut |ga| {
                for (k, gk) in ga.iter_mut().enumerate() {
                    *gk += s * g[k];
                }
            }),
            Op::LogSigmoid => {
                let x = input(0).value.data();
                acc(0, &mut |ga| {
                    for (k, gk) in ga.iter_mut().enumerate() {
                        *gk += g[k] * sigmoid(-x[k]);
                    }
                })
            }
            Op::Log1mExp => {
                let x = input(0).value.data();
                acc(0, &mut |ga| {
                    for (k, gk) in ga.iter_mut().enumerate() {
                        *gk += g[k] / x[k].exp_m1();
                    }
                })
            }
            Op::Sum => acc(0, &mut |ga| {
                for gk in ga.iter_mut() {
                    *gk += g[0];
                }
            }),
            Op::Mean => {
                let n = input(0).value.len() as f64;
                acc(0, &mut |ga| {
                    for gk in ga.iter_mut() {
                        *gk += g[0] / n;
                    }
                })
            }
            Op::SumRows => {
                let c = input(0).value.cols();
                acc(0, &mut |ga| {
                    for (k, gk) in ga.iter_mut().enumerate() {
                        *gk += g[k / c];
                    }
                })
            }
            Op::LogSumExp => {
                let x = input(0).value.data();
                let c = input(0).value.cols();
                acc(0, &mut |ga| {
                    for (k, gk) in ga.iter_mut().enumerate() {
                        let row = k / c;
                        if y[row].is_finite() {
                            *gk += g[row] * (x[k] - y[row]).exp();
                        }
                    }
                })
            }
            Op::Concat { axis } => {
                let total_cols = node.value.cols();
                let mut offset = 0;
                for i in 0..node.inputs.len() {
                    let (r, c) = input(i).value.dims2().unwrap();
                    if *axis == 0 {
                        let start = offset * total_cols;
                        acc(i, &mut |gi| {
                            for (k, gk) in gi.iter_mut().enumerate() {
                                *gk += g[start + k];
                            }
                        });
                        offset += r;
                    } else {
                        acc(i, &mut |gi| {
                            for row in 0..r {
                                for col in 0..c {
                                    gi[row * c + col] += g[row * total_cols + offset + col];
                                }
                            }
                        });
                        offset += c;
                    }
                }
            }
            Op::Slice { axis, start, end } => {
                let c = input(0).value.cols();
                acc(0, &mut |ga| {
                    if *axis == 0 {
                        for (k, gk) in g.iter().enumerate() {
                            ga[start * c + k] += gk;
                        }
                    } else {
                        let w = end - start;
                        for (k, gk) in g.iter().enumerate() {
                            ga[(k / w) * c + start + k % w] += gk;
                        }
                    }
                })
            }
            Op::Reshape { .. } => acc(0, &mut |ga| {
                for (k, gk) in ga.iter_mut().enumerate() {
                    *gk += g[k];
                }
            }),
            Op::LogAbsDet => {
                let a = input(0).value.data();
                let n = input(0).value.rows();
                let inv = Lu::new(a, n).inverse();
                acc(0, &mut |ga| {
                    for i in 0..n {
                        for j in 0..n {
                            ga[i * n + j] += g[0] * inv[j * n + i];
                        }
                    }
                })
            }
        }
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        self.apply(Op::Add, &[a, b])
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        self.apply(Op::Sub, &[a, b])
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        self.apply(Op::Mul, &[a, b])
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        self.apply(Op::MatMul, &[a, b])
    }

    /// `x W + b` with `b` broadcast over rows.
    pub fn affine(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        let xw = self.matmul(x, w)?;
        self.add(xw, b)
    }

    pub fn exp(&mut self, a: NodeId) -> Result<NodeId, DiffError> {
        self.apply(Op::Exp, &[a])
    }

    pub fn exp_clamped(&mut self, a: NodeId, lo: f64, hi: f64) -> Result<NodeId, DiffError> {
        self.apply(Op::ExpClamped { lo, hi }, &[a])
    }

    pub fn log(&mut self, a: NodeId) -> Result<NodeId, DiffError> {
        self.apply(Op::Log, &[a])
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId, DiffError> {
        self.apply(Op::Tanh, &[a])
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId, DiffError> {
        self.apply(Op::Sigmoid, &[a])
    }

    pub fn neg(&mut self, a: NodeId) -> Result<NodeId, DiffError> {
        self.apply(Op::Neg, &[a])
    }

    pub fn square(&mut self, a: NodeId) -> Result<NodeId, DiffError> {
        self.apply(Op::Square, &[a])
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> Result<NodeId, DiffError> {
        self.apply(Op::Scale(s), &[a])
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId, DiffError> {
        self.apply(Op::Sum, &[a])
    }

    pub fn mean(&mut self, a: NodeId) -> Result<NodeId, DiffError> {
        self.apply(Op::Mean, &[a])
    }

    pub fn sum_rows(&mut self, a: NodeId) -> Result<NodeId, DiffError> {
        self.apply(Op::SumRows, &[a])
    }

    pub fn log_sum_exp(&mut self, a: NodeId) -> Result<NodeId, DiffError> {
        self.apply(Op::LogSumExp, &[a])
    }

    pub fn concat(&mut self, axis: usize, parts: &[NodeId]) -> Result<NodeId, DiffError> {
        self.apply(Op::Concat { axis }, parts)
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, end: usize) -> Result<NodeId, DiffError> {
        self.apply(Op::Slice { axis: 1, start, end }, &[a])
    }

    pub fn slice_rows(&mut self, a: NodeId, start: usize, end: usize) -> Result<NodeId, DiffError> {
        self.apply(Op::Slice { axis: 0, start, end }, &[a])
    }

    pub fn reshape(&mut self, a: NodeId, rows: usize, cols: usize) -> Result<NodeId, DiffError> {
        self.apply(Op::Reshape { rows, cols }, &[a])
    }

    pub fn log_abs_det(&mut self, a: NodeId) -> Result<NodeId, DiffError> {
        self.apply(Op::LogAbsDet, &[a])
    }

    pub fn log_sigmoid(&mut self, a: NodeId) -> Result<NodeId, DiffError> {
        self.apply(Op::LogSigmoid, &[a])
    }

    pub fn log1m_exp(&mut self, a: NodeId) -> Result<NodeId, DiffError> {
        self.apply(Op::Log1mExp, &[a])
    }
}

/// Accumulated gradients of the leaves that precede a backward root.
#[derive(Debug, Clone)]
pub struct Gradients {
    map: HashMap<NodeId, Tensor>,
    leaf_shapes: HashMap<NodeId, Vec<usize>>,
}

impl Gradients {
    /// Gradient for `leaf`; zeros when the leaf did not influence the root.
    pub fn get(&self, leaf: NodeId) -> Tensor {
        match self.map.get(&leaf) {
            Some(t) => t.clone(),
            None => Tensor::zeros(self.leaf_shapes.get(&leaf).map(Vec::as_slice).unwrap_or(&[0])),
        }
    }

    pub fn reached(&self, leaf: NodeId) -> bool {
        self.map.contains_key(&leaf)
    }

    /// Number of leaves that received a gradient.
    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

pub fn log1m_exp(x: f64) -> f64 {
    if x > std::f64::consts::LN_2 {
        (-(-x).exp()).ln_1p()
    } else {
        (-(-x).exp_m1()).ln()
    }
}

/// `log(sum(exp(xs)))` with max subtraction.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}
