//! Affine coupling flow between observations and the mixture's latent space.
//!
//! Each [`CouplingLayer`] keeps the masked coordinates unchanged and maps
//! the rest as `x * exp(s_hat) + t`, where `s_hat = s_clamp * tanh(s(x_pass))`
//! and `s`, `t` are one-hidden-layer networks of the pass-through half. The
//! log-determinant of a layer is the row sum of `s_hat`.

use rand::Rng;

use crate::diffcore::{Graph, NodeId, Tensor};
use crate::rng::fan_in_uniform;
use crate::{Error, Result};

pub const DEFAULT_S_CLAMP: f64 = 5.0;
pub const DEFAULT_HIDDEN: usize = 64;

/// One-hidden-layer network: `tanh(x W1 + b1) W2 + b2`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeedForward {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

#[derive(Clone, Copy, Debug)]
pub struct FeedForwardNodes {
    w1: NodeId,
    b1: NodeId,
    w2: NodeId,
    b2: NodeId,
}

impl FeedForward {
    /// Fan-in uniform hidden layer, zero output layer.
    pub fn new<R: Rng + ?Sized>(inputs: usize, hidden: usize, outputs: usize, rng: &mut R) -> Self {
        Self {
            w1: Tensor::matrix(inputs, hidden, fan_in_uniform(rng, inputs, inputs * hidden)),
            b1: Tensor::matrix(1, hidden, fan_in_uniform(rng, inputs, hidden)),
            w2: Tensor::zeros(&[hidden, outputs]),
            b2: Tensor::zeros(&[1, outputs]),
        }
    }

    pub fn tensors(&self) -> [(&'static str, &Tensor); 4] {
        [("w1", &self.w1), ("b1", &self.b1), ("w2", &self.w2), ("b2", &self.b2)]
    }

    pub fn tensors_mut(&mut self) -> [(&'static str, &mut Tensor); 4] {
        [
            ("w1", &mut self.w1),
            ("b1", &mut self.b1),
            ("w2", &mut self.w2),
            ("b2", &mut self.b2),
        ]
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> FeedForwardNodes {
        let mut put = |t: &Tensor| if trainable { g.leaf(t.clone()) } else { g.constant(t.clone()) };
        FeedForwardNodes {
            w1: put(&self.w1),
            b1: put(&self.b1),
            w2: put(&self.w2),
            b2: put(&self.b2),
        }
    }
}

impl FeedForwardNodes {
    pub fn leaves(&self) -> [NodeId; 4] {
        [self.w1, self.b1, self.w2, self.b2]
    }

    fn apply(&self, g: &mut Graph, x: NodeId) -> Result<NodeId> {
        let h = g.affine(x, self.w1, self.b1)?;
        let h = g.tanh(h)?;
        Ok(g.affine(h, self.w2, self.b2)?)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CouplingLayer {
    /// `true` marks a pass-through coordinate.
    pub mask: Vec<bool>,
    pub s_net: FeedForward,
    pub t_net: FeedForward,
    pub s_clamp: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct CouplingNodes {
    pub s: FeedForwardNodes,
    pub t: FeedForwardNodes,
}

/// `d x n` 0/1 matrix whose columns pick the coordinates where `mask == keep`.
fn selector(mask: &[bool], keep: bool) -> Tensor {
    let idx: Vec<usize> = (0..mask.len()).filter(|&i| mask[i] == keep).collect();
    let mut data = vec![0.0; mask.len() * idx.len()];
    for (j, &i) in idx.iter().enumerate() {
        data[i * idx.len() + j] = 1.0;
    }
    Tensor::matrix(mask.len(), idx.len(), data)
}

impl CouplingLayer {
    pub fn with_mask<R: Rng + ?Sized>(mask: Vec<bool>, hidden: usize, s_clamp: f64, rng: &mut R) -> Result<Self> {
        let pass = mask.iter().filter(|&&m| m).count();
        if pass == 0 || pass == mask.len() {
            return Err(Error::InvalidParameter(
                "coupling mask needs both pass-through and transformed coordinates".into(),
            ));
        }
        if !(s_clamp > 0.0) {
            return Err(Error::InvalidParameter(format!("s_clamp must be positive, got {s_clamp}")));
        }
        let out = mask.len() - pass;
        let s_net = FeedForward::new(pass, hidden, out, rng);
        let t_net = FeedForward::new(pass, hidden, out, rng);
        Ok(Self {
            mask,
            s_net,
            t_net,
            s_clamp,
        })
    }

    /// Even coordinates pass through when `parity == 0`, odd ones otherwise.
    pub fn alternating<R: Rng + ?Sized>(d: usize, parity: usize, hidden: usize, s_clamp: f64, rng: &mut R) -> Result<Self> {
        let mask = (0..d).map(|i| i % 2 == parity % 2).collect();
        Self::with_mask(mask, hidden, s_clamp, rng)
    }

    pub fn dim(&self) -> usize {
        self.mask.len()
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> CouplingNodes {
        CouplingNodes {
            s: self.s_net.bind(g, trainable),
            t: self.t_net.bind(g, trainable),
        }
    }

    /// Bounded log-scale and shift computed from the pass-through half.
    fn scale_shift(&self, g: &mut Graph, nodes: &CouplingNodes, x_pass: NodeId) -> Result<(NodeId, NodeId)> {
        let s_raw = nodes.s.apply(g, x_pass)?;
        let s_tanh = g.tanh(s_raw)?;
        let s_hat = g.scale(s_tanh, self.s_clamp)?;
        let t = nodes.t.apply(g, x_pass)?;
        Ok((s_hat, t))
    }

    fn split(&self, g: &mut Graph, x: NodeId) -> Result<(NodeId, NodeId, NodeId, NodeId)> {
        let d = g.value(x).cols();
        if d != self.dim() {
            return Err(Error::Dimension {
                context: "coupling layer input",
                expected: self.dim(),
                got: d,
            });
        }
        let p_pass = g.constant(selector(&self.mask, true));
        let p_trans = g.constant(selector(&self.mask, false));
        let x_pass = g.matmul(x, p_pass)?;
        let x_trans = g.matmul(x, p_trans)?;
        Ok((x_pass, x_trans, p_pass, p_trans))
    }

    fn merge(&self, g: &mut Graph, pass: NodeId, trans: NodeId) -> Result<NodeId> {
        let back_pass = g.constant(selector(&self.mask, true).transpose());
        let back_trans = g.constant(selector(&self.mask, false).transpose());
        let a = g.matmul(pass, back_pass)?;
        let b = g.matmul(trans, back_trans)?;
        Ok(g.add(a, b)?)
    }

    /// Forward map on a `rows x d` batch; returns outputs and per-row log-det (`rows x 1`).
    pub fn forward_nodes(&self, g: &mut Graph, nodes: &CouplingNodes, x: NodeId) -> Result<(NodeId, NodeId)> {
        let (x_pass, x_trans, _, _) = self.split(g, x)?;
        let (s_hat, t) = self.scale_shift(g, nodes, x_pass)?;
        let es = g.exp(s_hat)?;
        let scaled = g.mul(x_trans, es)?;
        let y_trans = g.add(scaled, t)?;
        let y = self.merge(g, x_pass, y_trans)?;
        let log_det = g.sum_rows(s_hat)?;
        Ok((y, log_det))
    }

    pub fn inverse_nodes(&self, g: &mut Graph, nodes: &CouplingNodes, y: NodeId) -> Result<NodeId> {
        let (y_pass, y_trans, _, _) = self.split(g, y)?;
        let (s_hat, t) = self.scale_shift(g, nodes, y_pass)?;
        let neg = g.neg(s_hat)?;
        let inv_scale = g.exp(neg)?;
        let shifted = g.sub(y_trans, t)?;
        let x_trans = g.mul(shifted, inv_scale)?;
        self.merge(g, y_pass, x_trans)
    }

    /// Largest `|s_hat|` over the rows of `x`.
    pub fn max_abs_log_scale(&self, x: &Tensor) -> Result<f64> {
        let mut g = Graph::new();
        let nodes = self.bind(&mut g, false);
        let xn = g.constant(x.clone());
        let (x_pass, _, _, _) = self.split(&mut g, xn)?;
        let (s_hat, _) = self.scale_shift(&mut g, &nodes, x_pass)?;
        Ok(g.value(s_hat).max_abs())
    }
}

/// Ordered coupling layers, `z = f_N(...f_1(y))`.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct FlowStack {
    pub layers: Vec<CouplingLayer>,
}

impl FlowStack {
    pub fn empty() -> Self {
        Self::default()
    }

    /// `pairs` blocks of two layers with opposite alternating masks.
    pub fn alternating<R: Rng + ?Sized>(d: usize, pairs: usize, hidden: usize, s_clamp: f64, rng: &mut R) -> Result<Self> {
        let layers = (0..2 * pairs)
            .map(|n| CouplingLayer::alternating(d, n % 2, hidden, s_clamp, rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { layers })
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Vec<CouplingNodes> {
        self.layers.iter().map(|l| l.bind(g, trainable)).collect()
    }

    /// Returns `(z, total_log_det)`; `total_log_det` is `None` for an empty stack.
    pub fn forward_nodes(&self, g: &mut Graph, nodes: &[CouplingNodes], y: NodeId) -> Result<(NodeId, Option<NodeId>)> {
        let mut x = y;
        let mut total: Option<NodeId> = None;
        for (layer, n) in self.layers.iter().zip(nodes) {
            let (next, ld) = layer.forward_nodes(g, n, x)?;
            total = Some(match total {
                Some(acc) => g.add(acc, ld)?,
                None => ld,
            });
            x = next;
        }
        Ok((x, total))
    }

    pub fn inverse_nodes(&self, g: &mut Graph, nodes: &[CouplingNodes], z: NodeId) -> Result<NodeId> {
        let mut x = z;
        for (layer, n) in self.layers.iter().zip(nodes).rev() {
            x = layer.inverse_nodes(g, n, x)?;
        }
        Ok(x)
    }
}

/// Forward map of one layer on a `rows x d` batch.
pub fn coupling_forward(x: &Tensor, layer: &CouplingLayer) -> Result<(Tensor, Vec<f64>)> {
    let mut g = Graph::new();
    let nodes = layer.bind(&mut g, false);
    let xn = g.constant(x.clone());
    let (y, ld) = layer.forward_nodes(&mut g, &nodes, xn)?;
    Ok((g.value(y).clone(), g.value(ld).data().to_vec()))
}

pub fn coupling_inverse(y: &Tensor, layer: &CouplingLayer) -> Result<Tensor> {
    let mut g = Graph::new();
    let nodes = layer.bind(&mut g, false);
    let yn = g.constant(y.clone());
    let x = layer.inverse_nodes(&mut g, &nodes, yn)?;
    Ok(g.value(x).clone())
}

/// Maps observations to latents; returns per-row total log-det.
pub fn flow_forward(y: &Tensor, stack: &FlowStack) -> Result<(Tensor, Vec<f64>)> {
    let mut z = y.clone();
    let mut total = vec![0.0; y.rows()];
    for layer in &stack.layers {
        let (next, ld) = coupling_forward(&z, layer)?;
        for (acc, v) in total.iter_mut().zip(ld) {
            *acc += v;
        }
        z = next;
    }
    Ok((z, total))
}

pub fn flow_inverse(z: &Tensor, stack: &FlowStack) -> Result<Tensor> {
    let mut y = z.clone();
    for layer in stack.layers.iter().rev() {
        y = coupling_inverse(&y, layer)?;
    }
    Ok(y)
}

/// Input to every layer together with that layer's per-row log-det.
pub fn flow_forward_trace(y: &Tensor, stack: &FlowStack) -> Result<Vec<(Tensor, Vec<f64>)>> {
    let mut out = Vec::with_capacity(stack.depth());
    let mut x = y.clone();
    for layer in &stack.layers {
        let (next, ld) = coupling_forward(&x, layer)?;
        out.push((x, ld));
        x = next;
    }
    Ok(out)
}
