//! LSTM backbone and the mixture projection head.

use rand::Rng;

use crate::diffcore::{Graph, NodeId, Tensor};
use crate::distributions::{coeffs_from_logits, diag_scales_from_logits, HeadStructure, MixtureParams};
use crate::rng::fan_in_uniform;
use crate::{Error, Result};

/// Single LSTM layer. `w` maps `[x, h]` to the four gates `[i, f, g, o]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmParams {
    pub w: Tensor,
    pub b: Tensor,
    input_dim: usize,
    hidden: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct LstmNodes {
    pub w: NodeId,
    pub b: NodeId,
}

/// Hidden and cell vectors for a batch of sequences (`batch x H` each).
#[derive(Clone, Debug, PartialEq)]
pub struct RecurrentState {
    pub h: Tensor,
    pub c: Tensor,
}

impl RecurrentState {
    pub fn zeros(batch: usize, hidden: usize) -> Self {
        Self {
            h: Tensor::zeros(&[batch, hidden]),
            c: Tensor::zeros(&[batch, hidden]),
        }
    }
}

impl LstmParams {
    /// Fan-in uniform weights, forget-gate bias 1, other biases 0.
    pub fn new<R: Rng + ?Sized>(input_dim: usize, hidden: usize, rng: &mut R) -> Self {
        let fan_in = input_dim + hidden;
        let w = Tensor::matrix(fan_in, 4 * hidden, fan_in_uniform(rng, fan_in, fan_in * 4 * hidden));
        let mut b = vec![0.0; 4 * hidden];
        b[hidden..2 * hidden].fill(1.0);
        Self {
            w,
            b: Tensor::matrix(1, 4 * hidden, b),
            input_dim,
            hidden,
        }
    }

    pub fn zeroed(input_dim: usize, hidden: usize) -> Self {
        Self {
            w: Tensor::zeros(&[input_dim + hidden, 4 * hidden]),
            b: Tensor::zeros(&[1, 4 * hidden]),
            input_dim,
            hidden,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn tensors(&self) -> [(&'static str, &Tensor); 2] {
        [("w", &self.w), ("b", &self.b)]
    }

    pub fn tensors_mut(&mut self) -> [(&'static str, &mut Tensor); 2] {
        [("w", &mut self.w), ("b", &mut self.b)]
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> LstmNodes {
        if trainable {
            LstmNodes {
                w: g.leaf(self.w.clone()),
                b: g.leaf(self.b.clone()),
            }
        } else {
            LstmNodes {
                w: g.constant(self.w.clone()),
                b: g.constant(self.b.clone()),
            }
        }
    }

    /// One cell update on graph nodes; returns `(h, c)`.
    pub fn step_nodes(&self, g: &mut Graph, nodes: &LstmNodes, x: NodeId, h: NodeId, c: NodeId) -> Result<(NodeId, NodeId)> {
        let xd = g.value(x).cols();
        if xd != self.input_dim {
            return Err(Error::Dimension {
                context: "lstm input",
                expected: self.input_dim,
                got: xd,
            });
        }
        if g.value(h).cols() != self.hidden || g.value(c).cols() != self.hidden {
            return Err(Error::Dimension {
                context: "lstm state",
                expected: self.hidden,
                got: g.value(h).cols(),
            });
        }
        let hs = self.hidden;
        let xh = g.concat(1, &[x, h])?;
        let gates = g.affine(xh, nodes.w, nodes.b)?;
        let i = g.slice_cols(gates, 0, hs)?;
        let f = g.slice_cols(gates, hs, 2 * hs)?;
        let cand = g.slice_cols(gates, 2 * hs, 3 * hs)?;
        let o = g.slice_cols(gates, 3 * hs, 4 * hs)?;
        let i = g.sigmoid(i)?;
        let f = g.sigmoid(f)?;
        let cand = g.tanh(cand)?;
        let o = g.sigmoid(o)?;
        let keep = g.mul(f, c)?;
        let write = g.mul(i, cand)?;
        let c_new = g.add(keep, write)?;
        let squashed = g.tanh(c_new)?;
        let h_new = g.mul(o, squashed)?;
        Ok((h_new, c_new))
    }
}

/// Advances `state` by one input row per sequence (`x` is `batch x d_in`).
pub fn lstm_step(x: &Tensor, state: &RecurrentState, params: &LstmParams) -> Result<(Tensor, RecurrentState)> {
    let mut g = Graph::new();
    let nodes = params.bind(&mut g, false);
    let xn = g.constant(x.clone());
    let hn = g.constant(state.h.clone());
    let cn = g.constant(state.c.clone());
    let (h, c) = params.step_nodes(&mut g, &nodes, xn, hn, cn)?;
    let h = g.value(h).clone();
    let c = g.value(c).clone();
    Ok((h.clone(), RecurrentState { h, c }))
}

/// Linear map from the hidden state to `K + K d + K d` mixture logits.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadParams {
    pub w: Tensor,
    pub b: Tensor,
    pub structure: HeadStructure,
    components: usize,
    dim: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct HeadNodes {
    pub w: NodeId,
    pub b: NodeId,
}

impl HeadParams {
    pub fn new<R: Rng + ?Sized>(hidden: usize, components: usize, dim: usize, structure: HeadStructure, rng: &mut R) -> Self {
        let width = components * (1 + 2 * dim);
        Self {
            w: Tensor::matrix(hidden, width, fan_in_uniform(rng, hidden, hidden * width)),
            b: Tensor::zeros(&[1, width]),
            structure,
            components,
            dim,
        }
    }

    pub fn zeroed(hidden: usize, components: usize, dim: usize, structure: HeadStructure) -> Self {
        let width = components * (1 + 2 * dim);
        Self {
            w: Tensor::zeros(&[hidden, width]),
            b: Tensor::zeros(&[1, width]),
            structure,
            components,
            dim,
        }
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Sizes of the coefficient, mean and scale logit blocks.
    pub fn block_sizes(&self) -> (usize, usize, usize) {
        let kd = self.components * self.dim;
        (self.components, kd, kd)
    }

    pub fn output_width(&self) -> usize {
        let (a, m, s) = self.block_sizes();
        a + m + s
    }

    pub fn tensors(&self) -> [(&'static str, &Tensor); 2] {
        [("w", &self.w), ("b", &self.b)]
    }

    pub fn tensors_mut(&mut self) -> [(&'static str, &mut Tensor); 2] {
        [("w", &mut self.w), ("b", &mut self.b)]
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> HeadNodes {
        if trainable {
            HeadNodes {
                w: g.leaf(self.w.clone()),
                b: g.leaf(self.b.clone()),
            }
        } else {
            HeadNodes {
                w: g.constant(self.w.clone()),
                b: g.constant(self.b.clone()),
            }
        }
    }

    pub fn logits_nodes(&self, g: &mut Graph, nodes: &HeadNodes, h: NodeId) -> Result<NodeId> {
        Ok(g.affine(h, nodes.w, nodes.b)?)
    }

    /// Splits one row of logits into constrained mixture parameters.
    pub fn params_from_logits(&self, logits: &[f64]) -> Result<MixtureParams> {
        if logits.len() != self.output_width() {
            return Err(Error::Dimension {
                context: "head logits",
                expected: self.output_width(),
                got: logits.len(),
            });
        }
        let (k, kd, _) = self.block_sizes();
        let alpha = coeffs_from_logits(&logits[..k]);
        let mu = logits[k..k + kd].to_vec();
        let diag = diag_scales_from_logits(&logits[k + kd..]);
        MixtureParams::new(self.structure, alpha, mu, diag)
    }
}

/// Mixture parameters for one hidden vector.
pub fn head_project(h: &[f64], head: &HeadParams) -> Result<MixtureParams> {
    let hidden = head.w.rows();
    if h.len() != hidden {
        return Err(Error::Dimension {
            context: "head input",
            expected: hidden,
            got: h.len(),
        });
    }
    let out = Tensor::row(h).matmul(&head.w)?;
    let logits: Vec<f64> = out.data().iter().zip(head.b.data()).map(|(a, b)| a + b).collect();
    head.params_from_logits(&logits)
}
