//! The full model: LSTM backbone, mixture head, optional shared matrix and
//! coupling flow on the targets.

mod checkpoint;
mod generate;
mod optim;
mod train;

pub use checkpoint::{load_checkpoint, load_checkpoint_file, save_checkpoint, save_checkpoint_file, Checkpoint, FRMD_MAGIC, FRMD_VERSION};
pub use generate::{generate_step, rollout};
pub use optim::{Optimizer, OptimizerConfig, OptimizerKind};
pub use train::{train_epoch, train_step, LossRecord, TrainOptions};

use std::fmt::Write as _;

use crate::data::SequenceBatch;
use crate::diffcore::{grad_check, DiffError, Graph, NodeId, Tensor};
use crate::distributions::graph::{mixture_log_density_nodes, MixtureSpec};
use crate::distributions::{HeadStructure, SharedMatrix};
use crate::flow::{CouplingNodes, FlowStack, DEFAULT_HIDDEN, DEFAULT_S_CLAMP};
use crate::recurrent::{HeadNodes, HeadParams, LstmNodes, LstmParams};
use crate::rng::stream_rng;
use crate::{Error, Result};

/// Architecture of one model. `flow_depth` counts coupling pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub d: usize,
    pub d_action: usize,
    pub components: usize,
    pub hidden: usize,
    pub flow_depth: usize,
    pub head_structure: HeadStructure,
    pub flow_enabled: bool,
    pub c_width: f64,
    pub flow_hidden: usize,
    pub s_clamp: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d: 2,
            d_action: 0,
            components: 5,
            hidden: 128,
            flow_depth: 1,
            head_structure: HeadStructure::Diagonal,
            flow_enabled: true,
            c_width: 1.0,
            flow_hidden: DEFAULT_HIDDEN,
            s_clamp: DEFAULT_S_CLAMP,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::InvalidParameter(format!("bad value '{value}' for {key}")))
}

pub(crate) fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "on" | "1" | "yes" => Ok(true),
        "false" | "off" | "0" | "no" => Ok(false),
        other => Err(Error::InvalidParameter(format!("bad value '{other}' for {key}"))),
    }
}

impl ModelConfig {
    pub const KEYS: [&'static str; 10] = [
        "d",
        "d_action",
        "k",
        "h",
        "flow_depth",
        "head_structure",
        "flow",
        "c_width",
        "flow_hidden",
        "s_clamp",
    ];

    /// Sets one field; `Ok(false)` when the key is not a model key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "d" => self.d = parse_num(key, value)?,
            "d_action" => self.d_action = parse_num(key, value)?,
            "k" => self.components = parse_num(key, value)?,
            "h" => self.hidden = parse_num(key, value)?,
            "flow_depth" => self.flow_depth = parse_num(key, value)?,
            "head_structure" => self.head_structure = value.trim().parse()?,
            "flow" => self.flow_enabled = parse_bool(key, value)?,
            "c_width" => self.c_width = parse_num(key, value)?,
            "flow_hidden" => self.flow_hidden = parse_num(key, value)?,
            "s_clamp" => self.s_clamp = parse_num(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d", self.d),
            ("k", self.components),
            ("h", self.hidden),
            ("flow_hidden", self.flow_hidden),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::InvalidParameter(format!("{name} must be positive")));
            }
        }
        if self.flow_active() && self.d < 2 {
            return Err(Error::InvalidParameter("a coupling flow needs d >= 2".into()));
        }
        if !(self.c_width > 0.0 && self.c_width.is_finite()) {
            return Err(Error::InvalidParameter(format!("c_width must be positive, got {}", self.c_width)));
        }
        if !(self.s_clamp > 0.0 && self.s_clamp.is_finite()) {
            return Err(Error::InvalidParameter(format!("s_clamp must be positive, got {}", self.s_clamp)));
        }
        Ok(())
    }

    pub fn flow_active(&self) -> bool {
        self.flow_enabled && self.flow_depth > 0
    }

    /// `key=value` lines, one per field.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "d={}", self.d);
        let _ = writeln!(s, "d_action={}", self.d_action);
        let _ = writeln!(s, "k={}", self.components);
        let _ = writeln!(s, "h={}", self.hidden);
        let _ = writeln!(s, "flow_depth={}", self.flow_depth);
        let _ = writeln!(s, "head_structure={}", self.head_structure);
        let _ = writeln!(s, "flow={}", self.flow_enabled);
        let _ = writeln!(s, "c_width={}", self.c_width);
        let _ = writeln!(s, "flow_hidden={}", self.flow_hidden);
        let _ = writeln!(s, "s_clamp={}", self.s_clamp);
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = Self::default();
        for (k, v) in parse_kv_lines(text)? {
            if !c.set(&k, &v)? {
                return Err(Error::InvalidParameter(format!("unknown config key '{k}'")));
            }
        }
        c.validate()?;
        Ok(c)
    }

    fn mixture_spec(&self) -> MixtureSpec {
        MixtureSpec {
            structure: self.head_structure,
            components: self.components,
            dim: self.d,
            c_width: self.c_width,
        }
    }
}

/// Parses `key=value` lines; blank lines and `#` comments are skipped.
pub fn parse_kv_lines(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::InvalidParameter(format!("line {}: expected key=value", n + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Mean per-step negative log-likelihood and its two parts.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NllReport {
    pub total: f64,
    /// `-log p(z)` under the mixture, averaged over steps.
    pub mixture: f64,
    /// Minus the mean flow log-determinant; zero without a flow.
    pub logdet: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct NllNodes {
    pub total: NodeId,
    pub mixture: NodeId,
    pub logdet: Option<NodeId>,
}

/// Graph handles of every parameter, in [`FrmdnModel::named_params`] order.
#[derive(Clone, Debug)]
pub struct ModelNodes {
    pub lstm: LstmNodes,
    pub head: HeadNodes,
    pub shared_u: Option<NodeId>,
    pub flow: Vec<CouplingNodes>,
    leaves: Vec<NodeId>,
}

impl ModelNodes {
    pub fn leaves(&self) -> &[NodeId] {
        &self.leaves
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrmdnModel {
    pub config: ModelConfig,
    pub lstm: LstmParams,
    pub head: HeadParams,
    /// Trainable for the tied head, identity otherwise.
    pub shared: SharedMatrix,
    pub flow: FlowStack,
}

const LSTM_STREAM: u64 = 101;
const HEAD_STREAM: u64 = 102;
const FLOW_STREAM: u64 = 103;

impl FrmdnModel {
    /// Each part draws from its own stream, so the backbone and head are
    /// identical with and without a flow.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let lstm = LstmParams::new(c.d + c.d_action, c.hidden, &mut stream_rng(seed, LSTM_STREAM));
        let head = HeadParams::new(c.hidden, c.components, c.d, c.head_structure, &mut stream_rng(seed, HEAD_STREAM));
        let shared = match c.head_structure {
            HeadStructure::Tied => SharedMatrix::full(Tensor::identity(c.d))?,
            _ => SharedMatrix::identity(c.d),
        };
        let flow = if c.flow_active() {
            FlowStack::alternating(c.d, c.flow_depth, c.flow_hidden, c.s_clamp, &mut stream_rng(seed, FLOW_STREAM))?
        } else {
            FlowStack::empty()
        };
        Ok(Self {
            config,
            lstm,
            head,
            shared,
            flow,
        })
    }

    pub fn trains_shared(&self) -> bool {
        self.config.head_structure == HeadStructure::Tied
    }

    /// Every trainable tensor with a stable name.
    pub fn named_params(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        for (n, t) in self.lstm.tensors() {
            out.push((format!("lstm.{n}"), t.clone()));
        }
        for (n, t) in self.head.tensors() {
            out.push((format!("head.{n}"), t.clone()));
        }
        if self.trains_shared() {
            out.push(("shared.u".into(), self.shared.u().clone()));
        }
        for (i, layer) in self.flow.layers.iter().enumerate() {
            for (net_name, net) in [("s", &layer.s_net), ("t", &layer.t_net)] {
                for (n, t) in net.tensors() {
                    out.push((format!("flow.{i}.{net_name}.{n}"), t.clone()));
                }
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.data().len()).sum()
    }

    /// Replaces every parameter; names and shapes must match exactly.
    pub fn set_named_params(&mut self, params: &[(String, Tensor)]) -> Result<()> {
        let current = self.named_params();
        if params.len() != current.len() {
            return Err(Error::Dimension {
                context: "parameter list",
                expected: current.len(),
                got: params.len(),
            });
        }
        for ((name, t), (want, old)) in params.iter().zip(&current) {
            if name != want || t.shape() != old.shape() {
                return Err(Error::InvalidParameter(format!(
                    "parameter '{name}' {:?} does not match '{want}' {:?}",
                    t.shape(),
                    old.shape()
                )));
            }
            if !t.all_finite() {
                return Err(Error::NonFinite {
                    what: format!("parameter {name}"),
                });
            }
        }
        let mut next = self.clone();
        let mut it = params.iter().map(|(_, t)| t.clone());
        for (_, t) in next.lstm.tensors_mut() {
            *t = it.next().expect("length checked");
        }
        for (_, t) in next.head.tensors_mut() {
            *t = it.next().expect("length checked");
        }
        if next.trains_shared() {
            next.shared.set_u(it.next().expect("length checked"))?;
            next.shared.check_nondegenerate()?;
        }
        for layer in &mut next.flow.layers {
            for net in [&mut layer.s_net, &mut layer.t_net] {
                for (_, t) in net.tensors_mut() {
                    *t = it.next().expect("length checked");
                }
            }
        }
        *self = next;
        Ok(())
    }

    pub fn flat_params(&self) -> Vec<f64> {
        self.named_params().iter().flat_map(|(_, t)| t.data().to_vec()).collect()
    }

    pub fn with_flat_params(&self, flat: &[f64]) -> Result<Self> {
        let mut params = self.named_params();
        let total: usize = params.iter().map(|(_, t)| t.data().len()).sum();
        if flat.len() != total {
            return Err(Error::Dimension {
                context: "flat parameters",
                expected: total,
                got: flat.len(),
            });
        }
        let mut off = 0;
        for (_, t) in &mut params {
            let n = t.data().len();
            t.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        let mut out = self.clone();
        out.set_named_params(&params)?;
        Ok(out)
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> ModelNodes {
        let lstm = self.lstm.bind(g, trainable);
        let head = self.head.bind(g, trainable);
        let shared_u = match self.config.head_structure {
            HeadStructure::Tied if trainable => Some(g.leaf(self.shared.u().clone())),
            HeadStructure::Tied => Some(g.constant(self.shared.u().clone())),
            _ => None,
        };
        let flow = self.flow.bind(g, trainable);
        let mut leaves = vec![lstm.w, lstm.b, head.w, head.b];
        leaves.extend(shared_u);
        for n in &flow {
            leaves.extend(n.s.leaves());
            leaves.extend(n.t.leaves());
        }
        ModelNodes {
            lstm,
            head,
            shared_u,
            flow,
            leaves,
        }
    }

    fn check_batch(&self, batch: &SequenceBatch) -> Result<()> {
        if batch.dim() != self.config.d {
            return Err(Error::Dimension {
                context: "observation dimension",
                expected: self.config.d,
                got: batch.dim(),
            });
        }
        if batch.action_dim() != self.config.d_action {
            return Err(Error::Dimension {
                context: "action dimension",
                expected: self.config.d_action,
                got: batch.action_dim(),
            });
        }
        if batch.steps() < 2 {
            return Err(Error::SequenceTooShort(batch.steps()));
        }
        if batch.sequences() == 0 {
            return Err(Error::InvalidParameter("empty batch".into()));
        }
        Ok(())
    }

    /// Teacher-forced NLL graph: step `t` reads `y_t` (and `a_t`) and scores
    /// `y_{t+1}`. Rows are ordered step-major.
    pub fn nll_nodes(&self, g: &mut Graph, nodes: &ModelNodes, batch: &SequenceBatch) -> Result<NllNodes> {
        self.check_batch(batch)?;
        let (q, t, h) = (batch.sequences(), batch.steps(), self.config.hidden);
        let mut hn = g.constant(Tensor::zeros(&[q, h]));
        let mut cn = g.constant(Tensor::zeros(&[q, h]));
        let mut hs = Vec::with_capacity(t - 1);
        for step in 0..t - 1 {
            let x = g.constant(batch.input_at(step));
            let (nh, nc) = self.lstm.step_nodes(g, &nodes.lstm, x, hn, cn)?;
            hn = nh;
            cn = nc;
            hs.push(hn);
        }
        let hstack = if hs.len() == 1 { hs[0] } else { g.concat(0, &hs)? };
        let mut targets = Vec::with_capacity((t - 1) * q * self.config.d);
        for step in 1..t {
            targets.extend_from_slice(batch.obs_at(step).data());
        }
        let y = g.constant(Tensor::matrix((t - 1) * q, self.config.d, targets));
        let logits = self.head.logits_nodes(g, &nodes.head, hstack)?;
        let (z, ld) = self.flow.forward_nodes(g, &nodes.flow, y)?;
        let log_mix = mixture_log_density_nodes(g, &self.config.mixture_spec(), logits, z, nodes.shared_u)?;
        let mean_mix = g.mean(log_mix)?;
        let mixture = g.neg(mean_mix)?;
        let (total, logdet) = match ld {
            Some(ld) => {
                let mean_ld = g.mean(ld)?;
                let logdet = g.neg(mean_ld)?;
                (g.add(mixture, logdet)?, Some(logdet))
            }
            None => (mixture, None),
        };
        Ok(NllNodes { total, mixture, logdet })
    }

    fn report(g: &Graph, n: &NllNodes) -> Result<NllReport> {
        let r = NllReport {
            total: g.value(n.total).item(),
            mixture: g.value(n.mixture).item(),
            logdet: n.logdet.map_or(0.0, |l| g.value(l).item()),
        };
        if !r.total.is_finite() {
            return Err(Error::NonFinite {
                what: "sequence NLL".into(),
            });
        }
        Ok(r)
    }

    pub fn sequence_nll(&self, batch: &SequenceBatch) -> Result<NllReport> {
        let mut g = Graph::new();
        let nodes = self.bind(&mut g, false);
        let n = self.nll_nodes(&mut g, &nodes, batch)?;
        Self::report(&g, &n)
    }

    /// Per-step mean NLL over `data`, evaluated `chunk` sequences at a time to
    /// bound graph memory. Equal to `sequence_nll` up to summation order.
    pub fn evaluate(&self, data: &SequenceBatch, chunk: usize) -> Result<NllReport> {
        if chunk == 0 {
            return Err(Error::InvalidParameter("evaluation chunk must be positive".into()));
        }
        let q = data.sequences();
        let mut sum = NllReport {
            total: 0.0,
            mixture: 0.0,
            logdet: 0.0,
        };
        for start in (0..q).step_by(chunk) {
            let end = (start + chunk).min(q);
            let r = self.sequence_nll(&data.select(start..end)?)?;
            let w = (end - start) as f64 / q as f64;
            sum.total += w * r.total;
            sum.mixture += w * r.mixture;
            sum.logdet += w * r.logdet;
        }
        Ok(sum)
    }

    /// NLL and its gradient for every parameter, in `named_params` order.
    pub fn nll_and_grads(&self, batch: &SequenceBatch) -> Result<(NllReport, Vec<Tensor>)> {
        let mut g = Graph::new();
        let nodes = self.bind(&mut g, true);
        let n = self.nll_nodes(&mut g, &nodes, batch)?;
        let report = Self::report(&g, &n)?;
        let grads = g.backward(n.total)?;
        Ok((report, nodes.leaves().iter().map(|&l| grads.get(l)).collect()))
    }

    /// Max relative difference between analytic and central-difference
    /// gradients of the total NLL over all parameters.
    pub fn gradient_check(&self, batch: &SequenceBatch, step: f64) -> Result<f64> {
        let f = |x: &[f64]| -> std::result::Result<(f64, Vec<f64>), DiffError> {
            let m = self.with_flat_params(x).map_err(|e| DiffError::InvalidArgument {
                op: "gradient_check",
                reason: e.to_string(),
            })?;
            let (r, grads) = m.nll_and_grads(batch).map_err(|e| match e {
                Error::Diff(d) => d,
                other => DiffError::InvalidArgument {
                    op: "gradient_check",
                    reason: other.to_string(),
                },
            })?;
            Ok((r.total, grads.iter().flat_map(|t| t.data().to_vec()).collect()))
        };
        Ok(grad_check(f, &self.flat_params(), step)?)
    }
}
