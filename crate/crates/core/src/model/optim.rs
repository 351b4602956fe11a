use std::fmt;
use std::str::FromStr;

use crate::diffcore::Tensor;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerKind {
    RmsProp,
    Adam,
}

impl OptimizerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            OptimizerKind::RmsProp => "rmsprop",
            OptimizerKind::Adam => "adam",
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rmsprop" => Ok(OptimizerKind::RmsProp),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(Error::InvalidParameter(format!("unknown optimizer '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    /// Global gradient-norm clip.
    pub clip_norm: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::RmsProp,
            lr: 1e-4,
            clip_norm: 10.0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidParameter(format!("learning rate must be >= 0, got {}", self.lr)));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::InvalidParameter(format!("clip norm must be positive, got {}", self.clip_norm)));
        }
        Ok(())
    }
}

const RMS_DECAY: f64 = 0.99;
const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

/// First and second moment buffers for every parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Optimizer {
    pub config: OptimizerConfig,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig, params: &[Tensor]) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            step: 0,
            first: params.iter().map(|p| vec![0.0; p.data().len()]).collect(),
            second: params.iter().map(|p| vec![0.0; p.data().len()]).collect(),
        })
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Moment buffers as `(first, second)` per parameter.
    pub fn moments(&self) -> impl Iterator<Item = (&[f64], &[f64])> {
        self.first.iter().zip(&self.second).map(|(a, b)| (a.as_slice(), b.as_slice()))
    }

    pub fn from_parts(config: OptimizerConfig, step: u64, first: Vec<Vec<f64>>, second: Vec<Vec<f64>>) -> Result<Self> {
        config.validate()?;
        if first.len() != second.len() || first.iter().zip(&second).any(|(a, b)| a.len() != b.len()) {
            return Err(Error::InvalidParameter("optimizer moment buffers disagree".into()));
        }
        Ok(Self {
            config,
            step,
            first,
            second,
        })
    }

    /// Clips `grads` to the global norm and returns updated parameters plus
    /// the pre-clip norm. State is only committed when everything is finite.
    pub fn update(&mut self, params: &[Tensor], grads: &[Tensor]) -> Result<(Vec<Tensor>, f64)> {
        if params.len() != self.first.len() || grads.len() != params.len() {
            return Err(Error::Dimension {
                context: "optimizer parameters",
                expected: self.first.len(),
                got: grads.len(),
            });
        }
        let norm = grads
            .iter()
            .flat_map(|g| g.data().iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt();
        if !norm.is_finite() {
            return Err(Error::NonFinite { what: "gradient".into() });
        }
        let scale = if norm > self.config.clip_norm {
            self.config.clip_norm / norm
        } else {
            1.0
        };
        let step = self.step + 1;
        let lr = self.config.lr;
        let mut first = self.first.clone();
        let mut second = self.second.clone();
        let mut out = Vec::with_capacity(params.len());
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() {
                return Err(Error::InvalidParameter(format!("gradient {i} has the wrong shape")));
            }
            let mut next = p.clone();
            let (m, v) = (&mut first[i], &mut second[i]);
            let data = next.data_mut();
            match self.config.kind {
                OptimizerKind::RmsProp => {
                    for j in 0..data.len() {
                        let gj = g.data()[j] * scale;
                        v[j] = RMS_DECAY * v[j] + (1.0 - RMS_DECAY) * gj * gj;
                        data[j] -= lr * gj / (v[j].sqrt() + EPS);
                    }
                }
                OptimizerKind::Adam => {
                    let c1 = 1.0 - BETA1.powi(step as i32);
                    let c2 = 1.0 - BETA2.powi(step as i32);
                    for j in 0..data.len() {
                        let gj = g.data()[j] * scale;
                        m[j] = BETA1 * m[j] + (1.0 - BETA1) * gj;
                        v[j] = BETA2 * v[j] + (1.0 - BETA2) * gj * gj;
                        data[j] -= lr * (m[j] / c1) / ((v[j] / c2).sqrt() + EPS);
                    }
                }
            }
            if !next.all_finite() {
                return Err(Error::NonFinite {
                    what: "updated parameter".into(),
                });
            }
            out.push(next);
        }
        self.first = first;
        self.second = second;
        self.step = step;
        Ok((out, norm))
    }
}
