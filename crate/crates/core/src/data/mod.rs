//! Synthetic sequence generators with known entropy rates, and the FSEQ
//! dataset format.

mod format;
mod generators;

pub use format::{read_fseq, read_fseq_file, write_csv, write_fseq, write_fseq_file, FSEQ_MAGIC, FSEQ_VERSION};
pub use generators::{
    ar_entropy_rate, bimodality_coefficient, gen_control_task, gen_correlated_ar, gen_switching_modes,
    switching_entropy_rate, ControlDynamics, EntropyRate, SwitchingSpec,
};

use crate::diffcore::Tensor;
use crate::{Error, Result};

/// `Q` sequences of `T` steps, observations `Q x T x d` and optional actions
/// `Q x T x d_action`, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceBatch {
    q: usize,
    t: usize,
    d: usize,
    d_action: usize,
    observations: Vec<f64>,
    actions: Option<Vec<f64>>,
    pub descriptor: String,
}

impl SequenceBatch {
    pub fn new(
        q: usize,
        t: usize,
        d: usize,
        observations: Vec<f64>,
        actions: Option<(usize, Vec<f64>)>,
        descriptor: impl Into<String>,
    ) -> Result<Self> {
        if observations.len() != q * t * d {
            return Err(Error::Dimension {
                context: "observations",
                expected: q * t * d,
                got: observations.len(),
            });
        }
        if observations.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "observation".into(),
            });
        }
        let (d_action, actions) = match actions {
            Some((da, a)) if da > 0 => {
                if a.len() != q * t * da {
                    return Err(Error::Dimension {
                        context: "actions",
                        expected: q * t * da,
                        got: a.len(),
                    });
                }
                if a.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite { what: "action".into() });
                }
                (da, Some(a))
            }
            _ => (0, None),
        };
        Ok(Self {
            q,
            t,
            d,
            d_action,
            observations,
            actions,
            descriptor: descriptor.into(),
        })
    }

    pub fn sequences(&self) -> usize {
        self.q
    }

    pub fn steps(&self) -> usize {
        self.t
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn action_dim(&self) -> usize {
        self.d_action
    }

    pub fn observations(&self) -> &[f64] {
        &self.observations
    }

    pub fn actions(&self) -> Option<&[f64]> {
        self.actions.as_deref()
    }

    pub fn obs(&self, q: usize, t: usize) -> &[f64] {
        let at = (q * self.t + t) * self.d;
        &self.observations[at..at + self.d]
    }

    pub fn action(&self, q: usize, t: usize) -> Option<&[f64]> {
        self.actions.as_ref().map(|a| {
            let at = (q * self.t + t) * self.d_action;
            &a[at..at + self.d_action]
        })
    }

    /// Observations of step `t` for every sequence, `Q x d`.
    pub fn obs_at(&self, t: usize) -> Tensor {
        let mut data = Vec::with_capacity(self.q * self.d);
        for q in 0..self.q {
            data.extend_from_slice(self.obs(q, t));
        }
        Tensor::matrix(self.q, self.d, data)
    }

    /// Network input of step `t`: observation, then action when present.
    pub fn input_at(&self, t: usize) -> Tensor {
        let width = self.d + self.d_action;
        let mut data = Vec::with_capacity(self.q * width);
        for q in 0..self.q {
            data.extend_from_slice(self.obs(q, t));
            if let Some(a) = self.action(q, t) {
                data.extend_from_slice(a);
            }
        }
        Tensor::matrix(self.q, width, data)
    }

    /// Builds a batch from `(sequence, start)` windows of `len` steps.
    pub fn windows(&self, picks: &[(usize, usize)], len: usize) -> Result<SequenceBatch> {
        let mut obs = Vec::with_capacity(picks.len() * len * self.d);
        let mut act = Vec::with_capacity(picks.len() * len * self.d_action);
        for &(q, start) in picks {
            if q >= self.q || start + len > self.t {
                return Err(Error::InvalidParameter(format!(
                    "window ({q}, {start}..{}) outside a {}x{} batch",
                    start + len,
                    self.q,
                    self.t
                )));
            }
            for t in start..start + len {
                obs.extend_from_slice(self.obs(q, t));
                if let Some(a) = self.action(q, t) {
                    act.extend_from_slice(a);
                }
            }
        }
        let actions = self.actions.as_ref().map(|_| (self.d_action, act));
        SequenceBatch::new(picks.len(), len, self.d, obs, actions, self.descriptor.clone())
    }

    /// Whole sequences `range`, e.g. a train/test split.
    pub fn select(&self, seqs: std::ops::Range<usize>) -> Result<SequenceBatch> {
        let picks: Vec<(usize, usize)> = seqs.map(|q| (q, 0)).collect();
        self.windows(&picks, self.t)
    }
}

/// Window starts covering every transition of a length-`t` sequence:
/// stride `len - 1`, plus a final window flush with the end.
pub fn window_starts(t: usize, len: usize) -> Vec<usize> {
    if len < 2 || t < len {
        return Vec::new();
    }
    let mut starts: Vec<usize> = (0..=t - len).step_by(len - 1).collect();
    if starts.last() != Some(&(t - len)) {
        starts.push(t - len);
    }
    starts
}
