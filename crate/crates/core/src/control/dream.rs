use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;

use crate::model::{generate_step, FrmdnModel};
use crate::recurrent::RecurrentState;
use crate::rng::stream_rng;
use crate::{Error, Result};

/// `tanh(W (z ⊕ h) + b)`, with `W` stored row-major as `d_action x (d + H)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearController {
    d: usize,
    hidden: usize,
    d_action: usize,
    w: Vec<f64>,
    b: Vec<f64>,
}

impl LinearController {
    pub fn param_count(d: usize, hidden: usize, d_action: usize) -> usize {
        d_action * (d + hidden + 1)
    }

    pub fn zeros(d: usize, hidden: usize, d_action: usize) -> Self {
        Self {
            d,
            hidden,
            d_action,
            w: vec![0.0; d_action * (d + hidden)],
            b: vec![0.0; d_action],
        }
    }

    /// Unpacks a flat vector: weights row by row, then the bias.
    pub fn from_params(d: usize, hidden: usize, d_action: usize, params: &[f64]) -> Result<Self> {
        let n = Self::param_count(d, hidden, d_action);
        if params.len() != n {
            return Err(Error::Dimension {
                context: "controller parameters",
                expected: n,
                got: params.len(),
            });
        }
        let split = d_action * (d + hidden);
        Ok(Self {
            d,
            hidden,
            d_action,
            w: params[..split].to_vec(),
            b: params[split..].to_vec(),
        })
    }

    pub fn params(&self) -> Vec<f64> {
        let mut p = self.w.clone();
        p.extend_from_slice(&self.b);
        p
    }

    pub fn action_dim(&self) -> usize {
        self.d_action
    }

    pub fn act(&self, z: &[f64], h: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.d {
            return Err(Error::Dimension {
                context: "controller observation",
                expected: self.d,
                got: z.len(),
            });
        }
        if h.len() != self.hidden {
            return Err(Error::Dimension {
                context: "controller hidden state",
                expected: self.hidden,
                got: h.len(),
            });
        }
        let width = self.d + self.hidden;
        Ok((0..self.d_action)
            .map(|i| {
                let row = &self.w[i * width..(i + 1) * width];
                let s: f64 = row.iter().zip(z.iter().chain(h)).map(|(w, x)| w * x).sum();
                (s + self.b[i]).tanh()
            })
            .collect())
    }
}

/// Reward for the observation reached at step `t` after taking `action`.
pub type RewardFn = Arc<dyn Fn(&[f64], &[f64], usize) -> f64 + Send + Sync>;

/// `-‖y‖²`.
pub fn origin_reward() -> RewardFn {
    Arc::new(|y, _, _| -y.iter().map(|v| v * v).sum::<f64>())
}

/// `-‖y - target(t)‖²` with the target circling the origin in the first two
/// coordinates.
pub fn tracking_reward(radius: f64, period: f64) -> RewardFn {
    Arc::new(move |y, _, t| {
        let phase = std::f64::consts::TAU * t as f64 / period;
        let target = [radius * phase.cos(), radius * phase.sin()];
        -y.iter()
            .enumerate()
            .map(|(i, v)| (v - target.get(i).copied().unwrap_or(0.0)).powi(2))
            .sum::<f64>()
    })
}

pub fn zero_reward() -> RewardFn {
    Arc::new(|_, _, _| 0.0)
}

/// A learned model standing in for the real environment.
#[derive(Clone)]
pub struct DreamEnv<'a> {
    pub model: &'a FrmdnModel,
    pub reward: RewardFn,
    pub horizon: usize,
    pub start: Vec<f64>,
}

impl fmt::Debug for DreamEnv<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DreamEnv")
            .field("horizon", &self.horizon)
            .field("start", &self.start)
            .finish_non_exhaustive()
    }
}

impl DreamEnv<'_> {
    pub fn controller_params(&self) -> usize {
        let c = &self.model.config;
        LinearController::param_count(c.d, c.hidden, c.d_action)
    }
}

/// Closed-loop rollout inside the model; returns the cumulative reward.
pub fn dream_rollout<R: Rng + ?Sized>(env: &DreamEnv<'_>, ctrl: &LinearController, rng: &mut R) -> Result<f64> {
    let cfg = &env.model.config;
    if cfg.d_action != ctrl.action_dim() {
        return Err(Error::Dimension {
            context: "controller action",
            expected: cfg.d_action,
            got: ctrl.action_dim(),
        });
    }
    if env.start.len() != cfg.d {
        return Err(Error::Dimension {
            context: "dream start",
            expected: cfg.d,
            got: env.start.len(),
        });
    }
    let mut state = RecurrentState::zeros(1, cfg.hidden);
    let mut y = env.start.clone();
    let mut total = 0.0;
    for t in 0..env.horizon {
        let a = ctrl.act(&y, state.h.data())?;
        let mut x = y.clone();
        x.extend_from_slice(&a);
        let (next, s) = generate_step(env.model, &x, &state, rng)?;
        total += (env.reward)(&next, &a, t);
        y = next;
        state = s;
    }
    if !total.is_finite() {
        return Err(Error::NonFinite { what: "cumulative reward".into() });
    }
    Ok(total)
}

/// Negative mean cumulative reward of each candidate over `episodes` rollouts.
/// Episode `e` draws from `stream_rng(seed, e)` for every candidate, so results
/// depend only on the candidate and the seed.
pub fn evaluate_population(env: &DreamEnv<'_>, candidates: &[Vec<f64>], episodes: usize, seed: u64) -> Result<Vec<f64>> {
    if episodes == 0 {
        return Err(Error::InvalidParameter("need at least one episode per candidate".into()));
    }
    let cfg = &env.model.config;
    candidates
        .par_iter()
        .map(|p| {
            let ctrl = LinearController::from_params(cfg.d, cfg.hidden, cfg.d_action, p)?;
            let mut sum = 0.0;
            for e in 0..episodes {
                sum += dream_rollout(env, &ctrl, &mut stream_rng(seed, e as u64))?;
            }
            Ok(-sum / episodes as f64)
        })
        .collect()
}
