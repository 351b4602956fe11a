use rand::Rng;

use super::SequenceBatch;
use crate::diffcore::log_sum_exp;
use crate::linalg::cholesky;
use crate::rng::{standard_normal, stream_rng};
use crate::{Error, Result};

const LOG_2PI_E: f64 = 2.837_877_066_409_345_3;

/// Per-step differential entropy rate of a generator, in nats.
/// `std_error` is zero when the value is exact.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EntropyRate {
    pub value: f64,
    pub std_error: f64,
}

fn equicorrelation(d: usize, corr: f64) -> Vec<f64> {
    let mut s = vec![corr; d * d];
    for i in 0..d {
        s[i * d + i] = 1.0;
    }
    s
}

/// Exact entropy rate `0.5 log((2 pi e)^d |Sigma|)` of the correlated AR
/// generator (independent of the lag coefficient).
pub fn ar_entropy_rate(d: usize, corr: f64) -> EntropyRate {
    let dd = d as f64;
    let log_det = (dd - 1.0) * (1.0 - corr).ln() + (1.0 + (dd - 1.0) * corr).ln();
    EntropyRate {
        value: 0.5 * (dd * LOG_2PI_E + log_det),
        std_error: 0.0,
    }
}

/// `y_{t+1} = rho y_t + eps`, `eps ~ N(0, Sigma)` with unit variances and
/// common correlation `corr`. `y_0` is drawn from the stationary law.
pub fn gen_correlated_ar(q: usize, t: usize, d: usize, rho: f64, corr: f64, seed: u64) -> Result<SequenceBatch> {
    if d < 2 {
        return Err(Error::InvalidParameter(format!("correlated AR needs d >= 2, got {d}")));
    }
    if !(rho.abs() < 1.0) {
        return Err(Error::InvalidParameter(format!("lag coefficient must satisfy |rho| < 1, got {rho}")));
    }
    // equicorrelation is PD iff -1/(d-1) < corr < 1
    if !(corr < 1.0 && corr > -1.0 / (d as f64 - 1.0)) {
        return Err(Error::NonPd(format!("equicorrelation {corr} with d = {d}")));
    }
    let l = cholesky(&equicorrelation(d, corr), d).ok_or_else(|| Error::NonPd(format!("corr = {corr}")))?;
    let stationary = 1.0 / (1.0 - rho * rho).sqrt();
    let mut obs = Vec::with_capacity(q * t * d);
    let mut noise = vec![0.0; d];
    let mut eps = vec![0.0; d];
    for s in 0..q {
        let mut rng = stream_rng(seed, s as u64 + 1);
        let mut y = vec![0.0; d];
        for step in 0..t {
            noise.iter_mut().for_each(|v| *v = standard_normal(&mut rng));
            for i in 0..d {
                eps[i] = (0..=i).map(|j| l[i * d + j] * noise[j]).sum();
            }
            if step == 0 {
                y.iter_mut().zip(&eps).for_each(|(v, e)| *v = stationary * e);
            } else {
                y.iter_mut().zip(&eps).for_each(|(v, e)| *v = rho * *v + e);
            }
            obs.extend_from_slice(&y);
        }
    }
    SequenceBatch::new(q, t, d, obs, None, format!("ar d={d} rho={rho} corr={corr} seed={seed}"))
}

/// Hidden Markov regime over `modes` Gaussian emission modes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SwitchingSpec {
    pub modes: usize,
    pub p_stay: f64,
    /// Distance between neighbouring mode means along every axis.
    pub spacing: f64,
    pub noise_sd: f64,
}

impl SwitchingSpec {
    pub fn new(modes: usize) -> Self {
        Self {
            modes,
            p_stay: 0.9,
            spacing: 5.0,
            noise_sd: 1.0,
        }
    }

    pub fn mode_mean(&self, m: usize) -> f64 {
        self.spacing * (m as f64 - 0.5 * (self.modes as f64 - 1.0))
    }

    fn validate(&self) -> Result<()> {
        if self.modes == 0 {
            return Err(Error::InvalidParameter("need at least one mode".into()));
        }
        if !(0.0..=1.0).contains(&self.p_stay) || !(self.noise_sd > 0.0) {
            return Err(Error::InvalidParameter("bad switching parameters".into()));
        }
        Ok(())
    }

    fn next_mode<R: Rng + ?Sized>(&self, m: usize, rng: &mut R) -> usize {
        if self.modes == 1 || rng.random::<f64>() < self.p_stay {
            return m;
        }
        let other = rng.random_range(0..self.modes - 1);
        if other >= m {
            other + 1
        } else {
            other
        }
    }

    fn transition(&self, from: usize, to: usize) -> f64 {
        if self.modes == 1 {
            1.0
        } else if from == to {
            self.p_stay
        } else {
            (1.0 - self.p_stay) / (self.modes - 1) as f64
        }
    }
}

fn simulate_switching(spec: &SwitchingSpec, t: usize, d: usize, rng: &mut impl Rng) -> Vec<f64> {
    let mut out = Vec::with_capacity(t * d);
    let mut m = rng.random_range(0..spec.modes);
    for step in 0..t {
        if step > 0 {
            m = spec.next_mode(m, rng);
        }
        let mean = spec.mode_mean(m);
        for _ in 0..d {
            out.push(mean + spec.noise_sd * standard_normal(rng));
        }
    }
    out
}

/// Sequences from [`SwitchingSpec::new`]`(modes)`.
pub fn gen_switching_modes(q: usize, t: usize, d: usize, modes: usize, seed: u64) -> Result<SequenceBatch> {
    let spec = SwitchingSpec::new(modes);
    spec.validate()?;
    let mut obs = Vec::with_capacity(q * t * d);
    for s in 0..q {
        obs.extend(simulate_switching(&spec, t, d, &mut stream_rng(seed, s as u64 + 1)));
    }
    SequenceBatch::new(q, t, d, obs, None, format!("switching d={d} modes={modes} seed={seed}"))
}

/// Monte Carlo entropy rate: mean of `-log p(y_{t+1} | y_{<=t})` under the
/// exact forward filter along one long trajectory. The standard error uses
/// 100 batch means.
pub fn switching_entropy_rate(spec: &SwitchingSpec, d: usize, steps: usize, seed: u64) -> Result<EntropyRate> {
    spec.validate()?;
    if steps < 200 {
        return Err(Error::InvalidParameter("entropy estimate needs at least 200 steps".into()));
    }
    let mut rng = stream_rng(seed, 0);
    let ys = simulate_switching(spec, steps, d, &mut rng);
    let m = spec.modes;
    let var = spec.noise_sd * spec.noise_sd;
    let norm = -0.5 * d as f64 * (LOG_2PI_E - 1.0 + var.ln());
    let mut log_post = vec![-(m as f64).ln(); m];
    let mut losses = Vec::with_capacity(steps - 1);
    for step in 0..steps {
        let y = &ys[step * d..(step + 1) * d];
        let log_prior: Vec<f64> = if step == 0 {
            log_post.clone()
        } else {
            (0..m)
                .map(|to| log_sum_exp(&(0..m).map(|from| log_post[from] + spec.transition(from, to).ln()).collect::<Vec<_>>()))
                .collect()
        };
        let joint: Vec<f64> = (0..m)
            .map(|k| {
                let mu = spec.mode_mean(k);
                let quad: f64 = y.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / var;
                log_prior[k] + norm - 0.5 * quad
            })
            .collect();
        let log_pred = log_sum_exp(&joint);
        if step > 0 {
            losses.push(-log_pred);
        }
        log_post = joint.iter().map(|j| j - log_pred).collect();
    }
    let n = losses.len();
    let mean = losses.iter().sum::<f64>() / n as f64;
    let batches = 100;
    let per = n / batches;
    let bm: Vec<f64> = (0..batches)
        .map(|b| losses[b * per..(b + 1) * per].iter().sum::<f64>() / per as f64)
        .collect();
    let bmean = bm.iter().sum::<f64>() / batches as f64;
    let bvar = bm.iter().map(|v| (v - bmean).powi(2)).sum::<f64>() / (batches - 1) as f64;
    Ok(EntropyRate {
        value: mean,
        std_error: (bvar / batches as f64).sqrt(),
    })
}

/// Sarle's bimodality coefficient; values above `5/9` suggest bimodality.
pub fn bimodality_coefficient(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let m2 = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let m3 = xs.iter().map(|x| (x - mean).powi(3)).sum::<f64>() / n;
    let m4 = xs.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n;
    let g1 = m3 / m2.powf(1.5);
    let g2 = m4 / (m2 * m2) - 3.0;
    let skew = g1 * (n * (n - 1.0)).sqrt() / (n - 2.0);
    let kurt = (n - 1.0) / ((n - 2.0) * (n - 3.0)) * ((n + 1.0) * g2 + 6.0);
    (skew * skew + 1.0) / (kurt + 3.0 * (n - 1.0).powi(2) / ((n - 2.0) * (n - 3.0)))
}

/// Linear dynamics `y_{t+1} = A y_t + B a_t + noise`.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlDynamics {
    pub d: usize,
    pub d_action: usize,
    /// `d x d`, row-major, Frobenius norm 0.8 (so spectral radius < 1).
    pub a: Vec<f64>,
    /// `d x d_action`, row-major.
    pub b: Vec<f64>,
    pub noise_sd: f64,
}

impl ControlDynamics {
    pub fn random(d: usize, d_action: usize, seed: u64) -> Result<Self> {
        if d == 0 || d_action == 0 {
            return Err(Error::InvalidParameter("control task needs positive dimensions".into()));
        }
        let mut rng = stream_rng(seed, 0);
        let raw: Vec<f64> = (0..d * d).map(|_| standard_normal(&mut rng)).collect();
        let fro = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        let a = raw.iter().map(|v| 0.8 * v / fro).collect();
        let b = (0..d * d_action).map(|_| standard_normal(&mut rng)).collect();
        Ok(Self {
            d,
            d_action,
            a,
            b,
            noise_sd: 0.1,
        })
    }

    /// One transition with the noise vector supplied by the caller.
    pub fn step(&self, y: &[f64], action: &[f64], noise: &[f64]) -> Vec<f64> {
        (0..self.d)
            .map(|i| {
                let ay: f64 = (0..self.d).map(|j| self.a[i * self.d + j] * y[j]).sum();
                let ba: f64 = (0..self.d_action).map(|j| self.b[i * self.d_action + j] * action[j]).sum();
                ay + ba + self.noise_sd * noise[i]
            })
            .collect()
    }

    /// Rollouts under a uniform random policy on `[-action_scale, action_scale]`.
    pub fn simulate(&self, q: usize, t: usize, seed: u64, action_scale: f64) -> Result<SequenceBatch> {
        let mut obs = Vec::with_capacity(q * t * self.d);
        let mut act = Vec::with_capacity(q * t * self.d_action);
        for s in 0..q {
            let mut rng = stream_rng(seed, s as u64 + 1);
            let mut y: Vec<f64> = (0..self.d).map(|_| self.noise_sd * standard_normal(&mut rng)).collect();
            for _ in 0..t {
                let a: Vec<f64> = (0..self.d_action)
                    .map(|_| if action_scale > 0.0 { rng.random_range(-action_scale..action_scale) } else { 0.0 })
                    .collect();
                obs.extend_from_slice(&y);
                act.extend_from_slice(&a);
                let noise: Vec<f64> = (0..self.d).map(|_| standard_normal(&mut rng)).collect();
                y = self.step(&y, &a, &noise);
            }
        }
        SequenceBatch::new(
            q,
            t,
            self.d,
            obs,
            Some((self.d_action, act)),
            format!("control d={} d_action={}", self.d, self.d_action),
        )
    }
}

/// Random-policy rollouts of [`ControlDynamics::random`]`(d, d_action, seed)`.
pub fn gen_control_task(q: usize, t: usize, d: usize, d_action: usize, seed: u64) -> Result<SequenceBatch> {
    ControlDynamics::random(d, d_action, seed)?.simulate(q, t, seed, 1.0)
}
