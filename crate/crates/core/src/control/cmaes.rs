use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;

use crate::rng::standard_normal;
use crate::{Error, Result};

const EIGEN_FLOOR: f64 = 1e-14;
const SIGMA_FLOOR: f64 = 1e-300;

/// State of a (mu/mu_w, lambda) CMA-ES minimiser.
#[derive(Clone, Debug)]
pub struct CmaesState {
    mean: DVector<f64>,
    sigma: f64,
    cov: DMatrix<f64>,
    /// Eigenvectors of `cov` and square roots of its eigenvalues.
    basis: DMatrix<f64>,
    scales: DVector<f64>,
    path_sigma: DVector<f64>,
    path_c: DVector<f64>,
    lambda: usize,
    weights: Vec<f64>,
    mueff: f64,
    cc: f64,
    cs: f64,
    c1: f64,
    cmu: f64,
    damps: f64,
    chi_n: f64,
    generation: usize,
    evaluations: usize,
    repairs: usize,
    best: Option<(Vec<f64>, f64)>,
}

impl CmaesState {
    /// Identity covariance around `mean` with step size `sigma0`.
    pub fn new(mean: Vec<f64>, sigma0: f64, lambda: usize) -> Result<Self> {
        let n = mean.len();
        if n == 0 {
            return Err(Error::InvalidParameter("CMA-ES needs at least one dimension".into()));
        }
        if lambda < 2 {
            return Err(Error::InvalidParameter(format!("population size must be >= 2, got {lambda}")));
        }
        if !(sigma0 > 0.0 && sigma0.is_finite()) {
            return Err(Error::InvalidParameter(format!("sigma must be positive, got {sigma0}")));
        }
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "CMA-ES mean".into() });
        }
        let mu = lambda / 2;
        let raw: Vec<f64> = (1..=mu).map(|i| (mu as f64 + 0.5).ln() - (i as f64).ln()).collect();
        let total: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
        let mueff = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();
        let nf = n as f64;
        let cc = (4.0 + mueff / nf) / (nf + 4.0 + 2.0 * mueff / nf);
        let cs = (mueff + 2.0) / (nf + mueff + 5.0);
        let c1 = 2.0 / ((nf + 1.3).powi(2) + mueff);
        let cmu = (1.0 - c1).min(2.0 * (mueff - 2.0 + 1.0 / mueff) / ((nf + 2.0).powi(2) + mueff));
        let damps = 1.0 + 2.0 * (((mueff - 1.0) / (nf + 1.0)).sqrt() - 1.0).max(0.0) + cs;
        let chi_n = nf.sqrt() * (1.0 - 1.0 / (4.0 * nf) + 1.0 / (21.0 * nf * nf));
        Ok(Self {
            mean: DVector::from_vec(mean),
            sigma: sigma0,
            cov: DMatrix::identity(n, n),
            basis: DMatrix::identity(n, n),
            scales: DVector::from_element(n, 1.0),
            path_sigma: DVector::zeros(n),
            path_c: DVector::zeros(n),
            lambda,
            weights,
            mueff,
            cc,
            cs,
            c1,
            cmu,
            damps,
            chi_n,
            generation: 0,
            evaluations: 0,
            repairs: 0,
            best: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn lambda(&self) -> usize {
        self.lambda
    }

    pub fn mean(&self) -> &[f64] {
        self.mean.as_slice()
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn generation(&self) -> usize {
        self.generation
    }

    pub fn evaluations(&self) -> usize {
        self.evaluations
    }

    /// Number of times the eigenvalue floor had to repair the covariance.
    pub fn repairs(&self) -> usize {
        self.repairs
    }

    /// Best candidate and fitness seen so far.
    pub fn best(&self) -> Option<(&[f64], f64)> {
        self.best.as_ref().map(|(x, f)| (x.as_slice(), *f))
    }

    /// Draws `lambda` candidates `mean + sigma * B D z`.
    pub fn ask<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<Vec<f64>> {
        let n = self.dim();
        (0..self.lambda)
            .map(|_| {
                let z = DVector::from_fn(n, |_, _| standard_normal(rng));
                let y = &self.basis * z.component_mul(&self.scales);
                (&self.mean + y * self.sigma).as_slice().to_vec()
            })
            .collect()
    }

    /// Updates the distribution from evaluated candidates (lower is better).
    pub fn tell(&mut self, candidates: &[Vec<f64>], fitness: &[f64]) -> Result<()> {
        let n = self.dim();
        if candidates.len() != self.lambda || fitness.len() != self.lambda {
            return Err(Error::Dimension {
                context: "CMA-ES population",
                expected: self.lambda,
                got: candidates.len().min(fitness.len()),
            });
        }
        if let Some(bad) = candidates.iter().find(|c| c.len() != n) {
            return Err(Error::Dimension {
                context: "CMA-ES candidate",
                expected: n,
                got: bad.len(),
            });
        }
        if fitness.iter().any(|f| !f.is_finite()) {
            return Err(Error::NonFinite { what: "fitness".into() });
        }
        let mut order: Vec<usize> = (0..self.lambda).collect();
        order.sort_by(|&a, &b| fitness[a].total_cmp(&fitness[b]));
        let flat = fitness.iter().all(|&f| f == fitness[0]);

        let steps: Vec<DVector<f64>> = order[..self.weights.len()]
            .iter()
            .map(|&i| (DVector::from_column_slice(&candidates[i]) - &self.mean) / self.sigma)
            .collect();
        let y_w = if flat {
            DVector::zeros(n)
        } else {
            steps.iter().zip(&self.weights).fold(DVector::zeros(n), |acc, (y, w)| acc + y * *w)
        };

        let inv_sqrt = &self.basis * DMatrix::from_diagonal(&self.scales.map(|s| 1.0 / s)) * self.basis.transpose();
        let path_sigma = &self.path_sigma * (1.0 - self.cs) + inv_sqrt * &y_w * (self.cs * (2.0 - self.cs) * self.mueff).sqrt();
        let norm_ps = path_sigma.norm();
        let gen = (self.generation + 1) as f64;
        let hsig = norm_ps / (1.0 - (1.0 - self.cs).powf(2.0 * gen)).sqrt() / self.chi_n < 1.4 + 2.0 / (n as f64 + 1.0);
        let h = if hsig { 1.0 } else { 0.0 };
        let path_c = &self.path_c * (1.0 - self.cc) + &y_w * (h * (self.cc * (2.0 - self.cc) * self.mueff).sqrt());

        let rank_mu = if flat {
            self.cov.clone()
        } else {
            steps
                .iter()
                .zip(&self.weights)
                .fold(DMatrix::zeros(n, n), |acc, (y, w)| acc + y * y.transpose() * *w)
        };
        let mut cov = &self.cov * (1.0 - self.c1 - self.cmu)
            + (&path_c * path_c.transpose() + &self.cov * ((1.0 - h) * self.cc * (2.0 - self.cc))) * self.c1
            + rank_mu * self.cmu;
        cov = (&cov + cov.transpose()) * 0.5;
        let eig = SymmetricEigen::new(cov.clone());
        if eig.eigenvalues.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "covariance".into() });
        }
        let mut repaired = false;
        let values = eig.eigenvalues.map(|v| {
            if v < EIGEN_FLOOR {
                repaired = true;
                EIGEN_FLOOR
            } else {
                v
            }
        });
        if repaired {
            cov = &eig.eigenvectors * DMatrix::from_diagonal(&values) * eig.eigenvectors.transpose();
            cov = (&cov + cov.transpose()) * 0.5;
        }
        let sigma = (self.sigma * ((self.cs / self.damps) * (norm_ps / self.chi_n - 1.0)).exp()).max(SIGMA_FLOOR);
        if !sigma.is_finite() {
            return Err(Error::NonFinite { what: "step size".into() });
        }

        let best_i = order[0];
        if self.best.as_ref().is_none_or(|(_, f)| fitness[best_i] < *f) {
            self.best = Some((candidates[best_i].clone(), fitness[best_i]));
        }
        self.mean += &y_w * self.sigma;
        self.sigma = sigma;
        self.cov = cov;
        self.basis = eig.eigenvectors;
        self.scales = values.map(f64::sqrt);
        self.path_sigma = path_sigma;
        self.path_c = path_c;
        self.generation += 1;
        self.evaluations += self.lambda;
        self.repairs += usize::from(repaired);
        Ok(())
    }
}
