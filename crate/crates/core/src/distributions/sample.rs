use rand::Rng;

use super::{HeadStructure, MixtureParams, SharedMatrix};
use crate::linalg::Lu;
use crate::rng::{open_unit, standard_normal};

/// Index drawn by inverse CDF over the cumulative coefficients.
///
/// Ties go to the lower index; zero-weight components are never chosen.
fn pick_component<R: Rng + ?Sized>(alpha: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut cum = 0.0;
    let mut last_positive = 0;
    for (k, &a) in alpha.iter().enumerate() {
        if a <= 0.0 {
            continue;
        }
        last_positive = k;
        cum += a;
        if u < cum {
            return k;
        }
    }
    last_positive
}

/// Draws one observation from the mixture.
///
/// Tied components are sampled as `mu_k + U^{-T} D_k^{-1/2} n` so that the
/// covariance is `(U D_k U^T)^{-1}`; logistic components use the logistic
/// inverse CDF per dimension.
pub fn mixture_sample<R: Rng + ?Sized>(params: &MixtureParams, shared: &SharedMatrix, rng: &mut R) -> Vec<f64> {
    let k = pick_component(&params.alpha, rng);
    let d = params.dim();
    let mu = params.mean(k);
    let diag = params.diag_of(k);
    match params.structure {
        HeadStructure::Diagonal => (0..d).map(|i| mu[i] + diag[i] * standard_normal(rng)).collect(),
        HeadStructure::Logistic => (0..d)
            .map(|i| {
                let u = open_unit(rng);
                mu[i] + diag[i] * (u / (1.0 - u)).ln()
            })
            .collect(),
        HeadStructure::Tied => {
            let rhs: Vec<f64> = (0..d).map(|i| standard_normal(rng) / diag[i].sqrt()).collect();
            let x = Lu::new(shared.u().transpose().data(), d).solve(&rhs);
            mu.iter().zip(x).map(|(m, v)| m + v).collect()
        }
    }
}
