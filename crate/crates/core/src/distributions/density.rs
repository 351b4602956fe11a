use super::{HeadStructure, MixtureParams, SharedMatrix, LOG_2PI};
use crate::diffcore::{log1m_exp, log_sigmoid, log_sum_exp, EXP_CLAMP};
use crate::{Error, Result};

/// Softmax with max subtraction.
pub fn coeffs_from_logits(z_alpha: &[f64]) -> Vec<f64> {
    let m = z_alpha.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z_alpha.iter().map(|z| (z - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Element-wise `exp` with the argument clamped to `[-60, 60]`.
pub fn diag_scales_from_logits(z_sigma: &[f64]) -> Vec<f64> {
    z_sigma.iter().map(|z| z.clamp(-EXP_CLAMP, EXP_CLAMP).exp()).collect()
}

fn check(params: &MixtureParams, y: &[f64], want: HeadStructure) -> Result<()> {
    if params.structure != want {
        return Err(Error::InvalidParameter(format!(
            "expected {want} mixture, got {}",
            params.structure
        )));
    }
    if y.len() != params.dim() {
        return Err(Error::Dimension {
            context: "mixture target",
            expected: params.dim(),
            got: y.len(),
        });
    }
    Ok(())
}

/// `log sum_k alpha_k N(y; mu_k, diag(sigma_k^2))`.
pub fn diag_gmm_log_density(y: &[f64], params: &MixtureParams) -> Result<f64> {
    check(params, y, HeadStructure::Diagonal)?;
    let d = params.dim();
    let terms: Vec<f64> = (0..params.components())
        .map(|k| {
            let mu = params.mean(k);
            let sigma = params.diag_of(k);
            let mut t = params.alpha[k].ln() - 0.5 * d as f64 * LOG_2PI;
            for i in 0..d {
                let u = (y[i] - mu[i]) / sigma[i];
                t -= sigma[i].ln() + 0.5 * u * u;
            }
            t
        })
        .collect();
    Ok(log_sum_exp(&terms))
}

/// Tied-precision mixture: component `k` has precision `U D_k U^T`.
pub fn tied_gmm_log_density(y: &[f64], params: &MixtureParams, shared: &SharedMatrix) -> Result<f64> {
    check(params, y, HeadStructure::Tied)?;
    let d = params.dim();
    if shared.dim() != d {
        return Err(Error::Dimension {
            context: "shared matrix",
            expected: d,
            got: shared.dim(),
        });
    }
    shared.check_nondegenerate()?;
    let u = shared.u().data();
    let mut proj = vec![0.0; d];
    let terms: Vec<f64> = (0..params.components())
        .map(|k| {
            let mu = params.mean(k);
            let prec = params.diag_of(k);
            // proj = U^T (y - mu)
            for (j, pj) in proj.iter_mut().enumerate() {
                *pj = (0..d).map(|i| u[i * d + j] * (y[i] - mu[i])).sum();
            }
            let mut t = params.alpha[k].ln() - 0.5 * d as f64 * LOG_2PI + shared.log_abs_det();
            for j in 0..d {
                t += 0.5 * prec[j].ln() - 0.5 * prec[j] * proj[j] * proj[j];
            }
            t
        })
        .collect();
    Ok(log_sum_exp(&terms))
}

/// Log-density of one discretised logistic factor:
/// `log((sigmoid((y - mu + C/2)/s) - sigmoid((y - mu - C/2)/s)) / C)`.
pub(crate) fn logistic_bin_log_mass(y: f64, mu: f64, s: f64, c_width: f64) -> f64 {
    let a = (y - mu + 0.5 * c_width) / s;
    let b = (y - mu - 0.5 * c_width) / s;
    // sigmoid(a) - sigmoid(b) = sigmoid(a) sigmoid(-b) (1 - exp(b - a))
    log_sigmoid(a) + log_sigmoid(-b) + log1m_exp(c_width / s) - c_width.ln()
}

/// Mixture of per-dimension discretised logistics with bin width `c_width`.
pub fn logistic_mixture_log_density(y: &[f64], params: &MixtureParams, c_width: f64) -> Result<f64> {
    check(params, y, HeadStructure::Logistic)?;
    if !(c_width > 0.0 && c_width.is_finite()) {
        return Err(Error::InvalidParameter(format!("logistic width must be positive, got {c_width}")));
    }
    let d = params.dim();
    let terms: Vec<f64> = (0..params.components())
        .map(|k| {
            let mu = params.mean(k);
            let s = params.diag_of(k);
            params.alpha[k].ln()
                + (0..d)
                    .map(|i| logistic_bin_log_mass(y[i], mu[i], s[i], c_width))
                    .sum::<f64>()
        })
        .collect();
    Ok(log_sum_exp(&terms))
}

/// Dispatches on `params.structure`.
pub fn mixture_log_density(y: &[f64], params: &MixtureParams, shared: &SharedMatrix, c_width: f64) -> Result<f64> {
    match params.structure {
        HeadStructure::Diagonal => diag_gmm_log_density(y, params),
        HeadStructure::Tied => tied_gmm_log_density(y, params, shared),
        HeadStructure::Logistic => logistic_mixture_log_density(y, params, c_width),
    }
}
