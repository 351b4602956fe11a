//! Mixture densities emitted by the network head.
//!
//! Three component families are supported: diagonal Gaussians parameterised
//! by standard deviations, tied-precision Gaussians whose precision is
//! `U D_k U^T` with one matrix `U` shared by every component, and
//! discretised logistics of bin width `C`. The plain `f64` routines here are
//! used for evaluation and sampling; [`graph`] builds the same densities as
//! differentiable nodes for training.

mod count;
mod density;
pub mod graph;
mod sample;

pub use count::{param_count, CovarianceKind, HeadLayout, ParamCountReport};
pub use density::{
    coeffs_from_logits, diag_gmm_log_density, diag_scales_from_logits, logistic_mixture_log_density,
    mixture_log_density, tied_gmm_log_density,
};
pub use sample::mixture_sample;

use std::fmt;
use std::str::FromStr;

use crate::diffcore::Tensor;
use crate::linalg::Lu;
use crate::{Error, Result};

pub const LOG_2PI: f64 = 1.837_877_066_409_345_3;

/// Component family of a mixture head.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum HeadStructure {
    Diagonal,
    Tied,
    Logistic,
}

impl HeadStructure {
    pub fn as_str(self) -> &'static str {
        match self {
            HeadStructure::Diagonal => "diagonal",
            HeadStructure::Tied => "tied",
            HeadStructure::Logistic => "logistic",
        }
    }
}

impl fmt::Display for HeadStructure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for HeadStructure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "diagonal" | "diag" => Ok(HeadStructure::Diagonal),
            "tied" => Ok(HeadStructure::Tied),
            "logistic" => Ok(HeadStructure::Logistic),
            other => Err(Error::InvalidParameter(format!("unknown head structure '{other}'"))),
        }
    }
}

/// Mixture parameters for one observation.
///
/// `diag` holds standard deviations for [`HeadStructure::Diagonal`],
/// precisions `D_k` for [`HeadStructure::Tied`] and logistic scales for
/// [`HeadStructure::Logistic`]. `mu` and `diag` are `K x d`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct MixtureParams {
    pub structure: HeadStructure,
    pub alpha: Vec<f64>,
    pub mu: Vec<f64>,
    pub diag: Vec<f64>,
    dim: usize,
}

impl MixtureParams {
    pub fn new(structure: HeadStructure, alpha: Vec<f64>, mu: Vec<f64>, diag: Vec<f64>) -> Result<Self> {
        let k = alpha.len();
        if k == 0 {
            return Err(Error::InvalidParameter("mixture needs at least one component".into()));
        }
        if !mu.len().is_multiple_of(k) || mu.is_empty() {
            return Err(Error::Dimension {
                context: "mixture means",
                expected: k,
                got: mu.len(),
            });
        }
        let dim = mu.len() / k;
        if diag.len() != mu.len() {
            return Err(Error::Dimension {
                context: "mixture diagonal",
                expected: mu.len(),
                got: diag.len(),
            });
        }
        let total: f64 = alpha.iter().sum();
        if (total - 1.0).abs() > 1e-12 || alpha.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(Error::InvalidParameter(format!(
                "coefficients must lie in [0, 1] and sum to 1 (sum = {total})"
            )));
        }
        if diag.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidParameter("diagonal entries must be positive".into()));
        }
        if mu.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "mixture mean".into() });
        }
        Ok(Self {
            structure,
            alpha,
            mu,
            diag,
            dim,
        })
    }

    pub fn components(&self) -> usize {
        self.alpha.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mean(&self, k: usize) -> &[f64] {
        &self.mu[k * self.dim..(k + 1) * self.dim]
    }

    pub fn diag_of(&self, k: usize) -> &[f64] {
        &self.diag[k * self.dim..(k + 1) * self.dim]
    }

    /// Same mixture with components reordered by `perm`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let d = self.dim;
        let mut out = self.clone();
        for (dst, &src) in perm.iter().enumerate() {
            out.alpha[dst] = self.alpha[src];
            out.mu[dst * d..(dst + 1) * d].copy_from_slice(self.mean(src));
            out.diag[dst * d..(dst + 1) * d].copy_from_slice(self.diag_of(src));
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SharedKind {
    Identity,
    Full,
}

/// The matrix `U` shared by every tied-precision component.
///
/// `log|det U|` is cached and refreshed whenever `U` is replaced.
#[derive(Clone, Debug, PartialEq)]
pub struct SharedMatrix {
    u: Tensor,
    log_abs_det: f64,
    kind: SharedKind,
}

impl SharedMatrix {
    pub fn identity(d: usize) -> Self {
        Self {
            u: Tensor::identity(d),
            log_abs_det: 0.0,
            kind: SharedKind::Identity,
        }
    }

    pub fn full(u: Tensor) -> Result<Self> {
        let (r, c) = u.dims2().unwrap_or((0, 1));
        if r != c || r == 0 {
            return Err(Error::Dimension {
                context: "shared matrix",
                expected: r,
                got: c,
            });
        }
        let log_abs_det = Lu::new(u.data(), r).log_abs_det();
        Ok(Self {
            u,
            log_abs_det,
            kind: SharedKind::Full,
        })
    }

    pub fn dim(&self) -> usize {
        self.u.rows()
    }

    pub fn u(&self) -> &Tensor {
        &self.u
    }

    pub fn kind(&self) -> SharedKind {
        self.kind
    }

    pub fn log_abs_det(&self) -> f64 {
        self.log_abs_det
    }

    /// Replaces `U` and refreshes the cached determinant.
    pub fn set_u(&mut self, u: Tensor) -> Result<()> {
        *self = Self::full(u)?;
        Ok(())
    }

    /// Errors when `|det U|` is below `1e-12` relative to `max|u_ij|^d`.
    pub fn check_nondegenerate(&self) -> Result<()> {
        if self.kind == SharedKind::Identity {
            return Ok(());
        }
        let scale = self.u.max_abs();
        let relative = self.log_abs_det - self.dim() as f64 * scale.ln();
        if !self.log_abs_det.is_finite() || scale == 0.0 || relative < 1e-12f64.ln() {
            return Err(Error::DegenerateSharedMatrix {
                log_abs_det: self.log_abs_det,
            });
        }
        Ok(())
    }
}
