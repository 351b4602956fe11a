use std::str::FromStr;

use crate::{Error, Result};

/// Covariance families of the parameter-count table.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CovarianceKind {
    Full,
    Diagonal,
    Tied,
}

impl FromStr for CovarianceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(CovarianceKind::Full),
            "diagonal" | "diag" => Ok(CovarianceKind::Diagonal),
            "tied" => Ok(CovarianceKind::Tied),
            other => Err(Error::InvalidParameter(format!("unknown covariance kind '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamCountReport {
    pub alpha_count: usize,
    pub mu_count: usize,
    pub sigma_count: usize,
    pub total: usize,
}

/// Closed-form number of mixture parameters for `k` components in `d` dimensions.
pub fn param_count(k: usize, d: usize, kind: CovarianceKind) -> ParamCountReport {
    let sigma_count = match kind {
        CovarianceKind::Full => k * d * (d + 1) / 2,
        CovarianceKind::Diagonal => k * d,
        CovarianceKind::Tied => d * d + k * d,
    };
    let total = match kind {
        CovarianceKind::Full => k * (2 + 3 * d + d * d) / 2,
        CovarianceKind::Diagonal => k * (1 + 2 * d),
        CovarianceKind::Tied => k * (1 + 2 * d) + d * d,
    };
    ParamCountReport {
        alpha_count: k,
        mu_count: k * d,
        sigma_count,
        total,
    }
}

/// Storage blocks a head needs for one mixture: `(name, length)` pairs.
///
/// Diagonal and tied layouts mirror what the network head emits (plus the
/// shared `U` for tied); the full layout stores a packed lower triangle per
/// component.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HeadLayout {
    pub kind: CovarianceKind,
    pub blocks: Vec<(&'static str, usize)>,
}

impl HeadLayout {
    pub fn new(kind: CovarianceKind, k: usize, d: usize) -> Self {
        let mut blocks = vec![("alpha", k), ("mu", k * d)];
        match kind {
            CovarianceKind::Full => blocks.push(("cov_lower", k * d * (d + 1) / 2)),
            CovarianceKind::Diagonal => blocks.push(("sigma", k * d)),
            CovarianceKind::Tied => {
                blocks.push(("precision_diag", k * d));
                blocks.push(("shared_u", d * d));
            }
        }
        Self { kind, blocks }
    }

    pub fn count(&self) -> usize {
        self.blocks.iter().map(|b| b.1).sum()
    }
}
