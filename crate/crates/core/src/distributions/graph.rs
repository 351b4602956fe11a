//! Differentiable mixture log-densities over raw head logits.
//!
//! The head emits `K + K d + K d` logits per row: coefficient logits, means
//! and scale logits, in that order, each block component-major.

use super::{HeadStructure, LOG_2PI};
use crate::diffcore::{Graph, NodeId, Tensor, EXP_CLAMP};
use crate::{Error, Result};

/// Shape information for one head evaluation.
#[derive(Clone, Copy, Debug)]
pub struct MixtureSpec {
    pub structure: HeadStructure,
    pub components: usize,
    pub dim: usize,
    pub c_width: f64,
}

impl MixtureSpec {
    pub fn logit_width(&self) -> usize {
        self.components * (1 + 2 * self.dim)
    }
}

/// `K d x K` matrix summing each component's `d` columns.
fn block_ones(k: usize, d: usize) -> Tensor {
    let mut data = vec![0.0; k * d * k];
    for c in 0..k {
        for i in 0..d {
            data[(c * d + i) * k + c] = 1.0;
        }
    }
    Tensor::matrix(k * d, k, data)
}

/// Per-row mixture log-density of `z` (`r x d`) under the head `logits`
/// (`r x K(1+2d)`). `shared_u` is required for the tied structure.
pub fn mixture_log_density_nodes(
    g: &mut Graph,
    spec: &MixtureSpec,
    logits: NodeId,
    z: NodeId,
    shared_u: Option<NodeId>,
) -> Result<NodeId> {
    let (k, d) = (spec.components, spec.dim);
    let (r, zd) = g.value(z).dims2().unwrap_or((0, 0));
    if zd != d {
        return Err(Error::Dimension {
            context: "mixture target",
            expected: d,
            got: zd,
        });
    }
    let lw = g.value(logits).cols();
    if lw != spec.logit_width() || g.value(logits).rows() != r {
        return Err(Error::Dimension {
            context: "head logits",
            expected: spec.logit_width(),
            got: lw,
        });
    }
    let za = g.slice_cols(logits, 0, k)?;
    let zmu = g.slice_cols(logits, k, k + k * d)?;
    let zs = g.slice_cols(logits, k + k * d, k + 2 * k * d)?;
    let lse = g.log_sum_exp(za)?;
    let log_alpha = g.sub(za, lse)?;
    let ztile = if k == 1 { z } else { g.concat(1, &vec![z; k])? };
    let diff = g.sub(ztile, zmu)?;
    let blk = g.constant(block_ones(k, d));

    let comp = match spec.structure {
        HeadStructure::Diagonal => {
            let neg_zs = g.neg(zs)?;
            let inv_sigma = g.exp_clamped(neg_zs, -EXP_CLAMP, EXP_CLAMP)?;
            let u = g.mul(diff, inv_sigma)?;
            let sq = g.square(u)?;
            let quad = g.matmul(sq, blk)?;
            let log_inv = g.log(inv_sigma)?;
            let sum_log_inv = g.matmul(log_inv, blk)?;
            let half_quad = g.scale(quad, -0.5)?;
            let t = g.add(log_alpha, half_quad)?;
            let t = g.add(t, sum_log_inv)?;
            let c = g.constant(Tensor::scalar(-0.5 * d as f64 * LOG_2PI));
            g.add(t, c)?
        }
        HeadStructure::Tied => {
            let u = shared_u.ok_or_else(|| Error::InvalidParameter("tied head needs a shared matrix".into()))?;
            let prec = g.exp_clamped(zs, -EXP_CLAMP, EXP_CLAMP)?;
            let log_prec = g.log(prec)?;
            let flat = g.reshape(diff, r * k, d)?;
            let proj = g.matmul(flat, u)?;
            let proj = g.reshape(proj, r, k * d)?;
            let sq = g.square(proj)?;
            let weighted = g.mul(sq, prec)?;
            let quad = g.matmul(weighted, blk)?;
            let half_quad = g.scale(quad, -0.5)?;
            let sum_log_prec = g.matmul(log_prec, blk)?;
            let half_log_prec = g.scale(sum_log_prec, 0.5)?;
            let log_det_u = g.log_abs_det(u)?;
            let t = g.add(log_alpha, half_quad)?;
            let t = g.add(t, half_log_prec)?;
            let t = g.add(t, log_det_u)?;
            let c = g.constant(Tensor::scalar(-0.5 * d as f64 * LOG_2PI));
            g.add(t, c)?
        }
        HeadStructure::Logistic => {
            let cw = spec.c_width;
            if !(cw > 0.0 && cw.is_finite()) {
                return Err(Error::InvalidParameter(format!("logistic width must be positive, got {cw}")));
            }
            let neg_zs = g.neg(zs)?;
            let inv_s = g.exp_clamped(neg_zs, -EXP_CLAMP, EXP_CLAMP)?;
            let half = g.constant(Tensor::scalar(0.5 * cw));
            let upper = g.add(diff, half)?;
            let upper = g.mul(upper, inv_s)?;
            let lower = g.sub(diff, half)?;
            let lower = g.mul(lower, inv_s)?;
            let neg_lower = g.neg(lower)?;
            let la = g.log_sigmoid(upper)?;
            let lb = g.log_sigmoid(neg_lower)?;
            let width_over_s = g.scale(inv_s, cw)?;
            let lgap = g.log1m_exp(width_over_s)?;
            let terms = g.add(la, lb)?;
            let terms = g.add(terms, lgap)?;
            let log_c = g.constant(Tensor::scalar(-cw.ln()));
            let terms = g.add(terms, log_c)?;
            let per_comp = g.matmul(terms, blk)?;
            g.add(log_alpha, per_comp)?
        }
    };
    Ok(g.log_sum_exp(comp)?)
}
