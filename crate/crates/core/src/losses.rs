//! Training objectives and their weighted combination.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::model::ModelOutput;
use crate::tensor::{Element, Tensor};

/// Weights of the composite objective
/// `alpha_loss / denom * (L_I + L_C) + lambda_seg * L_S`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha_loss: f64,
    /// `0` turns the segmentation term off.
    pub lambda_seg: f64,
    pub denom: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha_loss: 1.0,
            lambda_seg: 0.005,
            denom: 4.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64| v > 0.0 && v.is_finite();
        if !pos(self.alpha_loss) || !pos(self.denom) || !(self.lambda_seg >= 0.0 && self.lambda_seg.is_finite()) {
            return Err(Error::Config(format!(
                "loss weights need alpha_loss > 0, denom > 0, lambda_seg >= 0; got {self:?}"
            )));
        }
        Ok(())
    }
}

pub fn mse_loss<T: Element>(g: &mut Graph<T>, pred: Var, gt: Var) -> Result<Var> {
    g.mse(pred, gt)
}

/// Sum of the per-block MSEs against the 1/8-scale target.
///
/// An empty list gives a constant zero.
pub fn intermediate_loss<T: Element>(g: &mut Graph<T>, intermediates: &[Var], gt8: Var) -> Result<Var> {
    let Some((&first, rest)) = intermediates.split_first() else {
        log::warn!("no intermediate density maps; intermediate loss is zero");
        return Ok(g.constant(Tensor::scalar(T::zero())));
    };
    let mut acc = g.mse(first, gt8)?;
    for &m in rest {
        let l = g.mse(m, gt8)?;
        acc = g.add(acc, l)?;
    }
    Ok(acc)
}

/// Per-pixel mean binary cross-entropy of `sdb(p, b, k)` against a binary mask.
pub fn bce_seg_loss<T: Element>(g: &mut Graph<T>, p: Var, b: Var, y: Var, k: f64) -> Result<Var> {
    let m = g.sdb(p, b, T::of(k))?;
    g.bce(m, y)
}

pub fn total_loss<T: Element>(g: &mut Graph<T>, l_i: Var, l_c: Var, l_s: Var, w: &LossWeights) -> Result<Var> {
    let counting = g.add(l_i, l_c)?;
    let counting = g.scale(counting, T::of(w.alpha_loss / w.denom))?;
    let seg = g.scale(l_s, T::of(w.lambda_seg))?;
    g.add(counting, seg)
}

/// [`total_loss`] on plain numbers.
pub fn total_loss_value(l_i: f64, l_c: f64, l_s: f64, w: &LossWeights) -> f64 {
    w.alpha_loss / w.denom * (l_i + l_c) + w.lambda_seg * l_s
}

/// Graph handles for one batch's targets.
#[derive(Clone, Copy, Debug)]
pub struct Targets {
    /// Counting target, `(n, 1, H/4, W/4)`.
    pub density4: Var,
    /// Intermediate target, `(n, 1, H/8, W/8)`.
    pub density8: Var,
    /// Binary segmentation target, `(n, 1, H/4, W/4)`.
    pub mask4: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub total: Var,
    pub intermediate: Var,
    pub counting: Var,
    pub segmentation: Var,
}

/// Every term of the objective for one forward pass.
pub fn network_loss<T: Element>(
    g: &mut Graph<T>,
    out: &ModelOutput,
    targets: &Targets,
    sdb_k: f64,
    weights: &LossWeights,
    intermediate_supervision: bool,
) -> Result<LossTerms> {
    let supervised: &[Var] = if intermediate_supervision { &out.intermediates } else { &[] };
    let intermediate = if supervised.is_empty() {
        g.constant(Tensor::scalar(T::zero()))
    } else {
        intermediate_loss(g, supervised, targets.density8)?
    };
    let counting = mse_loss(g, out.density, targets.density4)?;
    let segmentation = bce_seg_loss(g, out.seg_p, out.seg_b, targets.mask4, sdb_k)?;
    let total = total_loss(g, intermediate, counting, segmentation, weights)?;
    Ok(LossTerms {
        total,
        intermediate,
        counting,
        segmentation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    #[test]
    fn weighted_total() {
        let w = LossWeights::default();
        assert!((total_loss_value(2.0, 2.0, 100.0, &w) - 1.5).abs() < 1e-12);
        let mut g = Graph::<f64>::new();
        let [a, b, c] = [2.0, 2.0, 100.0].map(|v| g.constant(Tensor::scalar(v)));
        let t = total_loss(&mut g, a, b, c, &w).unwrap();
        assert!((g.scalar(t) - 1.5).abs() < 1e-12);
    }

    #[test]
    fn empty_intermediates_are_zero() {
        let mut g = Graph::<f32>::new();
        let gt = g.constant(Tensor::zeros(Shape::new(1, 1, 2, 2)));
        let l = intermediate_loss(&mut g, &[], gt).unwrap();
        assert_eq!(g.scalar(l), 0.0);
    }

    #[test]
    fn weights_validate() {
        LossWeights::default().validate().unwrap();
        assert!(LossWeights { lambda_seg: 0.0, ..Default::default() }.validate().is_ok());
        assert!(LossWeights { denom: 0.0, ..Default::default() }.validate().is_err());
    }
}
