use super::{conv, BoundParams};
use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{Element, Shape};

/// Intermediate values of one fusion step, indexed by column.
#[derive(Clone, Copy, Debug)]
pub struct IfmOutput {
    /// 3x3 conv features `F_C`, shape `(n, C, h, w)`.
    pub features: [Var; 2],
    /// Row-stochastic channel affinities, shape `(n, 1, C, C)`.
    pub weights: [Var; 2],
    /// Scaled cross-column mixtures `F_IF`, shape `(n, C, h, w)`.
    pub fused: [Var; 2],
}

/// Cross-column information fusion.
///
/// Column `i` pools its conv features, correlates them channel by channel with
/// the other column's, and mixes the other column's full-resolution features
/// with the softmaxed affinities: `F_IF_i = alpha * softmax(D_i D_j^T) F_C_j`.
pub fn ifm_forward<T: Element>(
    g: &mut Graph<T>,
    p: &BoundParams<'_, T>,
    prefix: &str,
    x: [Var; 2],
    alpha: f64,
) -> Result<IfmOutput> {
    let s = g.shape(x[0]);
    if g.shape(x[1]) != s {
        return Err(Error::shape("ifm", format!("columns differ: {s} vs {}", g.shape(x[1]))));
    }
    if s.h() % 2 != 0 || s.w() % 2 != 0 {
        return Err(Error::shape("ifm", format!("spatial dims of {s} must be even")));
    }
    let (n, c, hw) = (s.n(), s.c(), s.h() * s.w());
    let mut features = [x[0]; 2];
    let mut pooled = [x[0]; 2];
    let mut flat = [x[0]; 2];
    for i in 0..2 {
        features[i] = conv(g, p, &format!("{prefix}.conv{}", i + 1), x[i], 1)?;
        let d = g.avgpool2(features[i])?;
        pooled[i] = g.reshape(d, Shape::new(n, 1, c, hw / 4))?;
        flat[i] = g.reshape(features[i], Shape::new(n, 1, c, hw))?;
    }
    let mut weights = [x[0]; 2];
    let mut fused = [x[0]; 2];
    for i in 0..2 {
        let j = 1 - i;
        let dj_t = g.transpose(pooled[j])?;
        let affinity = g.matmul(pooled[i], dj_t)?;
        weights[i] = g.softmax_rows(affinity)?;
        let mixed = g.matmul(weights[i], flat[j])?;
        let mixed = g.reshape(mixed, s)?;
        fused[i] = g.scale(mixed, T::of(alpha))?;
    }
    Ok(IfmOutput { features, weights, fused })
}
