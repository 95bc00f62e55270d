use super::{conv, ifm_forward, BoundParams, IfmOutput, ModelConfig};
use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Element;

/// Every named stage of one basic block, for inspection and tests.
#[derive(Clone, Copy, Debug)]
pub struct BlockTrace {
    /// Column inputs to the fusion module.
    pub columns: [Var; 2],
    pub ifm: IfmOutput,
    /// Residual sums `F_IF_i + x_i`.
    pub residual: [Var; 2],
    /// Column streams just before concatenation.
    pub pre_fusion: [Var; 2],
    pub features: Var,
    pub inter_density: Var,
}

/// One two-column block.
///
/// Each column: 1x1 split, 3x3 conv + ReLU, fusion with the other column,
/// residual add, 3x3 conv + ReLU. The columns are concatenated and fused by a
/// 1x1 conv + ReLU; a 1x1 head predicts the intermediate density, which is
/// lifted back to the block width and added to the fused features.
pub fn basic_block_forward<T: Element>(
    g: &mut Graph<T>,
    p: &BoundParams<'_, T>,
    cfg: &ModelConfig,
    index: usize,
    x: Var,
) -> Result<BlockTrace> {
    let s = g.shape(x);
    if s.c() != cfg.block_channels {
        return Err(Error::shape(
            "basic_block",
            format!("input {s} does not have {} channels", cfg.block_channels),
        ));
    }
    let pre = format!("block{index}");
    let mut columns = [x; 2];
    for (col, slot) in columns.iter_mut().enumerate() {
        let split = conv(g, p, &format!("{pre}.split{}", col + 1), x, 0)?;
        let a = conv(g, p, &format!("{pre}.col{}.conv_a", col + 1), split, 1)?;
        *slot = g.relu(a)?;
    }
    let ifm = ifm_forward(g, p, &format!("{pre}.ifm"), columns, cfg.alpha_ifm)?;
    let mut residual = [x; 2];
    let mut pre_fusion = [x; 2];
    for col in 0..2 {
        residual[col] = g.add(ifm.fused[col], columns[col])?;
        let b = conv(g, p, &format!("{pre}.col{}.conv_b", col + 1), residual[col], 1)?;
        pre_fusion[col] = g.relu(b)?;
    }
    let cat = g.concat_channels(&pre_fusion)?;
    let fused = conv(g, p, &format!("{pre}.fuse"), cat, 0)?;
    let fused = g.relu(fused)?;
    let inter_density = conv(g, p, &format!("{pre}.density"), fused, 0)?;
    let lifted = conv(g, p, &format!("{pre}.lift"), inter_density, 0)?;
    let features = g.add(fused, lifted)?;
    Ok(BlockTrace {
        columns,
        ifm,
        residual,
        pre_fusion,
        features,
        inter_density,
    })
}
