use super::{basic_block_forward, conv, BlockTrace, BoundParams, ModelConfig, ParamStore};
use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Graph handles produced by [`model_forward`].
#[derive(Clone, Debug)]
pub struct ModelOutput {
    /// Non-negative density at 1/4 scale.
    pub density: Var,
    /// Raw segmentation maps `P` and `B` at 1/4 scale.
    pub seg_p: Var,
    pub seg_b: Var,
    /// One 1/8-scale density per block.
    pub intermediates: Vec<Var>,
    pub blocks: Vec<BlockTrace>,
}

/// Stride-8 feature extractor: 3x3 conv + ReLU per stage, 2x average pool
/// between stages.
pub fn backbone_forward<T: Element>(
    g: &mut Graph<T>,
    p: &BoundParams<'_, T>,
    cfg: &ModelConfig,
    image: Var,
) -> Result<Var> {
    let s = g.shape(image);
    let m = cfg.input_multiple();
    if s.c() != 3 || s.h() % m != 0 || s.w() % m != 0 || s.h() == 0 || s.w() == 0 {
        return Err(Error::shape(
            "backbone",
            format!("input {s} must have 3 channels and sides divisible by {m}"),
        ));
    }
    let mut x = image;
    for i in 0..cfg.backbone_channels.len() {
        if i > 0 {
            x = g.avgpool2(x)?;
        }
        let y = conv(g, p, &format!("backbone.{i}"), x, 1)?;
        x = g.relu(y)?;
    }
    Ok(x)
}

pub fn model_forward<T: Element>(
    g: &mut Graph<T>,
    p: &BoundParams<'_, T>,
    cfg: &ModelConfig,
    image: Var,
) -> Result<ModelOutput> {
    cfg.validate()?;
    let mut x = backbone_forward(g, p, cfg, image)?;
    if cfg.needs_neck() {
        let y = conv(g, p, "neck", x, 0)?;
        x = g.relu(y)?;
    }
    let mut intermediates = Vec::with_capacity(cfg.block_count);
    let mut blocks = Vec::with_capacity(cfg.block_count);
    for b in 0..cfg.block_count {
        let trace = basic_block_forward(g, p, cfg, b, x)?;
        x = trace.features;
        intermediates.push(trace.inter_density);
        blocks.push(trace);
    }
    let up = g.upsample2(x)?;
    let density = conv(g, p, "head.density", up, 0)?;
    let density = g.relu(density)?;
    let seg_p = conv(g, p, "head.seg_p", up, 0)?;
    let seg_b = conv(g, p, "head.seg_b", up, 0)?;
    Ok(ModelOutput {
        density,
        seg_p,
        seg_b,
        intermediates,
        blocks,
    })
}

/// Concrete outputs of a gradient-free forward pass.
#[derive(Clone, Debug)]
pub struct Prediction<T: Element = f32> {
    pub density: Tensor<T>,
    pub seg_p: Tensor<T>,
    pub seg_b: Tensor<T>,
    pub intermediates: Vec<Tensor<T>>,
}

/// Runs the network with frozen parameters.
pub fn predict<T: Element>(params: &ParamStore<T>, cfg: &ModelConfig, image: &Tensor<T>) -> Result<Prediction<T>> {
    let mut g = Graph::new();
    let bound = params.bind(&mut g, false);
    let x = g.constant(image.clone());
    let out = model_forward(&mut g, &bound, cfg, x)?;
    Ok(Prediction {
        density: g.value(out.density).clone(),
        seg_p: g.value(out.seg_p).clone(),
        seg_b: g.value(out.seg_b).clone(),
        intermediates: out.intermediates.iter().map(|&v| g.value(v).clone()).collect(),
    })
}

/// Elementwise `1 / (1 + exp(-k (p - b)))` outside any graph.
pub fn sdb<T: Element>(p: &Tensor<T>, b: &Tensor<T>, k: f64) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let pv = g.constant(p.clone());
    let bv = g.constant(b.clone());
    let m = g.sdb(pv, bv, T::of(k))?;
    Ok(g.value(m).clone())
}
