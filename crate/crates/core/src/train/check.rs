use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{grad_check, GradCheckReport, Graph, Var};
use crate::density::{generate_density_map, synth_scene, GroundTruth, SceneConfig, DEFAULT_SEG_TAU, DEFAULT_SIGMA};
use crate::error::{Error, Result};
use crate::losses::{network_loss, LossWeights, Targets};
use crate::model::{model_forward, param_layout, xavier_init, ModelConfig, ParamKind, ParamStore};

/// Step that balances roundoff on tiny gradients against ReLU kinks falling
/// inside the difference stencil.
pub const MODEL_CHECK_EPS: f64 = 4e-6;
pub const MODEL_CHECK_SIDE: usize = 32;
const CHECK_BIAS: f64 = 0.05;
const BIAS_STREAM: u64 = 0x5eed_b1a5;
use crate::tensor::Tensor;

/// Finite-difference check of the full objective with respect to every
/// parameter and every input pixel, on one synthetic `side x side` scene in
/// 64-bit arithmetic.
pub fn model_grad_check(
    cfg: &ModelConfig,
    weights: &LossWeights,
    side: usize,
    seed: u64,
    eps: f64,
) -> Result<GradCheckReport> {
    if side % cfg.input_multiple() != 0 || side == 0 {
        return Err(Error::Config(format!(
            "grad-check image side {side} must be a multiple of {}",
            cfg.input_multiple()
        )));
    }
    let scene = SceneConfig {
        height: side,
        width: side,
        count_range: (3, 6),
        ..SceneConfig::default()
    };
    let (image, ann) = synth_scene(&scene, seed)?;
    let gt = GroundTruth::from_full(&generate_density_map(&ann, DEFAULT_SIGMA)?, DEFAULT_SEG_TAU)?;
    let d4: Tensor<f64> = gt.density4.to_tensor();
    let d8: Tensor<f64> = gt.density8.to_tensor();
    let m4: Tensor<f64> = gt.mask4.to_tensor();

    // Zero biases put dead ReLU units exactly on their kink, where the central
    // difference sees half a slope. Small random biases move the check point
    // off every kink.
    let mut params: ParamStore<f64> = xavier_init(cfg, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ BIAS_STREAM);
    for spec in param_layout(cfg)?.iter().filter(|s| s.kind == ParamKind::Bias) {
        let t = params.get_mut(&spec.name).expect("layout matches init");
        for v in t.data_mut() {
            *v = rng.random_range(-CHECK_BIAS..CHECK_BIAS);
        }
    }
    let mut inputs: Vec<Tensor<f64>> = params.tensors().to_vec();
    inputs.push(image.to_tensor());
    let template = params.clone();

    let loss = |g: &mut Graph<f64>, vars: &[Var]| -> Result<Var> {
        let (pvars, image) = vars.split_at(vars.len() - 1);
        let bound = template.bind_vars(pvars)?;
        let out = model_forward(g, &bound, cfg, image[0])?;
        let targets = Targets {
            density4: g.constant(d4.clone()),
            density8: g.constant(d8.clone()),
            mask4: g.constant(m4.clone()),
        };
        Ok(network_loss(g, &out, &targets, cfg.sdb_k, weights, true)?.total)
    };
    grad_check(loss, &inputs, eps)
}
