//! The counting network: backbone, two-column blocks with cross-column
//! fusion, and the three prediction branches.

mod block;
pub mod checkpoint;
mod config;
mod ifm;
mod net;
mod params;

pub use block::{basic_block_forward, BlockTrace};
pub use checkpoint::{decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use config::ModelConfig;
pub use ifm::{ifm_forward, IfmOutput};
pub use net::{backbone_forward, model_forward, predict, sdb, ModelOutput, Prediction};
pub use params::{param_layout, xavier_bound, xavier_init, xavier_uniform, BoundParams, ParamKind, ParamSpec, ParamStore};

use crate::autodiff::{Graph, Var};
use crate::error::Result;
use crate::tensor::Element;

pub(crate) fn conv<T: Element>(
    g: &mut Graph<T>,
    p: &BoundParams<'_, T>,
    prefix: &str,
    x: Var,
    pad: usize,
) -> Result<Var> {
    let w = p.var(&format!("{prefix}.weight"))?;
    let b = p.var(&format!("{prefix}.bias"))?;
    g.conv2d(x, w, b, 1, pad)
}
