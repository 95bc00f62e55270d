use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ModelConfig;
use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{Element, Shape, Tensor};

/// Named parameter tensors in a fixed order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T: Element = f32> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    index: HashMap<String, usize>,
}

impl<T: Element> Default for ParamStore<T> {
    fn default() -> Self {
        ParamStore {
            names: Vec::new(),
            tensors: Vec::new(),
            index: HashMap::new(),
        }
    }
}

impl<T: Element> ParamStore<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::InvalidArgument(format!("duplicate parameter {name}")));
        }
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.tensors.push(tensor);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.index.get(name).map(|&i| &mut self.tensors[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    /// Total scalar count.
    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn cast<U: Element>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
            index: self.index.clone(),
        }
    }

    /// Records every parameter in `g`, as trainable leaves or as constants.
    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> BoundParams<'_, T> {
        let vars = self
            .tensors
            .iter()
            .map(|t| if trainable { g.param(t.clone()) } else { g.constant(t.clone()) })
            .collect();
        BoundParams { store: self, vars }
    }

    /// Pairs already-recorded handles, in store order, with the names.
    pub fn bind_vars(&self, vars: &[Var]) -> Result<BoundParams<'_, T>> {
        if vars.len() != self.len() {
            return Err(Error::InvalidArgument(format!(
                "{} handles for {} parameters",
                vars.len(),
                self.len()
            )));
        }
        Ok(BoundParams {
            store: self,
            vars: vars.to_vec(),
        })
    }

    /// Checks names and shapes against what `cfg` requires.
    pub fn check_against(&self, cfg: &ModelConfig) -> Result<()> {
        let layout = param_layout(cfg)?;
        if layout.len() != self.len() {
            return Err(Error::Config(format!(
                "configuration needs {} parameter tensors, store has {}",
                layout.len(),
                self.len()
            )));
        }
        for spec in &layout {
            let t = self
                .get(&spec.name)
                .ok_or_else(|| Error::Config(format!("missing parameter {}", spec.name)))?;
            if t.shape() != spec.shape {
                return Err(Error::Config(format!(
                    "parameter {} has shape {}, configuration needs {}",
                    spec.name,
                    t.shape(),
                    spec.shape
                )));
            }
            if !t.is_finite() {
                return Err(Error::NonFinite(format!("parameter {} has non-finite values", spec.name)));
            }
        }
        Ok(())
    }
}

/// Graph handles for a [`ParamStore`].
pub struct BoundParams<'a, T: Element> {
    store: &'a ParamStore<T>,
    vars: Vec<Var>,
}

impl<T: Element> BoundParams<'_, T> {
    pub fn var(&self, name: &str) -> Result<Var> {
        self.store
            .index
            .get(name)
            .map(|&i| self.vars[i])
            .ok_or_else(|| Error::Config(format!("missing parameter {name}")))
    }

    /// Handles in store order.
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Shape,
    pub kind: ParamKind,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
}

fn conv(out: &mut Vec<ParamSpec>, prefix: &str, co: usize, ci: usize, k: usize) {
    out.push(ParamSpec {
        name: format!("{prefix}.weight"),
        shape: Shape::new(co, ci, k, k),
        kind: ParamKind::Weight,
    });
    out.push(ParamSpec {
        name: format!("{prefix}.bias"),
        shape: Shape::vector(co),
        kind: ParamKind::Bias,
    });
}

/// Every parameter the network needs, in store order.
pub fn param_layout(cfg: &ModelConfig) -> Result<Vec<ParamSpec>> {
    cfg.validate()?;
    let mut out = Vec::new();
    let mut prev = 3;
    for (i, &c) in cfg.backbone_channels.iter().enumerate() {
        conv(&mut out, &format!("backbone.{i}"), c, prev, 3);
        prev = c;
    }
    let ch = cfg.block_channels;
    if cfg.needs_neck() {
        conv(&mut out, "neck", ch, prev, 1);
    }
    for b in 0..cfg.block_count {
        for col in 1..=2 {
            conv(&mut out, &format!("block{b}.split{col}"), ch, ch, 1);
            conv(&mut out, &format!("block{b}.col{col}.conv_a"), ch, ch, 3);
            conv(&mut out, &format!("block{b}.ifm.conv{col}"), ch, ch, 3);
            conv(&mut out, &format!("block{b}.col{col}.conv_b"), ch, ch, 3);
        }
        conv(&mut out, &format!("block{b}.fuse"), ch, 2 * ch, 1);
        conv(&mut out, &format!("block{b}.density"), 1, ch, 1);
        conv(&mut out, &format!("block{b}.lift"), ch, 1, 1);
    }
    for head in ["density", "seg_p", "seg_b"] {
        conv(&mut out, &format!("head.{head}"), 1, ch, 1);
    }
    Ok(out)
}

/// Glorot-uniform bound `sqrt(6 / (fan_in + fan_out))` for a conv weight.
pub fn xavier_bound(shape: Shape) -> f64 {
    let [co, ci, kh, kw] = shape.0;
    let fan_in = ci * kh * kw;
    let fan_out = co * kh * kw;
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

pub fn xavier_uniform<T: Element>(shape: Shape, rng: &mut impl Rng) -> Tensor<T> {
    let bound = xavier_bound(shape);
    let data = (0..shape.numel())
        .map(|_| T::of(rng.random_range(-bound..=bound)))
        .collect();
    Tensor::new(shape, data).expect("length matches shape")
}

/// Fresh parameters: Xavier-uniform weights, zero biases, one RNG stream in
/// layout order.
pub fn xavier_init<T: Element>(cfg: &ModelConfig, seed: u64) -> Result<ParamStore<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    for spec in param_layout(cfg)? {
        let t = match spec.kind {
            ParamKind::Weight => xavier_uniform(spec.shape, &mut rng),
            ParamKind::Bias => Tensor::zeros(spec.shape),
        };
        store.insert(spec.name, t)?;
    }
    Ok(store)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_matches_init() {
        let cfg = ModelConfig::tiny();
        let p = xavier_init::<f32>(&cfg, 1).unwrap();
        p.check_against(&cfg).unwrap();
        assert!(p.get("block1.ifm.conv2.weight").is_some());
        assert!(p.get("neck.weight").is_none());
        assert!(p.check_against(&ModelConfig::default()).is_err());
    }

    #[test]
    fn neck_appears_when_widths_differ() {
        let cfg = ModelConfig {
            block_channels: 12,
            ..ModelConfig::tiny()
        };
        let p = xavier_init::<f32>(&cfg, 1).unwrap();
        assert_eq!(p.get("neck.weight").unwrap().shape(), Shape::new(12, 8, 1, 1));
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut p = ParamStore::<f32>::new();
        p.insert("a", Tensor::zeros(Shape::scalar())).unwrap();
        assert!(p.insert("a", Tensor::zeros(Shape::scalar())).is_err());
    }
}
