//! Flat `key = value` run configuration.
//!
//! One setting per line, `#` starts a comment, lists and ranges are comma
//! separated. Keys are the field names of [`ModelConfig`] and
//! [`TrainConfig`], with the loss weights and Adam constants flattened.
//! The optional `preset` key (`default`, `tiny` or `paper`) picks the base
//! that the other keys override. Unknown and repeated keys are errors.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::train::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

pub const KEYS: &[&str] = &[
    "preset",
    "backbone_channels",
    "backbone_stride",
    "block_count",
    "block_channels",
    "alpha_ifm",
    "sdb_k",
    "head_upsample",
    "lr",
    "lr_halve_every",
    "batch",
    "crop",
    "epochs",
    "seed",
    "alpha_loss",
    "lambda_seg",
    "denom",
    "beta1",
    "beta2",
    "eps",
    "sigma",
    "seg_tau",
    "hflip_prob",
    "brightness_range",
    "saturation_range",
    "intermediate_supervision",
];

fn scalar<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

fn list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',').map(|p| scalar(key, p.trim())).collect()
}

fn pair(key: &str, v: &str) -> Result<(f64, f64)> {
    match list::<f64>(key, v)?.as_slice() {
        &[a, b] => Ok((a, b)),
        _ => Err(Error::Config(format!("{key}: expected two comma-separated numbers, got {v:?}"))),
    }
}

impl RunConfig {
    pub fn tiny() -> Self {
        RunConfig {
            model: ModelConfig::tiny(),
            train: TrainConfig::tiny(),
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "default" => Ok(Self::default()),
            "tiny" => Ok(Self::tiny()),
            "paper" => Ok(RunConfig {
                model: ModelConfig::full_scale(),
                train: TrainConfig::default(),
            }),
            other => Err(Error::Config(format!("unknown preset {other:?}"))),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got {raw:?}", n + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if !KEYS.contains(&k) {
                return Err(Error::Config(format!("line {}: unknown key {k:?}", n + 1)));
            }
            if entries.insert(k.to_owned(), v.to_owned()).is_some() {
                return Err(Error::Config(format!("line {}: key {k:?} given twice", n + 1)));
            }
        }
        let mut cfg = Self::preset(entries.remove("preset").as_deref().unwrap_or("default"))?;
        for (k, v) in &entries {
            cfg.set(k, v)?;
        }
        cfg.model.validate()?;
        cfg.train.validate()?;
        Ok(cfg)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let (m, t) = (&mut self.model, &mut self.train);
        match key {
            "backbone_channels" => m.backbone_channels = list(key, v)?,
            "backbone_stride" => m.backbone_stride = scalar(key, v)?,
            "block_count" => m.block_count = scalar(key, v)?,
            "block_channels" => m.block_channels = scalar(key, v)?,
            "alpha_ifm" => m.alpha_ifm = scalar(key, v)?,
            "sdb_k" => m.sdb_k = scalar(key, v)?,
            "head_upsample" => m.head_upsample = scalar(key, v)?,
            "lr" => t.lr = scalar(key, v)?,
            "lr_halve_every" => t.lr_halve_every = scalar(key, v)?,
            "batch" => t.batch = scalar(key, v)?,
            "crop" => t.crop = scalar(key, v)?,
            "epochs" => t.epochs = scalar(key, v)?,
            "seed" => t.seed = scalar(key, v)?,
            "alpha_loss" => t.weights.alpha_loss = scalar(key, v)?,
            "lambda_seg" => t.weights.lambda_seg = scalar(key, v)?,
            "denom" => t.weights.denom = scalar(key, v)?,
            "beta1" => t.adam.beta1 = scalar(key, v)?,
            "beta2" => t.adam.beta2 = scalar(key, v)?,
            "eps" => t.adam.eps = scalar(key, v)?,
            "sigma" => t.sigma = scalar(key, v)?,
            "seg_tau" => t.seg_tau = scalar(key, v)?,
            "hflip_prob" => t.hflip_prob = scalar(key, v)?,
            "brightness_range" => t.brightness_range = pair(key, v)?,
            "saturation_range" => t.saturation_range = pair(key, v)?,
            "intermediate_supervision" => t.intermediate_supervision = scalar(key, v)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Every key in canonical order; [`RunConfig::parse`] reads it back exactly.
    pub fn to_text(&self) -> String {
        let (m, t) = (&self.model, &self.train);
        let join = |v: &[usize]| v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",");
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        put("backbone_channels", join(&m.backbone_channels));
        put("backbone_stride", m.backbone_stride.to_string());
        put("block_count", m.block_count.to_string());
        put("block_channels", m.block_channels.to_string());
        put("alpha_ifm", m.alpha_ifm.to_string());
        put("sdb_k", m.sdb_k.to_string());
        put("head_upsample", m.head_upsample.to_string());
        put("lr", t.lr.to_string());
        put("lr_halve_every", t.lr_halve_every.to_string());
        put("batch", t.batch.to_string());
        put("crop", t.crop.to_string());
        put("epochs", t.epochs.to_string());
        put("seed", t.seed.to_string());
        put("alpha_loss", t.weights.alpha_loss.to_string());
        put("lambda_seg", t.weights.lambda_seg.to_string());
        put("denom", t.weights.denom.to_string());
        put("beta1", t.adam.beta1.to_string());
        put("beta2", t.adam.beta2.to_string());
        put("eps", t.adam.eps.to_string());
        put("sigma", t.sigma.to_string());
        put("seg_tau", t.seg_tau.to_string());
        put("hflip_prob", t.hflip_prob.to_string());
        put("brightness_range", format!("{},{}", t.brightness_range.0, t.brightness_range.1));
        put("saturation_range", format!("{},{}", t.saturation_range.0, t.saturation_range.1));
        put("intermediate_supervision", t.intermediate_supervision.to_string());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_and_comments() {
        let cfg = RunConfig::parse("preset = tiny\n# note\nalpha_ifm = 1.0  # stronger\nbrightness_range = 1, 1\n").unwrap();
        assert_eq!(cfg.model.alpha_ifm, 1.0);
        assert_eq!(cfg.model.block_channels, 8);
        assert_eq!(cfg.train.brightness_range, (1.0, 1.0));
    }

    #[test]
    fn rejects_unknown_and_duplicate_keys() {
        assert!(matches!(RunConfig::parse("alpha = 1"), Err(Error::Config(_))));
        assert!(RunConfig::parse("lr = 1\nlr = 2").is_err());
        assert!(RunConfig::parse("lr 1").is_err());
        assert!(RunConfig::parse("sdb_k = -1").is_err());
    }

    #[test]
    fn text_round_trip() {
        for cfg in [RunConfig::default(), RunConfig::tiny()] {
            assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
        }
    }
}
