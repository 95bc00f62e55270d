use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Output channels of each backbone stage; a 2x average pool sits between stages.
    pub backbone_channels: Vec<usize>,
    pub backbone_stride: usize,
    pub block_count: usize,
    pub block_channels: usize,
    /// Scale on the cross-column fusion output. `0` disables fusion.
    pub alpha_ifm: f64,
    /// Slope of the steep differentiable binarization.
    pub sdb_k: f64,
    pub head_upsample: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            backbone_channels: vec![16, 32, 48, 64],
            backbone_stride: 8,
            block_count: 3,
            block_channels: 64,
            alpha_ifm: 0.3,
            sdb_k: 500.0,
            head_upsample: 2,
        }
    }
}

impl ModelConfig {
    /// Two blocks of eight channels; small enough for exhaustive gradient checks.
    pub fn tiny() -> Self {
        ModelConfig {
            backbone_channels: vec![8, 8, 8, 8],
            block_count: 2,
            block_channels: 8,
            ..Self::default()
        }
    }

    /// VGG-width stages.
    pub fn full_scale() -> Self {
        ModelConfig {
            backbone_channels: vec![64, 128, 256, 512],
            block_channels: 512,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.backbone_channels.is_empty() || self.backbone_channels.contains(&0) {
            return fail(format!("backbone_channels {:?} must be non-empty and positive", self.backbone_channels));
        }
        let stride = 1usize << (self.backbone_channels.len() - 1);
        if stride != self.backbone_stride {
            return fail(format!(
                "{} backbone stages give stride {stride}, but backbone_stride is {}",
                self.backbone_channels.len(),
                self.backbone_stride
            ));
        }
        if self.block_count == 0 {
            return fail("block_count must be at least 1".into());
        }
        if self.block_channels == 0 {
            return fail("block_channels must be positive".into());
        }
        if !(self.alpha_ifm >= 0.0 && self.alpha_ifm.is_finite()) {
            return fail(format!("alpha_ifm must be >= 0, got {}", self.alpha_ifm));
        }
        if !(self.sdb_k > 0.0 && self.sdb_k.is_finite()) {
            return fail(format!("sdb_k must be > 0, got {}", self.sdb_k));
        }
        if self.head_upsample != 2 {
            return fail(format!("head_upsample must be 2, got {}", self.head_upsample));
        }
        Ok(())
    }

    /// Input sides must be multiples of this.
    pub fn input_multiple(&self) -> usize {
        (2 * self.backbone_stride).max(16)
    }

    pub(crate) fn needs_neck(&self) -> bool {
        self.backbone_channels.last() != Some(&self.block_channels)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        ModelConfig::default().validate().unwrap();
        ModelConfig::tiny().validate().unwrap();
        ModelConfig::full_scale().validate().unwrap();
    }

    #[test]
    fn rejects_inconsistent_stride() {
        let cfg = ModelConfig {
            backbone_channels: vec![8, 8],
            ..ModelConfig::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = ModelConfig {
            sdb_k: 0.0,
            ..ModelConfig::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = ModelConfig {
            alpha_ifm: -0.1,
            ..ModelConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
