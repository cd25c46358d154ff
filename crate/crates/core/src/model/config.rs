use crate::error::{Error, Result};
use crate::nn::DEFAULT_ELU_ALPHA;

/// Side length of the square input patch.
pub const PATCH_SIZE: usize = 72;
pub const DEFAULT_EXPERTS: usize = 10;
pub const DEFAULT_DROPOUT: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub filters: usize,
    pub kernel: usize,
}

/// Two conv → batch norm → ELU → max-pool blocks over a square input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StackConfig {
    pub input_channels: usize,
    pub input_size: usize,
    pub conv: [ConvSpec; 2],
    pub pools: [usize; 2],
    pub elu_alpha: f64,
}

impl StackConfig {
    /// Feature map shape `(channels, side)` after the second pool.
    pub fn output_shape(&self) -> Result<(usize, usize)> {
        if self.input_channels == 0 {
            return Err(Error::config("input channel count must be positive"));
        }
        let mut side = self.input_size;
        for (i, (conv, &pool)) in self.conv.iter().zip(&self.pools).enumerate() {
            if conv.filters == 0 || conv.kernel == 0 || pool == 0 {
                return Err(Error::config(format!("block {}: zero-sized layer", i + 1)));
            }
            if conv.kernel > side {
                return Err(Error::config(format!(
                    "block {}: {}x{} kernel does not fit {side}x{side} input",
                    i + 1,
                    conv.kernel,
                    conv.kernel
                )));
            }
            side = (side - conv.kernel + 1) / pool;
            if side == 0 {
                return Err(Error::config(format!(
                    "block {}: pooling by {pool} reduces the feature map below 1x1",
                    i + 1
                )));
            }
        }
        Ok((self.conv[1].filters, side))
    }

    pub fn feature_len(&self) -> Result<usize> {
        let (c, side) = self.output_shape()?;
        Ok(c * side * side)
    }
}

/// Expert CNN: conv stack followed by a single dense unit (the count).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpertNetConfig {
    pub stack: StackConfig,
}

impl Default for ExpertNetConfig {
    fn default() -> Self {
        ExpertNetConfig {
            stack: StackConfig {
                input_channels: 1,
                input_size: PATCH_SIZE,
                conv: [ConvSpec { filters: 16, kernel: 5 }, ConvSpec { filters: 32, kernel: 5 }],
                pools: [2, 3],
                elu_alpha: DEFAULT_ELU_ALPHA,
            },
        }
    }
}

/// Gating CNN: a wider conv stack, dense → ELU → dropout → dense(K) → softmax.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GatingNetConfig {
    pub stack: StackConfig,
    pub hidden: usize,
    pub dropout: f64,
}

impl Default for GatingNetConfig {
    fn default() -> Self {
        GatingNetConfig {
            stack: StackConfig {
                input_channels: 1,
                input_size: PATCH_SIZE,
                conv: [ConvSpec { filters: 32, kernel: 5 }, ConvSpec { filters: 64, kernel: 5 }],
                pools: [2, 3],
                elu_alpha: DEFAULT_ELU_ALPHA,
            },
            hidden: 128,
            dropout: DEFAULT_DROPOUT,
        }
    }
}

impl GatingNetConfig {
    pub fn validate(&self) -> Result<()> {
        self.stack.output_shape()?;
        if self.hidden == 0 {
            return Err(Error::config("gating hidden width must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config(format!(
                "dropout rate must be in [0, 1), got {}",
                self.dropout
            )));
        }
        Ok(())
    }
}

/// Narrow architecture used by the bundled desk-scale experiments.
///
/// Same layer inventory and kernel/pool sizes as the defaults, with filter
/// counts cut so a full 5-fold ablation fits a single CPU core.
pub fn desk_configs() -> (ExpertNetConfig, GatingNetConfig) {
    let mut expert = ExpertNetConfig::default();
    expert.stack.conv[0].filters = 4;
    expert.stack.conv[1].filters = 8;
    let mut gate = GatingNetConfig::default();
    gate.stack.conv[0].filters = 8;
    gate.stack.conv[1].filters = 16;
    gate.hidden = 32;
    (expert, gate)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_stack_reduces_72_to_10() {
        let cfg = ExpertNetConfig::default();
        assert_eq!(cfg.stack.output_shape().unwrap(), (32, 10));
        assert_eq!(GatingNetConfig::default().stack.output_shape().unwrap(), (64, 10));
    }

    #[test]
    fn gate_is_wider_than_expert() {
        let (e, g) = (ExpertNetConfig::default(), GatingNetConfig::default());
        for i in 0..2 {
            assert!(g.stack.conv[i].filters > e.stack.conv[i].filters);
            assert_eq!(g.stack.pools[i], e.stack.pools[i]);
        }
        let (e, g) = desk_configs();
        for i in 0..2 {
            assert!(g.stack.conv[i].filters > e.stack.conv[i].filters);
        }
    }

    #[test]
    fn collapsing_stack_is_a_config_error() {
        let mut cfg = ExpertNetConfig::default();
        cfg.stack.input_size = 12;
        assert!(matches!(cfg.stack.output_shape(), Err(Error::Config(_))));
        cfg.stack.input_size = 4;
        assert!(cfg.stack.output_shape().is_err());
    }
}
